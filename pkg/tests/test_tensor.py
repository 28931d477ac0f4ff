"""Autodiff core: value semantics, gradient correctness, and error contracts."""

import math

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from distilform import tensor as T
from distilform.errors import ContractError, ShapeError, VocabError


def rng(seed=0):
    return np.random.Generator(np.random.PCG64(seed))


class TestMatmul:
    def test_identity(self):
        a = T.constant(np.eye(2))
        b = T.constant([[1.0, 2.0], [3.0, 4.0]])
        npt.assert_array_equal(T.matmul(a, b).data, [[1.0, 2.0], [3.0, 4.0]])

    def test_projector_selects_rows(self):
        p = T.constant([[1.0, 0.0], [0.0, 0.0]])
        b = T.constant([[5.0, 6.0], [7.0, 8.0]])
        npt.assert_array_equal(T.matmul(p, b).data, [[5.0, 6.0], [0.0, 0.0]])

    def test_shape_error_names_both_shapes(self):
        a = T.constant(np.zeros((2, 3)))
        b = T.constant(np.zeros((2, 3)))
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            T.matmul(a, b)

    def test_gradients_match_finite_differences(self):
        g = rng(1)
        a = T.parameter(g.uniform(-2, 2, (3, 4)), "a")
        b = T.parameter(g.uniform(-2, 2, (4, 2)), "b")
        w = g.uniform(-1, 1, (3, 2))
        err = T.finite_diff_check(
            lambda: T.sum_all(T.multiply(T.matmul(a, b), T.constant(w))), [a, b]
        )
        assert err < 1e-6

    def test_batched_against_loop(self):
        g = rng(2)
        a = g.uniform(-2, 2, (3, 4, 5))
        b = g.uniform(-2, 2, (5, 2))
        out = T.matmul(T.constant(a), T.constant(b)).data
        for i in range(3):
            npt.assert_allclose(out[i], a[i] @ b, rtol=0, atol=1e-14)


class TestSoftmax:
    def test_symmetric_pair(self):
        npt.assert_allclose(T.softmax_rows(T.constant([[0.0, 0.0]])).data, [[0.5, 0.5]])

    def test_log_ratio_closed_form(self):
        out = T.softmax_rows(T.constant([[0.0, math.log(3.0)]])).data
        npt.assert_allclose(out, [[0.25, 0.75]], atol=1e-15)

    def test_large_equal_logits_no_overflow(self):
        out = T.softmax_rows(T.constant([[1000.0, 1000.0, 1000.0]])).data
        npt.assert_allclose(out, [[1 / 3] * 3], atol=1e-15)
        assert np.isfinite(out).all()

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_rows_sum_to_one_and_shift_invariant(self, seed):
        g = rng(seed)
        x = g.uniform(-2, 2, (4, 5))
        c = g.uniform(-50, 50)
        out = T.softmax_rows(T.constant(x)).data
        assert np.abs(out.sum(axis=-1) - 1.0).max() < 1e-12
        assert (out > 0).all()
        shifted = T.softmax_rows(T.constant(x + c)).data
        assert np.abs(out - shifted).max() < 1e-12


class TestRelu:
    def test_sign_cases(self):
        npt.assert_array_equal(T.relu(T.constant([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])

    def test_all_negative_blocks_gradient(self):
        x = T.parameter([-1.0, -2.0], "x")
        grads = T.backward(T.sum_all(T.relu(x)))
        npt.assert_array_equal(grads["x"], [0.0, 0.0])

    def test_subgradient_matches_finite_differences(self):
        for value, expected in ((3.0, 1.0), (-3.0, 0.0)):
            x = T.parameter([value], "x")
            grads = T.backward(T.sum_all(T.relu(x)))
            assert grads["x"][0] == expected
            assert T.finite_diff_check(lambda: T.sum_all(T.relu(x)), [x]) < 1e-8


class TestLayerNorm:
    def test_two_point_row_closed_form(self):
        x = T.constant([[1.0, 3.0]])
        gamma, beta = T.constant(np.ones(2)), T.constant(np.zeros(2))
        out = T.layer_norm(x, gamma, beta, 1e-5).data
        expected = 1.0 / math.sqrt(1.0 + 1e-5)
        npt.assert_allclose(out, [[-expected, expected]], atol=1e-15)
        npt.assert_allclose(out, [[-0.999995, 0.999995]], atol=1e-6)

    def test_constant_row_is_zeroed(self):
        out = T.layer_norm(
            T.constant([[5.0, 5.0, 5.0]]), T.constant(np.ones(3)), T.constant(np.zeros(3)), 1e-3
        ).data
        npt.assert_array_equal(out, [[0.0, 0.0, 0.0]])

    def test_zero_gamma_gives_beta(self):
        beta = np.array([1.0, 2.0, 3.0])
        out = T.layer_norm(
            T.constant(rng(3).uniform(-2, 2, (4, 3))), T.constant(np.zeros(3)), T.constant(beta), 1e-5
        ).data
        npt.assert_allclose(out, np.tile(beta, (4, 1)), atol=1e-15)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_normalized_moments(self, seed):
        g = rng(seed)
        x = g.uniform(-2, 2, (3, 8))
        x[:, 0] += 2.0  # keep row variance away from zero
        eps = 1e-5
        out = T.layer_norm(T.constant(x), T.constant(np.ones(8)), T.constant(np.zeros(8)), eps).data
        assert np.abs(out.mean(axis=-1)).max() < 1e-10
        variances = out.var(axis=-1)
        rows = x.var(axis=-1)
        assert np.abs(variances - 1.0).max() < 2 * eps / rows.min() + 1e-12


class TestBackward:
    def test_sum_gives_ones(self):
        w = T.parameter(rng(4).uniform(-1, 1, (3, 2)), "w")
        grads = T.backward(T.sum_all(w))
        npt.assert_array_equal(grads["w"], np.ones((3, 2)))

    def test_elementwise_square_gives_two_w(self):
        w = T.parameter(rng(5).uniform(-1, 1, (2, 3)), "w")
        grads = T.backward(T.sum_all(T.multiply(w, w)))
        npt.assert_allclose(grads["w"], 2 * w.data, atol=1e-15)

    def test_fanout_sums_path_gradients(self):
        a = T.parameter([1.5, -0.5], "a")
        b = T.constant([2.0, 3.0])
        loss = T.sum_all(T.add(T.multiply(a, b), a))  # d/da = b + 1
        grads = T.backward(loss)
        npt.assert_allclose(grads["a"], b.data + 1.0, atol=1e-15)

    def test_reset_first_no_double_accumulation(self):
        w = T.parameter([2.0], "w")
        loss = T.sum_all(T.multiply(w, w))
        first = T.backward(loss)["w"].copy()
        second = T.backward(loss)["w"]
        npt.assert_array_equal(first, second)

    def test_non_scalar_loss_rejected(self):
        w = T.parameter([1.0, 2.0], "w")
        with pytest.raises(ContractError, match="scalar"):
            T.backward(T.relu(w))

    def test_untouched_parameter_gets_exact_zeros(self):
        used = T.parameter([1.0], "used")
        unused = T.parameter([[1.0, 2.0]], "unused")
        grads = T.backward(T.sum_all(used), params=[used, unused])
        npt.assert_array_equal(grads["unused"], np.zeros((1, 2)))
        assert grads["used"].shape == (1,)


class TestFiniteDiffCheck:
    def test_quadratic(self):
        theta = T.parameter([3.0], "theta")
        err = T.finite_diff_check(lambda: T.sum_all(T.multiply(theta, theta)), [theta], h=1e-5)
        assert err < 1e-8

    def test_linear_is_near_exact(self):
        theta = T.parameter([1.0], "theta")
        err = T.finite_diff_check(lambda: T.sum_all(T.scalar_mul(theta, 3.0)), [theta], h=0.5)
        assert err < 1e-10

    def test_nondeterministic_f_rejected(self):
        theta = T.parameter([1.0], "theta")
        counter = iter(range(1000))

        def noisy():
            return T.sum_all(T.scalar_mul(theta, 1.0 + next(counter)))

        with pytest.raises(ContractError, match="deterministic"):
            T.finite_diff_check(noisy, [theta])


def _pair(g, shape):
    return g.uniform(-2, 2, shape)


PRIMITIVE_CASES = {
    "matmul": lambda g: (
        [T.parameter(_pair(g, (2, 3)), "p0"), T.parameter(_pair(g, (3, 2)), "p1")],
        lambda ps: T.matmul(ps[0], ps[1]),
    ),
    "matmul_batched": lambda g: (
        [T.parameter(_pair(g, (2, 3, 4)), "p0"), T.parameter(_pair(g, (4, 2)), "p1")],
        lambda ps: T.matmul(ps[0], ps[1]),
    ),
    "add": lambda g: (
        [T.parameter(_pair(g, (2, 3)), "p0"), T.parameter(_pair(g, (2, 3)), "p1")],
        lambda ps: T.add(ps[0], ps[1]),
    ),
    "add_bias": lambda g: (
        [T.parameter(_pair(g, (2, 4, 3)), "p0"), T.parameter(_pair(g, (3,)), "p1")],
        lambda ps: T.add(ps[0], ps[1]),
    ),
    "subtract": lambda g: (
        [T.parameter(_pair(g, (3, 2)), "p0"), T.parameter(_pair(g, (3, 2)), "p1")],
        lambda ps: T.subtract(ps[0], ps[1]),
    ),
    "multiply": lambda g: (
        [T.parameter(_pair(g, (2, 3)), "p0"), T.parameter(_pair(g, (2, 3)), "p1")],
        lambda ps: T.multiply(ps[0], ps[1]),
    ),
    "scalar_mul": lambda g: (
        [T.parameter(_pair(g, (3, 3)), "p0")],
        lambda ps: T.scalar_mul(ps[0], 1.7),
    ),
    "scalar_div": lambda g: (
        [T.parameter(_pair(g, (3, 3)), "p0")],
        lambda ps: T.scalar_div(ps[0], 2.3),
    ),
    "transpose": lambda g: (
        [T.parameter(_pair(g, (2, 4)), "p0")],
        lambda ps: T.transpose(ps[0]),
    ),
    "concat_last": lambda g: (
        [T.parameter(_pair(g, (2, 2)), "p0"), T.parameter(_pair(g, (2, 3)), "p1")],
        lambda ps: T.concat_last(ps),
    ),
    "split_last": lambda g: (
        [T.parameter(_pair(g, (2, 4)), "p0")],
        lambda ps: T.multiply(*T.split_last(ps[0], 2)),
    ),
    "slice_axis": lambda g: (
        [T.parameter(_pair(g, (4, 3)), "p0")],
        lambda ps: T.slice_axis(ps[0], 0, 1, 3),
    ),
    "reshape": lambda g: (
        [T.parameter(_pair(g, (2, 6)), "p0")],
        lambda ps: T.reshape(ps[0], (3, 4)),
    ),
    "gather_rows": lambda g: (
        [T.parameter(_pair(g, (5, 3)), "p0")],
        lambda ps: T.gather_rows(ps[0], np.array([0, 2, 2, 4])),
    ),
    "relu": lambda g: (
        [T.parameter(np.where(np.abs(x := _pair(g, (3, 3))) < 0.05, 0.5, x), "p0")],
        lambda ps: T.relu(ps[0]),
    ),
    "log": lambda g: (
        [T.parameter(g.uniform(0.05, 2.0, (3, 3)), "p0")],
        lambda ps: T.log(ps[0]),
    ),
    "exp": lambda g: (
        [T.parameter(_pair(g, (3, 3)), "p0")],
        lambda ps: T.exp(ps[0]),
    ),
    "clip_min": lambda g: (
        [T.parameter(g.uniform(0.5, 2.0, (3, 3)), "p0")],
        lambda ps: T.clip_min(ps[0], 1e-12),
    ),
    "softmax_rows": lambda g: (
        [T.parameter(_pair(g, (3, 4)), "p0")],
        lambda ps: T.softmax_rows(ps[0]),
    ),
    "layer_norm": lambda g: (
        [
            T.parameter(_pair(g, (3, 4)) * np.array([1.0, 2.0, 0.5, 1.5]), "p0"),
            T.parameter(g.uniform(0.5, 1.5, 4), "p1"),
            T.parameter(_pair(g, (4,)), "p2"),
        ],
        lambda ps: T.layer_norm(ps[0], ps[1], ps[2], 1e-5),
    ),
    "sum_all": lambda g: (
        [T.parameter(_pair(g, (2, 3)), "p0")],
        lambda ps: ps[0],
    ),
    "mean_all": lambda g: (
        [T.parameter(_pair(g, (2, 3)), "p0")],
        lambda ps: T.scalar_mul(T.mean_all(ps[0]), 1.0),  # wrapped below by weighting
    ),
    "mean_axis": lambda g: (
        [T.parameter(_pair(g, (3, 4)), "p0")],
        lambda ps: T.mean_axis(ps[0], 0),
    ),
}


def gradcheck_primitive(name: str, trials: int, h: float = 1e-5) -> float:
    """Max finite-difference relative error of one primitive over random trials."""
    worst = 0.0
    for trial in range(trials):
        g = rng(hash((name, trial)) & 0xFFFFFFFF)
        params, build = PRIMITIVE_CASES[name](g)
        weight = T.constant(g.uniform(-1, 1, np.asarray(build(params).data).shape))

        def f():
            out = build(params)
            return T.sum_all(T.multiply(out, weight)) if out.data.shape != () else out

        worst = max(worst, T.finite_diff_check(f, params, h=h))
    return worst


@pytest.mark.parametrize("name", sorted(PRIMITIVE_CASES))
def test_primitive_gradients(name):
    assert gradcheck_primitive(name, trials=5) < 1e-6


class TestDeterminismAndShapes:
    def test_bit_identical_repetition(self):
        g = rng(11)
        x = g.uniform(-2, 2, (6, 6))
        first = T.softmax_rows(T.matmul(T.constant(x), T.constant(x))).data
        second = T.softmax_rows(T.matmul(T.constant(x), T.constant(x))).data
        assert np.array_equal(first, second)

    def test_mismatched_elementwise_shapes(self):
        with pytest.raises(ShapeError):
            T.add(T.constant(np.zeros((2, 3))), T.constant(np.zeros((3, 2))))
        with pytest.raises(ShapeError):
            T.multiply(T.constant(np.zeros(2)), T.constant(np.zeros(3)))

    def test_gather_rows_out_of_range(self):
        with pytest.raises(VocabError, match="7"):
            T.gather_rows(T.constant(np.zeros((5, 2))), np.array([0, 7]))

    def test_no_grad_suppresses_recording(self):
        w = T.parameter([1.0], "w")
        with T.no_grad():
            out = T.scalar_mul(w, 2.0)
        assert out.is_leaf and not out.requires_grad
