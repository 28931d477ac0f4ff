"""Dense float64 tensors with reverse-mode automatic differentiation.

Every recorded operation is a module-level function that validates shapes,
computes its value with numpy, and (when gradients are enabled and an input
requires them) attaches a closure producing the input gradients from the
output gradient.  ``backward`` runs one reverse topological sweep and returns
a name -> gradient map for the leaf parameters it reached.

Conventions fixed here and relied on by the rest of the package:

* all data is float64; shapes are checked explicitly on every operation;
* ``matmul`` contracts the last two axes, with an optional shared leading
  batch axis; ``softmax_rows``, ``layer_norm`` and friends act on the last
  axis;
* ReLU's subgradient at exactly 0 is 0 (same convention for ``clip_min`` at
  the floor);
* ``backward`` resets gradient accumulators before each sweep, so calling it
  twice on the same graph gives the same answer.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import ContractError, ShapeError, VocabError

Array = np.ndarray
GradientMap = dict[str, np.ndarray]

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (forward values only)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Tensor:
    """A float64 array plus an optional handle into the autodiff graph.

    Leaf parameters (created via :func:`parameter`) carry a name and a zero
    gradient accumulator.  Interior nodes remember their parents and how to
    push an output gradient back to them.
    """

    __slots__ = ("data", "name", "requires_grad", "grad", "op", "_parents", "_backward")

    def __init__(self, data, *, name: str | None = None, requires_grad: bool = False):
        self.data: Array = np.asarray(data, dtype=np.float64)
        self.name = name
        self.requires_grad = requires_grad
        self.grad: Array | None = np.zeros_like(self.data) if requires_grad else None
        self.op = "leaf"
        self._parents: tuple["Tensor", ...] = ()
        self._backward: Callable[[Array], tuple[Array | None, ...]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data)

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op!r}{tag})"


def parameter(data, name: str) -> Tensor:
    """Create a named leaf parameter that owns its data and accumulates gradients."""
    arr = np.array(data, dtype=np.float64)
    t = Tensor(arr, name=name, requires_grad=True)
    return t


def constant(data) -> Tensor:
    """Wrap data as a non-differentiable tensor (no-op for existing tensors)."""
    if isinstance(data, Tensor):
        return data
    return Tensor(np.asarray(data, dtype=np.float64))


def _record(out_data: Array, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    out = Tensor(out_data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.grad = None
        out._parents = tuple(parents)
        out._backward = backward
        out.op = op
    else:
        out.op = op
    return out


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, params: Iterable[Tensor] | None = None) -> GradientMap:
    """Reverse-mode sweep from a scalar loss.

    Returns a map from parameter name to gradient array for every named leaf
    the sweep reached.  When ``params`` is given, parameters not on any path
    to the loss get an exactly-zero entry of matching shape.  Accumulators of
    reached leaves are reset before the sweep, so repeated calls do not
    double-count.
    """
    if loss.data.shape != ():
        raise ContractError(f"backward expects a scalar loss, got shape {loss.data.shape}")
    order = _topo_order(loss)
    for node in order:
        if node.is_leaf and node.requires_grad:
            node.grad = np.zeros_like(node.data)
    grads: dict[int, Array] = {id(loss): np.ones((), dtype=np.float64)}
    result: GradientMap = {}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            if node.requires_grad:
                node.grad = node.grad + g
                if node.name is not None:
                    result[node.name] = node.grad
            continue
        contributions = node._backward(g)
        for parent, contribution in zip(node._parents, contributions):
            if contribution is None or not parent.requires_grad:
                continue
            held = grads.get(id(parent))
            grads[id(parent)] = contribution if held is None else held + contribution
    if params is not None:
        for p in params:
            if p.name is None:
                raise ContractError("requested gradient for an unnamed parameter")
            if p.name not in result:
                result[p.name] = np.zeros_like(p.data)
    return result


def _check_finite(t: Tensor, op: str) -> None:
    if not np.all(np.isfinite(t.data)):
        raise ContractError(f"{op}: input contains non-finite values")


# ---------------------------------------------------------------------------
# recorded primitives
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    Supported shapes: (m,k)@(k,n), (B,m,k)@(k,n) and (B,m,k)@(B,k,n).
    """
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2 or ad.ndim > 3 or bd.ndim > 3:
        raise ShapeError(f"matmul supports 2-d/3-d operands, got {ad.shape} and {bd.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions disagree between {ad.shape} and {bd.shape}")
    if ad.ndim == 2 and bd.ndim == 3:
        raise ShapeError(f"matmul: 2-d by 3-d is unsupported ({ad.shape} and {bd.shape})")
    if ad.ndim == 3 and bd.ndim == 3 and ad.shape[0] != bd.shape[0]:
        raise ShapeError(f"matmul: batch axes disagree between {ad.shape} and {bd.shape}")
    out = ad @ bd
    need_a, need_b = a.requires_grad, b.requires_grad

    def backward_fn(g: Array):
        ga = gb = None
        if need_a:
            ga = g @ np.swapaxes(bd, -1, -2)
        if need_b:
            if ad.ndim == 3 and bd.ndim == 2:
                gb = np.tensordot(ad, g, axes=((0, 1), (0, 1)))
            else:
                gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return _record(out, (a, b), backward_fn, "matmul")


def _suffix_compatible(a_shape: tuple[int, ...], b_shape: tuple[int, ...]) -> bool:
    return len(b_shape) < len(a_shape) and a_shape[len(a_shape) - len(b_shape):] == b_shape


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also accepts a trailing-axes operand (bias broadcast)."""
    if a.data.shape != b.data.shape and not _suffix_compatible(a.data.shape, b.data.shape):
        raise ShapeError(f"add: incompatible shapes {a.data.shape} and {b.data.shape}")
    out = a.data + b.data
    lead = a.data.ndim - b.data.ndim

    def backward_fn(g: Array):
        gb = g if lead == 0 else g.sum(axis=tuple(range(lead)))
        return g, gb

    return _record(out, (a, b), backward_fn, "add")


def subtract(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"subtract: shapes differ, {a.data.shape} and {b.data.shape}")
    return _record(a.data - b.data, (a, b), lambda g: (g, -g), "subtract")


def multiply(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product of same-shape tensors."""
    if a.data.shape != b.data.shape:
        raise ShapeError(f"multiply: shapes differ, {a.data.shape} and {b.data.shape}")
    ad, bd = a.data, b.data
    return _record(ad * bd, (a, b), lambda g: (g * bd, g * ad), "multiply")


def scalar_mul(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _record(a.data * c, (a,), lambda g: (g * c,), "scalar_mul")


def scalar_div(a: Tensor, c: float) -> Tensor:
    c = float(c)
    if c == 0.0:
        raise ContractError("scalar_div: divisor is zero")
    return _record(a.data / c, (a,), lambda g: (g / c,), "scalar_div")


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    if a.data.ndim < 2:
        raise ShapeError(f"transpose needs at least 2 axes, got shape {a.data.shape}")
    out = np.swapaxes(a.data, -1, -2).copy()
    return _record(out, (a,), lambda g: (np.swapaxes(g, -1, -2).copy(),), "transpose")


def concat_last(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate along the last axis."""
    if not parts:
        raise ShapeError("concat_last: no operands")
    lead = parts[0].data.shape[:-1]
    for p in parts:
        if p.data.shape[:-1] != lead:
            raise ShapeError(
                f"concat_last: leading shapes differ, {parts[0].data.shape} and {p.data.shape}"
            )
    sizes = [p.data.shape[-1] for p in parts]
    out = np.concatenate([p.data for p in parts], axis=-1)
    offsets = np.cumsum([0] + sizes)

    def backward_fn(g: Array):
        return tuple(g[..., offsets[i]:offsets[i + 1]].copy() for i in range(len(parts)))

    return _record(out, tuple(parts), backward_fn, "concat_last")


def split_last(a: Tensor, n_parts: int) -> list[Tensor]:
    """Split the last axis into ``n_parts`` equal slices."""
    width = a.data.shape[-1]
    if n_parts < 1 or width % n_parts != 0:
        raise ShapeError(f"split_last: cannot split last axis of {a.data.shape} into {n_parts}")
    step = width // n_parts
    outs = []
    for i in range(n_parts):
        lo, hi = i * step, (i + 1) * step

        def backward_fn(g: Array, lo=lo, hi=hi):
            full = np.zeros(a.data.shape)
            full[..., lo:hi] = g
            return (full,)

        outs.append(_record(a.data[..., lo:hi].copy(), (a,), backward_fn, "split_last"))
    return outs


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice along axis 0 or 1."""
    if axis not in (0, 1) or a.data.ndim <= axis:
        raise ShapeError(f"slice_axis: axis {axis} invalid for shape {a.data.shape}")
    if not (0 <= start < stop <= a.data.shape[axis]):
        raise ShapeError(f"slice_axis: range [{start}, {stop}) invalid for shape {a.data.shape}")
    index = (slice(None),) * axis + (slice(start, stop),)

    def backward_fn(g: Array):
        full = np.zeros(a.data.shape)
        full[index] = g
        return (full,)

    return _record(a.data[index].copy(), (a,), backward_fn, "slice_axis")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != a.data.size:
        raise ShapeError(f"reshape: cannot view {a.data.shape} as {shape}")
    return _record(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.data.shape),), "reshape")


def gather_rows(a: Tensor, indices) -> Tensor:
    """Select rows of a 2-d tensor by integer index (embedding lookup).

    ``indices`` may have any shape; the result appends the row width.
    """
    idx = np.asarray(indices)
    if a.data.ndim != 2:
        raise ShapeError(f"gather_rows expects a 2-d table, got shape {a.data.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.data.shape[0]):
        bad = int(idx.min()) if idx.min() < 0 else int(idx.max())
        raise VocabError(f"row id {bad} out of range for table of {a.data.shape[0]} rows")
    idx = idx.astype(np.intp)
    out = a.data[idx]

    def backward_fn(g: Array):
        full = np.zeros(a.data.shape)
        np.add.at(full, idx.ravel(), g.reshape(-1, a.data.shape[1]))
        return (full,)

    return _record(out, (a,), backward_fn, "gather_rows")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0
    return _record(np.maximum(a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def log(a: Tensor) -> Tensor:
    """Natural log; callers must guarantee positive input (see clip_min)."""
    ad = a.data
    return _record(np.log(ad), (a,), lambda g: (g / ad,), "log")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _record(out, (a,), lambda g: (g * out,), "exp")


def clip_min(a: Tensor, floor: float) -> Tensor:
    """max(x, floor) elementwise; gradient is zero at and below the floor."""
    floor = float(floor)
    mask = a.data > floor
    return _record(np.maximum(a.data, floor), (a,), lambda g: (g * mask,), "clip_min")


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax over the last axis, overflow-safe by max subtraction."""
    _check_finite(a, "softmax_rows")
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward_fn(g: Array):
        inner = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - inner),)

    return _record(out, (a,), backward_fn, "softmax_rows")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float) -> Tensor:
    """Normalize the last axis to zero mean / unit population variance, then scale and shift."""
    d = x.data.shape[-1]
    if gamma.data.shape != (d,) or beta.data.shape != (d,):
        raise ShapeError(
            f"layer_norm: scale/shift shapes {gamma.data.shape}/{beta.data.shape} "
            f"do not match feature width {d}"
        )
    if eps <= 0.0:
        raise ContractError(f"layer_norm: eps must be positive, got {eps}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = xhat * gamma.data + beta.data

    def backward_fn(g: Array):
        lead = tuple(range(g.ndim - 1))
        g_gamma = (g * xhat).sum(axis=lead)
        g_beta = g.sum(axis=lead)
        g_xhat = g * gamma.data
        mean_g = g_xhat.mean(axis=-1, keepdims=True)
        mean_gx = (g_xhat * xhat).mean(axis=-1, keepdims=True)
        g_x = inv * (g_xhat - mean_g - xhat * mean_gx)
        return g_x, g_gamma, g_beta

    return _record(out, (x, gamma, beta), backward_fn, "layer_norm")


def sum_all(a: Tensor) -> Tensor:
    out = np.asarray(a.data.sum())
    return _record(out, (a,), lambda g: (np.full(a.data.shape, float(g)),), "sum_all")


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    out = np.asarray(a.data.mean())
    return _record(out, (a,), lambda g: (np.full(a.data.shape, float(g) / n),), "mean_all")


def mean_axis(a: Tensor, axis: int) -> Tensor:
    if not (0 <= axis < a.data.ndim):
        raise ShapeError(f"mean_axis: axis {axis} invalid for shape {a.data.shape}")
    n = a.data.shape[axis]
    out = a.data.mean(axis=axis)

    def backward_fn(g: Array):
        return (np.repeat(np.expand_dims(g / n, axis), n, axis=axis),)

    return _record(out, (a,), backward_fn, "mean_axis")


# ---------------------------------------------------------------------------
# gradient oracle
# ---------------------------------------------------------------------------

def finite_diff_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
) -> float:
    """Compare analytic gradients of ``f()`` against central finite differences.

    ``f`` must be a deterministic closure over ``params`` (named leaf tensors,
    probed in place) returning a scalar tensor.  Returns the maximum over all
    coordinates of ``|analytic - numeric| / max(1e-8, |analytic| + |numeric|)``.
    Nonsmooth points (ReLU kinks, clip floors) are the caller's responsibility
    to avoid.
    """
    if h <= 0.0:
        raise ContractError(f"finite_diff_check: h must be positive, got {h}")
    first = f().item()
    second = f().item()
    if first != second:
        raise ContractError("finite_diff_check: f is not deterministic (two evaluations differ)")
    analytic = backward(f(), params=params)
    worst = 0.0
    for p in params:
        grad = analytic[p.name]
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + h
            with no_grad():
                plus = f().item()
            flat[i] = saved - h
            with no_grad():
                minus = f().item()
            flat[i] = saved
            numeric = (plus - minus) / (2.0 * h)
            a = grad.reshape(-1)[i]
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, err)
    return worst
