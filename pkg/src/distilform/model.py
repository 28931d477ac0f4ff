"""Transformer encoder classifier: embeddings, sinusoidal positions,
multi-head self-attention, feed-forward blocks, post-norm residuals, and a
classification head read from the prepended CLS position.

Layout conventions: activations are ``[batch, seq, d_model]`` (single
sequences ``[seq, d_model]`` also work for the attention primitives); padding
is excluded by adding -1e9 to masked key scores before the softmax, which
drives their attention weights to exactly zero in float64.

Parameter count as a function of the config (tested against the per-tensor
sum):

    vocab_size * d_model + d_model                      # embedding + bias
  + num_layers * (4 * d_model**2                        # Q, K, V, O
                  + 2 * d_model * d_ff + d_ff + d_model # FFN weights + biases
                  + 4 * d_model)                        # two layer-norm pairs
  + d_model * num_classes + num_classes                 # classifier head
"""

from __future__ import annotations

import hashlib
import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, LengthError, ShapeError, VocabError
from .tensor import (
    Tensor,
    add,
    concat_last,
    constant,
    gather_rows,
    layer_norm,
    matmul,
    parameter,
    relu,
    reshape,
    scalar_mul,
    slice_axis,
    softmax_rows,
    split_last,
    transpose,
)

MASK_FILL = -1e9


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; reference full-scale setting is 12 layers / 8 heads."""

    num_layers: int
    num_heads: int
    d_model: int
    d_ff: int
    vocab_size: int
    max_seq_len: int
    num_classes: int
    layernorm_eps: float = 1e-5

    def __post_init__(self) -> None:
        if self.num_layers < 1:
            raise ConfigError(f"num_layers must be >= 1, got {self.num_layers}")
        if self.num_heads < 1:
            raise ConfigError(f"num_heads must be >= 1, got {self.num_heads}")
        if self.d_model < 2:
            raise ConfigError(f"d_model must be >= 2, got {self.d_model}")
        if self.d_model % 2 != 0:
            raise ConfigError(f"d_model must be even for sinusoidal positions, got {self.d_model}")
        if self.d_model % self.num_heads != 0:
            raise ConfigError(
                f"d_model {self.d_model} is not divisible by num_heads {self.num_heads}"
            )
        if self.d_ff < 1:
            raise ConfigError(f"d_ff must be >= 1, got {self.d_ff}")
        if self.vocab_size < 4:
            raise ConfigError(f"vocab_size must be >= 4, got {self.vocab_size}")
        if self.max_seq_len < 2:
            raise ConfigError(f"max_seq_len must be >= 2, got {self.max_seq_len}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.layernorm_eps <= 0.0:
            raise ConfigError(f"layernorm_eps must be positive, got {self.layernorm_eps}")

    @property
    def d_head(self) -> int:
        return self.d_model // self.num_heads


def parameter_count(config: ModelConfig) -> int:
    """Closed-form total parameter count (see module docstring)."""
    d, f = config.d_model, config.d_ff
    per_layer = 4 * d * d + 2 * d * f + f + d + 4 * d
    return (
        config.vocab_size * d
        + d
        + config.num_layers * per_layer
        + d * config.num_classes
        + config.num_classes
    )


def positional_encoding(seq_len: int, d_model: int) -> np.ndarray:
    """Sinusoidal position signal: pair i uses angle pos / 10000**(2i/d_model),
    sine on even columns and cosine on odd columns."""
    if d_model % 2 != 0:
        raise ConfigError(f"positional encoding needs even d_model, got {d_model}")
    if seq_len < 1:
        raise ConfigError(f"seq_len must be >= 1, got {seq_len}")
    positions = np.arange(seq_len, dtype=np.float64)[:, None]
    pair = np.arange(d_model // 2, dtype=np.float64)[None, :]
    angles = positions / np.power(10000.0, 2.0 * pair / d_model)
    pe = np.empty((seq_len, d_model), dtype=np.float64)
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles)
    return pe


@dataclass
class LayerParams:
    """Parameter tensors of one encoder layer (fused per-projection matrices)."""

    W_q: Tensor
    W_k: Tensor
    W_v: Tensor
    W_o: Tensor
    W_1: Tensor
    b_1: Tensor
    W_2: Tensor
    b_2: Tensor
    ln1_gamma: Tensor
    ln1_beta: Tensor
    ln2_gamma: Tensor
    ln2_beta: Tensor


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _additive_mask(mask: np.ndarray, seq_len: int) -> Tensor:
    """Boolean key mask -> additive score penalty shaped like the score matrix."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape[-1] != seq_len:
        raise ShapeError(f"mask covers {mask.shape[-1]} keys, scores expect {seq_len}")
    if not mask.any(axis=-1).all():
        raise ContractError("attention mask leaves some sequence with no unmasked key")
    penalty = np.where(mask, 0.0, MASK_FILL)
    if mask.ndim == 1:
        tiled = np.broadcast_to(penalty[None, :], (seq_len, seq_len)).copy()
    else:
        tiled = np.broadcast_to(penalty[:, None, :], (mask.shape[0], seq_len, seq_len)).copy()
    return constant(tiled)


def scaled_dot_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    mask: np.ndarray,
    return_weights: bool = False,
):
    """softmax(Q K^T / sqrt(d_k) + mask penalty) V over the last two axes.

    ``mask`` is boolean over key positions (True = real token), shaped [seq]
    or [batch, seq] to match 2-d or 3-d operands.
    """
    if q.shape != k.shape or q.shape != v.shape:
        raise ShapeError(f"attention operands disagree: {q.shape}, {k.shape}, {v.shape}")
    seq_len, d_k = q.shape[-2], q.shape[-1]
    scores = scalar_mul(matmul(q, transpose(k)), 1.0 / math.sqrt(d_k))
    scores = add(scores, _additive_mask(mask, seq_len))
    weights = softmax_rows(scores)
    out = matmul(weights, v)
    if return_weights:
        return out, weights
    return out


def multi_head_attention(x: Tensor, layer: LayerParams, mask: np.ndarray, num_heads: int) -> Tensor:
    """Slice fused projections into heads, attend per head, concat, re-project."""
    q = matmul(x, layer.W_q)
    k = matmul(x, layer.W_k)
    v = matmul(x, layer.W_v)
    heads = [
        scaled_dot_attention(qi, ki, vi, mask)
        for qi, ki, vi in zip(split_last(q, num_heads), split_last(k, num_heads), split_last(v, num_heads))
    ]
    return matmul(concat_last(heads), layer.W_o)


def feed_forward(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """Row-wise max(0, x W1 + b1) W2 + b2."""
    return add(matmul(relu(add(matmul(x, w1), b1)), w2), b2)


def encoder_layer_forward(
    x: Tensor,
    layer: LayerParams,
    mask: np.ndarray,
    num_heads: int,
    eps: float,
) -> Tensor:
    """Post-norm residual block: LN(x + MHA(x)) then LN(y + FFN(y))."""
    y = layer_norm(add(x, multi_head_attention(x, layer, mask, num_heads)), layer.ln1_gamma, layer.ln1_beta, eps)
    z = layer_norm(
        add(y, feed_forward(y, layer.W_1, layer.b_1, layer.W_2, layer.b_2)),
        layer.ln2_gamma,
        layer.ln2_beta,
        eps,
    )
    return z


class EncoderModel:
    """Config plus the full named parameter set of the encoder classifier."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor]):
        self.config = config
        expected = {name: shape for name, shape in self.parameter_shapes(config)}
        if set(params) != set(expected):
            missing = sorted(set(expected) - set(params))
            extra = sorted(set(params) - set(expected))
            raise ContractError(f"parameter set mismatch: missing {missing}, extra {extra}")
        for name, shape in expected.items():
            if params[name].shape != shape:
                raise ShapeError(
                    f"parameter {name} has shape {params[name].shape}, expected {shape}"
                )
        self._params = {name: params[name] for name, _ in self.parameter_shapes(config)}
        self.W_e = self._params["W_e"]
        self.b_e = self._params["b_e"]
        self.W_cls = self._params["W_cls"]
        self.b_cls = self._params["b_cls"]
        self.layers = [
            LayerParams(**{f: self._params[f"layers.{i}.{f}"] for f in LayerParams.__annotations__})
            for i in range(config.num_layers)
        ]

    @staticmethod
    def parameter_shapes(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
        """Canonical (name, shape) order; fixes init, checkpoint, and optimizer order."""
        d, f = config.d_model, config.d_ff
        shapes: list[tuple[str, tuple[int, ...]]] = [
            ("W_e", (config.vocab_size, d)),
            ("b_e", (d,)),
        ]
        for i in range(config.num_layers):
            prefix = f"layers.{i}."
            shapes += [
                (prefix + "W_q", (d, d)),
                (prefix + "W_k", (d, d)),
                (prefix + "W_v", (d, d)),
                (prefix + "W_o", (d, d)),
                (prefix + "W_1", (d, f)),
                (prefix + "b_1", (f,)),
                (prefix + "W_2", (f, d)),
                (prefix + "b_2", (d,)),
                (prefix + "ln1_gamma", (d,)),
                (prefix + "ln1_beta", (d,)),
                (prefix + "ln2_gamma", (d,)),
                (prefix + "ln2_beta", (d,)),
            ]
        shapes += [
            ("W_cls", (d, config.num_classes)),
            ("b_cls", (config.num_classes,)),
        ]
        return shapes

    @classmethod
    def init(cls, config: ModelConfig, seed: int) -> "EncoderModel":
        """Seeded scaled-uniform init: weights Glorot-uniform, biases zero,
        layer-norm scale one / shift zero."""
        rng = np.random.Generator(np.random.PCG64(seed))
        params: dict[str, Tensor] = {}
        for name, shape in cls.parameter_shapes(config):
            short = name.rsplit(".", 1)[-1]
            if short.startswith("b"):
                data = np.zeros(shape)
            elif short.endswith("gamma"):
                data = np.ones(shape)
            elif short.endswith("beta"):
                data = np.zeros(shape)
            else:
                data = _glorot(rng, shape[0], shape[1], shape)
            params[name] = parameter(data, name)
        return cls(config, params)

    def param_items(self) -> list[tuple[str, Tensor]]:
        return list(self._params.items())

    def parameters(self) -> list[Tensor]:
        return list(self._params.values())

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self._params.values())

    def embed(self, token_ids: np.ndarray) -> Tensor:
        """Embedding rows plus bias for an id array of any shape."""
        ids = np.asarray(token_ids)
        if ids.size and (ids.min() < 0 or ids.max() >= self.config.vocab_size):
            bad = int(ids.min()) if ids.min() < 0 else int(ids.max())
            raise VocabError(
                f"token id {bad} out of range for vocabulary of size {self.config.vocab_size}"
            )
        return add(gather_rows(self.W_e, ids), self.b_e)

    def forward(
        self,
        token_ids: np.ndarray,
        mask: np.ndarray,
        return_hidden: bool = False,
    ):
        """Token ids [batch, seq] -> classifier logits [batch, num_classes].

        Position 0 must be the classification token.  ``return_hidden`` also
        yields the final layer's hidden states [batch, seq, d_model].
        """
        ids = np.asarray(token_ids)
        if ids.ndim != 2:
            raise ShapeError(f"forward expects [batch, seq] ids, got shape {ids.shape}")
        batch, seq_len = ids.shape
        if seq_len > self.config.max_seq_len:
            raise LengthError(
                f"sequence length {seq_len} exceeds max_seq_len {self.config.max_seq_len}"
            )
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != ids.shape:
            raise ShapeError(f"mask shape {mask.shape} does not match ids shape {ids.shape}")
        x = self.embed(ids)
        x = add(x, constant(positional_encoding(seq_len, self.config.d_model)))
        for layer in self.layers:
            x = encoder_layer_forward(x, layer, mask, self.config.num_heads, self.config.layernorm_eps)
        cls_hidden = reshape(slice_axis(x, 1, 0, 1), (batch, self.config.d_model))
        logits = add(matmul(cls_hidden, self.W_cls), self.b_cls)
        if return_hidden:
            return logits, x
        return logits


def encode(token_ids: np.ndarray, model: EncoderModel, mask: np.ndarray) -> Tensor:
    """Functional alias for :meth:`EncoderModel.forward`."""
    return model.forward(token_ids, mask)


# ---------------------------------------------------------------------------
# checkpoint format: one text manifest line, then raw little-endian float64
# parameter data in manifest order.
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = "TKD1"
_CONFIG_FIELDS = (
    "num_layers",
    "num_heads",
    "d_model",
    "d_ff",
    "vocab_size",
    "max_seq_len",
    "num_classes",
    "layernorm_eps",
)


def checkpoint_bytes(model: EncoderModel) -> bytes:
    """Serialize the model: manifest line with config and parameter list,
    followed by all parameter data as little-endian float64."""
    cfg = model.config
    fields = " ".join(f"{name}={getattr(cfg, name)!r}" for name in _CONFIG_FIELDS)
    manifest_params = ",".join(
        f"{name}:{'x'.join(str(s) for s in tensor.shape)}" for name, tensor in model.param_items()
    )
    buf = io.BytesIO()
    buf.write(f"{CHECKPOINT_MAGIC} {fields} params={manifest_params}\n".encode("ascii"))
    for _, tensor in model.param_items():
        buf.write(np.ascontiguousarray(tensor.data, dtype="<f8").tobytes())
    return buf.getvalue()


def save_checkpoint(model: EncoderModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(model))


def checkpoint_checksum(model: EncoderModel) -> str:
    """Stable short identity of a parameter state (sha256 prefix of the serialization)."""
    return hashlib.sha256(checkpoint_bytes(model)).hexdigest()[:16]


def load_checkpoint(path) -> EncoderModel:
    """Rebuild a model bit-exactly from :func:`save_checkpoint` output."""
    with open(path, "rb") as fh:
        blob = fh.read()
    newline = blob.find(b"\n")
    if newline < 0:
        raise ContractError(f"{path}: missing checkpoint manifest line")
    manifest = blob[:newline].decode("ascii")
    parts = manifest.split(" ")
    if parts[0] != CHECKPOINT_MAGIC:
        raise ContractError(f"{path}: bad checkpoint magic {parts[0]!r}")
    kv: dict[str, str] = {}
    for token in parts[1:]:
        key, _, value = token.partition("=")
        kv[key] = value
    missing = [name for name in _CONFIG_FIELDS if name not in kv]
    if "params" not in kv:
        missing.append("params")
    if missing:
        raise ContractError(f"{path}: manifest missing fields {missing}")
    config = ModelConfig(
        num_layers=int(kv["num_layers"]),
        num_heads=int(kv["num_heads"]),
        d_model=int(kv["d_model"]),
        d_ff=int(kv["d_ff"]),
        vocab_size=int(kv["vocab_size"]),
        max_seq_len=int(kv["max_seq_len"]),
        num_classes=int(kv["num_classes"]),
        layernorm_eps=float(kv["layernorm_eps"]),
    )
    params: dict[str, Tensor] = {}
    offset = newline + 1
    for entry in kv["params"].split(","):
        name, _, shape_text = entry.partition(":")
        shape = tuple(int(s) for s in shape_text.split("x"))
        count = int(np.prod(shape))
        data = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(shape)
        offset += count * 8
        params[name] = parameter(data.astype(np.float64), name)
    if offset != len(blob):
        raise ContractError(f"{path}: {len(blob) - offset} trailing bytes after parameter data")
    return EncoderModel(config, params)
