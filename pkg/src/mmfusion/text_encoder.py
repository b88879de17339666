"""Transformer text encoder.

Token ids embed into d_model, get scaled by sqrt(d_model), receive fixed
sinusoidal positions, then pass through pre-norm residual blocks
(multi-head self-attention with a padding mask, GELU feed-forward). The
sequence feature is the position-0 hidden vector after a final layer norm.

Padding handling: masked key positions receive a -1e9 score bias before
the softmax. That drives their attention weights to exactly zero in IEEE
arithmetic, so outputs at real positions are bit-invariant to whatever
sits in the padded slots.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError
from .rng import keyed_rng
from .tensor import Tensor

MASK_BIAS = -1e9


@dataclass(frozen=True)
class TextEncoderConfig:
    vocab_size: int
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    d_ff: int = 256
    max_len: int = 64
    dropout_rate: float = 0.1

    def __post_init__(self):
        if self.vocab_size < 5:
            raise ConfigError(f"vocab_size must cover the specials, got {self.vocab_size}")
        if self.d_model <= 0 or self.d_model % 2 != 0:
            raise ConfigError(f"d_model must be positive and even, got {self.d_model}")
        if self.n_heads <= 0 or self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )
        if self.n_layers < 1 or self.d_ff < 1 or self.max_len < 2:
            raise ConfigError("n_layers, d_ff must be >= 1 and max_len >= 2")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")

    @property
    def d_k(self) -> int:
        return self.d_model // self.n_heads


def positional_encoding(max_len: int, d_model: int) -> Tensor:
    """Fixed sinusoidal table [max_len, d_model], evaluated in 64-bit.

    Column pair 2i uses angular frequency 1/10000^(2i/d_model):
    even columns take the sine, odd columns the cosine.
    """
    if d_model <= 0 or d_model % 2 != 0:
        raise ConfigError(f"d_model must be positive and even, got {d_model}")
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    i2 = np.arange(0, d_model, 2, dtype=np.float64)
    angles = pos / np.power(10000.0, i2 / d_model)
    pe = np.empty((max_len, d_model), dtype=np.float64)
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles)
    return Tensor(pe.astype(np.float32))


def xavier_uniform(shape: tuple[int, ...], fan_in: int, fan_out: int,
                   rng: np.random.Generator) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(np.float32)


def _mask_bias(mask: np.ndarray, scores_shape: tuple[int, ...], dtype) -> Tensor:
    """Materialize the additive key-mask bias at the full scores shape."""
    mask = np.asarray(mask)
    bias = np.where(mask == 0, MASK_BIAS, 0.0).astype(dtype)
    lead = mask.shape[:-1] + (1,) * (len(scores_shape) - mask.ndim)
    bias = bias.reshape(lead + (mask.shape[-1],))
    return Tensor(np.broadcast_to(bias, scores_shape).copy())


def attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None = None,
              d_k: int | None = None) -> Tensor:
    """softmax(q kT / sqrt(d_k) + mask_bias) v over the last two axes.

    `mask` is a {0,1} key mask whose trailing axis is the sequence length;
    leading axes must match q's batch axes. `d_k` overrides the scaling
    dimension (defaults to q's trailing dim).
    """
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ConfigError(
            f"attention shapes disagree: q {list(q.shape)}, k {list(k.shape)}, v {list(v.shape)}"
        )
    if d_k is None:
        d_k = q.shape[-1]
    axes = list(range(k.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    scores = T.scale(T.matmul(q, T.transpose(k, axes)), 1.0 / math.sqrt(d_k))
    if mask is not None:
        scores = T.add(scores, _mask_bias(mask, scores.shape, scores.dtype))
    return T.matmul(T.softmax(scores, axis=-1), v)


class TextEncoderState:
    """Config, positional table, and named parameter tensors."""

    def __init__(self, config: TextEncoderConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params
        self.positions = positional_encoding(config.max_len, config.d_model)

    @classmethod
    def build(cls, config: TextEncoderConfig, seed: int = 0) -> "TextEncoderState":
        d, ff, v = config.d_model, config.d_ff, config.vocab_size
        params: dict[str, Tensor] = {}

        def mat(name, rows, cols):
            rng = keyed_rng(seed, "init", "text", name)
            params[name] = Tensor(xavier_uniform((rows, cols), rows, cols, rng),
                                  requires_grad=True)

        def vec(name, size, value=0.0):
            params[name] = Tensor(np.full(size, value, dtype=np.float32),
                                  requires_grad=True)

        mat("embed.table", v, d)
        for i in range(config.n_layers):
            p = f"layer{i}."
            for nm in ("att.wq", "att.wk", "att.wv", "att.wo"):
                mat(p + nm, d, d)
            # no key bias: softmax is invariant to a per-row score shift,
            # so a bias on k cannot affect the function
            for nm in ("att.bq", "att.bv", "att.bo"):
                vec(p + nm, d)
            vec(p + "att.norm.gain", d, 1.0)
            vec(p + "att.norm.bias", d)
            mat(p + "ff.w1", d, ff)
            vec(p + "ff.b1", ff)
            mat(p + "ff.w2", ff, d)
            vec(p + "ff.b2", d)
            vec(p + "ff.norm.gain", d, 1.0)
            vec(p + "ff.norm.bias", d)
        vec("final_norm.gain", d, 1.0)
        vec("final_norm.bias", d)
        return cls(config, params)

    def parameters(self) -> dict[str, Tensor]:
        return self.params


def _layer_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    return T.add(T.mul(T.normalize(x, 1), gain), bias)


def encode_batch(ids: np.ndarray, mask: np.ndarray, state: TextEncoderState,
                 training: bool = False, dropout_seed: int = 0, step: int = 0) -> Tensor:
    """Encode id matrix [B, L] with key mask [B, L] to features [B, d_model]."""
    cfg = state.config
    p = state.params
    ids = np.atleast_2d(np.asarray(ids, dtype=np.int64))
    mask = np.atleast_2d(np.asarray(mask))
    b, length = ids.shape
    if length > cfg.max_len:
        raise DataError(f"sequence length {length} exceeds max_len {cfg.max_len}")
    if mask.shape != ids.shape:
        raise DataError(f"mask shape {list(mask.shape)} != ids shape {list(ids.shape)}")
    if ids.max(initial=0) >= cfg.vocab_size:
        raise DataError(
            f"token id {int(ids.max())} out of range for vocab_size {cfg.vocab_size}"
        )

    d, h, dk = cfg.d_model, cfg.n_heads, cfg.d_k
    x = T.embedding(p["embed.table"], ids)
    x = T.scale(x, math.sqrt(d))
    positions = state.positions
    if positions.dtype != x.dtype:  # float64 runs (gradcheck) share the f32 table
        positions = Tensor(positions.data.astype(x.dtype))
    x = T.add(x, T.narrow(positions, 0, 0, length))

    layer_id = 0
    for i in range(cfg.n_layers):
        pre = f"layer{i}."
        xn = _layer_norm(x, p[pre + "att.norm.gain"], p[pre + "att.norm.bias"])
        q = T.add(T.matmul(xn, p[pre + "att.wq"]), p[pre + "att.bq"])
        k = T.matmul(xn, p[pre + "att.wk"])
        v = T.add(T.matmul(xn, p[pre + "att.wv"]), p[pre + "att.bv"])

        def heads(t):
            return T.transpose(T.reshape(t, (b, length, h, dk)), (0, 2, 1, 3))

        ctx = attention(heads(q), heads(k), heads(v), mask=mask, d_k=dk)
        merged = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (b, length, d))
        out = T.add(T.matmul(merged, p[pre + "att.wo"]), p[pre + "att.bo"])
        out = T.dropout(out, cfg.dropout_rate, training, dropout_seed, layer_id, step)
        layer_id += 1
        x = T.add(x, out)

        xn = _layer_norm(x, p[pre + "ff.norm.gain"], p[pre + "ff.norm.bias"])
        hidden = T.gelu(T.add(T.matmul(xn, p[pre + "ff.w1"]), p[pre + "ff.b1"]))
        out = T.add(T.matmul(hidden, p[pre + "ff.w2"]), p[pre + "ff.b2"])
        out = T.dropout(out, cfg.dropout_rate, training, dropout_seed, layer_id, step)
        layer_id += 1
        x = T.add(x, out)

    x = _layer_norm(x, p["final_norm.gain"], p["final_norm.bias"])
    cls = T.narrow(x, 1, 0, 1)
    return T.reshape(cls, (b, d))


def encode_text(seq, state: TextEncoderState, training: bool = False) -> Tensor:
    """Single-sequence convenience wrapper: TokenSequence -> [d_model]."""
    feats = encode_batch(seq.ids[None, :], seq.attention_mask[None, :], state, training)
    return T.reshape(feats, (state.config.d_model,))
