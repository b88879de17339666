"""Residual CNN image encoder.

A 3x3 stem followed by stages of residual blocks. Inside a stage every
block keeps shape: z = relu(norm(conv3x3(x))), out = z + x. Between
stages a stride-2 3x3 conv halves the map and widens channels, with a
stride-2 1x1 projection carrying the skip. Features are the global
average pool of the last map, so the output width is the final stage
width regardless of resolution.

Normalization is per-channel over the spatial plane (batch-independent),
with learned per-channel gain and shift.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError
from .rng import keyed_rng
from .tensor import Tensor
from .text_encoder import xavier_uniform


@dataclass(frozen=True)
class VisionEncoderConfig:
    widths: tuple[int, ...] = (16, 32, 64)
    blocks_per_stage: int = 1
    resolution: int = 32

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        object.__setattr__(self, "widths", widths)
        if not widths or any(w < 1 for w in widths):
            raise ConfigError(f"widths must be positive, got {list(widths)}")
        if any(b > a for a, b in zip(widths[1:], widths)):
            raise ConfigError(f"widths must be nondecreasing, got {list(widths)}")
        if self.blocks_per_stage < 1:
            raise ConfigError(f"blocks_per_stage must be >= 1, got {self.blocks_per_stage}")
        if self.resolution < 1 or self.resolution % (2 ** len(widths)) != 0:
            raise ConfigError(
                f"resolution {self.resolution} not divisible by 2^{len(widths)}"
            )

    @property
    def d_visual(self) -> int:
        return self.widths[-1]


class VisionEncoderState:
    """Config plus named conv/norm parameter tensors."""

    def __init__(self, config: VisionEncoderConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params

    @classmethod
    def build(cls, config: VisionEncoderConfig, seed: int = 0) -> "VisionEncoderState":
        params: dict[str, Tensor] = {}

        def conv(name, cout, cin, k):
            rng = keyed_rng(seed, "init", "vision", name)
            fan_in, fan_out = cin * k * k, cout * k * k
            params[name] = Tensor(
                xavier_uniform((cout, cin, k, k), fan_in, fan_out, rng),
                requires_grad=True)

        def norm(prefix, c):
            params[prefix + ".gain"] = Tensor(np.ones((c, 1, 1), dtype=np.float32),
                                              requires_grad=True)
            params[prefix + ".bias"] = Tensor(np.zeros((c, 1, 1), dtype=np.float32),
                                              requires_grad=True)

        widths = config.widths
        conv("stem.conv", widths[0], 3, 3)
        norm("stem.norm", widths[0])
        for i, w in enumerate(widths):
            if i > 0:
                conv(f"stage{i}.down.conv", w, widths[i - 1], 3)
                norm(f"stage{i}.down.norm", w)
                conv(f"stage{i}.down.proj", w, widths[i - 1], 1)
            for j in range(config.blocks_per_stage):
                conv(f"stage{i}.block{j}.conv", w, w, 3)
                norm(f"stage{i}.block{j}.norm", w)
        return cls(config, params)

    def parameters(self) -> dict[str, Tensor]:
        return self.params


def _channel_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    return T.add(T.mul(T.normalize(x, 2), gain), bias)


def encode_batch(x: Tensor, state: VisionEncoderState, training: bool = False) -> Tensor:
    """Standardized images [B, 3, R, R] to features [B, d_visual]."""
    cfg = state.config
    p = state.params
    r = cfg.resolution
    if x.ndim != 4 or x.shape[1] != 3 or x.shape[2] != r or x.shape[3] != r:
        raise DataError(
            f"expected images [B,3,{r},{r}], got {list(x.shape)}"
        )
    h = T.relu(_channel_norm(T.conv2d(x, p["stem.conv"], 1, 1),
                             p["stem.norm.gain"], p["stem.norm.bias"]))
    for i in range(len(cfg.widths)):
        if i > 0:
            main = T.relu(_channel_norm(
                T.conv2d(h, p[f"stage{i}.down.conv"], 2, 1),
                p[f"stage{i}.down.norm.gain"], p[f"stage{i}.down.norm.bias"]))
            skip = T.conv2d(h, p[f"stage{i}.down.proj"], 2, 0)
            h = T.add(main, skip)
        for j in range(cfg.blocks_per_stage):
            z = T.relu(_channel_norm(
                T.conv2d(h, p[f"stage{i}.block{j}.conv"], 1, 1),
                p[f"stage{i}.block{j}.norm.gain"], p[f"stage{i}.block{j}.norm.bias"]))
            h = T.add(z, h)
    return T.global_avg_pool(h)


def encode_image(x, state: VisionEncoderState, training: bool = False) -> Tensor:
    """Single image [3, R, R] to features [d_visual]."""
    arr = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float32))
    if arr.ndim != 3:
        raise DataError(f"expected a single image [3,R,R], got {list(arr.shape)}")
    feats = encode_batch(T.reshape(arr, (1,) + tuple(arr.shape)), state, training)
    return T.reshape(feats, (state.config.d_visual,))
