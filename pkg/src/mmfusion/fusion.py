"""Early fusion and classification head.

Text and visual feature vectors concatenate (text first) into a joint
vector, pass through optional ReLU hidden layers with dropout, then a
final affine map and softmax over the class set. Loss is mean categorical
cross-entropy computed from logits via log-sum-exp.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError
from .rng import keyed_rng
from .tensor import Tensor
from .text_encoder import xavier_uniform


@dataclass(frozen=True)
class FusionConfig:
    d_text: int
    d_visual: int
    hidden: tuple[int, ...] = (256,)
    dropout_rate: float = 0.1
    n_classes: int = 9

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.d_text < 1 or self.d_visual < 1:
            raise ConfigError(
                f"feature dims must be positive, got d_text={self.d_text}, "
                f"d_visual={self.d_visual}"
            )
        if any(h < 1 for h in self.hidden):
            raise ConfigError(f"hidden widths must be positive, got {list(self.hidden)}")
        if self.n_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.n_classes}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")

    @property
    def d_joint(self) -> int:
        return self.d_text + self.d_visual


@dataclass(frozen=True)
class HeadConfig:
    """Head over a single feature vector, for unimodal classifiers.

    Structurally identical to the fused head: the lone feature vector is
    the joint vector, so the same build/forward machinery applies.
    """

    d_in: int
    hidden: tuple[int, ...] = (256,)
    dropout_rate: float = 0.1
    n_classes: int = 9

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.d_in < 1:
            raise ConfigError(f"feature dim must be positive, got {self.d_in}")
        if any(h < 1 for h in self.hidden):
            raise ConfigError(f"hidden widths must be positive, got {list(self.hidden)}")
        if self.n_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.n_classes}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")

    @property
    def d_joint(self) -> int:
        return self.d_in


@dataclass
class Prediction:
    """Per-sample softmax output. Argmax ties break toward the lowest index."""

    probabilities: Tensor
    predicted_class: int
    logits: Tensor


class FusionState:
    def __init__(self, config: "FusionConfig | HeadConfig", params: dict[str, Tensor]):
        self.config = config
        self.params = params

    @classmethod
    def build(cls, config: "FusionConfig | HeadConfig", seed: int = 0) -> "FusionState":
        params: dict[str, Tensor] = {}
        dims = [config.d_joint, *config.hidden, config.n_classes]
        n_affines = len(dims) - 1
        for i in range(n_affines):
            rows, cols = dims[i], dims[i + 1]
            name = f"dense{i}" if i < n_affines - 1 else "out"
            rng = keyed_rng(seed, "init", "fusion", name)
            params[name + ".w"] = Tensor(xavier_uniform((rows, cols), rows, cols, rng),
                                         requires_grad=True)
            params[name + ".b"] = Tensor(np.zeros(cols, dtype=np.float32),
                                         requires_grad=True)
        return cls(config, params)

    def parameters(self) -> dict[str, Tensor]:
        return self.params


def fuse(f_text: Tensor, f_visual: Tensor, config: FusionConfig | None = None) -> Tensor:
    """Concatenate along the feature axis, text first."""
    if f_text.ndim != f_visual.ndim or f_text.shape[:-1] != f_visual.shape[:-1]:
        raise ConfigError(
            f"feature shapes disagree: {list(f_text.shape)} vs {list(f_visual.shape)}"
        )
    if config is not None:
        if f_text.shape[-1] != config.d_text or f_visual.shape[-1] != config.d_visual:
            raise ConfigError(
                f"feature dims ({f_text.shape[-1]}, {f_visual.shape[-1]}) do not match "
                f"config ({config.d_text}, {config.d_visual})"
            )
    return T.concat(f_text, f_visual, axis=f_text.ndim - 1)


def forward_logits(f_joint: Tensor, state: FusionState, training: bool = False,
                   dropout_seed: int = 0, step: int = 0) -> Tensor:
    """Joint features [B, d_joint] to logits [B, n_classes]."""
    cfg = state.config
    if f_joint.shape[-1] != cfg.d_joint:
        raise ConfigError(
            f"joint dim {f_joint.shape[-1]} does not match config {cfg.d_joint}"
        )
    h = f_joint
    for i in range(len(cfg.hidden)):
        h = T.relu(T.add(T.matmul(h, state.params[f"dense{i}.w"]),
                         state.params[f"dense{i}.b"]))
        # layer ids offset so fusion masks never collide with encoder masks
        h = T.dropout(h, cfg.dropout_rate, training, dropout_seed, 1000 + i, step)
    return T.add(T.matmul(h, state.params["out.w"]), state.params["out.b"])


def classify(f_joint: Tensor, state: FusionState, training: bool = False) -> Prediction:
    """Single joint vector [d_joint] to a Prediction."""
    if f_joint.ndim != 1:
        raise ConfigError(f"classify takes a single vector, got {list(f_joint.shape)}")
    logits = forward_logits(T.reshape(f_joint, (1, f_joint.shape[0])), state, training)
    logits = T.reshape(logits, (state.config.n_classes,))
    probs = T.softmax(logits, axis=-1)
    return Prediction(
        probabilities=probs,
        predicted_class=int(np.argmax(probs.data)),
        logits=logits,
    )


def cross_entropy(pred: Prediction, label: int) -> Tensor:
    """-log p(label), from logits via log-sum-exp."""
    c = pred.logits.shape[-1]
    if not 0 <= label < c:
        raise DataError(f"label {label} outside [0, {c})")
    return T.cross_entropy_from_logits(pred.logits, np.array([label]))


def batch_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy over a batch of logit rows."""
    return T.cross_entropy_from_logits(logits, labels)
