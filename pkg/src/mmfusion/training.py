"""Dataset splitting, Adam with parameter groups, and the training loop.

Splits are stratified per class with largest-remainder rounding, so the
class mix of every split tracks the requested fractions to within one
sample. Optimization is Adam with bias correction and two learning-rate
groups keyed off parameter-name prefixes: ``fusion.*`` trains at the head
rate, everything else (both encoders) at the encoder rate. Training runs
with per-epoch seeded shuffling, per-epoch validation, and patience-based
early stopping that restores the best-validation checkpoint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError, DivergenceError
from .rng import keyed_rng
from .tensor import Tape, Tensor


def largest_remainder(total: int, weights: Sequence[float]) -> list[int]:
    """Apportion ``total`` items proportionally to ``weights``.

    Floors the exact quotas, then hands the leftover units to the largest
    fractional remainders; remainder ties break toward the lower index.
    Guarantees each count is within one of its exact quota and the counts
    sum to ``total``.
    """
    if total < 0:
        raise ConfigError(f"cannot apportion a negative total: {total}")
    w = [float(x) for x in weights]
    if not w or any(x < 0 for x in w):
        raise ConfigError(f"weights must be non-negative and non-empty, got {w}")
    denom = sum(w)
    if denom <= 0:
        raise ConfigError("weights sum to zero")
    quotas = [total * x / denom for x in w]
    counts = [int(math.floor(q)) for q in quotas]
    leftover = total - sum(counts)
    order = sorted(range(len(w)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:leftover]:
        counts[i] += 1
    return counts


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.70
    val_fraction: float = 0.10
    test_fraction: float = 0.20
    stratified: bool = True
    seed: int = 0

    def __post_init__(self):
        fracs = (self.train_fraction, self.val_fraction, self.test_fraction)
        if any(f < 0 for f in fracs):
            raise ConfigError(f"split fractions must be non-negative, got {fracs}")
        if not math.isclose(sum(fracs), 1.0, rel_tol=0.0, abs_tol=1e-9):
            raise ConfigError(f"split fractions must sum to 1, got {sum(fracs)}")

    @property
    def fractions(self) -> tuple[float, float, float]:
        return (self.train_fraction, self.val_fraction, self.test_fraction)


@dataclass
class SplitIndices:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def sizes(self) -> tuple[int, int, int]:
        return (len(self.train), len(self.val), len(self.test))


def _partition(indices: np.ndarray, fractions: Sequence[float],
               rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    counts = largest_remainder(len(indices), fractions)
    perm = indices[rng.permutation(len(indices))]
    a = perm[:counts[0]]
    b = perm[counts[0]:counts[0] + counts[1]]
    c = perm[counts[0] + counts[1]:]
    return a, b, c


def stratified_split(labels: np.ndarray, spec: SplitSpec) -> SplitIndices:
    """Split sample indices into train/val/test per the requested fractions.

    Stratified mode apportions each class independently with its own
    seeded shuffle, so the class mix of every split matches the overall
    fractions to within one sample per class. Classes with fewer than
    three samples cannot land in all three splits and are rejected.
    """
    labels = np.asarray(labels)
    if labels.ndim != 1 or len(labels) == 0:
        raise DataError(f"labels must be a non-empty 1-D array, got shape {list(labels.shape)}")
    if not spec.stratified:
        rng = keyed_rng(spec.seed, "split", "all")
        tr, va, te = _partition(np.arange(len(labels), dtype=np.int64),
                                spec.fractions, rng)
        return SplitIndices(np.sort(tr), np.sort(va), np.sort(te))
    train_parts, val_parts, test_parts = [], [], []
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls).astype(np.int64)
        if len(idx) < 3:
            raise DataError(
                f"class {cls} has only {len(idx)} samples; stratified "
                f"splitting needs at least 3 per class"
            )
        rng = keyed_rng(spec.seed, "split", int(cls))
        tr, va, te = _partition(idx, spec.fractions, rng)
        train_parts.append(tr)
        val_parts.append(va)
        test_parts.append(te)
    return SplitIndices(
        np.sort(np.concatenate(train_parts)),
        np.sort(np.concatenate(val_parts)),
        np.sort(np.concatenate(test_parts)),
    )


@dataclass(frozen=True)
class OptimizerSpec:
    algorithm: str = "adam"
    lr_encoder: float = 1e-5
    lr_fusion: float = 3e-5
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 5
    clip_norm: float = 5.0

    def __post_init__(self):
        if self.algorithm != "adam":
            raise ConfigError(f"unsupported optimizer: {self.algorithm!r}")
        if self.lr_encoder <= 0 or self.lr_fusion <= 0:
            raise ConfigError(
                f"learning rates must be positive, got encoder={self.lr_encoder}, "
                f"fusion={self.lr_fusion}"
            )
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError(f"betas must be in [0, 1), got ({self.beta1}, {self.beta2})")
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be at least 1, got {self.batch_size}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be at least 1, got {self.max_epochs}")
        if self.patience < 1:
            raise ConfigError(f"patience must be at least 1, got {self.patience}")
        if self.clip_norm <= 0:
            raise ConfigError(f"clip_norm must be positive, got {self.clip_norm}")


def adam_step(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray,
              t: int, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              epsilon: float = 1e-8) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One bias-corrected Adam update; ``t`` counts from 1."""
    if t < 1:
        raise ConfigError(f"step count must start at 1, got {t}")
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * (grad * grad)
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    param = param - lr * m_hat / (np.sqrt(v_hat) + epsilon)
    return param, m, v


def group_of(name: str) -> str:
    """Learning-rate group for a parameter name: head vs encoders."""
    return "fusion" if name.startswith("fusion.") else "encoder"


class Adam:
    """Adam over a named parameter dict with per-group learning rates."""

    def __init__(self, params: dict[str, Tensor], spec: OptimizerSpec):
        self.params = params
        self.spec = spec
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in params.items()}

    def learning_rate(self, name: str) -> float:
        return self.spec.lr_fusion if group_of(name) == "fusion" else self.spec.lr_encoder

    def step(self) -> None:
        """Consume accumulated gradients; a missing gradient counts as zero."""
        self.t += 1
        s = self.spec
        for name, p in self.params.items():
            grad = p.grad if p.grad is not None else np.zeros_like(p.data)
            p.data, self.m[name], self.v[name] = adam_step(
                p.data, grad, self.m[name], self.v[name], self.t,
                self.learning_rate(name), s.beta1, s.beta2, s.epsilon,
            )

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def global_grad_norm(params: dict[str, Tensor]) -> float:
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            g = p.grad.astype(np.float64, copy=False)
            total += float(np.sum(g * g))
    return math.sqrt(total)


def clip_gradients(params: dict[str, Tensor], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``.

    Returns the pre-clip norm for diagnostics.
    """
    norm = global_grad_norm(params)
    if norm > max_norm:
        scale = np.float32(max_norm / norm)
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float


@dataclass
class TrainResult:
    history: list[EpochStats] = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = math.inf
    best_val_accuracy: float = 0.0
    stopped_early: bool = False
    steps: int = 0

    def history_csv(self) -> str:
        lines = ["epoch,train_loss,val_loss,val_accuracy"]
        for row in self.history:
            lines.append(f"{row.epoch},{row.train_loss!r},{row.val_loss!r},"
                         f"{row.val_accuracy!r}")
        return "\n".join(lines) + "\n"


def _batched_indices(n: int, batch_size: int) -> list[np.ndarray]:
    base = np.arange(n, dtype=np.int64)
    return [base[i:i + batch_size] for i in range(0, n, batch_size)]


def evaluate_split(model, data, batch_size: int = 64) -> tuple[float, float]:
    """Mean loss and accuracy over a dataset, in fixed order, no dropout."""
    n = len(data)
    if n == 0:
        raise DataError("cannot evaluate an empty split")
    loss_sum = 0.0
    correct = 0
    for idx in _batched_indices(n, batch_size):
        batch = data.batch(idx, training=False)
        logits = model.forward_logits(batch, training=False)
        loss = T.cross_entropy_from_logits(logits, batch.labels)
        loss_sum += loss.item() * len(idx)
        pred = np.argmax(logits.data, axis=-1)
        correct += int(np.sum(pred == batch.labels))
    return loss_sum / n, correct / n


def train(model, train_data, val_data, spec: OptimizerSpec,
          seed: int = 0) -> TrainResult:
    """Fit ``model`` with early stopping on validation loss.

    Batches reshuffle every epoch from a seeded stream; validation runs
    after every epoch; training stops once validation loss has failed to
    improve for ``spec.patience`` consecutive epochs or the epoch cap is
    reached. The parameters that produced the best validation loss are
    restored into the model before returning. A non-finite loss aborts
    with a diagnostic naming the offending step.
    """
    n = len(train_data)
    if n == 0:
        raise DataError("cannot train on an empty split")
    params = model.parameters()
    opt = Adam(params, spec)
    result = TrainResult()
    best_snapshot = model.snapshot()
    epochs_since_best = 0
    step = 0
    for epoch in range(spec.max_epochs):
        order = keyed_rng(seed, "shuffle", epoch).permutation(n)
        loss_sum = 0.0
        for start in range(0, n, spec.batch_size):
            idx = order[start:start + spec.batch_size]
            batch = train_data.batch(idx, training=True, epoch=epoch)
            opt.zero_grad()
            with Tape() as tape:
                loss = model.forward_loss(batch, training=True, step=step)
            value = loss.item()
            if not math.isfinite(value):
                raise DivergenceError(
                    f"non-finite training loss ({value}) at step {step} "
                    f"(epoch {epoch}); reduce the learning rate"
                )
            T.backward(loss, tape)
            clip_gradients(params, spec.clip_norm)
            opt.step()
            loss_sum += value * len(idx)
            step += 1
        train_loss = loss_sum / n
        val_loss, val_acc = evaluate_split(model, val_data)
        if not math.isfinite(val_loss):
            raise DivergenceError(
                f"non-finite validation loss ({val_loss}) after epoch {epoch}"
            )
        result.history.append(EpochStats(epoch, train_loss, val_loss, val_acc))
        if val_loss < result.best_val_loss:
            result.best_val_loss = val_loss
            result.best_val_accuracy = val_acc
            result.best_epoch = epoch
            best_snapshot = model.snapshot()
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= spec.patience:
                result.stopped_early = True
                break
    result.steps = step
    model.restore(best_snapshot)
    return result
