"""Finite-difference verification of tape gradients.

All checks run in float64: inputs are upcast, the function under test is
evaluated on float64 tensors, and the numeric derivative uses central
differences. Relative error per coordinate is

    |analytic - numeric| / max(1e-8, |analytic| + |numeric|)

and a check passes when the worst coordinate stays below the threshold.

Central differences are only meaningful away from non-differentiable
points, so the suite probes each candidate input and redraws whenever a
relu pre-activation falls within a small margin of zero. A genuinely wrong
backward rule fails at every draw; only kink straddles are filtered.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .rng import keyed_rng
from .tensor import Tape, Tensor

_KINK_MARGIN = 1e-3


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    passed: bool

    def __str__(self) -> str:
        status = "ok" if self.passed else "FAIL"
        return f"{self.name}: max rel err {self.max_rel_error:.3e} [{status}]"


def _numeric_grad(f: Callable[[Sequence[Tensor]], Tensor], xs: list[Tensor],
                  which: int, step: float) -> np.ndarray:
    x = xs[which]
    g = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f(xs).item()
        flat[i] = orig - step
        lo = f(xs).item()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * step)
    return g


def gradcheck(f: Callable[[Sequence[Tensor]], Tensor], inputs: Sequence[np.ndarray],
              name: str = "fn", step: float = 1e-5, threshold: float = 1e-4) -> GradCheckResult:
    """Compare tape gradients of scalar-valued `f` against central differences.

    `f` receives a list of float64 Tensors (requires_grad set) and must
    return a scalar Tensor built from taped ops.
    """
    xs = [Tensor(np.asarray(a, dtype=np.float64), requires_grad=True, dtype=np.float64)
          for a in inputs]
    with Tape() as tape:
        loss = f(xs)
    tape.backward(loss)
    analytic = [x.grad.copy() if x.grad is not None else np.zeros_like(x.data) for x in xs]

    worst = 0.0
    for k in range(len(xs)):
        numeric = _numeric_grad(f, xs, k, step)
        a, n = analytic[k].reshape(-1), numeric.reshape(-1)
        denom = np.maximum(1e-8, np.abs(a) + np.abs(n))
        rel = np.abs(a - n) / denom
        if rel.size:
            worst = max(worst, float(rel.max()))
    return GradCheckResult(name=name, max_rel_error=worst, passed=worst < threshold)


def _relu_margin(f: Callable, arrays: list[np.ndarray]) -> float:
    """Smallest |pre-activation| seen by relu during one forward pass."""
    seen = [math.inf]
    orig = T.relu

    def spy(x):
        if x.data.size:
            seen[0] = min(seen[0], float(np.abs(x.data).min()))
        return orig(x)

    T.relu = spy
    try:
        xs = [Tensor(a, dtype=np.float64) for a in arrays]
        f(xs)
    finally:
        T.relu = orig
    return seen[0]


# --------------------------------------------------------------------------
# the standard suite: every differentiable op plus tiny end-to-end models

def _basic_builders() -> list[tuple[str, Callable]]:
    """Each builder takes a Generator and returns (f, input arrays)."""

    def b(*shapes, scale=1.0, shift=0.0):
        def draw(rng):
            return [rng.standard_normal(s) * scale + shift for s in shapes]
        return draw

    specs: list[tuple[str, Callable, Callable]] = [
        ("matmul_2d", lambda xs: T.tsum(T.matmul(xs[0], xs[1])), b((3, 4), (4, 5))),
        ("matmul_batched_right2d", lambda xs: T.tsum(T.matmul(xs[0], xs[1])),
         b((2, 3, 4), (4, 5))),
        ("matmul_batched_both", lambda xs: T.tsum(T.matmul(xs[0], xs[1])),
         b((2, 3, 4), (2, 4, 5))),
        ("add_equal", lambda xs: T.tsum(T.add(xs[0], xs[1])), b((3, 4), (3, 4))),
        ("add_bias", lambda xs: T.tsum(T.add(xs[0], xs[1])), b((3, 4), (4,))),
        ("add_channel_bias", lambda xs: T.tsum(T.add(xs[0], xs[1])),
         b((2, 3, 4, 4), (3, 1, 1))),
        ("mul_equal", lambda xs: T.tsum(T.mul(xs[0], xs[1])), b((3, 4), (3, 4))),
        ("mul_gain", lambda xs: T.tsum(T.mul(xs[0], xs[1])), b((2, 3, 5, 5), (3, 1, 1))),
        ("scale", lambda xs: T.tsum(T.scale(xs[0], -1.7)), b((4, 4))),
        ("relu", lambda xs: T.tsum(T.relu(xs[0])), b((5, 5))),
        ("gelu", lambda xs: T.tsum(T.gelu(xs[0])), b((5, 5))),
        ("softmax", lambda xs: T.tsum(T.mul(T.softmax(xs[0], axis=-1), xs[1])),
         b((3, 6), (3, 6))),
        ("normalize_last", lambda xs: T.tsum(T.mul(T.normalize(xs[0], 1), xs[1])),
         b((3, 8), (3, 8))),
        ("normalize_plane", lambda xs: T.tsum(T.mul(T.normalize(xs[0], 2), xs[1])),
         b((2, 3, 4, 4), (2, 3, 4, 4))),
        ("transpose", lambda xs: T.tsum(T.mul(T.transpose(xs[0], (0, 2, 1)), xs[1])),
         b((2, 3, 4), (2, 4, 3))),
        ("reshape", lambda xs: T.tsum(T.mul(T.reshape(xs[0], (6, 2)), xs[1])),
         b((3, 4), (6, 2))),
        ("narrow", lambda xs: T.tsum(T.mul(T.narrow(xs[0], 1, 1, 2), xs[1])),
         b((3, 5), (3, 2))),
        ("concat", lambda xs: T.tsum(T.mul(T.concat(xs[0], xs[1], axis=1), xs[2])),
         b((2, 3), (2, 4), (2, 7))),
        ("conv2d_s1p1", lambda xs: T.tsum(T.conv2d(xs[0], xs[1], 1, 1)),
         b((2, 2, 5, 5), (3, 2, 3, 3))),
        ("conv2d_s2p1", lambda xs: T.tsum(T.conv2d(xs[0], xs[1], 2, 1)),
         b((2, 2, 6, 6), (3, 2, 3, 3))),
        ("conv2d_1x1", lambda xs: T.tsum(T.conv2d(xs[0], xs[1], 2, 0)),
         b((2, 3, 4, 4), (4, 3, 1, 1))),
        ("global_avg_pool", lambda xs: T.tsum(T.mul(T.global_avg_pool(xs[0]), xs[1])),
         b((2, 3, 4, 4), (2, 3))),
        ("mean", lambda xs: T.tmean(T.mul(xs[0], xs[0])), b((3, 3))),
        ("cross_entropy",
         lambda xs: T.cross_entropy_from_logits(xs[0], np.array([1, 0, 2])), b((3, 4))),
    ]

    def embed_fn(xs):
        rows = T.embedding(xs[0], np.array([[0, 2], [1, 1]]))
        return T.tsum(T.mul(rows, xs[1]))

    specs.append(("embedding", embed_fn, b((4, 3), (2, 2, 3))))

    return [(name, lambda rng, f=f, draw=draw: (f, draw(rng))) for name, f, draw in specs]


def _build_tiny_text(rng: np.random.Generator):
    """Single attention block over a 3-token sequence, first-token readout."""
    L, D, H = 3, 4, 2
    ids = np.array([[2, 5, 6]])
    arrays = [rng.standard_normal((8, D)) * 0.5,
              rng.standard_normal((D, D)) * 0.5,
              rng.standard_normal((D, D)) * 0.5,
              rng.standard_normal((D, D)) * 0.5,
              rng.standard_normal((D, D)) * 0.5,
              rng.standard_normal((D, 3)) * 0.5]

    def f(xs):
        emb, wq, wk, wv, wo, head = xs
        x = T.embedding(emb, ids)
        xn = T.normalize(x, 1)
        q = T.matmul(xn, wq)
        k = T.matmul(xn, wk)
        v = T.matmul(xn, wv)
        dk = D // H

        def split(t):
            return T.transpose(T.reshape(t, (1, L, H, dk)), (0, 2, 1, 3))

        qh, kh, vh = split(q), split(k), split(v)
        scores = T.scale(T.matmul(qh, T.transpose(kh, (0, 1, 3, 2))), 1.0 / math.sqrt(dk))
        att = T.softmax(scores, axis=-1)
        ctx = T.matmul(att, vh)
        merged = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (1, L, D))
        out = T.add(x, T.matmul(merged, wo))
        cls = T.reshape(T.narrow(out, 1, 0, 1), (1, D))
        return T.tsum(T.matmul(cls, head))

    return f, arrays


def _build_tiny_vision(rng: np.random.Generator):
    """Stem conv + one residual block + downsample + pooled linear readout."""
    arrays = [rng.standard_normal((1, 3, 8, 8)) * 0.5,
              rng.standard_normal((2, 3, 3, 3)) * 0.5,
              rng.standard_normal((2, 2, 3, 3)) * 0.5,
              rng.standard_normal((4, 2, 3, 3)) * 0.5,
              rng.standard_normal((4, 2, 1, 1)) * 0.5,
              rng.standard_normal((4, 3)) * 0.5]

    def f(xs):
        img, stem, res, down, proj, head = xs
        x = T.relu(T.normalize(T.conv2d(img, stem, 1, 1), 2))
        z = T.relu(T.normalize(T.conv2d(x, res, 1, 1), 2))
        x = T.add(z, x)
        main = T.relu(T.normalize(T.conv2d(x, down, 2, 1), 2))
        skip = T.conv2d(x, proj, 2, 0)
        x = T.add(main, skip)
        feat = T.global_avg_pool(x)
        return T.tsum(T.matmul(feat, head))

    return f, arrays


def _build_tiny_fused(rng: np.random.Generator):
    """Concatenated text/vision features through a relu MLP into CE loss."""
    labels = np.array([0, 2])
    arrays = [rng.standard_normal((2, 3)),
              rng.standard_normal((2, 4)),
              rng.standard_normal((7, 5)) * 0.5,
              rng.standard_normal((5,)) * 0.1,
              rng.standard_normal((5, 3)) * 0.5]

    def f(xs):
        ft, fv, w1, b1, w2 = xs
        fused = T.concat(ft, fv, axis=1)
        h = T.relu(T.add(T.matmul(fused, w1), b1))
        logits = T.matmul(h, w2)
        return T.cross_entropy_from_logits(logits, labels)

    return f, arrays


def suite_cases(seed: int) -> list[tuple[str, Callable, list[np.ndarray]]]:
    builders = _basic_builders() + [
        ("tiny_text_block", _build_tiny_text),
        ("tiny_vision_block", _build_tiny_vision),
        ("tiny_fused_ce", _build_tiny_fused),
    ]
    cases = []
    for name, build in builders:
        for retry in range(64):
            rng = keyed_rng(seed, "gradcheck", name, retry)
            f, arrays = build(rng)
            if _relu_margin(f, arrays) > _KINK_MARGIN:
                break
        cases.append((name, f, arrays))
    return cases


def full_suite(seed: int = 0, step: float = 1e-5,
               threshold: float = 1e-4) -> list[GradCheckResult]:
    """Run every suite case with one seed; returns one result per case."""
    results = []
    for name, f, arrays in suite_cases(seed):
        results.append(gradcheck(f, arrays, name=name, step=step, threshold=threshold))
    return results
