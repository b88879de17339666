"""Synthetic captioned-image corpora with controllable cross-modal ambiguity.

Each sample gets a class drawn from exact largest-remainder quotas, a
20-token sentence from that class's private token inventory, and a
class-keyed striped color image. With probability alpha_text the sentence
is instead drawn from a designated confusable class's inventory, and
independently with probability alpha_image the image takes a (different)
confusable class's pattern. Because the two confusion pairings disagree,
the pair of modalities carries strictly more information than either one
alone, and ``bayes_oracle`` computes the exact optimum for each modality
by enumerating the latent ambiguity events.
"""

from __future__ import annotations

import colorsys
import json
import math
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError
from .images import write_ppm
from .rng import keyed_rng
from .training import largest_remainder

CLASS_NAMES = ("AD", "ND", "ID", "LS", "DNL", "FL", "FR", "EL", "OT")
CLASS_COUNTS_5037 = (800, 650, 450, 400, 600, 500, 300, 400, 937)
DEFAULT_PROPORTIONS = tuple(c / 5037 for c in CLASS_COUNTS_5037)

_SYLLABLES = ("ka", "ri", "mo", "ta", "ne", "lu", "si", "do",
              "ba", "fe", "gi", "hu", "pa", "ze", "vo", "wi")


def shifted_pairing(n_classes: int, shift: int) -> tuple[int, ...]:
    """class -> (class + shift) mod n; a derangement when shift % n != 0."""
    return tuple((c + shift) % n_classes for c in range(n_classes))


def _default_image_pairing(n_classes: int) -> tuple[int, ...]:
    # differs from the text pairing whenever the class count allows it
    return shifted_pairing(n_classes, 2 if n_classes > 2 else 1)


@dataclass(frozen=True)
class GeneratorSpec:
    n_samples: int = 5037
    seed: int = 0
    alpha_text: float = 0.0
    alpha_image: float = 0.0
    class_names: tuple[str, ...] = CLASS_NAMES
    proportions: tuple[float, ...] = DEFAULT_PROPORTIONS
    text_pairing: tuple[int, ...] = ()
    image_pairing: tuple[int, ...] = ()
    vocab_size: int = 180
    resolution: int = 32

    def __post_init__(self):
        object.__setattr__(self, "class_names", tuple(self.class_names))
        object.__setattr__(self, "proportions",
                           tuple(float(p) for p in self.proportions))
        n = len(self.class_names)
        if not 2 <= n <= 26:
            raise ConfigError(f"need 2..26 classes, got {n}")
        if len(set(self.class_names)) != n:
            raise ConfigError("class names must be unique")
        if len(self.proportions) != n:
            raise ConfigError(
                f"{len(self.proportions)} proportions for {n} classes"
            )
        if any(p < 0 for p in self.proportions):
            raise ConfigError(f"proportions must be non-negative: {self.proportions}")
        if not math.isclose(sum(self.proportions), 1.0, rel_tol=0.0, abs_tol=1e-9):
            raise ConfigError(f"proportions must sum to 1, got {sum(self.proportions)}")
        if self.n_samples < n:
            raise ConfigError(
                f"need at least one sample per class: N={self.n_samples}, "
                f"{n} classes"
            )
        for label, alpha in (("alpha_text", self.alpha_text),
                             ("alpha_image", self.alpha_image)):
            if not 0.0 <= alpha <= 1.0:
                raise ConfigError(f"{label} must be in [0, 1], got {alpha}")
        if not self.text_pairing:
            object.__setattr__(self, "text_pairing", shifted_pairing(n, 1))
        else:
            object.__setattr__(self, "text_pairing",
                               tuple(int(c) for c in self.text_pairing))
        if not self.image_pairing:
            object.__setattr__(self, "image_pairing", _default_image_pairing(n))
        else:
            object.__setattr__(self, "image_pairing",
                               tuple(int(c) for c in self.image_pairing))
        for label, pairing, alpha in (
                ("text_pairing", self.text_pairing, self.alpha_text),
                ("image_pairing", self.image_pairing, self.alpha_image)):
            if sorted(pairing) != list(range(n)):
                raise ConfigError(f"{label} is not a permutation of 0..{n - 1}: "
                                  f"{list(pairing)}")
            if alpha > 0 and any(pairing[c] == c for c in range(n)):
                fixed = [c for c in range(n) if pairing[c] == c]
                raise ConfigError(
                    f"{label} has fixed points {fixed}; ambiguous classes "
                    f"must map to a different class"
                )
        if self.tokens_per_class < 2:
            raise ConfigError(
                f"vocab_size {self.vocab_size} leaves fewer than 2 tokens "
                f"per class"
            )
        if self.tokens_per_class > 256:
            raise ConfigError(
                f"vocab_size {self.vocab_size} exceeds 256 tokens per class"
            )
        if self.resolution < 4:
            raise ConfigError(f"resolution must be at least 4, got {self.resolution}")

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def tokens_per_class(self) -> int:
        return self.vocab_size // len(self.class_names)

    def class_counts(self) -> list[int]:
        return largest_remainder(self.n_samples, self.proportions)

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "seed": self.seed,
            "alpha_text": self.alpha_text,
            "alpha_image": self.alpha_image,
            "class_names": list(self.class_names),
            "proportions": list(self.proportions),
            "text_pairing": list(self.text_pairing),
            "image_pairing": list(self.image_pairing),
            "vocab_size": self.vocab_size,
            "resolution": self.resolution,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorSpec":
        allowed = {"n_samples", "seed", "alpha_text", "alpha_image",
                   "class_names", "proportions", "text_pairing",
                   "image_pairing", "vocab_size", "resolution"}
        unknown = sorted(set(d) - allowed)
        if unknown:
            raise ConfigError(f"unknown generator fields: {unknown}")
        kwargs = dict(d)
        for key in ("class_names", "proportions", "text_pairing", "image_pairing"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


def token_inventory(spec: GeneratorSpec, cls: int) -> list[str]:
    """The class's private word list; disjoint across classes by prefix."""
    tag = chr(ord("a") + cls)
    words = []
    for j in range(spec.tokens_per_class):
        words.append(tag + _SYLLABLES[j % 16] + _SYLLABLES[(j // 16) % 16])
    return words


def class_pattern(spec: GeneratorSpec, cls: int) -> np.ndarray:
    """Noise-free class template: keyed base color with keyed stripes."""
    n = spec.n_classes
    r = spec.resolution
    hue = (cls + 0.5) / n
    rgb = colorsys.hsv_to_rgb(hue, 0.85, 0.8)
    base = np.array(rgb, dtype=np.float64).reshape(3, 1, 1)
    coords = np.arange(r, dtype=np.float64)
    cycles = cls + 1.0
    wave = 0.5 + 0.5 * np.sin(2.0 * np.pi * cycles * coords / r)
    if cls % 2 == 0:
        stripes = np.broadcast_to(wave.reshape(1, 1, r), (3, r, r))
    else:
        stripes = np.broadcast_to(wave.reshape(1, r, 1), (3, r, r))
    # deep modulation: class identity must survive per-plane normalization
    px = base * (0.55 + 0.45 * stripes)
    return np.clip(px, 0.0, 1.0).astype(np.float32)


@dataclass
class GeneratedDataset:
    out_dir: str
    manifest_path: str
    truth_path: str
    summary_path: str
    class_counts: list[int] = field(default_factory=list)


def generate(spec: GeneratorSpec, out_dir: str) -> GeneratedDataset:
    """Write a full corpus: manifest, PPM images, truth sidecar, summary.

    Every random choice is keyed by (seed, purpose, sample id), so
    regeneration with the same spec is byte-identical. The truth sidecar
    records the latent ambiguity flags for oracle checks only; manifest
    rows never contain them.
    """
    images_dir = os.path.join(out_dir, "images")
    try:
        os.makedirs(images_dir, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create dataset directory {out_dir}: {exc}") from exc
    counts = spec.class_counts()
    labels = np.repeat(np.arange(spec.n_classes, dtype=np.int64), counts)
    order = keyed_rng(spec.seed, "order").permutation(spec.n_samples)
    labels = labels[order]
    inventories = [token_inventory(spec, c) for c in range(spec.n_classes)]
    patterns = [class_pattern(spec, c) for c in range(spec.n_classes)]
    manifest_path = os.path.join(out_dir, "manifest.jsonl")
    truth_path = os.path.join(out_dir, "truth.jsonl")
    summary_path = os.path.join(out_dir, "summary.json")
    with open(manifest_path, "w", encoding="utf-8") as mani, \
            open(truth_path, "w", encoding="utf-8") as truth:
        for i in range(spec.n_samples):
            c = int(labels[i])
            rng_t = keyed_rng(spec.seed, "text", i)
            text_ambiguous = bool(rng_t.random() < spec.alpha_text)
            text_source = spec.text_pairing[c] if text_ambiguous else c
            picks = rng_t.integers(0, spec.tokens_per_class, size=20)
            sentence = " ".join(inventories[text_source][j] for j in picks)
            rng_v = keyed_rng(spec.seed, "image", i)
            image_ambiguous = bool(rng_v.random() < spec.alpha_image)
            image_source = spec.image_pairing[c] if image_ambiguous else c
            noise = rng_v.normal(0.0, 0.05, size=patterns[image_source].shape)
            px = np.clip(patterns[image_source] + noise.astype(np.float32),
                         0.0, 1.0)
            rel_path = f"images/{i:06d}.ppm"
            write_ppm(os.path.join(out_dir, rel_path), px)
            mani.write(json.dumps({"id": i, "text": sentence,
                                   "image_path": rel_path, "label": c})
                       + "\n")
            truth.write(json.dumps({"id": i, "label": c,
                                    "text_ambiguous": text_ambiguous,
                                    "image_ambiguous": image_ambiguous,
                                    "text_source": int(text_source),
                                    "image_source": int(image_source)})
                        + "\n")
    with open(summary_path, "w", encoding="utf-8") as fh:
        summary = dict(spec.to_dict())
        summary["class_counts"] = counts
        fh.write(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return GeneratedDataset(out_dir=out_dir, manifest_path=manifest_path,
                            truth_path=truth_path, summary_path=summary_path,
                            class_counts=counts)


def load_truth(data_dir: str) -> list[dict]:
    path = os.path.join(data_dir, "truth.jsonl")
    if not os.path.exists(path):
        raise DataError(f"no truth.jsonl in {data_dir}")
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def _priors(spec: GeneratorSpec) -> np.ndarray:
    counts = np.array(spec.class_counts(), dtype=np.float64)
    return counts / spec.n_samples


def bayes_oracle(spec: GeneratorSpec, modality: str) -> float:
    """Exact Bayes-optimal accuracy for a corpus drawn from ``spec``.

    The observable evidence in each modality is the *source* class whose
    inventory or pattern the sample used (inventories and patterns are
    disjoint and noise never hides them). Enumerating the latent
    ambiguity events gives the exact joint distribution of (true class,
    evidence); the optimum picks the argmax class per evidence cell, so
    the accuracy is the sum of the per-cell maxima. Unimodal oracles
    marginalize the other modality's evidence; priors are the generator's
    exact quota proportions.
    """
    p = _priors(spec)
    n = spec.n_classes
    a_t, a_v = spec.alpha_text, spec.alpha_image
    if modality == "text":
        joint = np.zeros((n, n))
        for c in range(n):
            joint[c, c] += p[c] * (1.0 - a_t)
            joint[spec.text_pairing[c], c] += p[c] * a_t
        return float(np.sum(joint.max(axis=1)))
    if modality == "image":
        joint = np.zeros((n, n))
        for c in range(n):
            joint[c, c] += p[c] * (1.0 - a_v)
            joint[spec.image_pairing[c], c] += p[c] * a_v
        return float(np.sum(joint.max(axis=1)))
    if modality == "multimodal":
        joint = np.zeros((n, n, n))
        for c in range(n):
            t_pair = spec.text_pairing[c]
            v_pair = spec.image_pairing[c]
            joint[c, c, c] += p[c] * (1.0 - a_t) * (1.0 - a_v)
            joint[t_pair, c, c] += p[c] * a_t * (1.0 - a_v)
            joint[c, v_pair, c] += p[c] * (1.0 - a_t) * a_v
            joint[t_pair, v_pair, c] += p[c] * a_t * a_v
        return float(np.sum(joint.max(axis=2)))
    raise ConfigError(f"unknown modality: {modality!r}")
