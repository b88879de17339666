"""Manifest loading and batch assembly for captioned-image classification.

A dataset on disk is a directory with a ``manifest.jsonl`` file whose rows
hold ``{"id", "text", "image_path", "label"}``, plus the referenced image
files. This module turns those rows into padded token-id arrays and
standardized pixel tensors, and serves index-addressed batches to the
training loop. Augmentation is resampled per epoch from a keyed stream so
a given (seed, sample, epoch) triple always yields the same transform.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DataError
from .images import (AugmentConfig, augment_pixels, load_and_resize,
                     standardize)
from .rng import keyed_rng
from .text import NormalizerConfig, Vocabulary, normalize_text, tokenize


@dataclass
class SampleRecord:
    """One manifest row: raw caption text plus an image path and a label."""

    sample_id: int
    text: str
    image_path: str
    label: int


def load_manifest(data_dir: str) -> list[SampleRecord]:
    """Read ``manifest.jsonl`` from a dataset directory.

    Rows must carry id/text/image_path/label; anything missing or
    malformed raises a data error naming the offending line.
    """
    path = os.path.join(data_dir, "manifest.jsonl")
    if not os.path.exists(path):
        raise DataError(f"no manifest.jsonl in {data_dir}")
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            try:
                records.append(SampleRecord(
                    sample_id=int(row["id"]),
                    text=str(row["text"]),
                    image_path=str(row["image_path"]),
                    label=int(row["label"]),
                ))
            except (KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: bad manifest row ({exc})") from exc
    if not records:
        raise DataError(f"{path} contains no samples")
    return records


def labels_array(records: Sequence[SampleRecord]) -> np.ndarray:
    return np.array([r.label for r in records], dtype=np.int64)


@dataclass
class Batch:
    """Arrays for one forward pass; image/text sides may be absent."""

    labels: np.ndarray
    token_ids: Optional[np.ndarray] = None
    token_mask: Optional[np.ndarray] = None
    images: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return int(self.labels.shape[0])


@dataclass
class PreparedDataset:
    """Tokenized text and resized raw pixels, ready for batch slicing.

    ``raw_pixels`` stay in [0, 1] so augmentation happens before
    standardization; standardization constants are applied at batch time.
    """

    labels: np.ndarray
    sample_ids: np.ndarray
    token_ids: Optional[np.ndarray] = None
    token_mask: Optional[np.ndarray] = None
    raw_pixels: Optional[np.ndarray] = None
    mean: tuple = (0.5, 0.5, 0.5)
    std: tuple = (0.5, 0.5, 0.5)
    augment: AugmentConfig = field(default_factory=lambda: AugmentConfig(enabled=False))
    augment_seed: int = 0

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def _pixels_for(self, indices: np.ndarray, training: bool,
                    epoch: int) -> np.ndarray:
        raw = self.raw_pixels[indices]
        if training and self.augment.enabled:
            out = np.empty_like(raw)
            for row, ds_index in enumerate(indices):
                rng = keyed_rng(self.augment_seed, "augment",
                                int(self.sample_ids[ds_index]), epoch)
                out[row] = augment_pixels(raw[row], self.augment, rng)
            raw = out
        mean = np.asarray(self.mean, dtype=np.float32).reshape(1, 3, 1, 1)
        std = np.asarray(self.std, dtype=np.float32).reshape(1, 3, 1, 1)
        return (raw - mean) / std

    def batch(self, indices: Sequence[int], training: bool = False,
              epoch: int = 0) -> Batch:
        idx = np.asarray(indices, dtype=np.int64)
        out = Batch(labels=self.labels[idx])
        if self.token_ids is not None:
            out.token_ids = self.token_ids[idx]
            out.token_mask = self.token_mask[idx]
        if self.raw_pixels is not None:
            out.images = self._pixels_for(idx, training, epoch)
        return out


def prepare_dataset(records: Sequence[SampleRecord], data_dir: str,
                    modality: str = "multimodal",
                    vocab: Optional[Vocabulary] = None,
                    normalizer: Optional[NormalizerConfig] = None,
                    max_len: int = 32,
                    resolution: int = 32,
                    mean: tuple = (0.5, 0.5, 0.5),
                    std: tuple = (0.5, 0.5, 0.5),
                    augment: Optional[AugmentConfig] = None,
                    augment_seed: int = 0) -> PreparedDataset:
    """Materialize model-ready arrays for the requested modality.

    Text-only runs skip image decoding entirely and vice versa, so
    unimodal experiments do not pay for the unused side.
    """
    if modality not in ("text", "image", "multimodal"):
        raise DataError(f"unknown modality: {modality!r}")
    n = len(records)
    prepared = PreparedDataset(
        labels=labels_array(records),
        sample_ids=np.array([r.sample_id for r in records], dtype=np.int64),
        mean=mean, std=std,
        augment=augment if augment is not None else AugmentConfig(enabled=False),
        augment_seed=augment_seed,
    )
    if modality in ("text", "multimodal"):
        if vocab is None:
            raise DataError("text modality requires a vocabulary")
        norm = normalizer if normalizer is not None else NormalizerConfig()
        ids = np.zeros((n, max_len), dtype=np.int64)
        mask = np.zeros((n, max_len), dtype=np.int64)
        for i, rec in enumerate(records):
            seq = tokenize(normalize_text(rec.text, norm), vocab, max_len)
            ids[i] = seq.ids
            mask[i] = seq.attention_mask
        prepared.token_ids = ids
        prepared.token_mask = mask
    if modality in ("image", "multimodal"):
        px = np.zeros((n, 3, resolution, resolution), dtype=np.float32)
        for i, rec in enumerate(records):
            path = rec.image_path
            if not os.path.isabs(path):
                path = os.path.join(data_dir, path)
            px[i] = load_and_resize(path, resolution).pixels
        prepared.raw_pixels = px
    return prepared
