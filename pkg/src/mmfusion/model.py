"""Classifier bundles: encoders plus a head, addressed by modality.

A model owns whichever encoders its modality needs and exposes a flat
parameter dict whose names carry a ``text.`` / ``vision.`` / ``fusion.``
prefix. The prefix is load-bearing: the optimizer assigns learning rates
by group, and checkpoints store parameters under these names.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from . import fusion as F
from . import tensor as T
from . import text_encoder as TE
from . import vision_encoder as VE
from .datasets import Batch
from .errors import ConfigError, DataError
from .serialization import load_tensors, save_tensors
from .tensor import Tensor

MODALITIES = ("text", "image", "multimodal")


class ClassifierModel:
    def __init__(self, modality: str,
                 text_state: Optional[TE.TextEncoderState],
                 vision_state: Optional[VE.VisionEncoderState],
                 head_state: F.FusionState,
                 dropout_seed: int = 0):
        if modality not in MODALITIES:
            raise ConfigError(f"unknown modality: {modality!r}")
        if modality in ("text", "multimodal") and text_state is None:
            raise ConfigError(f"{modality} model needs a text encoder")
        if modality in ("image", "multimodal") and vision_state is None:
            raise ConfigError(f"{modality} model needs a vision encoder")
        self.modality = modality
        self.text_state = text_state if modality != "image" else None
        self.vision_state = vision_state if modality != "text" else None
        self.head_state = head_state
        self.dropout_seed = dropout_seed

    @classmethod
    def build(cls, modality: str, *,
              text_config: Optional[TE.TextEncoderConfig] = None,
              vision_config: Optional[VE.VisionEncoderConfig] = None,
              hidden: tuple[int, ...] = (256,),
              head_dropout: float = 0.1,
              n_classes: int = 9,
              seed: int = 0) -> "ClassifierModel":
        if modality not in MODALITIES:
            raise ConfigError(f"unknown modality: {modality!r}")
        text_state = None
        vision_state = None
        if modality in ("text", "multimodal"):
            if text_config is None:
                raise ConfigError(f"{modality} model needs a text encoder config")
            text_state = TE.TextEncoderState.build(text_config, seed=seed)
        if modality in ("image", "multimodal"):
            if vision_config is None:
                raise ConfigError(f"{modality} model needs a vision encoder config")
            vision_state = VE.VisionEncoderState.build(vision_config, seed=seed)
        if modality == "multimodal":
            head_cfg = F.FusionConfig(d_text=text_config.d_model,
                                      d_visual=vision_config.d_visual,
                                      hidden=hidden, dropout_rate=head_dropout,
                                      n_classes=n_classes)
        elif modality == "text":
            head_cfg = F.HeadConfig(d_in=text_config.d_model, hidden=hidden,
                                    dropout_rate=head_dropout, n_classes=n_classes)
        else:
            head_cfg = F.HeadConfig(d_in=vision_config.d_visual, hidden=hidden,
                                    dropout_rate=head_dropout, n_classes=n_classes)
        head_state = F.FusionState.build(head_cfg, seed=seed)
        return cls(modality, text_state, vision_state, head_state,
                   dropout_seed=seed)

    @property
    def n_classes(self) -> int:
        return self.head_state.config.n_classes

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        if self.text_state is not None:
            for name, p in self.text_state.params.items():
                out["text." + name] = p
        if self.vision_state is not None:
            for name, p in self.vision_state.params.items():
                out["vision." + name] = p
        for name, p in self.head_state.params.items():
            out["fusion." + name] = p
        return out

    def features(self, batch: Batch, training: bool = False,
                 step: int = 0) -> Tensor:
        """Per-modality feature vectors [B, d]; fused for multimodal."""
        parts = []
        if self.text_state is not None:
            if batch.token_ids is None:
                raise DataError("batch carries no token ids for a text model")
            parts.append(TE.encode_batch(batch.token_ids, batch.token_mask,
                                         self.text_state, training=training,
                                         dropout_seed=self.dropout_seed,
                                         step=step))
        if self.vision_state is not None:
            if batch.images is None:
                raise DataError("batch carries no images for a vision model")
            parts.append(VE.encode_batch(Tensor(batch.images),
                                         self.vision_state, training=training))
        if len(parts) == 2:
            return F.fuse(parts[0], parts[1], self.head_state.config)
        return parts[0]

    def forward_logits(self, batch: Batch, training: bool = False,
                       step: int = 0) -> Tensor:
        feats = self.features(batch, training=training, step=step)
        return F.forward_logits(feats, self.head_state, training=training,
                                dropout_seed=self.dropout_seed, step=step)

    def forward_loss(self, batch: Batch, training: bool = False,
                     step: int = 0) -> Tensor:
        logits = self.forward_logits(batch, training=training, step=step)
        return F.batch_cross_entropy(logits, batch.labels)

    def predict_batch(self, batch: Batch) -> np.ndarray:
        """Argmax class per sample; ties break toward the lowest index."""
        logits = self.forward_logits(batch, training=False)
        return np.argmax(logits.data, axis=-1).astype(np.int64)

    # -- checkpointing ----------------------------------------------------

    def save(self, path: str, extra_metadata: Optional[dict] = None) -> None:
        meta = {"modality": self.modality,
                "n_classes": int(self.n_classes)}
        if extra_metadata:
            meta.update(extra_metadata)
        save_tensors(path, self.parameters(), metadata=meta)

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        """Copy checkpoint arrays into the live parameters, validating names."""
        params = self.parameters()
        missing = sorted(set(params) - set(arrays))
        unexpected = sorted(set(arrays) - set(params))
        if missing or unexpected:
            raise DataError(
                f"checkpoint does not match model: missing {missing[:4]}, "
                f"unexpected {unexpected[:4]}"
            )
        for name, p in params.items():
            arr = arrays[name]
            if tuple(arr.shape) != tuple(p.shape):
                raise DataError(
                    f"checkpoint shape mismatch for {name}: "
                    f"{list(arr.shape)} vs {list(p.shape)}"
                )
            p.data = np.ascontiguousarray(arr, dtype=p.data.dtype)

    def load(self, path: str) -> dict:
        arrays, sidecar = load_tensors(path)
        self.load_arrays(arrays)
        return sidecar

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.parameters().items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for name, p in self.parameters().items():
            p.data = snap[name].copy()
