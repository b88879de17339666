"""Run configuration: one JSON document that pins an entire experiment.

Parsing is strict at every level: unknown keys are hard errors, because a
silently ignored hyperparameter typo is the main way a "reproduction"
stops reproducing. ``to_dict`` and ``from_dict`` round-trip losslessly.
Encoder dimensions are stated once and the fusion head derives its input
width from them, so dimension inconsistencies cannot be expressed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

from .errors import ConfigError
from .images import AugmentConfig
from .model import MODALITIES, ClassifierModel
from .synthetic import GeneratorSpec
from .text import NormalizerConfig
from .text_encoder import TextEncoderConfig
from .training import OptimizerSpec, SplitSpec
from .vision_encoder import VisionEncoderConfig


def _check_keys(section: str, d: dict, allowed: set[str]) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"{section!r} section must be an object, "
                          f"got {type(d).__name__}")
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {unknown} "
                          f"(allowed: {sorted(allowed)})")


@dataclass(frozen=True)
class VocabSection:
    """Tokenizer budget: target subword count and padded sequence length."""

    target_size: int = 512
    max_len: int = 24

    def __post_init__(self):
        if self.target_size < 5:
            raise ConfigError(f"vocab target_size must be at least 5, got {self.target_size}")
        if self.max_len < 2:
            raise ConfigError(f"max_len must be at least 2, got {self.max_len}")


@dataclass(frozen=True)
class TextSection:
    d_model: int = 32
    n_heads: int = 4
    n_layers: int = 2
    d_ff: int = 64
    dropout_rate: float = 0.1


@dataclass(frozen=True)
class FusionSection:
    hidden: tuple[int, ...] = (64,)
    dropout_rate: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))


@dataclass
class RunConfig:
    seed: int = 0
    modality: str = "multimodal"
    out_dir: Optional[str] = None
    normalizer: NormalizerConfig = field(default_factory=NormalizerConfig)
    vocab: VocabSection = field(default_factory=VocabSection)
    text: TextSection = field(default_factory=TextSection)
    vision: VisionEncoderConfig = field(default_factory=VisionEncoderConfig)
    fusion: FusionSection = field(default_factory=FusionSection)
    augment: AugmentConfig = field(default_factory=lambda: AugmentConfig(enabled=False))
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)
    split: SplitSpec = field(default_factory=SplitSpec)
    generator: GeneratorSpec = field(default_factory=GeneratorSpec)

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ConfigError(
                f"modality must be one of {list(MODALITIES)}, got {self.modality!r}"
            )
        if self.normalizer.transliterate is not None:
            raise ConfigError("transliteration hooks are code, not configuration")
        # surface bad text dims at parse time, not first use
        self.text_encoder_config(vocab_size=5)

    @property
    def n_classes(self) -> int:
        return self.generator.n_classes

    @property
    def class_names(self) -> list[str]:
        return list(self.generator.class_names)

    # -- construction ------------------------------------------------------

    def text_encoder_config(self, vocab_size: int) -> TextEncoderConfig:
        return TextEncoderConfig(
            vocab_size=vocab_size,
            d_model=self.text.d_model,
            n_heads=self.text.n_heads,
            n_layers=self.text.n_layers,
            d_ff=self.text.d_ff,
            max_len=self.vocab.max_len,
            dropout_rate=self.text.dropout_rate,
        )

    def build_model(self, vocab_size: Optional[int] = None) -> ClassifierModel:
        text_cfg = None
        if self.modality in ("text", "multimodal"):
            if vocab_size is None:
                raise ConfigError(f"{self.modality} model needs a trained vocabulary")
            text_cfg = self.text_encoder_config(vocab_size)
        return ClassifierModel.build(
            self.modality,
            text_config=text_cfg,
            vision_config=self.vision,
            hidden=self.fusion.hidden,
            head_dropout=self.fusion.dropout_rate,
            n_classes=self.n_classes,
            seed=self.seed,
        )

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "modality": self.modality,
            "out_dir": self.out_dir,
            "normalizer": {
                "punctuation": self.normalizer.punctuation,
                "emoji_policy": self.normalizer.emoji_policy,
                "emoji_map": dict(self.normalizer.emoji_map),
                "misspellings": dict(self.normalizer.misspellings),
            },
            "vocab": {"target_size": self.vocab.target_size,
                      "max_len": self.vocab.max_len},
            "text": {"d_model": self.text.d_model,
                     "n_heads": self.text.n_heads,
                     "n_layers": self.text.n_layers,
                     "d_ff": self.text.d_ff,
                     "dropout_rate": self.text.dropout_rate},
            "vision": {"widths": list(self.vision.widths),
                       "blocks_per_stage": self.vision.blocks_per_stage,
                       "resolution": self.vision.resolution},
            "fusion": {"hidden": list(self.fusion.hidden),
                       "dropout_rate": self.fusion.dropout_rate},
            "augment": {"enabled": self.augment.enabled,
                        "horizontal_flip_prob": self.augment.horizontal_flip_prob,
                        "rotation_degrees": self.augment.rotation_degrees,
                        "zoom_range": list(self.augment.zoom_range)},
            "optimizer": {"algorithm": self.optimizer.algorithm,
                          "lr_encoder": self.optimizer.lr_encoder,
                          "lr_fusion": self.optimizer.lr_fusion,
                          "beta1": self.optimizer.beta1,
                          "beta2": self.optimizer.beta2,
                          "epsilon": self.optimizer.epsilon,
                          "batch_size": self.optimizer.batch_size,
                          "max_epochs": self.optimizer.max_epochs,
                          "patience": self.optimizer.patience,
                          "clip_norm": self.optimizer.clip_norm},
            "split": {"train_fraction": self.split.train_fraction,
                      "val_fraction": self.split.val_fraction,
                      "test_fraction": self.split.test_fraction,
                      "stratified": self.split.stratified,
                      "seed": self.split.seed},
            "generator": self.generator.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError(f"config root must be an object, got {type(d).__name__}")
        _check_keys("config", d, {
            "seed", "modality", "out_dir", "normalizer", "vocab", "text",
            "vision", "fusion", "augment", "optimizer", "split", "generator",
        })
        kwargs: dict = {}
        if "seed" in d:
            kwargs["seed"] = int(d["seed"])
        if "modality" in d:
            kwargs["modality"] = str(d["modality"])
        if "out_dir" in d and d["out_dir"] is not None:
            kwargs["out_dir"] = str(d["out_dir"])
        try:
            if "normalizer" in d:
                _check_keys("normalizer", d["normalizer"],
                            {"punctuation", "emoji_policy", "emoji_map",
                             "misspellings"})
                kwargs["normalizer"] = NormalizerConfig(**d["normalizer"])
            if "vocab" in d:
                _check_keys("vocab", d["vocab"], {"target_size", "max_len"})
                kwargs["vocab"] = VocabSection(**d["vocab"])
            if "text" in d:
                _check_keys("text", d["text"],
                            {"d_model", "n_heads", "n_layers", "d_ff",
                             "dropout_rate"})
                kwargs["text"] = TextSection(**d["text"])
            if "vision" in d:
                _check_keys("vision", d["vision"],
                            {"widths", "blocks_per_stage", "resolution"})
                vision = dict(d["vision"])
                if "widths" in vision:
                    vision["widths"] = tuple(vision["widths"])
                kwargs["vision"] = VisionEncoderConfig(**vision)
            if "fusion" in d:
                _check_keys("fusion", d["fusion"], {"hidden", "dropout_rate"})
                fusion = dict(d["fusion"])
                if "hidden" in fusion:
                    fusion["hidden"] = tuple(fusion["hidden"])
                kwargs["fusion"] = FusionSection(**fusion)
            if "augment" in d:
                _check_keys("augment", d["augment"],
                            {"enabled", "horizontal_flip_prob",
                             "rotation_degrees", "zoom_range"})
                augment = dict(d["augment"])
                if "zoom_range" in augment:
                    augment["zoom_range"] = tuple(augment["zoom_range"])
                kwargs["augment"] = AugmentConfig(**augment)
            if "optimizer" in d:
                _check_keys("optimizer", d["optimizer"],
                            {"algorithm", "lr_encoder", "lr_fusion", "beta1",
                             "beta2", "epsilon", "batch_size", "max_epochs",
                             "patience", "clip_norm"})
                kwargs["optimizer"] = OptimizerSpec(**d["optimizer"])
            if "split" in d:
                _check_keys("split", d["split"],
                            {"train_fraction", "val_fraction", "test_fraction",
                             "stratified", "seed"})
                kwargs["split"] = SplitSpec(**d["split"])
            if "generator" in d:
                kwargs["generator"] = GeneratorSpec.from_dict(d["generator"])
        except TypeError as exc:
            raise ConfigError(f"malformed config section: {exc}") from exc
        return cls(**kwargs)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid config JSON: {exc}") from exc
        return cls.from_dict(d)

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                return cls.from_json(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())
