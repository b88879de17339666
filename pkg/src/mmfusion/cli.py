"""Command-line entry point: generate, train, eval, compare, gradcheck.

Every command is deterministic given its flags, and every command leaves
a resolved-config snapshot next to its outputs so a run can be reproduced
byte-for-byte from the output directory alone. Exit codes: 0 success,
2 usage or configuration problem, 3 numeric failure during training.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Optional, Sequence

import numpy as np

from . import evaluation as E
from .config import RunConfig
from .datasets import load_manifest, labels_array, prepare_dataset
from .errors import DataError, DivergenceError, MMFusionError, UsageError
from .gradcheck import full_suite
from .serialization import load_tensors
from .synthetic import GeneratorSpec, generate, load_truth
from .text import Vocabulary, normalize_text, train_vocabulary
from .training import stratified_split, train

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3


def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _snapshot(out_dir: str, payload: dict, name: str = "resolved_config.json") -> None:
    _write(os.path.join(out_dir, name),
           json.dumps(payload, indent=2, sort_keys=True) + "\n")


# -- generate ---------------------------------------------------------------


def cmd_generate(args: argparse.Namespace) -> int:
    spec = GeneratorSpec(
        n_samples=args.samples,
        seed=args.seed,
        alpha_text=args.alpha_text,
        alpha_image=args.alpha_image,
        vocab_size=args.vocab_size,
        resolution=args.resolution,
    )
    ds = generate(spec, args.out)
    truth = load_truth(args.out)
    text_rate = float(np.mean([t["text_ambiguous"] for t in truth]))
    image_rate = float(np.mean([t["image_ambiguous"] for t in truth]))
    print(f"wrote {spec.n_samples} samples to {args.out}")
    print(f"class counts: {ds.class_counts}")
    print(f"realized ambiguity: text {text_rate:.4f}, image {image_rate:.4f}")
    return EXIT_OK


# -- train ------------------------------------------------------------------


def _prepare_config(args: argparse.Namespace) -> RunConfig:
    config = RunConfig.from_file(args.config) if args.config else RunConfig()
    if args.modality:
        config.modality = args.modality
    if args.out:
        config.out_dir = args.out
    if config.out_dir is None:
        raise UsageError("no output directory: pass --out or set out_dir")
    return config


def cmd_train(args: argparse.Namespace) -> int:
    config = _prepare_config(args)
    out_dir = config.out_dir
    os.makedirs(out_dir, exist_ok=True)
    records = load_manifest(args.data)
    labels = labels_array(records)
    n_classes = config.n_classes
    if labels.max() >= n_classes:
        raise DataError(
            f"manifest labels reach {int(labels.max())} but the configured "
            f"class list has {n_classes} entries"
        )
    split = stratified_split(labels, config.split)
    vocab: Optional[Vocabulary] = None
    vocab_size = None
    if config.modality in ("text", "multimodal"):
        train_texts = [normalize_text(records[i].text, config.normalizer)
                       for i in split.train]
        vocab = train_vocabulary(train_texts, config.vocab.target_size)
        vocab.save(os.path.join(out_dir, "vocab.txt"))
        vocab_size = len(vocab.tokens)
    prepared = prepare_dataset(
        records, args.data, modality=config.modality, vocab=vocab,
        normalizer=config.normalizer, max_len=config.vocab.max_len,
        resolution=config.vision.resolution, augment=config.augment,
        augment_seed=config.seed)
    train_data = _SubsetView(prepared, split.train)
    val_data = _SubsetView(prepared, split.val)
    model = config.build_model(vocab_size)
    result = train(model, train_data, val_data, config.optimizer,
                   seed=config.seed)
    checkpoint = os.path.join(out_dir, "checkpoint.mmt")
    model.save(checkpoint, extra_metadata={
        "vocab_size": vocab_size,
        "best_epoch": result.best_epoch,
        "epochs_trained": len(result.history),
        "class_names": config.class_names,
    })
    _write(os.path.join(out_dir, "history.csv"), result.history_csv())
    config.save(os.path.join(out_dir, "config.json"))
    _snapshot(out_dir, {
        "command": "train",
        "config": config.to_dict(),
        "data_dir": os.path.abspath(args.data),
    })
    print(f"trained {config.modality} model: {len(result.history)} epochs, "
          f"best epoch {result.best_epoch}, "
          f"val loss {result.best_val_loss:.6f}, "
          f"val accuracy {result.best_val_accuracy:.4f}")
    print(f"checkpoint: {checkpoint}")
    return EXIT_OK


class _SubsetView:
    """Index-remapped view of a prepared dataset, for split-local batching."""

    def __init__(self, data, indices: np.ndarray):
        self.data = data
        self.indices = np.asarray(indices, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.indices)

    def batch(self, idx, training: bool = False, epoch: int = 0):
        return self.data.batch(self.indices[np.asarray(idx, dtype=np.int64)],
                               training=training, epoch=epoch)


# -- eval ---------------------------------------------------------------


def cmd_eval(args: argparse.Namespace) -> int:
    checkpoint_dir = os.path.dirname(os.path.abspath(args.checkpoint))
    config_path = args.config or os.path.join(checkpoint_dir, "config.json")
    if not os.path.exists(args.checkpoint):
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    if not os.path.exists(config_path):
        raise UsageError(f"no config next to checkpoint (looked at "
                         f"{config_path}); pass --config")
    config = RunConfig.from_file(config_path)
    arrays, sidecar = load_tensors(args.checkpoint)
    vocab = None
    vocab_size = sidecar.get("vocab_size")
    if config.modality in ("text", "multimodal"):
        vocab_path = os.path.join(checkpoint_dir, "vocab.txt")
        if not os.path.exists(vocab_path):
            raise UsageError(f"no vocab.txt next to checkpoint: {vocab_path}")
        vocab = Vocabulary.load(vocab_path)
        vocab_size = len(vocab.tokens)
    model = config.build_model(vocab_size)
    model.load_arrays(arrays)
    records = load_manifest(args.data)
    labels = labels_array(records)
    split = stratified_split(labels, config.split)
    chosen = {"train": split.train, "val": split.val, "test": split.test,
              "all": np.arange(len(records), dtype=np.int64)}[args.split]
    subset = [records[i] for i in chosen]
    prepared = prepare_dataset(
        subset, args.data, modality=config.modality, vocab=vocab,
        normalizer=config.normalizer, max_len=config.vocab.max_len,
        resolution=config.vision.resolution)
    class_names = config.class_names if config.n_classes == model.n_classes \
        else None
    report = E.evaluate_model(model, prepared, class_names=class_names,
                              name=args.name or config.modality)
    report_path = args.report
    os.makedirs(os.path.dirname(os.path.abspath(report_path)), exist_ok=True)
    _write(report_path, E.report_to_json(report))
    stem = report_path[:-5] if report_path.endswith(".json") else report_path
    _write(stem + ".confusion.csv", E.confusion_csv(report))
    _write(stem + ".txt", E.render_report_text(report)
           + "\n" + E.render_confusion_text(report))
    _snapshot(os.path.dirname(os.path.abspath(report_path)), {
        "command": "eval",
        "checkpoint": os.path.abspath(args.checkpoint),
        "config": config.to_dict(),
        "data_dir": os.path.abspath(args.data),
        "split": args.split,
    }, name=os.path.basename(stem) + ".resolved_config.json")
    print(E.render_report_text(report), end="")
    print(f"report: {report_path}")
    return EXIT_OK


# -- compare ------------------------------------------------------------


def cmd_compare(args: argparse.Namespace) -> int:
    reports = []
    for path in args.reports:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                reports.append(E.report_from_json(fh.read()))
        except OSError as exc:
            raise UsageError(f"cannot read report {path}: {exc}") from exc
        except DataError as exc:
            raise DataError(f"{path}: {exc}") from exc
    table = E.compare_runs(reports, baseline=args.baseline)
    os.makedirs(args.out, exist_ok=True)
    _write(os.path.join(args.out, "comparison.csv"), table.to_csv())
    text = table.render_text()
    _write(os.path.join(args.out, "comparison.txt"), text)
    _write(os.path.join(args.out, "error_rates.svg"),
           E.error_rates_svg(reports))
    _snapshot(args.out, {
        "command": "compare",
        "reports": [os.path.abspath(p) for p in args.reports],
        "baseline": args.baseline,
    })
    print(text, end="")
    print(f"comparison written to {args.out}")
    return EXIT_OK


# -- gradcheck ----------------------------------------------------------


_COMPONENT_OF = {
    "tiny_text_block": "text_encoder",
    "tiny_vision_block": "vision_encoder",
    "tiny_fused_ce": "fused_model",
}


def cmd_gradcheck(args: argparse.Namespace) -> int:
    results = full_suite(seed=args.seed)
    worst: dict[str, float] = {}
    for res in results:
        component = _COMPONENT_OF.get(res.name, "tensor_ops")
        worst[component] = max(worst.get(component, 0.0), res.max_rel_error)
    ok = True
    for component in ("tensor_ops", "text_encoder", "vision_encoder",
                      "fused_model"):
        err = worst.get(component, 0.0)
        status = "ok" if err < 1e-4 else "FAIL"
        print(f"{component:<16} max rel error {err:.3e}  {status}")
        ok = ok and err < 1e-4
    return EXIT_OK if ok else 1


# -- plumbing -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mmfusion",
        description="multimodal disaster-caption classifier toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int, default=5037)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha-text", type=float, default=0.0)
    p.add_argument("--alpha-image", type=float, default=0.0)
    p.add_argument("--vocab-size", type=int, default=180)
    p.add_argument("--resolution", type=int, default=32)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a classifier on a corpus")
    p.add_argument("--config", default=None)
    p.add_argument("--modality", default=None,
                   choices=("text", "image", "multimodal"))
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test",
                   choices=("train", "val", "test", "all"))
    p.add_argument("--report", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--name", default=None,
                   help="run label used in comparisons")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="compare evaluation reports")
    p.add_argument("--reports", nargs="+", required=True)
    p.add_argument("--baseline", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except MMFusionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
