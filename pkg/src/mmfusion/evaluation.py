"""Classification metrics, agreement, run comparison, and report rendering.

All metrics derive from integer confusion counts with a single final
division, so an exact-arithmetic recomputation from the raw label pairs
reproduces every value bit-for-bit. Undefined ratios (a class never
predicted, or absent from the split) report as 0 and the class is flagged
rather than silently dropped.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DataError, UsageError


def confusion_matrix(true: np.ndarray, pred: np.ndarray,
                     n_classes: int) -> np.ndarray:
    """Counts with true labels on rows and predicted labels on columns."""
    true = np.asarray(true, dtype=np.int64).ravel()
    pred = np.asarray(pred, dtype=np.int64).ravel()
    if true.shape != pred.shape:
        raise DataError(
            f"label arrays disagree in length: {true.shape[0]} vs {pred.shape[0]}"
        )
    if true.size == 0:
        raise DataError("cannot evaluate zero samples")
    if n_classes < 1:
        raise DataError(f"n_classes must be positive, got {n_classes}")
    for name, arr in (("true", true), ("predicted", pred)):
        bad = (arr < 0) | (arr >= n_classes)
        if np.any(bad):
            raise DataError(
                f"{name} labels outside [0, {n_classes}): "
                f"{arr[bad][:5].tolist()}"
            )
    conf = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(conf, (true, pred), 1)
    return conf


@dataclass
class EvalReport:
    """Metrics for one evaluation run; ``name`` labels the run in comparisons."""

    confusion: np.ndarray
    class_names: list[str]
    n: int
    accuracy: float
    precision: list[float]
    recall: list[float]
    f1: list[float]
    support: list[int]
    predicted_counts: list[int]
    error_rate: list[Optional[float]]
    macro_precision: float
    macro_recall: float
    macro_f1: float
    zero_division_classes: list[int] = field(default_factory=list)
    name: str = ""

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "n": self.n,
            "n_classes": self.n_classes,
            "class_names": list(self.class_names),
            "accuracy": self.accuracy,
            "precision": list(self.precision),
            "recall": list(self.recall),
            "f1": list(self.f1),
            "support": [int(s) for s in self.support],
            "predicted_counts": [int(s) for s in self.predicted_counts],
            "error_rate": list(self.error_rate),
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "zero_division_classes": list(self.zero_division_classes),
            "confusion": self.confusion.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        try:
            return cls(
                confusion=np.asarray(d["confusion"], dtype=np.int64),
                class_names=list(d["class_names"]),
                n=int(d["n"]),
                accuracy=float(d["accuracy"]),
                precision=[float(x) for x in d["precision"]],
                recall=[float(x) for x in d["recall"]],
                f1=[float(x) for x in d["f1"]],
                support=[int(x) for x in d["support"]],
                predicted_counts=[int(x) for x in d["predicted_counts"]],
                error_rate=[None if x is None else float(x)
                            for x in d["error_rate"]],
                macro_precision=float(d["macro_precision"]),
                macro_recall=float(d["macro_recall"]),
                macro_f1=float(d["macro_f1"]),
                zero_division_classes=[int(x) for x in
                                       d.get("zero_division_classes", [])],
                name=str(d.get("name", "")),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed evaluation report: {exc}") from exc


def evaluate_predictions(true: np.ndarray, pred: np.ndarray,
                         n_classes: Optional[int] = None,
                         class_names: Optional[Sequence[str]] = None,
                         name: str = "") -> EvalReport:
    """Full metric report from raw (true, predicted) label pairs.

    Per-class values come from integer counts: precision = tp over column
    total, recall = tp over row total, F1 = 2tp over (row + column). The
    per-class error rate is 1 - recall, undefined (None) for classes with
    no samples in the split. Macro averages are unweighted class means.
    """
    if n_classes is None:
        if class_names is not None:
            n_classes = len(class_names)
        else:
            merged = np.concatenate([np.asarray(true).ravel(),
                                     np.asarray(pred).ravel()])
            n_classes = int(merged.max()) + 1 if merged.size else 0
    if class_names is None:
        class_names = [f"class_{i}" for i in range(n_classes)]
    elif len(class_names) != n_classes:
        raise DataError(
            f"{len(class_names)} class names for {n_classes} classes"
        )
    conf = confusion_matrix(true, pred, n_classes)
    n = int(conf.sum())
    precision, recall, f1 = [], [], []
    support, predicted_counts = [], []
    error_rate: list[Optional[float]] = []
    flagged = set()
    for c in range(n_classes):
        tp = int(conf[c, c])
        row = int(conf[c, :].sum())
        col = int(conf[:, c].sum())
        support.append(row)
        predicted_counts.append(col)
        if col > 0:
            precision.append(tp / col)
        else:
            precision.append(0.0)
            flagged.add(c)
        if row > 0:
            recall.append(tp / row)
            error_rate.append((row - tp) / row)
        else:
            recall.append(0.0)
            error_rate.append(None)
            flagged.add(c)
        if row + col > 0:
            f1.append(2 * tp / (row + col))
        else:
            f1.append(0.0)
            flagged.add(c)
    return EvalReport(
        confusion=conf,
        class_names=list(class_names),
        n=n,
        accuracy=int(np.trace(conf)) / n,
        precision=precision,
        recall=recall,
        f1=f1,
        support=support,
        predicted_counts=predicted_counts,
        error_rate=error_rate,
        macro_precision=sum(precision) / n_classes,
        macro_recall=sum(recall) / n_classes,
        macro_f1=sum(f1) / n_classes,
        zero_division_classes=sorted(flagged),
        name=name,
    )


def evaluate_model(model, data, indices: Optional[np.ndarray] = None,
                   batch_size: int = 64,
                   class_names: Optional[Sequence[str]] = None,
                   name: str = "") -> EvalReport:
    """Batched deterministic inference over a dataset, then a full report."""
    n = len(data) if indices is None else len(indices)
    if n == 0:
        raise DataError("cannot evaluate an empty dataset")
    base = np.arange(len(data), dtype=np.int64) if indices is None \
        else np.asarray(indices, dtype=np.int64)
    true_parts, pred_parts = [], []
    for start in range(0, n, batch_size):
        batch = data.batch(base[start:start + batch_size], training=False)
        true_parts.append(batch.labels)
        pred_parts.append(model.predict_batch(batch))
    return evaluate_predictions(np.concatenate(true_parts),
                                np.concatenate(pred_parts),
                                n_classes=model.n_classes,
                                class_names=class_names, name=name)


def cohens_kappa(labels_a: np.ndarray, labels_b: np.ndarray) -> float:
    """Chance-corrected agreement between two label assignments.

    Computed from integer marginals as (n*agree - sum(row*col)) over
    (n^2 - sum(row*col)), a single division of exact integers. When both
    assignments are the same constant, expected agreement is 1 and kappa
    is defined as 1.
    """
    a = np.asarray(labels_a).ravel()
    b = np.asarray(labels_b).ravel()
    if a.shape != b.shape:
        raise DataError(
            f"label arrays disagree in length: {a.shape[0]} vs {b.shape[0]}"
        )
    if a.size == 0:
        raise DataError("cannot compute agreement on zero samples")
    values = sorted(set(a.tolist()) | set(b.tolist()))
    index = {v: i for i, v in enumerate(values)}
    k = len(values)
    conf = np.zeros((k, k), dtype=np.int64)
    ai = np.array([index[v] for v in a.tolist()], dtype=np.int64)
    bi = np.array([index[v] for v in b.tolist()], dtype=np.int64)
    np.add.at(conf, (ai, bi), 1)
    n = int(conf.sum())
    agree = int(np.trace(conf))
    marg = int(np.dot(conf.sum(axis=1), conf.sum(axis=0)))
    num = n * agree - marg
    den = n * n - marg
    if den == 0:
        return 1.0
    return num / den


def class_error_rates(report: EvalReport) -> list[Optional[float]]:
    """Per-class misclassification rates; None for classes absent from the split."""
    return list(report.error_rate)


@dataclass
class RunSummary:
    name: str
    n_runs: int
    accuracy_mean: float
    accuracy_std: float
    macro_f1_mean: float
    macro_f1_std: float
    delta_accuracy: float
    delta_macro_f1: float


@dataclass
class ComparisonTable:
    baseline: str
    rows: list[RunSummary]

    def to_csv(self) -> str:
        lines = ["name,runs,accuracy_mean,accuracy_std,macro_f1_mean,"
                 "macro_f1_std,delta_accuracy_points,delta_macro_f1_points"]
        for r in self.rows:
            lines.append(
                f"{r.name},{r.n_runs},{r.accuracy_mean!r},{r.accuracy_std!r},"
                f"{r.macro_f1_mean!r},{r.macro_f1_std!r},"
                f"{r.delta_accuracy * 100:+.2f},{r.delta_macro_f1 * 100:+.2f}"
            )
        return "\n".join(lines) + "\n"

    def render_text(self) -> str:
        header = (f"{'run':<16} {'acc':>8} {'±':>7} {'macroF1':>8} {'±':>7} "
                  f"{'Δacc':>7} {'ΔF1':>7}")
        lines = [f"baseline: {self.baseline}", header, "-" * len(header)]
        for r in self.rows:
            lines.append(
                f"{r.name:<16} {r.accuracy_mean * 100:8.2f} "
                f"{r.accuracy_std * 100:7.2f} {r.macro_f1_mean * 100:8.2f} "
                f"{r.macro_f1_std * 100:7.2f} {r.delta_accuracy * 100:+7.2f} "
                f"{r.delta_macro_f1 * 100:+7.2f}"
            )
        return "\n".join(lines) + "\n"


def _mean_std(values: list[float]) -> tuple[float, float]:
    mean = sum(values) / len(values)
    if len(values) < 2:
        return mean, 0.0
    var = sum((v - mean) ** 2 for v in values) / (len(values) - 1)
    return mean, var ** 0.5


def compare_runs(reports: Sequence[EvalReport], baseline: str) -> ComparisonTable:
    """Aggregate same-named reports (seeds) and report deltas to a baseline.

    All reports must cover the same evaluation set (same sample count and
    class count); otherwise the comparison is meaningless and rejected.
    A single report compared against itself yields zero deltas.
    """
    if not reports:
        raise UsageError("comparison needs at least one report")
    first = reports[0]
    for rep in reports[1:]:
        if rep.n != first.n or rep.n_classes != first.n_classes:
            raise UsageError(
                f"reports cover different evaluation sets: run {rep.name!r} "
                f"has n={rep.n}, {rep.n_classes} classes vs n={first.n}, "
                f"{first.n_classes}"
            )
    groups: dict[str, list[EvalReport]] = {}
    order: list[str] = []
    for rep in reports:
        if rep.name not in groups:
            groups[rep.name] = []
            order.append(rep.name)
        groups[rep.name].append(rep)
    if baseline not in groups:
        raise UsageError(f"baseline {baseline!r} not among runs {order}")
    stats = {}
    for name in order:
        accs = [r.accuracy for r in groups[name]]
        f1s = [r.macro_f1 for r in groups[name]]
        stats[name] = (_mean_std(accs), _mean_std(f1s))
    base_acc = stats[baseline][0][0]
    base_f1 = stats[baseline][1][0]
    rows = []
    for name in order:
        (acc_mean, acc_std), (f1_mean, f1_std) = stats[name]
        rows.append(RunSummary(
            name=name, n_runs=len(groups[name]),
            accuracy_mean=acc_mean, accuracy_std=acc_std,
            macro_f1_mean=f1_mean, macro_f1_std=f1_std,
            delta_accuracy=acc_mean - base_acc,
            delta_macro_f1=f1_mean - base_f1,
        ))
    return ComparisonTable(baseline=baseline, rows=rows)


# -- rendering ------------------------------------------------------------


def report_to_json(report: EvalReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"


def report_from_json(text: str) -> EvalReport:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid report JSON: {exc}") from exc
    return EvalReport.from_dict(d)


def confusion_csv(report: EvalReport) -> str:
    lines = ["true\\predicted," + ",".join(report.class_names)]
    for i, row_name in enumerate(report.class_names):
        counts = ",".join(str(int(c)) for c in report.confusion[i])
        lines.append(f"{row_name},{counts}")
    return "\n".join(lines) + "\n"


def render_confusion_text(report: EvalReport) -> str:
    """Monospace grid, true classes on rows, predictions on columns."""
    names = report.class_names
    width = max(5, max(len(n) for n in names),
                len(str(int(report.confusion.max(initial=0)))))
    header = " " * (width + 1) + " ".join(f"{n:>{width}}" for n in names)
    lines = [header]
    for i, row_name in enumerate(names):
        cells = " ".join(f"{int(c):>{width}}" for c in report.confusion[i])
        lines.append(f"{row_name:>{width}} {cells}")
    return "\n".join(lines) + "\n"


def render_report_text(report: EvalReport) -> str:
    name_w = max(6, max(len(n) for n in report.class_names))
    lines = [
        f"samples: {report.n}    accuracy: {report.accuracy * 100:.2f}%",
        f"macro precision/recall/F1: {report.macro_precision * 100:.2f} / "
        f"{report.macro_recall * 100:.2f} / {report.macro_f1 * 100:.2f}",
        "",
        f"{'class':<{name_w}} {'prec':>7} {'recall':>7} {'f1':>7} "
        f"{'error':>7} {'n':>6}",
    ]
    for c, cname in enumerate(report.class_names):
        err = report.error_rate[c]
        err_text = "   n/a" if err is None else f"{err * 100:6.2f}"
        lines.append(
            f"{cname:<{name_w}} {report.precision[c] * 100:7.2f} "
            f"{report.recall[c] * 100:7.2f} {report.f1[c] * 100:7.2f} "
            f"{err_text:>7} {report.support[c]:>6}"
        )
    if report.zero_division_classes:
        flagged = ", ".join(report.class_names[c]
                            for c in report.zero_division_classes)
        lines.append("")
        lines.append(f"zero-division classes (values reported as 0): {flagged}")
    return "\n".join(lines) + "\n"


_SVG_COLORS = ("#4c78a8", "#f58518", "#54a24b", "#e45756", "#72b7b2",
               "#eeca3b", "#b279a2", "#ff9da6", "#9d755d")


def error_rates_svg(reports: Sequence[EvalReport],
                    title: str = "Per-class error rate (%)") -> str:
    """Grouped bar chart of per-class error rates, one bar color per run.

    Pure-string SVG with a fixed layout, so identical reports render
    byte-identical charts. Classes missing from the split get no bar.
    """
    if not reports:
        raise UsageError("no reports to chart")
    names = reports[0].class_names
    for rep in reports[1:]:
        if rep.class_names != names:
            raise UsageError("reports disagree on class names")
    margin_left, margin_top = 50, 40
    plot_w, plot_h = max(420, 46 * len(names)), 220
    legend_h = 22 * len(reports)
    width = margin_left + plot_w + 20
    height = margin_top + plot_h + 40 + legend_h
    group_w = plot_w / len(names)
    bar_w = min(18.0, group_w * 0.8 / len(reports))
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<text x="{margin_left}" y="20" font-family="monospace" '
        f'font-size="14">{title}</text>',
    ]
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = margin_top + plot_h * (1 - frac)
        parts.append(f'<line x1="{margin_left}" y1="{y:.1f}" '
                     f'x2="{margin_left + plot_w}" y2="{y:.1f}" '
                     f'stroke="#cccccc" stroke-width="1"/>')
        parts.append(f'<text x="{margin_left - 8}" y="{y + 4:.1f}" '
                     f'font-family="monospace" font-size="11" '
                     f'text-anchor="end">{frac * 100:.0f}</text>')
    for c, cname in enumerate(names):
        group_x = margin_left + c * group_w
        total_bars = bar_w * len(reports)
        start_x = group_x + (group_w - total_bars) / 2
        for r, rep in enumerate(reports):
            err = rep.error_rate[c]
            if err is None:
                continue
            h = plot_h * err
            x = start_x + r * bar_w
            y = margin_top + plot_h - h
            color = _SVG_COLORS[r % len(_SVG_COLORS)]
            parts.append(f'<rect x="{x:.1f}" y="{y:.1f}" '
                         f'width="{bar_w:.1f}" height="{h:.1f}" '
                         f'fill="{color}"/>')
        parts.append(f'<text x="{group_x + group_w / 2:.1f}" '
                     f'y="{margin_top + plot_h + 16}" '
                     f'font-family="monospace" font-size="11" '
                     f'text-anchor="middle">{cname}</text>')
    for r, rep in enumerate(reports):
        y = margin_top + plot_h + 36 + 22 * r
        color = _SVG_COLORS[r % len(_SVG_COLORS)]
        label = rep.name if rep.name else f"run {r}"
        parts.append(f'<rect x="{margin_left}" y="{y - 10}" width="14" '
                     f'height="14" fill="{color}"/>')
        parts.append(f'<text x="{margin_left + 20}" y="{y + 2}" '
                     f'font-family="monospace" font-size="12">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
