"""Confusion matrix, classification metrics and report export."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataio import ClassLabel
from .errors import LengthMismatch
from .nn import ModelParams, predict_proba
from .train import TrainHistory
from . import autodiff as ad

CLASS_NAMES = ("truth", "lie")
DISPLAY = {"truth": "Truth", "lie": "Lie"}


@dataclass(frozen=True)
class ConfusionMatrix:
    """2x2 counts indexed ``[actual][predicted]`` over (truth, lie)."""

    counts: tuple

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.shape != (2, 2) or (c < 0).any():
            raise ValueError(f"confusion counts must be a non-negative 2x2, got {self.counts!r}")
        object.__setattr__(self, "counts", tuple(tuple(int(v) for v in row) for row in c))

    @property
    def array(self) -> np.ndarray:
        return np.array(self.counts, dtype=np.int64)

    @property
    def total(self) -> int:
        return int(self.array.sum())

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["actual\\predicted", *CLASS_NAMES])
        for name, row in zip(CLASS_NAMES, self.counts):
            w.writerow([name, *row])
        return buf.getvalue()

    @classmethod
    def from_csv_text(cls, text: str) -> "ConfusionMatrix":
        rows = list(csv.reader(io.StringIO(text)))[1:]
        return cls(tuple(tuple(int(v) for v in r[1:]) for r in rows))


def confusion(predictions, actuals) -> ConfusionMatrix:
    p = np.asarray([int(ClassLabel(v)) for v in predictions], dtype=int)
    a = np.asarray([int(ClassLabel(v)) for v in actuals], dtype=int)
    if p.size != a.size:
        raise LengthMismatch(f"{p.size} predictions vs {a.size} actuals")
    if p.size == 0:
        raise LengthMismatch("no samples")
    c = np.zeros((2, 2), dtype=np.int64)
    np.add.at(c, (a, p), 1)
    return ConfusionMatrix(c)


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int
    # metric names whose denominator was zero (reported as 0)
    degenerate: tuple = ()


@dataclass
class EvalReport:
    per_class: dict
    accuracy: float
    macro_avg: ClassMetrics
    weighted_avg: ClassMetrics
    test_loss: float | None = None
    confusion: ConfusionMatrix | None = None
    extra: dict = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(m.support for m in self.per_class.values())


def _ratio(num, den, name, flags):
    if den == 0:
        flags.append(name)
        return 0.0
    return num / den


def metrics(cm: ConfusionMatrix) -> EvalReport:
    c = cm.array
    if c.sum() < 1:
        raise ValueError("empty confusion matrix")
    per = {}
    for k, name in enumerate(CLASS_NAMES):
        tp = int(c[k, k])
        fp = int(c[:, k].sum()) - tp
        fn = int(c[k, :].sum()) - tp
        flags = []
        p = _ratio(tp, tp + fp, "precision", flags)
        r = _ratio(tp, tp + fn, "recall", flags)
        f = _ratio(2 * p * r, p + r, "f1", flags)
        per[name] = ClassMetrics(p, r, f, tp + fn, tuple(flags))
    total = int(c.sum())
    rows = list(per.values())
    macro = ClassMetrics(*(float(np.mean([getattr(m, a) for m in rows])) for a in ("precision", "recall", "f1")), total)
    weighted = ClassMetrics(
        *(sum(getattr(m, a) * m.support for m in rows) / total for a in ("precision", "recall", "f1")), total
    )
    return EvalReport(per, int(np.trace(c)) / total, macro, weighted, confusion=cm)


def predict_labels(probs: np.ndarray) -> np.ndarray:
    """Argmax with exact ties going to truth (index 0)."""
    probs = np.asarray(probs)
    return (probs[:, 1] > probs[:, 0]).astype(int)


def evaluate_model(params: ModelParams, x, y, batch_size: int = 256) -> EvalReport:
    x = np.asarray(x)
    y = np.asarray(y, dtype=int)
    if len(x) == 0:
        raise LengthMismatch("empty evaluation split")
    probs = predict_proba(params, x, batch_size)
    picked = np.clip(probs[np.arange(len(y)), y].astype(np.float64), ad.CE_CLAMP, 1.0)
    report = metrics(confusion(predict_labels(probs), y))
    # np.sum reduces pairwise, so the loss does not depend on batching
    report.test_loss = float(np.sum(-np.log(picked))) / len(y)
    return report


# -- rendering & serialization ---------------------------------------------------------

def format_table(report: EvalReport, digits: int = 2) -> str:
    width = max(len("Weighted avg"), *(len(DISPLAY[n]) for n in CLASS_NAMES))
    head = f"{'':>{width}}  {'precision':>9}  {'recall':>9}  {'f1-score':>9}  {'support':>9}"
    lines = [head, ""]

    def row(label, m):
        return (f"{label:>{width}}  {m.precision:>9.{digits}f}  {m.recall:>9.{digits}f}"
                f"  {m.f1:>9.{digits}f}  {m.support:>9d}")

    for name in CLASS_NAMES:
        lines.append(row(DISPLAY[name], report.per_class[name]))
    lines.append("")
    lines.append(f"{'Accuracy':>{width}}  {'':>9}  {'':>9}  {report.accuracy:>9.{digits}f}  {report.total:>9d}")
    lines.append(row("Macro avg", report.macro_avg))
    lines.append(row("Weighted avg", report.weighted_avg))
    if report.test_loss is not None:
        lines.append("")
        lines.append(f"test loss: {report.test_loss:.4f}")
    return "\n".join(lines) + "\n"


def _metric_items(prefix, m: ClassMetrics):
    yield f"{prefix}.precision", repr(float(m.precision))
    yield f"{prefix}.recall", repr(float(m.recall))
    yield f"{prefix}.f1", repr(float(m.f1))
    yield f"{prefix}.support", str(int(m.support))
    yield f"{prefix}.degenerate", ",".join(m.degenerate)


def report_to_kv(report: EvalReport) -> str:
    items = []
    for name in CLASS_NAMES:
        items.extend(_metric_items(name, report.per_class[name]))
    items.append(("accuracy", repr(float(report.accuracy))))
    items.extend(_metric_items("macro_avg", report.macro_avg))
    items.extend(_metric_items("weighted_avg", report.weighted_avg))
    items.append(("test_loss", "" if report.test_loss is None else repr(float(report.test_loss))))
    if report.confusion is not None:
        items.append(("confusion", ";".join(",".join(map(str, r)) for r in report.confusion.counts)))
    for k in sorted(report.extra):
        items.append((f"extra.{k}", str(report.extra[k])))
    return "".join(f"{k}={v}\n" for k, v in items)


def report_from_kv(text: str) -> EvalReport:
    kv = {}
    for line in text.splitlines():
        if line.strip():
            k, _, v = line.partition("=")
            kv[k] = v

    def cls(prefix):
        deg = kv[f"{prefix}.degenerate"]
        return ClassMetrics(
            float(kv[f"{prefix}.precision"]), float(kv[f"{prefix}.recall"]), float(kv[f"{prefix}.f1"]),
            int(kv[f"{prefix}.support"]), tuple(deg.split(",")) if deg else (),
        )

    cm = None
    if kv.get("confusion"):
        cm = ConfusionMatrix(tuple(tuple(int(v) for v in r.split(",")) for r in kv["confusion"].split(";")))
    return EvalReport(
        {n: cls(n) for n in CLASS_NAMES},
        float(kv["accuracy"]),
        cls("macro_avg"),
        cls("weighted_avg"),
        float(kv["test_loss"]) if kv.get("test_loss") else None,
        cm,
        {k[len("extra."):]: v for k, v in kv.items() if k.startswith("extra.")},
    )


def export_report(report: EvalReport, history: TrainHistory | None, out_dir, prefix: str = "") -> dict:
    """Write text table, key-value metrics, confusion CSV and history CSV; return the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "table": out / f"{prefix}report.txt",
        "metrics": out / f"{prefix}metrics.kv",
        "history": out / f"{prefix}history.csv",
    }
    paths["table"].write_text(format_table(report))
    paths["metrics"].write_text(report_to_kv(report))
    (history or TrainHistory()).write_csv(paths["history"])
    if report.confusion is not None:
        paths["confusion"] = out / f"{prefix}confusion.csv"
        paths["confusion"].write_text(report.confusion.to_csv_text())
    return paths


def finite_report(report: EvalReport) -> bool:
    vals = [report.accuracy]
    for m in [*report.per_class.values(), report.macro_avg, report.weighted_avg]:
        vals += [m.precision, m.recall, m.f1]
    return all(math.isfinite(v) and 0 <= v <= 1 for v in vals)
