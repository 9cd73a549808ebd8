"""Precision / recall / weighted-F1, confusion matrices and error tables."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .corpus import Corpus, LabelScheme
from .errors import EmptyInput, IoFailure, LengthMismatch


@dataclass(frozen=True)
class MetricsReport:
    labels: tuple[str, ...]
    precision: tuple[float, ...]
    recall: tuple[float, ...]
    f1: tuple[float, ...]
    support: tuple[int, ...]
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    accuracy: float
    # per class, which of "precision"/"recall" had a zero denominator
    degenerate: tuple[tuple[str, ...], ...] = field(default=())

    def to_dict(self) -> dict:
        per_class = []
        for k, label in enumerate(self.labels):
            entry = {
                "label": label,
                "precision": self.precision[k],
                "recall": self.recall[k],
                "f1": self.f1[k],
                "support": self.support[k],
            }
            if self.degenerate and self.degenerate[k]:
                entry["degenerate"] = list(self.degenerate[k])
            per_class.append(entry)
        return {
            "per_class": per_class,
            "weighted": {
                "precision": self.weighted_precision,
                "recall": self.weighted_recall,
                "f1": self.weighted_f1,
            },
            "accuracy": self.accuracy,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        pc = d["per_class"]
        return cls(
            labels=tuple(e["label"] for e in pc),
            precision=tuple(e["precision"] for e in pc),
            recall=tuple(e["recall"] for e in pc),
            f1=tuple(e["f1"] for e in pc),
            support=tuple(e["support"] for e in pc),
            weighted_precision=d["weighted"]["precision"],
            weighted_recall=d["weighted"]["recall"],
            weighted_f1=d["weighted"]["f1"],
            accuracy=d["accuracy"],
            degenerate=tuple(tuple(e.get("degenerate", ())) for e in pc),
        )


@dataclass(frozen=True)
class ConfusionMatrix:
    labels: tuple[str, ...]
    counts: np.ndarray  # rows gold, columns predicted

    @property
    def row_percent(self) -> np.ndarray:
        """Row-normalized percentages; rows with no gold support stay zero."""
        totals = self.counts.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            pct = np.where(totals > 0, 100.0 * self.counts / np.maximum(totals, 1), 0.0)
        return pct

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class ErrorCase:
    id: str
    raw_text: str
    gold: str
    predicted: str
    probs: tuple[float, ...]

    @property
    def p_predicted(self) -> float:
        return max(self.probs)


def _validate(preds, golds, n_classes):
    preds = np.asarray(preds, dtype=np.int64).reshape(-1)
    golds = np.asarray(golds, dtype=np.int64).reshape(-1)
    if preds.shape != golds.shape:
        raise LengthMismatch(f"{len(preds)} predictions vs {len(golds)} gold labels")
    for arr in (preds, golds):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise ValueError(f"class index outside [0, {n_classes})")
    return preds, golds


def confusion(preds, golds, scheme: LabelScheme) -> ConfusionMatrix:
    C = len(scheme.classes)
    preds, golds = _validate(preds, golds, C)
    counts = np.zeros((C, C), dtype=np.int64)
    np.add.at(counts, (golds, preds), 1)
    return ConfusionMatrix(scheme.classes, counts)


def metrics(preds, golds, scheme: LabelScheme) -> MetricsReport:
    C = len(scheme.classes)
    preds, golds = _validate(preds, golds, C)
    if preds.size == 0:
        raise EmptyInput("metrics need at least one prediction")
    cm = confusion(preds, golds, scheme).counts
    tp = np.diag(cm).astype(float)
    predicted = cm.sum(axis=0).astype(float)
    support = cm.sum(axis=1)
    precision, recall, f1, degenerate = [], [], [], []
    for k in range(C):
        flags = []
        if predicted[k] == 0:
            p = 0.0
            flags.append("precision")
        else:
            p = tp[k] / predicted[k]
        if support[k] == 0:
            r = 0.0
            flags.append("recall")
        else:
            r = tp[k] / support[k]
        precision.append(float(p))
        recall.append(float(r))
        f1.append(float(2 * p * r / (p + r)) if p + r > 0 else 0.0)
        degenerate.append(tuple(flags))
    n = float(support.sum())
    w = support / n
    return MetricsReport(
        labels=scheme.classes,
        precision=tuple(precision),
        recall=tuple(recall),
        f1=tuple(f1),
        support=tuple(int(s) for s in support),
        weighted_precision=float(np.dot(w, precision)),
        weighted_recall=float(np.dot(w, recall)),
        weighted_f1=float(np.dot(w, f1)),
        accuracy=float(tp.sum() / n),
        degenerate=tuple(degenerate),
    )


def error_table(corpus: Corpus, preds, probs, limit: Optional[int] = None) -> list[ErrorCase]:
    """Misclassified records, most confident mistakes first."""
    preds = np.asarray(preds).reshape(-1)
    probs = np.asarray(probs, dtype=float)
    if not (len(corpus) == len(preds) == len(probs)):
        raise LengthMismatch(f"corpus {len(corpus)}, preds {len(preds)}, probs {len(probs)}")
    cases = []
    for rec, p, pr in zip(corpus.records, preds, probs):
        if int(p) != rec.label:
            cases.append(ErrorCase(
                id=rec.id,
                raw_text=rec.raw_text,
                gold=corpus.scheme.classes[rec.label],
                predicted=corpus.scheme.classes[int(p)],
                probs=tuple(float(x) for x in pr),
            ))
    # sorted() is stable, so equal confidences keep corpus order
    cases = sorted(cases, key=lambda e: -e.probs[corpus.scheme.classes.index(e.predicted)])
    return cases if limit is None else cases[:limit]


def _markdown_escape(text: str) -> str:
    return text.replace("|", "\\|").replace("\n", " ")


def render_report(
    report: MetricsReport,
    cm: ConfusionMatrix,
    errors: Sequence[ErrorCase],
    out_dir: str | Path,
    heatmap: bool = True,
) -> dict[str, Path]:
    """Write metrics.json, confusion CSVs, error CSV/markdown and a heatmap."""
    out = Path(out_dir)
    paths = {
        "metrics": out / "metrics.json",
        "confusion_counts": out / "confusion_counts.csv",
        "confusion_percent": out / "confusion_percent.csv",
        "errors_csv": out / "errors.csv",
        "errors_md": out / "errors.md",
    }
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths["metrics"].write_text(json.dumps(report.to_dict(), indent=2) + "\n")
        labels = list(cm.labels)
        for key, table, fmt in (
            ("confusion_counts", cm.counts, lambda v: str(int(v))),
            ("confusion_percent", cm.row_percent, lambda v: f"{v:.1f}"),
        ):
            with open(paths[key], "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["gold\\predicted"] + labels)
                for label, row in zip(labels, table):
                    w.writerow([label] + [fmt(v) for v in row])
        with open(paths["errors_csv"], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "gold", "predicted", "p_predicted", "text"])
            for e in errors:
                w.writerow([e.id, e.gold, e.predicted, f"{e.p_predicted:.6f}", e.raw_text])
        lines = ["# Misclassified samples", ""]
        if not errors:
            lines.append("There are no misclassifications.")
        else:
            lines += ["| # | id | gold | predicted | p | text |", "|---|---|---|---|---|---|"]
            for i, e in enumerate(errors, 1):
                lines.append(
                    f"| {i} | {e.id} | {e.gold} | {e.predicted} | {e.p_predicted:.3f} | {_markdown_escape(e.raw_text)} |"
                )
        paths["errors_md"].write_text("\n".join(lines) + "\n", encoding="utf-8")
        if heatmap:
            paths["heatmap"] = out / "confusion.png"
            _heatmap(cm, paths["heatmap"])
    except OSError as e:
        raise IoFailure(f"cannot write report to {out}: {e}") from e
    return paths


def _heatmap(cm: ConfusionMatrix, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    pct = cm.row_percent
    fig, ax = plt.subplots(figsize=(4.5, 4))
    im = ax.imshow(pct, cmap="Blues", vmin=0, vmax=100)
    ax.set_xticks(range(len(cm.labels)), cm.labels)
    ax.set_yticks(range(len(cm.labels)), cm.labels)
    ax.set_xlabel("predicted")
    ax.set_ylabel("gold")
    for i in range(len(cm.labels)):
        for j in range(len(cm.labels)):
            ax.text(j, i, f"{pct[i, j]:.1f}%\n({cm.counts[i, j]})", ha="center", va="center",
                    color="white" if pct[i, j] > 50 else "black", fontsize=8)
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
