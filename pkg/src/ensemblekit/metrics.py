"""Confusion matrices, the five report statistics, and report rendering."""

import csv
import io
from dataclasses import dataclass, field

import numpy as np

METRIC_COLUMNS = ("accuracy", "balanced_accuracy", "precision", "recall", "f1")
METRIC_TITLES = ("Accuracy", "Balanced accuracy", "Precision", "Recall", "F1 score")


@dataclass
class ConfusionMatrix:
    """``counts[i, j]`` = samples of true class i predicted as class j."""

    counts: np.ndarray
    class_names: list = field(default_factory=list)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise ValueError("confusion matrix must be square")
        if (self.counts < 0).any():
            raise ValueError("confusion counts must be non-negative")
        if not self.class_names:
            self.class_names = [str(k) for k in range(self.K)]

    @property
    def K(self):
        return self.counts.shape[0]

    @property
    def total(self):
        return int(self.counts.sum())

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["true\\predicted"] + list(self.class_names))
        for name, row in zip(self.class_names, self.counts):
            w.writerow([name] + [int(c) for c in row])
        return buf.getvalue()


def confusion(true_labels, predicted_labels, n_classes, class_names=None):
    t = np.asarray(true_labels, dtype=np.int64)
    p = np.asarray(predicted_labels, dtype=np.int64)
    if t.shape != p.shape:
        raise ValueError("true and predicted labels differ in length")
    for arr in (t, p):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise ValueError(f"label outside 0..{n_classes - 1}")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    return ConfusionMatrix(counts, list(class_names or []))


@dataclass
class MetricsReport:
    accuracy: float
    balanced_accuracy: float
    precision: float
    recall: float
    f1: float
    averaging: str
    per_class: list
    zero_division: list

    def values(self):
        return tuple(getattr(self, c) for c in METRIC_COLUMNS)


def _safe_div(num, den):
    return np.divide(num, den, out=np.zeros_like(num, dtype=np.float64), where=den > 0)


def compute_metrics(cm, averaging="weighted"):
    """Accuracy, balanced accuracy and averaged precision/recall/F1.

    Per-class statistics are one-vs-rest; empty denominators give 0 and are
    listed in ``zero_division``.  Balanced accuracy averages recall over the
    classes that occur in the true labels.  ``weighted`` averages by support,
    ``macro`` is the plain mean over all classes.
    """
    if averaging not in ("weighted", "macro"):
        raise ValueError("averaging must be 'weighted' or 'macro'")
    counts = cm.counts.astype(np.float64)
    total = counts.sum()
    if total <= 0:
        raise ValueError("empty confusion matrix")
    tp = np.diag(counts)
    support = counts.sum(axis=1)
    predicted = counts.sum(axis=0)
    precision = _safe_div(tp, predicted)
    recall = _safe_div(tp, support)
    pr = precision + recall
    f1 = _safe_div(2.0 * precision * recall, pr)
    flags = []
    for k in range(cm.K):
        if predicted[k] == 0:
            flags.append((cm.class_names[k], "precision"))
        if support[k] == 0:
            flags.append((cm.class_names[k], "recall"))
        if pr[k] == 0:
            flags.append((cm.class_names[k], "f1"))
    if averaging == "weighted":
        weights = support / total
        agg = lambda v: float(np.sum(v * weights))
    else:
        agg = lambda v: float(np.mean(v))
    present = support > 0
    per_class = [
        {
            "class": cm.class_names[k],
            "support": int(support[k]),
            "precision": float(precision[k]),
            "recall": float(recall[k]),
            "f1": float(f1[k]),
        }
        for k in range(cm.K)
    ]
    return MetricsReport(
        accuracy=float(tp.sum() / total),
        balanced_accuracy=float(np.mean(recall[present])),
        precision=agg(precision),
        recall=agg(recall),
        f1=agg(f1),
        averaging=averaging,
        per_class=per_class,
        zero_division=flags,
    )


def _best_rows(rows):
    """(group, column) -> best value within that group."""
    best = {}
    for group, _, rep in rows:
        for c, v in zip(METRIC_COLUMNS, rep.values()):
            key = (group, c)
            best[key] = max(best.get(key, -1.0), v)
    return best


def render_report(reports, groups=None):
    """Comparison table (text and CSV) plus balanced-accuracy bar data.

    ``reports`` maps experiment name -> MetricsReport in display order;
    ``groups`` optionally maps experiment name -> group label.  In the text
    table the best value of each column within a group is starred.
    Returns ``(text, csv_text, bar_csv_text)``.
    """
    groups = groups or {}
    rows = [(groups.get(name, ""), name, rep) for name, rep in reports.items()]
    best = _best_rows(rows)

    header = ["Experiments", "Case"] + list(METRIC_TITLES)
    table = []
    for group, name, rep in rows:
        cells = []
        for c, v in zip(METRIC_COLUMNS, rep.values()):
            mark = "*" if v == best[(group, c)] and len(rows) > 1 else " "
            cells.append(f"{v:.4f}{mark}")
        table.append([group, name] + cells)
    widths = [max(len(str(r[i])) for r in [header] + table) for i in range(len(header))]
    lines = [" | ".join(str(h).ljust(w) for h, w in zip(header, widths))]
    lines.append("-+-".join("-" * w for w in widths))
    for r in table:
        lines.append(" | ".join(str(c).ljust(w) for c, w in zip(r, widths)).rstrip())
    text = "\n".join(lines) + "\n"

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["group", "case"] + list(METRIC_COLUMNS))
    for group, name, rep in rows:
        w.writerow([group, name] + [f"{v:.4f}" for v in rep.values()])

    bar = io.StringIO()
    wb = csv.writer(bar, lineterminator="\n")
    wb.writerow(["experiment", "balanced_accuracy"])
    for _, name, rep in rows:
        wb.writerow([name, f"{rep.balanced_accuracy:.4f}"])
    return text, buf.getvalue(), bar.getvalue()
