"""Confusion matrices and the derived classifier evaluation measures.

Conventions: rows are true classes, columns are predictions. Per class we
report precision, recall, F-measure, and one-vs-rest accuracy; aggregates are
the overall accuracy (trace/total) and unweighted macro means. Published
per-class "accuracy" figures are sometimes the macro mean of one-vs-rest
accuracies rather than trace/total, so both aggregates are always emitted,
clearly labeled. Any metric with an empty denominator is 0 by convention and
the affected class/metric pair is flagged.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .errors import LabelError


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # [n, n] int64, rows = truth, cols = prediction
    class_names: list[str]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class EvalReport:
    class_names: list[str]
    precision: list[float]
    recall: list[float]
    f_measure: list[float]
    ovr_accuracy: list[float]  # one-vs-rest (TP+TN)/total per class
    overall_accuracy: float    # trace / total
    macro_precision: float
    macro_recall: float
    macro_f_measure: float
    macro_ovr_accuracy: float  # mean of per-class one-vs-rest accuracies
    zero_denominator_flags: list[str] = field(default_factory=list)


def confusion(truths, predictions, class_names) -> ConfusionMatrix:
    """Count (truth, prediction) pairs into an n x n matrix.

    ``class_names`` may be a list of names or a plain class count.
    """
    if isinstance(class_names, int):
        class_names = [f"class_{i}" for i in range(class_names)]
    n = len(class_names)
    truths = np.asarray(truths, dtype=np.int64)
    predictions = np.asarray(predictions, dtype=np.int64)
    if truths.shape != predictions.shape or truths.ndim != 1:
        raise ValueError(f"truths and predictions must be equal-length 1-D sequences, "
                         f"got {truths.shape} and {predictions.shape}")
    for name, arr in (("truth", truths), ("prediction", predictions)):
        if arr.size and (arr.min() < 0 or arr.max() >= n):
            raise LabelError(f"{name} labels must lie in [0, {n})")
    counts = np.zeros((n, n), dtype=np.int64)
    np.add.at(counts, (truths, predictions), 1)
    return ConfusionMatrix(counts=counts, class_names=list(class_names))


def report(matrix: ConfusionMatrix) -> EvalReport:
    """Derive all evaluation measures from a confusion matrix."""
    counts = matrix.counts
    n = counts.shape[0]
    total = matrix.total
    diag = np.diag(counts).astype(np.float64)
    row_sums = counts.sum(axis=1).astype(np.float64)
    col_sums = counts.sum(axis=0).astype(np.float64)
    flags: list[str] = []

    precision, recall, f_measure, ovr = [], [], [], []
    for c in range(n):
        name = matrix.class_names[c]
        if col_sums[c] > 0:
            p = diag[c] / col_sums[c]
        else:
            p = 0.0
            flags.append(f"{name}:precision")
        if row_sums[c] > 0:
            r = diag[c] / row_sums[c]
        else:
            r = 0.0
            flags.append(f"{name}:recall")
        f = 2 * p * r / (p + r) if (p + r) > 0 else 0.0
        if (p + r) == 0:
            flags.append(f"{name}:f_measure")
        tp = diag[c]
        fp = col_sums[c] - tp
        fn = row_sums[c] - tp
        tn = total - tp - fp - fn
        precision.append(float(p))
        recall.append(float(r))
        f_measure.append(float(f))
        ovr.append(float((tp + tn) / total) if total else 0.0)
    if not total:
        flags.append("overall:accuracy")

    return EvalReport(
        class_names=list(matrix.class_names),
        precision=precision,
        recall=recall,
        f_measure=f_measure,
        ovr_accuracy=ovr,
        overall_accuracy=float(diag.sum() / total) if total else 0.0,
        macro_precision=float(np.mean(precision)),
        macro_recall=float(np.mean(recall)),
        macro_f_measure=float(np.mean(f_measure)),
        macro_ovr_accuracy=float(np.mean(ovr)),
        zero_denominator_flags=flags,
    )


def render_report(rep: EvalReport, matrix: ConfusionMatrix) -> tuple[str, str]:
    """Render (human-readable text, machine-readable CSV), both deterministic.

    CSV schema: one `class,precision,recall,f_measure,ovr_accuracy` row per
    class, then `overall_accuracy`, `macro_precision`, `macro_recall`,
    `macro_f_measure`, `macro_ovr_accuracy` footer rows. Values use 4 decimals.
    """
    name_width = max(len("class"), *(len(n) for n in rep.class_names))
    text = io.StringIO()
    text.write("Confusion matrix (rows = truth, columns = prediction):\n")
    header = " ".join(f"{n:>{max(7, len(n))}}" for n in rep.class_names)
    text.write(f"{'':>{name_width}} {header}\n")
    for i, name in enumerate(rep.class_names):
        row = " ".join(f"{int(matrix.counts[i, j]):>{max(7, len(rep.class_names[j]))}}"
                       for j in range(len(rep.class_names)))
        text.write(f"{name:>{name_width}} {row}\n")
    text.write("\n")
    text.write(f"{'class':>{name_width}} precision recall f_measure ovr_accuracy\n")
    for i, name in enumerate(rep.class_names):
        text.write(f"{name:>{name_width}} {rep.precision[i]:9.4f} {rep.recall[i]:6.4f} "
                   f"{rep.f_measure[i]:9.4f} {rep.ovr_accuracy[i]:12.4f}\n")
    text.write("\n")
    text.write(f"overall_accuracy (trace/total): {rep.overall_accuracy:.4f}\n")
    text.write(f"macro_precision: {rep.macro_precision:.4f}\n")
    text.write(f"macro_recall: {rep.macro_recall:.4f}\n")
    text.write(f"macro_f_measure: {rep.macro_f_measure:.4f}\n")
    text.write(f"macro_ovr_accuracy (mean one-vs-rest): {rep.macro_ovr_accuracy:.4f}\n")
    if rep.zero_denominator_flags:
        text.write(f"zero-denominator metrics reported as 0: "
                   f"{', '.join(rep.zero_denominator_flags)}\n")

    csv_out = io.StringIO()
    csv_out.write("class,precision,recall,f_measure,ovr_accuracy\n")
    for i, name in enumerate(rep.class_names):
        csv_out.write(f"{name},{rep.precision[i]:.4f},{rep.recall[i]:.4f},"
                      f"{rep.f_measure[i]:.4f},{rep.ovr_accuracy[i]:.4f}\n")
    csv_out.write(f"overall_accuracy,{rep.overall_accuracy:.4f}\n")
    csv_out.write(f"macro_precision,{rep.macro_precision:.4f}\n")
    csv_out.write(f"macro_recall,{rep.macro_recall:.4f}\n")
    csv_out.write(f"macro_f_measure,{rep.macro_f_measure:.4f}\n")
    csv_out.write(f"macro_ovr_accuracy,{rep.macro_ovr_accuracy:.4f}\n")
    return text.getvalue(), csv_out.getvalue()


def render_confusion_csv(matrix: ConfusionMatrix) -> str:
    """Confusion matrix as CSV with named rows/columns, rows = truth."""
    out = io.StringIO()
    out.write("true_class," + ",".join(matrix.class_names) + "\n")
    for i, name in enumerate(matrix.class_names):
        out.write(name + "," + ",".join(str(int(v)) for v in matrix.counts[i]) + "\n")
    return out.getvalue()
