"""Binary classification metrics with fake as the positive class."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import UsageError

CSV_HEADER = "variant,accuracy,fake_p,fake_r,fake_f1,real_p,real_r,real_f1"


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    fake_precision: float
    fake_recall: float
    fake_f1: float
    real_precision: float
    real_recall: float
    real_f1: float
    tp: int
    fp: int
    tn: int
    fn: int


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def compute_metrics(preds, labels, threshold: float = 0.5) -> MetricsReport:
    """Accuracy and per-class precision/recall/F1 from one confusion matrix.

    A record is predicted fake iff its fake probability is >= threshold.
    """
    if len(preds) != len(labels):
        raise UsageError(f"{len(preds)} predictions for {len(labels)} labels")
    if not len(preds):
        raise UsageError("compute_metrics on empty input")
    tp = fp = tn = fn = 0
    for p, y in zip(preds, labels):
        predicted_fake = p >= threshold
        if predicted_fake and y == 1:
            tp += 1
        elif predicted_fake and y == 0:
            fp += 1
        elif not predicted_fake and y == 0:
            tn += 1
        else:
            fn += 1
    fake_p, fake_r, fake_f1 = _prf(tp, fp, fn)
    # swapping the positive class swaps the roles of the confusion cells
    real_p, real_r, real_f1 = _prf(tn, fn, fp)
    return MetricsReport(
        accuracy=(tp + tn) / len(preds),
        fake_precision=fake_p, fake_recall=fake_r, fake_f1=fake_f1,
        real_precision=real_p, real_recall=real_r, real_f1=real_f1,
        tp=tp, fp=fp, tn=tn, fn=fn)


def csv_row(tag: str, report: MetricsReport) -> str:
    values = (report.accuracy,
              report.fake_precision, report.fake_recall, report.fake_f1,
              report.real_precision, report.real_recall, report.real_f1)
    return tag + "," + ",".join(f"{v:.4f}" for v in values)


def to_csv(rows: list[tuple[str, MetricsReport]]) -> str:
    return "\n".join([CSV_HEADER] + [csv_row(tag, report) for tag, report in rows]) + "\n"
