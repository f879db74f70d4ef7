"""Accuracy, mean entropy, expected calibration error, reliability bins,
and prediction-record CSV persistence.

The calibration error partitions [0, 1] into ``B`` equally spaced
confidence bins, left-open and right-closed, with bin 1 also closed at 0
so that confidence 0 lands in bin 1 and confidence 1 in bin ``B``.  Empty
bins report zero accuracy/confidence and contribute zero.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import prob_math
from .exceptions import RecordParseError


@dataclass(frozen=True, eq=False)
class PredictionRecord:
    """One prediction: predicted class, its confidence, and the true class.

    When the full probability vector is attached, ``predicted`` must be
    its argmax (lowest index on ties) and ``confidence`` its max entry.
    """

    predicted: int
    confidence: float
    actual: int
    probs: np.ndarray = None

    def __post_init__(self):
        if self.predicted < 0 or self.actual < 0:
            raise ValueError("class indices must be non-negative")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence!r} outside [0, 1]")
        if self.probs is not None:
            p = prob_math.as_prob_vector(self.probs)
            object.__setattr__(self, "probs", p)
            if self.predicted != int(np.argmax(p)):
                raise ValueError("predicted class is not the argmax of probs")
            if self.confidence != float(p[self.predicted]):
                raise ValueError("confidence is not the max entry of probs")


def record_from_probs(probs, actual: int) -> PredictionRecord:
    """Build a record from a probability vector and the true class."""
    p = prob_math.as_prob_vector(probs)
    predicted = int(np.argmax(p))
    return PredictionRecord(
        predicted=predicted,
        confidence=float(p[predicted]),
        actual=int(actual),
        probs=p,
    )


@dataclass(frozen=True)
class ReliabilityBin:
    """One confidence interval of the [0, 1] partition.

    ``index`` is 1-based; the interval is ``(lower, upper]`` (bin 1 also
    contains confidence 0).  ``avg_accuracy`` and ``avg_confidence`` are 0
    for empty bins.
    """

    index: int
    lower: float
    upper: float
    count: int
    avg_accuracy: float
    avg_confidence: float


@dataclass(frozen=True)
class CalibrationReport:
    n: int
    num_bins: int
    bins: list
    ece: float
    accuracy: float
    mean_entropy: float


def accuracy(records) -> float:
    """Fraction of records whose predicted class equals the true class."""
    if not records:
        raise ValueError("accuracy needs at least one record")
    return float(np.mean([r.predicted == r.actual for r in records]))


def mean_entropy(records) -> float:
    """Arithmetic mean of the entropy of each record's probability vector."""
    if not records:
        raise ValueError("mean_entropy needs at least one record")
    if any(r.probs is None for r in records):
        raise ValueError("mean_entropy needs probs on every record")
    return float(np.mean([prob_math.entropy(r.probs) for r in records]))


def _bin_index_array(confidences: np.ndarray, num_bins: int) -> np.ndarray:
    # 0-based bin = number of interior edges strictly below the confidence;
    # equality with an edge falls into the lower bin (right-closed).
    edges = np.array([b / num_bins for b in range(1, num_bins)])
    return np.searchsorted(edges, confidences, side="left")


def compute_bins(records, num_bins: int) -> list:
    """Assign every record to exactly one bin and return all ``num_bins`` bins."""
    b = int(num_bins)
    if b < 1:
        raise ValueError(f"num_bins must be >= 1, got {num_bins!r}")
    if not records:
        raise ValueError("compute_bins needs at least one record")
    conf = np.array([r.confidence for r in records], dtype=np.float64)
    correct = np.array([r.predicted == r.actual for r in records], dtype=np.float64)
    idx = _bin_index_array(conf, b)
    bins = []
    for i in range(b):
        sel = idx == i
        count = int(np.sum(sel))
        bins.append(ReliabilityBin(
            index=i + 1,
            lower=i / b,
            upper=(i + 1) / b,
            count=count,
            avg_accuracy=float(np.mean(correct[sel])) if count else 0.0,
            avg_confidence=float(np.mean(conf[sel])) if count else 0.0,
        ))
    return bins


def ece_from_bins(bins, n: int) -> float:
    """Bin-weighted mean absolute accuracy/confidence gap."""
    return float(sum(
        (b.count / n) * abs(b.avg_accuracy - b.avg_confidence) for b in bins
    ))


def ece(records, num_bins: int) -> float:
    """Expected calibration error over ``num_bins`` equally spaced bins.

    Lower is better; the result is always in [0, 1].
    """
    return ece_from_bins(compute_bins(records, num_bins), len(records))


def make_report(records, num_bins: int) -> CalibrationReport:
    """Full calibration summary; requires probs on every record."""
    bins = compute_bins(records, num_bins)
    return CalibrationReport(
        n=len(records),
        num_bins=int(num_bins),
        bins=bins,
        ece=ece_from_bins(bins, len(records)),
        accuracy=accuracy(records),
        mean_entropy=mean_entropy(records),
    )


CSV_BASE_COLUMNS = ["sample_id", "actual", "predicted", "confidence"]


def write_records(records, path) -> None:
    """Write records as CSV: ``sample_id,actual,predicted,confidence,p_0,...``.

    Floats carry 17 significant digits, so a read-back reproduces them
    exactly.  Records must either all carry probs (of one length) or none.
    """
    if not records:
        raise ValueError("write_records needs at least one record")
    with_probs = records[0].probs is not None
    k = len(records[0].probs) if with_probs else 0
    for r in records:
        if (r.probs is not None) != with_probs or (with_probs and len(r.probs) != k):
            raise ValueError("records disagree on probability columns")
    header = CSV_BASE_COLUMNS + [f"p_{i}" for i in range(k)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i, r in enumerate(records):
            row = [i, r.actual, r.predicted, format(r.confidence, ".17g")]
            if with_probs:
                row += [format(v, ".17g") for v in r.probs]
            writer.writerow(row)


def read_records(path) -> list:
    """Parse a prediction-record CSV; malformed rows raise
    :class:`RecordParseError` naming the 1-based line."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise RecordParseError(1, "empty file")
    header = rows[0]
    if header[:4] != CSV_BASE_COLUMNS:
        raise RecordParseError(1, f"unexpected header {header[:4]}")
    prob_cols = header[4:]
    if prob_cols != [f"p_{i}" for i in range(len(prob_cols))]:
        raise RecordParseError(1, f"unexpected probability columns {prob_cols}")
    k = len(prob_cols)

    records = []
    for line_no, row in enumerate(rows[1:], start=2):
        if len(row) != 4 + k:
            raise RecordParseError(line_no, f"expected {4 + k} fields, got {len(row)}")
        try:
            actual = int(row[1])
            predicted = int(row[2])
            confidence = float(row[3])
            probs = np.array([float(v) for v in row[4:]]) if k else None
        except ValueError as exc:
            raise RecordParseError(line_no, f"unparseable field: {exc}") from None
        try:
            records.append(PredictionRecord(
                predicted=predicted, confidence=confidence, actual=actual, probs=probs,
            ))
        except ValueError as exc:
            raise RecordParseError(line_no, str(exc)) from None
    return records


def write_bin_report(report: CalibrationReport, path) -> None:
    """Structured text export of the reliability bins plus the summary scalars."""
    with open(path, "w") as fh:
        fh.write(f"n {report.n}\n")
        fh.write(f"num_bins {report.num_bins}\n")
        fh.write(f"accuracy {format(report.accuracy, '.17g')}\n")
        fh.write(f"mean_entropy {format(report.mean_entropy, '.17g')}\n")
        fh.write(f"ece {format(report.ece, '.17g')}\n")
        fh.write("bin lower upper count avg_accuracy avg_confidence\n")
        for b in report.bins:
            fh.write(
                f"{b.index} {format(b.lower, '.17g')} {format(b.upper, '.17g')} "
                f"{b.count} {format(b.avg_accuracy, '.17g')} "
                f"{format(b.avg_confidence, '.17g')}\n"
            )
