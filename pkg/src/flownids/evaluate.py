"""Detection metrics and run reports."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .synth import EVENT_KINDS, Scenario

REPORT_SCHEMA_VERSION = 1


class LengthMismatch(Exception):
    pass


@dataclass(frozen=True)
class ConfusionCounts:
    """Per-second confusion tally; the positive class is Anomaly."""

    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def confusion(
    predictions: Sequence[float] | np.ndarray,
    truth: Sequence[int] | np.ndarray,
    threshold: float = 0.5,
) -> ConfusionCounts:
    """Tally predictions (probabilities or binary values) against truth.

    A prediction at or above the threshold counts as Anomaly.
    """
    pred = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(truth, dtype=np.int64)
    if pred.shape != y.shape:
        raise LengthMismatch(f"{pred.shape} predictions vs {y.shape} truth values")
    flagged = pred >= threshold
    positive = y == 1
    return ConfusionCounts(
        tp=int(np.sum(flagged & positive)),
        fp=int(np.sum(flagged & ~positive)),
        tn=int(np.sum(~flagged & ~positive)),
        fn=int(np.sum(~flagged & positive)),
    )


def detection_rate(c: ConfusionCounts) -> float | None:
    """TP / (TP + FN); None when there are no true anomalies to detect."""
    denom = c.tp + c.fn
    return c.tp / denom if denom else None


def false_positive_rate(c: ConfusionCounts) -> float | None:
    """FP / (FP + TN); None when there are no benign seconds."""
    denom = c.fp + c.tn
    return c.fp / denom if denom else None


def per_type_detection(
    scenario: Scenario,
    predictions: Sequence[float] | np.ndarray,
    offset: int = 0,
    threshold: float = 0.5,
) -> dict[str, float | None]:
    """Detection rate per injected event kind over seconds [offset, offset+N)."""
    pred = np.asarray(predictions, dtype=np.float64)
    flagged = pred >= threshold
    out: dict[str, float | None] = {}
    for kind, seconds in scenario.type_seconds().items():
        in_range = [s for s in seconds if offset <= s < offset + len(pred)]
        if not in_range:
            out[kind] = None
            continue
        out[kind] = sum(1 for s in in_range if flagged[s - offset]) / len(in_range)
    return out


def _fmt(value: float | None) -> str:
    return "n/a" if value is None else f"{value:.4f}"


def build_record(
    manifest: Mapping,
    metrics: Mapping,
    counts: ConfusionCounts,
) -> dict:
    """Schema-versioned, JSON-serializable evaluation record.

    metrics may carry 'per_type_detection' (kind -> rate) plus any scalar
    extras; everything else is derived from the confusion counts.
    """
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "counts": {"tp": counts.tp, "fp": counts.fp, "tn": counts.tn, "fn": counts.fn},
        "evaluated_seconds": counts.total,
        "detection_rate": detection_rate(counts),
        "false_positive_rate": false_positive_rate(counts),
        "metrics": {k: v for k, v in metrics.items() if k != "per_type_detection"},
        "per_type_detection": dict(metrics.get("per_type_detection", {})),
        "manifest": dict(manifest),
    }


def render_record(record: Mapping) -> str:
    """Human-readable text for an evaluation record."""
    lines = ["detection report"]
    counts = record["counts"]
    if record["evaluated_seconds"] == 0:
        lines.append("  no evaluated seconds")
    else:
        lines.append(f"  evaluated seconds: {record['evaluated_seconds']}")
        lines.append(
            "  confusion: tp={tp} fp={fp} tn={tn} fn={fn}".format(**counts)
        )
        lines.append(f"  detection rate: {_fmt(record['detection_rate'])}")
        lines.append(f"  false positive rate: {_fmt(record['false_positive_rate'])}")
        per_type = record.get("per_type_detection", {})
        for kind in EVENT_KINDS:
            if kind in per_type:
                lines.append(f"  detection rate ({kind}): {_fmt(per_type[kind])}")
        for key, value in record.get("metrics", {}).items():
            value_text = _fmt(value) if isinstance(value, float) or value is None else str(value)
            lines.append(f"  {key}: {value_text}")
    return "\n".join(lines) + "\n"


def report(
    manifest: Mapping,
    metrics: Mapping,
    counts: ConfusionCounts,
) -> tuple[str, dict]:
    """Text report plus machine record for one completed evaluation."""
    record = build_record(manifest, metrics, counts)
    return render_record(record), record
