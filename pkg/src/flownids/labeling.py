"""Gold-standard anomaly labels: CSV parsing, majority-rule collapse, flow matching."""

from __future__ import annotations

import csv
import ipaddress
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

from .ingest import FlowKey, FlowStats

RAW_LABELS = ("anomalous", "suspicious", "benign", "notice")

_EXPECTED_HEADER = [
    "anomalyid",
    "srcip",
    "srcport",
    "dstip",
    "dstport",
    "taxonomy",
    "heuristic",
    "distance",
    "nbdetectors",
    "label",
]


class Label(Enum):
    """The two output words of the classifier."""

    BENIGN = 0
    ANOMALY = 1


@dataclass(frozen=True)
class AnomalyDescriptor:
    """One labeled-anomaly row: an optional 4-tuple pattern plus metadata.

    Several rows may share an anomaly_id; each matches its own traffic subset.
    distance and nb_detectors are preserved for reports only.
    """

    anomaly_id: str
    src_ip: str | None
    src_port: int | None
    dst_ip: str | None
    dst_port: int | None
    taxonomy: str
    heuristic: int
    distance: float
    nb_detectors: int
    raw_label: str

    def __post_init__(self) -> None:
        if self.raw_label not in RAW_LABELS:
            raise ValueError(f"label must be one of {RAW_LABELS}, got {self.raw_label!r}")
        if (
            self.src_ip is None
            and self.src_port is None
            and self.dst_ip is None
            and self.dst_port is None
        ):
            raise ValueError("all-wildcard descriptor: at least one tuple field required")


class MissingHeader(Exception):
    """The CSV stream does not start with the ten-field header."""


@dataclass(frozen=True)
class RowError:
    row_no: int  # 1-based, counting the header as row 1
    kind: str  # "bad-label" or "malformed"
    reason: str


@dataclass
class CsvResult:
    descriptors: list[AnomalyDescriptor] = field(default_factory=list)
    errors: list[RowError] = field(default_factory=list)


def parse_mawilab_csv(lines: Iterable[str] | str) -> CsvResult:
    """Parse anomaly descriptor rows from CSV text.

    Bad rows are skipped and reported; a missing or wrong header raises
    MissingHeader since nothing after it can be trusted.
    """
    if isinstance(lines, str):
        lines = lines.splitlines()
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration:
        raise MissingHeader("empty stream") from None
    normalized = [h.strip().lower() for h in header]
    if normalized != _EXPECTED_HEADER:
        raise MissingHeader(f"unexpected header {header!r}")

    result = CsvResult()
    for row_no, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        try:
            result.descriptors.append(_parse_row(row))
        except _BadLabel as exc:
            result.errors.append(RowError(row_no, "bad-label", str(exc)))
        except ValueError as exc:
            result.errors.append(RowError(row_no, "malformed", str(exc)))
    return result


class _BadLabel(ValueError):
    pass


def _parse_row(row: list[str]) -> AnomalyDescriptor:
    if len(row) != 10:
        raise ValueError(f"expected 10 fields, got {len(row)}")
    label = row[9].strip().lower()
    if label not in RAW_LABELS:
        raise _BadLabel(f"label {row[9]!r} is not one of {RAW_LABELS}")
    return AnomalyDescriptor(
        anomaly_id=row[0].strip(),
        src_ip=_opt_ip(row[1]),
        src_port=_opt_port(row[2], "srcPort"),
        dst_ip=_opt_ip(row[3]),
        dst_port=_opt_port(row[4], "dstPort"),
        taxonomy=row[5].strip(),
        heuristic=int(row[6]),
        distance=float(row[7]),
        nb_detectors=int(row[8]),
        raw_label=label,
    )


def _opt_ip(cell: str) -> str | None:
    cell = cell.strip()
    if not cell:
        return None
    return str(ipaddress.ip_address(cell))


def _opt_port(cell: str, name: str) -> int | None:
    cell = cell.strip()
    if not cell:
        return None
    value = int(cell)
    if not 0 <= value <= 65535:
        raise ValueError(f"{name} out of range: {value}")
    return value


def collapse_label(raw_label: str) -> Label:
    """Collapse the four raw labels to two by majority vote of the detectors.

    anomalous and suspicious mean most detectors called it an attack, so both
    collapse to ANOMALY; benign and notice collapse to BENIGN.
    """
    if raw_label in ("anomalous", "suspicious"):
        return Label.ANOMALY
    if raw_label in ("benign", "notice"):
        return Label.BENIGN
    raise ValueError(f"label must be one of {RAW_LABELS}, got {raw_label!r}")


def match_flow(key: FlowKey, d: AnomalyDescriptor) -> bool:
    """True iff every present descriptor field equals the flow's field.

    Absent fields match anything; protocol is never constrained because
    descriptors carry none.
    """
    if d.src_ip is not None and d.src_ip != key.src_ip:
        return False
    if d.src_port is not None and d.src_port != key.src_port:
        return False
    if d.dst_ip is not None and d.dst_ip != key.dst_ip:
        return False
    if d.dst_port is not None and d.dst_port != key.dst_port:
        return False
    return True


def label_windows(
    windows: Mapping[int, Mapping[FlowKey, FlowStats]],
    descriptors: Iterable[AnomalyDescriptor],
) -> dict[int, Label]:
    """Label each window ANOMALY iff some flow matches some anomaly descriptor.

    Benign-collapsed descriptors never influence the result; empty windows
    are BENIGN.
    """
    anomalous = [d for d in descriptors if collapse_label(d.raw_label) is Label.ANOMALY]
    labels: dict[int, Label] = {}
    for idx, flows in windows.items():
        hit = any(match_flow(key, d) for key in flows for d in anomalous)
        labels[idx] = Label.ANOMALY if hit else Label.BENIGN
    return labels
