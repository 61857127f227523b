"""Wildcard flow aggregation per window and the two-line aggregate text codec."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .ingest import FlowKey, FlowStats, proto_name, proto_number

WILDCARD = "*"


@dataclass(frozen=True)
class AggregateFlow:
    """One ranked aggregate: wildcard patterns plus volume and packet shares."""

    rank: int
    src_pattern: str
    dst_pattern: str
    proto_pattern: str
    sport_pattern: str
    dport_pattern: str
    pct_volume: float
    pct_packets: float

    def is_residual(self) -> bool:
        return self.src_pattern == WILDCARD and self.dst_pattern == WILDCARD


def aggregate_window(
    flows: Mapping[FlowKey, FlowStats],
    threshold_pct: float,
    by_packets: bool = False,
) -> list[AggregateFlow]:
    """Greedy wildcard aggregation of one window's flows.

    Three passes over the address dimensions: exact (src, dst) pairs whose
    share reaches the threshold, then (src, *) groups, then (*, dst) groups;
    whatever remains becomes a single (*, *) residual. Every flow lands in
    exactly one aggregate, so shares always sum to 100. Thresholding uses the
    byte share unless by_packets is set; shares are always reported for both.
    """
    if not 0 < threshold_pct <= 100:
        raise ValueError(f"threshold_pct must be in (0, 100], got {threshold_pct}")
    if not flows:
        return []

    items = sorted(flows.items())
    total_bytes = sum(s.bytes for _, s in items)
    total_packets = sum(s.packets for _, s in items)

    def share(keys: list[FlowKey]) -> float:
        if by_packets:
            return _pct(sum(flows[k].packets for k in keys), total_packets)
        return _pct(sum(flows[k].bytes for k in keys), total_bytes)

    groups: list[tuple[str, str, list[FlowKey]]] = []
    remaining = [k for k, _ in items]

    # Pass 1: exact source-destination pairs.
    remaining = _take_groups(groups, remaining, share, threshold_pct, lambda k: (k.src_ip, k.dst_ip))
    # Pass 2: by source, then by destination.
    remaining = _take_groups(groups, remaining, share, threshold_pct, lambda k: (k.src_ip, WILDCARD))
    remaining = _take_groups(groups, remaining, share, threshold_pct, lambda k: (WILDCARD, k.dst_ip))
    # Pass 3: one residual for everything left, regardless of share.
    if remaining:
        groups.append((WILDCARD, WILDCARD, remaining))

    aggregates = []
    for src_pat, dst_pat, keys in groups:
        aggregates.append(
            (
                _pct(sum(flows[k].bytes for k in keys), total_bytes),
                _pct(sum(flows[k].packets for k in keys), total_packets),
                src_pat,
                dst_pat,
                _unique_or_wildcard([proto_name(k.protocol) for k in keys]),
                _unique_or_wildcard([str(k.src_port) for k in keys]),
                _unique_or_wildcard([str(k.dst_port) for k in keys]),
            )
        )
    # Volume-descending; ties broken by the pattern tuple for determinism.
    aggregates.sort(key=lambda a: (-a[0], a[2:]))
    return [
        AggregateFlow(
            rank=i + 1,
            src_pattern=a[2],
            dst_pattern=a[3],
            proto_pattern=a[4],
            sport_pattern=a[5],
            dport_pattern=a[6],
            pct_volume=a[0],
            pct_packets=a[1],
        )
        for i, a in enumerate(aggregates)
    ]


def _pct(part: int, total: int) -> float:
    return 100.0 * part / total if total else 0.0


def _take_groups(groups, remaining, share, threshold, pattern_of):
    """Move threshold-passing groups out of remaining, preserving key order."""
    by_pattern: dict[tuple[str, str], list[FlowKey]] = {}
    for key in remaining:
        by_pattern.setdefault(pattern_of(key), []).append(key)
    taken: set[FlowKey] = set()
    for pattern in sorted(by_pattern):
        keys = by_pattern[pattern]
        if share(keys) >= threshold:
            groups.append((pattern[0], pattern[1], keys))
            taken.update(keys)
    return [k for k in remaining if k not in taken]


def _unique_or_wildcard(values: list[str]) -> str:
    unique = set(values)
    return values[0] if len(unique) == 1 else WILDCARD


def emit_agurim(aggregates: Iterable[AggregateFlow]) -> str:
    """Render aggregates as two-line entries: pair line, then protocol line."""
    lines = []
    for a in aggregates:
        lines.append(f"{a.rank} {a.src_pattern} {a.dst_pattern} {a.pct_volume:.2f} {a.pct_packets:.2f}")
        lines.append(
            f"  {a.proto_pattern} {a.sport_pattern} {a.dport_pattern} "
            f"{a.pct_volume:.2f} {a.pct_packets:.2f}"
        )
    return "\n".join(lines) + ("\n" if lines else "")


class OddLineCount(Exception):
    """Aggregate text must hold an even number of non-blank lines."""


class MalformedEntry(Exception):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no


def parse_agurim(text: str) -> list[AggregateFlow]:
    """Parse two-line aggregate entries (inverse of emit_agurim)."""
    numbered = [
        (no, line.strip())
        for no, line in enumerate(text.splitlines(), start=1)
        if line.strip() and not line.strip().startswith("#")
    ]
    if len(numbered) % 2:
        raise OddLineCount(f"{len(numbered)} non-blank lines")
    aggregates = []
    for i in range(0, len(numbered), 2):
        pair_no, pair_line = numbered[i]
        proto_no, proto_line = numbered[i + 1]
        pair = pair_line.split()
        proto = proto_line.split()
        if len(pair) != 5:
            raise MalformedEntry(pair_no, f"pair line needs 5 fields, got {len(pair)}")
        if len(proto) != 5:
            raise MalformedEntry(proto_no, f"protocol line needs 5 fields, got {len(proto)}")
        try:
            aggregates.append(
                AggregateFlow(
                    rank=int(pair[0]),
                    src_pattern=_ip_pattern(pair[1]),
                    dst_pattern=_ip_pattern(pair[2]),
                    proto_pattern=_proto_pattern(proto[0]),
                    sport_pattern=_port_pattern(proto[1]),
                    dport_pattern=_port_pattern(proto[2]),
                    pct_volume=_pct_field(pair[3]),
                    pct_packets=_pct_field(pair[4]),
                )
            )
        except ValueError as exc:
            raise MalformedEntry(pair_no, str(exc)) from exc
    return aggregates


def _ip_pattern(token: str) -> str:
    return token  # wildcard or address; addresses stay verbatim


def _proto_pattern(token: str) -> str:
    if token == WILDCARD:
        return token
    proto_number(token)  # validates
    return token


def _port_pattern(token: str) -> str:
    if token == WILDCARD:
        return token
    value = int(token)
    if not 0 <= value <= 65535:
        raise ValueError(f"port out of range: {value}")
    return token


def _pct_field(token: str) -> float:
    value = float(token)
    if not 0.0 <= value <= 100.0:
        raise ValueError(f"percentage out of range: {value}")
    return value


def aggregation_features(aggregates: Iterable[AggregateFlow], k: int) -> np.ndarray:
    """Fixed 2K+2 feature block from one window's aggregates.

    Layout: volume shares of the top-K non-residual aggregates (zero padded),
    the same K slots for packet shares, the count of non-residual aggregates,
    and the residual volume share. Shares are fractions in [0, 1]; the count
    is raw.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    non_residual = sorted((a for a in aggregates if not a.is_residual()), key=lambda a: a.rank)
    residual = [a for a in aggregates if a.is_residual()]
    out = np.zeros(2 * k + 2, dtype=np.float64)
    for i, a in enumerate(non_residual[:k]):
        out[i] = a.pct_volume / 100.0
        out[k + i] = a.pct_packets / 100.0
    out[2 * k] = float(len(non_residual))
    out[2 * k + 1] = sum(a.pct_volume for a in residual) / 100.0
    return out
