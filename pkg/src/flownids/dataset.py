"""Per-second feature vectors, normalization, and context-windowed sequences."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .aggregate import AggregateFlow, aggregate_window, aggregation_features
from .ingest import FlowKey, FlowStats, proto_kind
from .labeling import Label

# Frozen base feature order; the aggregation block (2K+2 slots) follows it.
BASE_FEATURES = [
    "packet_count",
    "byte_count",
    "flow_count",
    "unique_src_ips",
    "unique_dst_ips",
    "unique_src_ports",
    "unique_dst_ports",
    "frac_tcp",
    "frac_udp",
    "frac_icmp",
    "frac_other",
    "mean_frame_len",
    "std_frame_len",
    "mean_ttl",
    "mean_tcp_window",
    "frac_syn",
    "frac_fin",
    "frac_rst",
]

# Count features get log(1+x) before normalization; traffic counts are heavy-tailed.
_LOG_SCALED = frozenset(BASE_FEATURES[:7])

STD_FLOOR = 1e-8


def feature_names(k: int) -> list[str]:
    """Full feature dictionary for aggregation depth k, in frozen order."""
    agg = [f"agg_volume_{i + 1}" for i in range(k)]
    agg += [f"agg_packets_{i + 1}" for i in range(k)]
    agg += ["agg_count", "agg_residual_volume"]
    return BASE_FEATURES + agg


def feature_dim(k: int) -> int:
    return len(BASE_FEATURES) + 2 * k + 2


@dataclass
class WindowFeatures:
    """One second of traffic as a fixed-order feature vector with its label."""

    window_index: int
    features: np.ndarray
    label: Label


def compute_window_features(
    stats: Mapping[FlowKey, FlowStats],
    aggregates: Iterable[AggregateFlow],
    k: int,
) -> np.ndarray:
    """Feature vector for one window; empty windows yield all zeros.

    Fractions are over packets; means are over all packets in the window
    (non-TCP packets contribute zero window and flag values). Count features
    are stored as log(1+count).
    """
    out = np.zeros(feature_dim(k), dtype=np.float64)
    agg_block = aggregation_features(aggregates, k)
    out[len(BASE_FEATURES) :] = agg_block
    if not stats:
        return out

    packets = sum(s.packets for s in stats.values())
    kinds = {"TCP": 0, "UDP": 0, "ICMP": 0, "OTHER": 0}
    for key, s in stats.items():
        kinds[proto_kind(key.protocol)] += s.packets

    values = {
        "packet_count": packets,
        "byte_count": sum(s.bytes for s in stats.values()),
        "flow_count": len(stats),
        "unique_src_ips": len({key.src_ip for key in stats}),
        "unique_dst_ips": len({key.dst_ip for key in stats}),
        "unique_src_ports": len({key.src_port for key in stats}),
        "unique_dst_ports": len({key.dst_port for key in stats}),
        "frac_tcp": kinds["TCP"] / packets,
        "frac_udp": kinds["UDP"] / packets,
        "frac_icmp": kinds["ICMP"] / packets,
        "frac_other": kinds["OTHER"] / packets,
        "frac_syn": sum(s.syn_count for s in stats.values()) / packets,
        "frac_fin": sum(s.fin_count for s in stats.values()) / packets,
        "frac_rst": sum(s.rst_count for s in stats.values()) / packets,
    }
    frame_sum = sum(s.frame_len_sum for s in stats.values())
    frame_sum_sq = sum(s.frame_len_sum_sq for s in stats.values())
    mean_frame = frame_sum / packets
    values["mean_frame_len"] = mean_frame
    values["std_frame_len"] = math.sqrt(max(0.0, frame_sum_sq / packets - mean_frame**2))
    values["mean_ttl"] = sum(s.ttl_sum for s in stats.values()) / packets
    values["mean_tcp_window"] = sum(s.window_sum for s in stats.values()) / packets

    for i, name in enumerate(BASE_FEATURES):
        v = float(values[name])
        out[i] = math.log1p(v) if name in _LOG_SCALED else v
    return out


def build_window_features(
    windows: Mapping[int, Mapping[FlowKey, FlowStats]],
    labels: Mapping[int, Label],
    k: int,
    threshold_pct: float,
    span: tuple[int, int] | None = None,
    aggregates_by_window: Mapping[int, list[AggregateFlow]] | None = None,
) -> list[WindowFeatures]:
    """Assemble the contiguous labeled feature list for a span of seconds.

    Missing seconds are materialized as empty windows labeled BENIGN so the
    sequence stays contiguous. span defaults to [min, max] of the observed
    window indices; aggregates are computed on the fly unless supplied.
    """
    if span is None:
        if not windows:
            raise ValueError("no windows and no explicit span")
        span = (min(windows), max(windows) + 1)
    start, end = span
    if end <= start:
        raise ValueError(f"empty span {span}")
    result = []
    for idx in range(start, end):
        stats = windows.get(idx, {})
        if aggregates_by_window is not None:
            aggs = aggregates_by_window.get(idx, [])
        else:
            aggs = aggregate_window(stats, threshold_pct) if stats else []
        result.append(
            WindowFeatures(
                window_index=idx,
                features=compute_window_features(stats, aggs, k),
                label=labels.get(idx, Label.BENIGN),
            )
        )
    return result


class EmptyTrainingSet(Exception):
    """A scaler cannot be fit on zero windows."""


@dataclass
class Scaler:
    """Per-feature z-score parameters, fit on the training span only."""

    mean: np.ndarray
    std: np.ndarray  # floored at STD_FLOOR so constant features scale to zero


def fit_scaler(train_windows: Sequence[WindowFeatures]) -> Scaler:
    if not train_windows:
        raise EmptyTrainingSet("no training windows")
    matrix = np.stack([w.features for w in train_windows])
    return Scaler(
        mean=matrix.mean(axis=0),
        std=np.maximum(matrix.std(axis=0), STD_FLOOR),
    )


def apply_scaler(scaler: Scaler, windows: Sequence[WindowFeatures]) -> list[WindowFeatures]:
    """Return scaled copies; the inputs are never mutated."""
    return [
        WindowFeatures(
            window_index=w.window_index,
            features=(w.features - scaler.mean) / scaler.std,
            label=w.label,
        )
        for w in windows
    ]


@dataclass
class SequenceSample:
    """L timesteps of context-concatenated features with per-second labels."""

    inputs: np.ndarray  # L x 3F: concat of features at t-1, t, t+1
    labels: np.ndarray  # L ints, 1 = anomaly
    start_index: int  # absolute second of timestep 0


class SequenceTooLong(Exception):
    pass


def context_matrix(windows: Sequence[WindowFeatures]) -> np.ndarray:
    """N x 3F matrix whose row t concatenates features at t-1, t, t+1.

    Out-of-range neighbors at the span edges are zero vectors, so row t
    depends on raw traffic up to second t+1 and no further.
    """
    n = len(windows)
    f = len(windows[0].features)
    feats = np.stack([w.features for w in windows])
    out = np.zeros((n, 3 * f), dtype=np.float64)
    out[1:, :f] = feats[:-1]
    out[:, f : 2 * f] = feats
    out[:-1, 2 * f :] = feats[1:]
    return out


def build_sequences(
    windows: Sequence[WindowFeatures],
    length: int,
    stride: int,
) -> list[SequenceSample]:
    """Slice the contiguous window list into fixed-length labeled sequences.

    Samples start at 0, stride, 2*stride, ...; the count for N windows is
    floor((N - length) / stride) + 1.
    """
    if length < 1 or stride < 1:
        raise ValueError("length and stride must be >= 1")
    n = len(windows)
    if length > n:
        raise SequenceTooLong(f"length {length} exceeds {n} windows")
    indices = [w.window_index for w in windows]
    if indices != list(range(indices[0], indices[0] + n)):
        raise ValueError("windows must be contiguous and sorted; fill gaps first")
    ctx = context_matrix(windows)
    labels = np.array([w.label.value for w in windows], dtype=np.int64)
    samples = []
    for start in range(0, n - length + 1, stride):
        samples.append(
            SequenceSample(
                inputs=ctx[start : start + length].copy(),
                labels=labels[start : start + length].copy(),
                start_index=indices[start],
            )
        )
    return samples


class SpanTooSmall(Exception):
    pass


def split_by_time(
    windows: Sequence[WindowFeatures],
    ratios: tuple[float, float, float] = (0.6, 0.2, 0.2),
    min_len: int = 1,
) -> tuple[list[WindowFeatures], list[WindowFeatures], list[WindowFeatures]]:
    """Chronological train/val/test split; leftover from flooring goes to train."""
    if any(r <= 0 for r in ratios):
        raise ValueError(f"ratios must be positive, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {ratios}")
    n = len(windows)
    n_val = int(n * ratios[1])
    n_test = int(n * ratios[2])
    n_train = n - n_val - n_test
    if min(n_train, n_val, n_test) < min_len:
        raise SpanTooSmall(f"split {n_train}/{n_val}/{n_test} below minimum {min_len}")
    train = list(windows[:n_train])
    val = list(windows[n_train : n_train + n_val])
    test = list(windows[n_train + n_val :])
    return train, val, test


_DATASET_MAGIC = "#flownids-dataset v1"


def save_dataset(
    path,
    windows: Sequence[WindowFeatures],
    k: int,
    scaler: Scaler | None = None,
) -> None:
    """Write windows as a columnar text container with an embedded header.

    Header line 2 is JSON carrying the feature dictionary and scaler; each
    data row is 'window_index label features...' with round-trip floats.
    """
    header = {
        "k": k,
        "feature_names": feature_names(k),
        "scaler": None
        if scaler is None
        else {"mean": scaler.mean.tolist(), "std": scaler.std.tolist()},
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_DATASET_MAGIC + "\n")
        fh.write("#" + json.dumps(header) + "\n")
        for w in windows:
            feats = " ".join(f"{x:.17g}" for x in w.features)
            fh.write(f"{w.window_index} {w.label.value} {feats}\n")


def load_dataset(path) -> tuple[list[WindowFeatures], int, Scaler | None]:
    with open(path, "r", encoding="utf-8") as fh:
        magic = fh.readline().rstrip("\n")
        if magic != _DATASET_MAGIC:
            raise ValueError(f"not a dataset container: {magic!r}")
        header = json.loads(fh.readline().lstrip("#"))
        expected = feature_dim(header["k"])
        windows = []
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            feats = np.array([float(x) for x in parts[2:]], dtype=np.float64)
            if len(feats) != expected:
                raise ValueError(f"row has {len(feats)} features, expected {expected}")
            windows.append(
                WindowFeatures(
                    window_index=int(parts[0]),
                    features=feats,
                    label=Label(int(parts[1])),
                )
            )
    scaler = None
    if header["scaler"] is not None:
        scaler = Scaler(
            mean=np.array(header["scaler"]["mean"], dtype=np.float64),
            std=np.array(header["scaler"]["std"], dtype=np.float64),
        )
    return windows, header["k"], scaler
