"""Text codecs for the file artifacts that pipeline stages exchange."""

from __future__ import annotations

import hashlib
import json
from typing import Iterable, Mapping

from .aggregate import AggregateFlow, emit_agurim, parse_agurim
from .ingest import FlowKey, FlowStats, WindowMap, proto_name, proto_number
from .labeling import Label

_WINDOWS_MAGIC = "#flownids-windows v1"
_AGGREGATES_MAGIC = "#flownids-aggregates v1"


def save_windows(path, windows: WindowMap) -> None:
    """One row per (window, flow): key fields followed by the additive stats."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_WINDOWS_MAGIC + "\n")
        fh.write(
            "# window src dst sport dport proto packets bytes syn fin rst"
            " flmin flmax flsum flsumsq ttlsum winsum\n"
        )
        for idx in sorted(windows):
            for key in sorted(windows[idx]):
                s = windows[idx][key]
                fh.write(
                    f"{idx} {key.src_ip} {key.dst_ip} {key.src_port} {key.dst_port} "
                    f"{proto_name(key.protocol)} {s.packets} {s.bytes} "
                    f"{s.syn_count} {s.fin_count} {s.rst_count} "
                    f"{s.frame_len_min} {s.frame_len_max} {s.frame_len_sum} "
                    f"{s.frame_len_sum_sq} {s.ttl_sum} {s.window_sum}\n"
                )


def load_windows(path) -> WindowMap:
    windows: WindowMap = {}
    with open(path, "r", encoding="utf-8") as fh:
        magic = fh.readline().rstrip("\n")
        if magic != _WINDOWS_MAGIC:
            raise ValueError(f"not a windows artifact: {magic!r}")
        for line_no, raw in enumerate(fh, start=2):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 17:
                raise ValueError(f"line {line_no}: expected 17 fields, got {len(parts)}")
            key = FlowKey(parts[1], parts[2], int(parts[3]), int(parts[4]), proto_number(parts[5]))
            nums = [int(x) for x in parts[6:]]
            stats = FlowStats(
                packets=nums[0],
                bytes=nums[1],
                syn_count=nums[2],
                fin_count=nums[3],
                rst_count=nums[4],
                frame_len_min=nums[5],
                frame_len_max=nums[6],
                frame_len_sum=nums[7],
                frame_len_sum_sq=nums[8],
                ttl_sum=nums[9],
                window_sum=nums[10],
            )
            windows.setdefault(int(parts[0]), {})[key] = stats
    return windows


def save_labels(path, labels: Mapping[int, Label] | Iterable[Label]) -> None:
    """'second label' lines; also the format of synth truth output."""
    if isinstance(labels, Mapping):
        items = sorted(labels.items())
    else:
        items = list(enumerate(labels))
    with open(path, "w", encoding="utf-8") as fh:
        for second, label in items:
            fh.write(f"{second} {label.value}\n")


def load_labels(path) -> dict[int, Label]:
    labels: dict[int, Label] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"line {line_no}: expected 'second label', got {line!r}")
            labels[int(parts[0])] = Label(int(parts[1]))
    return labels


def save_aggregates(path, by_window: Mapping[int, list[AggregateFlow]]) -> None:
    """Window-delimited blocks of two-line aggregate entries."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_AGGREGATES_MAGIC + "\n")
        for idx in sorted(by_window):
            fh.write(f"= window {idx}\n")
            fh.write(emit_agurim(by_window[idx]))


def load_aggregates(path) -> dict[int, list[AggregateFlow]]:
    with open(path, "r", encoding="utf-8") as fh:
        magic = fh.readline().rstrip("\n")
        if magic != _AGGREGATES_MAGIC:
            raise ValueError(f"not an aggregates artifact: {magic!r}")
        by_window: dict[int, list[AggregateFlow]] = {}
        current: int | None = None
        block: list[str] = []
        for raw in fh:
            line = raw.rstrip("\n")
            if line.startswith("= window "):
                if current is not None:
                    by_window[current] = parse_agurim("\n".join(block))
                current = int(line.removeprefix("= window "))
                block = []
            else:
                block.append(line)
        if current is not None:
            by_window[current] = parse_agurim("\n".join(block))
    return by_window


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(path, command: str, config: Mapping, inputs: Iterable, outputs: Iterable) -> dict:
    """Record everything needed to re-derive a stage: config plus input hashes."""
    manifest = {
        "command": command,
        "config": dict(config),
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "outputs": {str(p): sha256_file(p) for p in outputs},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def read_manifest(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
