"""Command-line pipeline: each subcommand turns one stage artifact into the next.

Every run writes a manifest (resolved config + input hashes) next to its
primary output so results can be re-derived exactly. Flags override a
--config JSON file (a plain mapping, or a previous manifest whose 'config'
key is reused); relative paths resolve against $FLOWNIDS_DATA_DIR when set.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import artifacts, dataset, evaluate, lstm, training
from .aggregate import MalformedEntry, OddLineCount, aggregate_window
from .ingest import (
    PcapError,
    bin_packets,
    emit_flow_text,
    parse_flow_text,
    parse_pcap_headers,
)
from .labeling import Label, MissingHeader, label_windows, parse_mawilab_csv
from .synth import InvalidScenario, generate_traffic, parse_scenario

ENV_DATA_DIR = "FLOWNIDS_DATA_DIR"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_RUNTIME = 3

_INPUT_ERRORS = (
    OSError,
    PcapError,
    MissingHeader,
    InvalidScenario,
    OddLineCount,
    MalformedEntry,
    ValueError,
    json.JSONDecodeError,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit code 1 instead of argparse's 2
        raise UsageError(message)


def _path(value: str | None) -> Path | None:
    if value is None:
        return None
    p = Path(value)
    base = os.environ.get(ENV_DATA_DIR)
    if base and not p.is_absolute():
        return Path(base) / p
    return p


def _load_config(path: Path | None) -> dict:
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if "config" in data and "command" in data:  # a manifest; reuse its config
        data = data["config"]
    if not isinstance(data, dict):
        raise ValueError("config file must hold a JSON object")
    return data


def _resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """Merge precedence: explicit flag > config file entry > default."""
    config = _load_config(_path(args.config))
    resolved = {}
    for key, default in defaults.items():
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            resolved[key] = flag_value
        elif key in config:
            resolved[key] = config[key]
        else:
            resolved[key] = default
    return resolved


def _require(resolved: dict, *keys: str) -> None:
    missing = [k for k in keys if resolved[k] is None]
    if missing:
        raise UsageError(f"missing required option(s): {', '.join('--' + k.replace('_', '-') for k in missing)}")


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        args.run(args)
        return EXIT_OK
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _INPUT_ERRORS as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - uniform CLI failure surface
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def _build_parser() -> _Parser:
    parser = _Parser(prog="flownids", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config file or a previous manifest")
        p.add_argument("--manifest", help="manifest output path (default: first output + .manifest.json)")
        p.set_defaults(run=fn)
        return p

    p = add("synth", _cmd_synth, "generate scenario traffic and truth labels")
    p.add_argument("--scenario", help="scenario file")
    p.add_argument("--out-traffic", dest="out_traffic", help="flow-text output")
    p.add_argument("--out-truth", dest="out_truth", help="truth labels output")

    p = add("ingest", _cmd_ingest, "bin a capture into per-second flow statistics")
    p.add_argument("--input", help="PCAP or flow-text capture")
    p.add_argument("--out", help="windows artifact output")
    p.add_argument("--epoch", type=int, help="origin second (default: floor of earliest timestamp)")

    p = add("label", _cmd_label, "label windows from an anomaly descriptor CSV")
    p.add_argument("--windows", help="windows artifact")
    p.add_argument("--csv", help="anomaly descriptor CSV")
    p.add_argument("--out", help="labels output")

    p = add("aggregate", _cmd_aggregate, "compute wildcard aggregates per window")
    p.add_argument("--windows", help="windows artifact")
    p.add_argument("--out", help="aggregates output")
    p.add_argument("--threshold", type=float, help="share threshold in percent (default 10)")
    p.add_argument("--by-packets", dest="by_packets", action="store_true", default=None,
                   help="threshold on packet share instead of byte share")

    p = add("build", _cmd_build, "build normalized train/val/test window datasets")
    p.add_argument("--windows", help="windows artifact")
    p.add_argument("--labels", help="labels artifact (or synth truth)")
    p.add_argument("--aggregates", help="precomputed aggregates artifact (optional)")
    p.add_argument("--outdir", help="directory for train.ds/val.ds/test.ds")
    p.add_argument("--k", type=int, help="aggregation feature depth (default 3)")
    p.add_argument("--threshold", type=float, help="aggregation threshold percent (default 10)")
    p.add_argument("--ratios", help="train,val,test ratios (default 0.6,0.2,0.2)")
    p.add_argument("--span", help="start:end seconds (default: cover windows and labels)")

    for name, fn in (("train", _cmd_train), ("train-parallel", _cmd_train)):
        p = add(name, fn, "train the sequence labeler" + (" with data-parallel workers" if "parallel" in name else ""))
        p.add_argument("--data", help="training dataset (train.ds)")
        p.add_argument("--val", help="validation dataset (optional)")
        p.add_argument("--out", help="checkpoint output")
        p.add_argument("--metrics", help="per-epoch metrics JSONL output")
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--dropout", type=float)
        p.add_argument("--seed", type=int)
        p.add_argument("--hidden", type=int)
        p.add_argument("--activation", choices=["relu", "tanh"])
        p.add_argument("--lr", type=float)
        p.add_argument("--seq-len", dest="seq_len", type=int)
        p.add_argument("--stride", type=int)
        if name == "train-parallel":
            p.add_argument("--workers", type=int)
            p.add_argument("--sync-every", dest="sync_every", type=int)

    p = add("baseline", _cmd_baseline, "train the memoryless linear hinge baseline")
    p.add_argument("--data", help="training dataset (train.ds)")
    p.add_argument("--out", help="model output (JSON)")
    p.add_argument("--lam", type=float, help="L2 strength (default 1e-4)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)

    p = add("eval", _cmd_eval, "evaluate a checkpoint (and optional baseline) on a dataset")
    p.add_argument("--checkpoint", help="trained checkpoint")
    p.add_argument("--data", help="dataset to evaluate (test.ds)")
    p.add_argument("--baseline", help="baseline model JSON (optional)")
    p.add_argument("--scenario", help="scenario file for per-type detection (optional)")
    p.add_argument("--out", help="evaluation record output (JSON)")
    p.add_argument("--threshold", type=float, help="decision threshold (default 0.5)")

    p = add("report", _cmd_report, "render an evaluation record as text")
    p.add_argument("--record", help="evaluation record JSON")
    p.add_argument("--out", help="text report output")

    return parser


def _write_manifest(args, resolved: dict, inputs: list, outputs: list, primary) -> None:
    manifest_path = _path(args.manifest) if args.manifest else Path(str(primary) + ".manifest.json")
    config = {k: (str(v) if isinstance(v, Path) else v) for k, v in resolved.items()}
    artifacts.write_manifest(manifest_path, args.command, config, inputs, outputs)


def _cmd_synth(args) -> None:
    resolved = _resolve(args, {"scenario": None, "out_traffic": None, "out_truth": None})
    _require(resolved, "scenario", "out_traffic", "out_truth")
    scenario_path = _path(resolved["scenario"])
    out_traffic = _path(resolved["out_traffic"])
    out_truth = _path(resolved["out_truth"])
    scenario = parse_scenario(scenario_path.read_text(encoding="utf-8"))
    headers, truth = generate_traffic(scenario)
    out_traffic.write_text(emit_flow_text(headers), encoding="utf-8")
    artifacts.save_labels(out_truth, truth)
    print(f"synth: {len(headers)} packets over {scenario.duration}s -> {out_traffic}")
    _write_manifest(args, resolved, [scenario_path], [out_traffic, out_truth], out_traffic)


def _cmd_ingest(args) -> None:
    resolved = _resolve(args, {"input": None, "out": None, "epoch": None})
    _require(resolved, "input", "out")
    in_path = _path(resolved["input"])
    out_path = _path(resolved["out"])
    raw = in_path.read_bytes()
    if raw[:4] in (b"\xa1\xb2\xc3\xd4", b"\xd4\xc3\xb2\xa1", b"\xa1\xb2\x3c\x4d", b"\x4d\x3c\xb2\xa1"):
        pcap = parse_pcap_headers(raw)
        headers = pcap.headers
        if pcap.truncated_at is not None:
            print(
                f"ingest: capture truncated at byte {pcap.truncated_at}, "
                f"kept {len(headers)} packets",
                file=sys.stderr,
            )
        if pcap.skipped_non_ip:
            print(f"ingest: skipped {pcap.skipped_non_ip} non-IP frames", file=sys.stderr)
    else:
        parsed = parse_flow_text(raw.decode("utf-8"))
        for err in parsed.errors:
            print(f"ingest: line {err.line_no}: {err.reason}", file=sys.stderr)
        headers = parsed.headers
        if not headers and parsed.errors:
            raise ValueError(f"{in_path}: no parseable records")
    if not headers:
        raise ValueError(f"{in_path}: capture holds no IP packets")
    windows = bin_packets(headers, epoch=resolved["epoch"])
    artifacts.save_windows(out_path, windows)
    print(f"ingest: {len(headers)} packets into {len(windows)} windows -> {out_path}")
    _write_manifest(args, resolved, [in_path], [out_path], out_path)


def _cmd_label(args) -> None:
    resolved = _resolve(args, {"windows": None, "csv": None, "out": None})
    _require(resolved, "windows", "csv", "out")
    windows_path = _path(resolved["windows"])
    csv_path = _path(resolved["csv"])
    out_path = _path(resolved["out"])
    windows = artifacts.load_windows(windows_path)
    parsed = parse_mawilab_csv(csv_path.read_text(encoding="utf-8"))
    for err in parsed.errors:
        print(f"label: row {err.row_no} ({err.kind}): {err.reason}", file=sys.stderr)
    labels = label_windows(windows, parsed.descriptors)
    artifacts.save_labels(out_path, labels)
    anomalies = sum(1 for v in labels.values() if v is Label.ANOMALY)
    print(f"label: {anomalies}/{len(labels)} windows anomalous -> {out_path}")
    _write_manifest(args, resolved, [windows_path, csv_path], [out_path], out_path)


def _cmd_aggregate(args) -> None:
    resolved = _resolve(
        args, {"windows": None, "out": None, "threshold": 10.0, "by_packets": False}
    )
    _require(resolved, "windows", "out")
    windows_path = _path(resolved["windows"])
    out_path = _path(resolved["out"])
    windows = artifacts.load_windows(windows_path)
    by_window = {
        idx: aggregate_window(flows, resolved["threshold"], by_packets=resolved["by_packets"])
        for idx, flows in sorted(windows.items())
    }
    artifacts.save_aggregates(out_path, by_window)
    print(f"aggregate: {len(by_window)} windows -> {out_path}")
    _write_manifest(args, resolved, [windows_path], [out_path], out_path)


def _cmd_build(args) -> None:
    resolved = _resolve(
        args,
        {
            "windows": None,
            "labels": None,
            "aggregates": None,
            "outdir": None,
            "k": 3,
            "threshold": 10.0,
            "ratios": "0.6,0.2,0.2",
            "span": None,
        },
    )
    _require(resolved, "windows", "labels", "outdir")
    windows_path = _path(resolved["windows"])
    labels_path = _path(resolved["labels"])
    outdir = _path(resolved["outdir"])
    windows = artifacts.load_windows(windows_path)
    labels = artifacts.load_labels(labels_path)
    inputs = [windows_path, labels_path]

    aggregates_by_window = None
    if resolved["aggregates"]:
        agg_path = _path(resolved["aggregates"])
        aggregates_by_window = artifacts.load_aggregates(agg_path)
        inputs.append(agg_path)

    if resolved["span"]:
        start_text, end_text = str(resolved["span"]).split(":")
        span = (int(start_text), int(end_text))
    else:
        indices = set(windows) | set(labels)
        if not indices:
            raise ValueError("no windows and no labels; nothing to build")
        span = (min(indices), max(indices) + 1)

    ratios = tuple(float(r) for r in str(resolved["ratios"]).split(","))
    if len(ratios) != 3:
        raise ValueError(f"ratios must have three components, got {resolved['ratios']!r}")

    features = dataset.build_window_features(
        windows,
        labels,
        k=resolved["k"],
        threshold_pct=resolved["threshold"],
        span=span,
        aggregates_by_window=aggregates_by_window,
    )
    train_w, val_w, test_w = dataset.split_by_time(features, ratios)
    scaler = dataset.fit_scaler(train_w)
    outdir.mkdir(parents=True, exist_ok=True)
    outputs = []
    for name, part in (("train.ds", train_w), ("val.ds", val_w), ("test.ds", test_w)):
        out_path = outdir / name
        dataset.save_dataset(out_path, dataset.apply_scaler(scaler, part), resolved["k"], scaler)
        outputs.append(out_path)
    print(
        f"build: spans train={len(train_w)} val={len(val_w)} test={len(test_w)} -> {outdir}"
    )
    _write_manifest(args, resolved, inputs, outputs, outputs[0])


def _load_sequences(path, seq_len, stride):
    windows, k, _scaler = dataset.load_dataset(path)
    if not windows:
        raise ValueError(f"{path}: empty dataset")
    if seq_len is None:
        seq_len = len(windows)
        stride = seq_len
    return dataset.build_sequences(windows, seq_len, stride or seq_len), k


def _cmd_train(args) -> None:
    parallel = args.command == "train-parallel"
    defaults = {
        "data": None,
        "val": None,
        "out": None,
        "metrics": None,
        "epochs": 30,
        "batch_size": 16,
        "dropout": 0.5,
        "seed": 0,
        "hidden": 64,
        "activation": "relu",
        "lr": 0.001,
        "seq_len": 30,
        "stride": 15,
    }
    if parallel:
        defaults.update({"workers": 2, "sync_every": 4})
    resolved = _resolve(args, defaults)
    _require(resolved, "data", "out")
    data_path = _path(resolved["data"])
    out_path = _path(resolved["out"])
    samples, _k = _load_sequences(data_path, resolved["seq_len"], resolved["stride"])
    val_samples = None
    inputs = [data_path]
    if resolved["val"]:
        val_path = _path(resolved["val"])
        val_samples, _ = _load_sequences(val_path, resolved["seq_len"], resolved["stride"])
        inputs.append(val_path)

    config = training.TrainConfig(
        epochs=resolved["epochs"],
        batch_size=resolved["batch_size"],
        dropout_rate=resolved["dropout"],
        seed=resolved["seed"],
        hidden=resolved["hidden"],
        activation=resolved["activation"],
        lr=resolved["lr"],
        workers=resolved.get("workers", 1),
        sync_every=resolved.get("sync_every", 4),
    )
    if parallel:
        params, metrics = training.train_data_parallel(samples, config, val_samples)
    else:
        params, metrics = training.train(samples, config, val_samples)
    lstm.save_params(out_path, params)
    outputs = [out_path]
    if resolved["metrics"]:
        metrics_path = _path(resolved["metrics"])
        training.write_metrics_jsonl(metrics, metrics_path)
        outputs.append(metrics_path)
    last = metrics[-1] if metrics else {}
    print(f"{args.command}: {resolved['epochs']} epochs, final loss {last.get('loss', float('nan')):.4f} -> {out_path}")
    _write_manifest(args, resolved, inputs, outputs, out_path)


def _cmd_baseline(args) -> None:
    resolved = _resolve(
        args, {"data": None, "out": None, "lam": 1e-4, "epochs": 200, "seed": 0}
    )
    _require(resolved, "data", "out")
    data_path = _path(resolved["data"])
    out_path = _path(resolved["out"])
    samples, _ = _load_sequences(data_path, None, None)
    model, history = training.train_baseline(
        samples, lam=resolved["lam"], epochs=resolved["epochs"], seed=resolved["seed"]
    )
    training.save_baseline(out_path, model)
    print(f"baseline: final objective {history[-1]:.4f} -> {out_path}")
    _write_manifest(args, resolved, [data_path], [out_path], out_path)


def _cmd_eval(args) -> None:
    resolved = _resolve(
        args,
        {
            "checkpoint": None,
            "data": None,
            "baseline": None,
            "scenario": None,
            "out": None,
            "threshold": 0.5,
        },
    )
    _require(resolved, "checkpoint", "data", "out")
    ckpt_path = _path(resolved["checkpoint"])
    data_path = _path(resolved["data"])
    out_path = _path(resolved["out"])
    inputs = [ckpt_path, data_path]

    params = lstm.load_params(ckpt_path)
    windows, _k, _scaler = dataset.load_dataset(data_path)
    if not windows:
        raise ValueError(f"{data_path}: empty dataset")
    samples = dataset.build_sequences(windows, len(windows), len(windows))
    sample = samples[0]
    probs, _ = lstm.forward(params, sample.inputs)
    counts = evaluate.confusion(probs, sample.labels, threshold=resolved["threshold"])
    metrics: dict = {"loss": lstm.bce_loss(probs, sample.labels)}

    if resolved["scenario"]:
        scenario_path = _path(resolved["scenario"])
        scenario = parse_scenario(scenario_path.read_text(encoding="utf-8"))
        metrics["per_type_detection"] = evaluate.per_type_detection(
            scenario, probs, offset=sample.start_index, threshold=resolved["threshold"]
        )
        inputs.append(scenario_path)
    if resolved["baseline"]:
        baseline_path = _path(resolved["baseline"])
        model = training.load_baseline(baseline_path)
        predicted = training.predict_baseline(model, sample)
        baseline_counts = evaluate.confusion(predicted, sample.labels)
        metrics["baseline_detection_rate"] = evaluate.detection_rate(baseline_counts)
        metrics["baseline_false_positive_rate"] = evaluate.false_positive_rate(baseline_counts)
        inputs.append(baseline_path)

    manifest_config = {k: (str(v) if isinstance(v, Path) else v) for k, v in resolved.items()}
    manifest = {
        "command": "eval",
        "config": manifest_config,
        "inputs": {str(p): artifacts.sha256_file(p) for p in inputs},
    }
    record = evaluate.build_record(manifest, metrics, counts)
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")
    dr = evaluate.detection_rate(counts)
    fpr = evaluate.false_positive_rate(counts)
    fmt = lambda v: "n/a" if v is None else f"{v:.4f}"  # noqa: E731
    print(f"eval: detection_rate={fmt(dr)} fpr={fmt(fpr)} -> {out_path}")
    _write_manifest(args, resolved, inputs, [out_path], out_path)


def _cmd_report(args) -> None:
    resolved = _resolve(args, {"record": None, "out": None})
    _require(resolved, "record", "out")
    record_path = _path(resolved["record"])
    out_path = _path(resolved["out"])
    with open(record_path, "r", encoding="utf-8") as fh:
        record = json.load(fh)
    text = evaluate.render_record(record)
    out_path.write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    _write_manifest(args, resolved, [record_path], [out_path], out_path)


if __name__ == "__main__":
    sys.exit(main())
