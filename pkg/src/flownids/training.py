"""Training: RMSprop, dropout epochs, simulated data-parallel workers, baseline."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset import SequenceSample
from .evaluate import confusion, detection_rate, false_positive_rate
from .lstm import (
    PARAM_FIELDS,
    LstmGrads,
    LstmParams,
    backward,
    bce_loss,
    forward,
    init_params,
    zero_grads,
)


class EmptyDataset(Exception):
    pass


class ShapeMismatch(Exception):
    pass


@dataclass
class OptimizerState:
    """RMSprop state: squared-gradient moving average per parameter tensor."""

    v: dict[str, np.ndarray]
    step_count: int = 0
    lr: float = 0.001
    rho: float = 0.9
    decay: float = 0.0
    eps: float = 1e-7


def init_optimizer(
    params: LstmParams,
    lr: float = 0.001,
    rho: float = 0.9,
    decay: float = 0.0,
    eps: float = 1e-7,
) -> OptimizerState:
    v = {name: np.zeros_like(np.asarray(getattr(params, name), dtype=np.float64))
         for name in PARAM_FIELDS}
    return OptimizerState(v=v, lr=lr, rho=rho, decay=decay, eps=eps)


def rmsprop_step(
    params: LstmParams,
    grads: LstmGrads,
    opt: OptimizerState,
) -> tuple[LstmParams, OptimizerState]:
    """One RMSprop update in place; returns the mutated params and state.

    effective_lr = lr / (1 + decay * step_count), with step_count counted
    before the update, so decay = 0 keeps the learning rate constant.
    """
    effective_lr = opt.lr / (1.0 + opt.decay * opt.step_count)
    for name in PARAM_FIELDS:
        g = np.asarray(getattr(grads, name), dtype=np.float64)
        v = opt.v[name]
        if g.shape != v.shape:
            raise ShapeMismatch(f"{name}: gradient {g.shape} vs state {v.shape}")
        v *= opt.rho
        v += (1.0 - opt.rho) * g * g
        update = effective_lr * g / (np.sqrt(v) + opt.eps)
        if name == "b_out":
            params.b_out = float(params.b_out - update)
        else:
            target = getattr(params, name)
            target -= update
    opt.step_count += 1
    return params, opt


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    dropout_rate: float = 0.5
    seed: int = 0
    hidden: int = 64
    activation: str = "relu"
    lr: float = 0.001
    rho: float = 0.9
    decay: float = 0.0
    workers: int = 1
    sync_every: int = 4  # batches between parameter averaging

    def __post_init__(self) -> None:
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")
        if self.sync_every < 1:
            raise ValueError(f"sync_every must be >= 1, got {self.sync_every}")


@dataclass
class _Worker:
    params: LstmParams
    opt: OptimizerState
    rng: np.random.Generator
    shard: list[SequenceSample]
    batches: list[list[SequenceSample]] = field(default_factory=list)


def train(
    train_samples: Sequence[SequenceSample],
    config: TrainConfig,
    val_samples: Sequence[SequenceSample] | None = None,
) -> tuple[LstmParams, list[dict]]:
    """Serial training; identical to the data-parallel engine with one worker."""
    return _train_engine(train_samples, config, workers=1, val_samples=val_samples)


def train_data_parallel(
    train_samples: Sequence[SequenceSample],
    config: TrainConfig,
    val_samples: Sequence[SequenceSample] | None = None,
) -> tuple[LstmParams, list[dict]]:
    """Round-robin sharded workers with periodic parameter averaging.

    Each worker keeps its own optimizer state and RNG stream; parameters are
    replaced by the coordinate-wise mean every sync_every batch rounds and at
    epoch boundaries. One worker reduces exactly to serial training.
    """
    return _train_engine(train_samples, config, workers=config.workers, val_samples=val_samples)


def _train_engine(
    train_samples: Sequence[SequenceSample],
    config: TrainConfig,
    workers: int,
    val_samples: Sequence[SequenceSample] | None,
) -> tuple[LstmParams, list[dict]]:
    samples = list(train_samples)
    if not samples:
        raise EmptyDataset("no training sequences")
    input_dim = samples[0].inputs.shape[1]
    initial = init_params(config.hidden, input_dim, config.activation, seed=config.seed)

    pool = [
        _Worker(
            params=initial.copy(),
            opt=init_optimizer(initial, config.lr, config.rho, config.decay),
            rng=np.random.default_rng(config.seed + w),
            shard=samples[w::workers],
        )
        for w in range(workers)
    ]

    metrics: list[dict] = []
    for epoch in range(config.epochs):
        for worker in pool:
            order = worker.rng.permutation(len(worker.shard))
            worker.batches = [
                [worker.shard[i] for i in order[pos : pos + config.batch_size]]
                for pos in range(0, len(order), config.batch_size)
            ]
        rounds = max(len(w.batches) for w in pool)
        since_sync = 0
        for rnd in range(rounds):
            for worker in pool:
                if rnd < len(worker.batches):
                    _train_batch(worker, worker.batches[rnd], config)
            since_sync += 1
            if since_sync == config.sync_every:
                _average_params(pool)
                since_sync = 0
        if since_sync:
            _average_params(pool)

        shared = pool[0].params
        metrics.append(_epoch_record(epoch, "train", shared, samples))
        if val_samples:
            metrics.append(_epoch_record(epoch, "val", shared, val_samples))
    return pool[0].params, metrics


def _train_batch(worker: _Worker, batch: list[SequenceSample], config: TrainConfig) -> None:
    accum = zero_grads(worker.params)
    for sample in batch:
        mask = None
        if config.dropout_rate > 0.0:
            steps = sample.inputs.shape[0]
            keep = worker.rng.random((steps, config.hidden)) >= config.dropout_rate
            mask = keep.astype(np.float64) / (1.0 - config.dropout_rate)
        probs, caches = forward(worker.params, sample.inputs, dropout_mask=mask)
        grads = backward(worker.params, caches, sample.labels)
        accum.W_x += grads.W_x
        accum.W_h += grads.W_h
        accum.b += grads.b
        accum.w_out += grads.w_out
        accum.b_out += grads.b_out
    scale = 1.0 / len(batch)
    accum.W_x *= scale
    accum.W_h *= scale
    accum.b *= scale
    accum.w_out *= scale
    accum.b_out *= scale
    rmsprop_step(worker.params, accum, worker.opt)


def _average_params(pool: list[_Worker]) -> None:
    mean = LstmParams(
        W_x=np.mean([w.params.W_x for w in pool], axis=0),
        W_h=np.mean([w.params.W_h for w in pool], axis=0),
        b=np.mean([w.params.b for w in pool], axis=0),
        w_out=np.mean([w.params.w_out for w in pool], axis=0),
        b_out=float(np.mean([w.params.b_out for w in pool])),
        activation=pool[0].params.activation,
    )
    for worker in pool:
        worker.params = mean.copy()


def evaluate_samples(
    params: LstmParams,
    samples: Sequence[SequenceSample],
    threshold: float = 0.5,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss, concatenated probabilities and labels over samples (no dropout)."""
    all_probs: list[np.ndarray] = []
    all_labels: list[np.ndarray] = []
    losses = []
    for sample in samples:
        probs, _ = forward(params, sample.inputs)
        losses.append(bce_loss(probs, sample.labels))
        all_probs.append(probs)
        all_labels.append(sample.labels)
    probs = np.concatenate(all_probs)
    labels = np.concatenate(all_labels)
    return float(np.mean(losses)), probs, labels


def _epoch_record(epoch: int, split: str, params: LstmParams, samples) -> dict:
    loss, probs, labels = evaluate_samples(params, samples)
    counts = confusion(probs, labels)
    return {
        "epoch": epoch,
        "split": split,
        "loss": loss,
        "detection_rate": detection_rate(counts),
        "fpr": false_positive_rate(counts),
    }


def write_metrics_jsonl(records: Sequence[dict], path) -> None:
    """Line-delimited metric records (epoch, split, loss, detection_rate, fpr)."""
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record) + "\n")


def read_metrics_jsonl(path) -> list[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


@dataclass
class LinearBaseline:
    """Memoryless linear hinge classifier over single-timestep feature rows."""

    w: np.ndarray
    b: float
    lam: float


def _flatten_samples(samples: Sequence[SequenceSample]) -> tuple[np.ndarray, np.ndarray]:
    x = np.concatenate([s.inputs for s in samples])
    y = np.concatenate([s.labels for s in samples]).astype(np.float64)
    return x, 2.0 * y - 1.0  # hinge labels in {-1, +1}


def hinge_objective(model: LinearBaseline, x: np.ndarray, y_pm: np.ndarray) -> float:
    margins = y_pm * (x @ model.w + model.b)
    return float(0.5 * model.lam * model.w @ model.w + np.mean(np.maximum(0.0, 1.0 - margins)))


def train_baseline(
    samples: Sequence[SequenceSample],
    lam: float = 1e-4,
    epochs: int = 200,
    seed: int = 0,
    lr: float = 0.5,
) -> tuple[LinearBaseline, list[float]]:
    """Full-batch subgradient descent on the L2-regularized hinge loss.

    The L2 term is applied as a proximal shrink so huge lam stays stable and
    drives w toward zero. Returns the model and the per-epoch objective.
    """
    if not samples:
        raise EmptyDataset("no baseline training sequences")
    x, y_pm = _flatten_samples(samples)
    rng = np.random.default_rng(seed)
    model = LinearBaseline(w=rng.normal(0.0, 1e-6, size=x.shape[1]), b=0.0, lam=lam)
    history = []
    for epoch in range(epochs):
        step = lr / (1.0 + 0.01 * epoch)
        margins = y_pm * (x @ model.w + model.b)
        violating = margins < 1.0
        if np.any(violating):
            grad_w = -(y_pm[violating, None] * x[violating]).sum(axis=0) / len(y_pm)
            grad_b = -float(y_pm[violating].sum()) / len(y_pm)
        else:
            grad_w = np.zeros_like(model.w)
            grad_b = 0.0
        model.w = (model.w - step * grad_w) / (1.0 + step * lam)
        model.b -= step * grad_b
        history.append(hinge_objective(model, x, y_pm))
    return model, history


def predict_baseline(model: LinearBaseline, sample: SequenceSample) -> np.ndarray:
    """Per-timestep binary predictions (1 = anomaly), each second independent."""
    return (sample.inputs @ model.w + model.b > 0.0).astype(np.int64)


def save_baseline(path, model: LinearBaseline) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"w": model.w.tolist(), "b": model.b, "lam": model.lam}, fh)


def load_baseline(path) -> LinearBaseline:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    return LinearBaseline(w=np.array(data["w"], dtype=np.float64), b=float(data["b"]), lam=float(data["lam"]))
