"""From-scratch LSTM sequence labeler: gates, forward, BCE loss, full BPTT.

All arithmetic is 64-bit for oracle-grade reproducibility. Gate order inside
the stacked weight matrices is frozen as i, f, g, o.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

CELL_CLIP = 10.0
BCE_EPS = 1e-7

RELU = "relu"
TANH = "tanh"

PARAM_FIELDS = ("W_x", "W_h", "b", "w_out", "b_out")


class DimensionMismatch(Exception):
    pass


class StaleCache(Exception):
    """Backward was handed caches produced by a different forward pass."""


@dataclass
class LstmParams:
    """Stacked gate weights (4H rows: i, f, g, o) and the scalar output head."""

    W_x: np.ndarray  # (4H, D)
    W_h: np.ndarray  # (4H, H)
    b: np.ndarray  # (4H,)
    w_out: np.ndarray  # (H,)
    b_out: float
    activation: str = RELU

    @property
    def hidden(self) -> int:
        return self.W_h.shape[1]

    @property
    def input_dim(self) -> int:
        return self.W_x.shape[1]

    def copy(self) -> "LstmParams":
        return LstmParams(
            W_x=self.W_x.copy(),
            W_h=self.W_h.copy(),
            b=self.b.copy(),
            w_out=self.w_out.copy(),
            b_out=float(self.b_out),
            activation=self.activation,
        )


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray


@dataclass
class LstmGrads:
    W_x: np.ndarray
    W_h: np.ndarray
    b: np.ndarray
    w_out: np.ndarray
    b_out: float


def zero_grads(params: LstmParams) -> LstmGrads:
    return LstmGrads(
        W_x=np.zeros_like(params.W_x),
        W_h=np.zeros_like(params.W_h),
        b=np.zeros_like(params.b),
        w_out=np.zeros_like(params.w_out),
        b_out=0.0,
    )


def init_params(
    hidden: int,
    input_dim: int,
    activation: str = RELU,
    seed: int = 0,
) -> LstmParams:
    """Glorot-uniform weights; forget-gate bias starts at 1, others at 0."""
    if hidden < 1 or input_dim < 1:
        raise ValueError("hidden and input_dim must be >= 1")
    if activation not in (RELU, TANH):
        raise ValueError(f"activation must be {RELU} or {TANH}")
    rng = np.random.default_rng(seed)

    def glorot(rows: int, cols: int, fan_in: int, fan_out: int) -> np.ndarray:
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(rows, cols))

    b = np.zeros(4 * hidden)
    b[hidden : 2 * hidden] = 1.0
    return LstmParams(
        W_x=glorot(4 * hidden, input_dim, input_dim, hidden),
        W_h=glorot(4 * hidden, hidden, hidden, hidden),
        b=b,
        w_out=glorot(1, hidden, hidden, 1)[0],
        b_out=0.0,
        activation=activation,
    )


def zero_state(hidden: int) -> LstmState:
    return LstmState(h=np.zeros(hidden), c=np.zeros(hidden))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # Split by sign for numerical stability at large |z|.
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _phi(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == RELU:
        return np.maximum(z, 0.0)
    return np.tanh(z)


def lstm_step(params: LstmParams, x: np.ndarray, state: LstmState) -> LstmState:
    """One recurrence step; the new state's h is the step output h_t."""
    if x.shape != (params.input_dim,):
        raise DimensionMismatch(f"x has shape {x.shape}, expected ({params.input_dim},)")
    hidden = params.hidden
    if state.h.shape != (hidden,) or state.c.shape != (hidden,):
        raise DimensionMismatch("state does not match hidden size")
    z = params.W_x @ x + params.W_h @ state.h + params.b
    i = _sigmoid(z[:hidden])
    f = _sigmoid(z[hidden : 2 * hidden])
    g = _phi(z[2 * hidden : 3 * hidden], params.activation)
    o = _sigmoid(z[3 * hidden :])
    c = np.clip(f * state.c + i * g, -CELL_CLIP, CELL_CLIP)
    h = o * _phi(c, params.activation)
    return LstmState(h=h, c=c)


@dataclass
class ForwardCaches:
    """Everything BPTT needs, recorded timestep by timestep."""

    params_id: int
    inputs: np.ndarray  # (L, D)
    mask: np.ndarray  # (L, H), all ones when not training
    h_prev: list[np.ndarray] = field(default_factory=list)
    c_prev: list[np.ndarray] = field(default_factory=list)
    i: list[np.ndarray] = field(default_factory=list)
    f: list[np.ndarray] = field(default_factory=list)
    g: list[np.ndarray] = field(default_factory=list)
    o: list[np.ndarray] = field(default_factory=list)
    c_pre: list[np.ndarray] = field(default_factory=list)
    c: list[np.ndarray] = field(default_factory=list)
    phi_c: list[np.ndarray] = field(default_factory=list)
    h_masked: list[np.ndarray] = field(default_factory=list)
    probs: np.ndarray | None = None


def forward(
    params: LstmParams,
    sequence: np.ndarray,
    dropout_mask: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, ForwardCaches]:
    """Run the sequence from a zero state; returns per-timestep probabilities.

    The inverted-dropout mask, when given, scales h_t on the output path
    only; the recurrent path always carries the unmasked h_t.
    """
    sequence = np.asarray(sequence, dtype=np.float64)
    if sequence.ndim != 2 or sequence.shape[1] != params.input_dim:
        raise DimensionMismatch(
            f"sequence has shape {sequence.shape}, expected (L, {params.input_dim})"
        )
    steps, hidden = sequence.shape[0], params.hidden
    if dropout_mask is None:
        mask = np.ones((steps, hidden))
    else:
        mask = np.asarray(dropout_mask, dtype=np.float64)
        if mask.shape != (steps, hidden):
            raise DimensionMismatch(f"mask has shape {mask.shape}, expected ({steps}, {hidden})")

    caches = ForwardCaches(params_id=id(params), inputs=sequence, mask=mask)
    h = np.zeros(hidden)
    c = np.zeros(hidden)
    logits = np.empty(steps)
    for t in range(steps):
        z = params.W_x @ sequence[t] + params.W_h @ h + params.b
        i = _sigmoid(z[:hidden])
        f = _sigmoid(z[hidden : 2 * hidden])
        g = _phi(z[2 * hidden : 3 * hidden], params.activation)
        o = _sigmoid(z[3 * hidden :])
        c_pre = f * c + i * g
        c_new = np.clip(c_pre, -CELL_CLIP, CELL_CLIP)
        phi_c = _phi(c_new, params.activation)
        h_new = o * phi_c
        h_masked = h_new * mask[t]

        caches.h_prev.append(h)
        caches.c_prev.append(c)
        caches.i.append(i)
        caches.f.append(f)
        caches.g.append(g)
        caches.o.append(o)
        caches.c_pre.append(c_pre)
        caches.c.append(c_new)
        caches.phi_c.append(phi_c)
        caches.h_masked.append(h_masked)

        logits[t] = params.w_out @ h_masked + params.b_out
        h, c = h_new, c_new
    probs = _sigmoid(logits)
    caches.probs = probs
    return probs, caches


def bce_loss(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean binary cross-entropy with probabilities clamped away from 0 and 1."""
    p = np.clip(np.asarray(probs, dtype=np.float64), BCE_EPS, 1.0 - BCE_EPS)
    y = np.asarray(labels, dtype=np.float64)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


def backward(params: LstmParams, caches: ForwardCaches, labels: np.ndarray) -> LstmGrads:
    """Exact BPTT gradients of bce_loss over the cached forward pass.

    Cell coordinates stopped by the clip pass no gradient; the probability
    clamp likewise zeroes the gradient where it binds.
    """
    if caches.params_id != id(params) or caches.probs is None:
        raise StaleCache("caches were not produced by forward() with these params")
    steps = caches.inputs.shape[0]
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != (steps,):
        raise DimensionMismatch(f"labels have shape {y.shape}, expected ({steps},)")
    hidden = params.hidden
    relu = params.activation == RELU

    probs = caches.probs
    # d loss / d logit; zero where the BCE clamp binds.
    unclamped = (probs > BCE_EPS) & (probs < 1.0 - BCE_EPS)
    dlogit = np.where(unclamped, probs - y, 0.0) / steps

    grads = zero_grads(params)
    db_out = 0.0
    dh_next = np.zeros(hidden)
    dc_next = np.zeros(hidden)
    for t in range(steps - 1, -1, -1):
        grads.w_out += dlogit[t] * caches.h_masked[t]
        db_out += dlogit[t]
        dh = dlogit[t] * params.w_out * caches.mask[t] + dh_next

        i, f, g, o = caches.i[t], caches.f[t], caches.g[t], caches.o[t]
        phi_c = caches.phi_c[t]
        do = dh * phi_c
        if relu:
            dphi_dc = (caches.c[t] > 0).astype(np.float64)
            dphi_dg = (g > 0).astype(np.float64)
        else:
            dphi_dc = 1.0 - phi_c**2
            dphi_dg = 1.0 - g**2
        dc = dc_next + dh * o * dphi_dc
        dc_pre = dc * (np.abs(caches.c_pre[t]) <= CELL_CLIP)

        di = dc_pre * g
        df = dc_pre * caches.c_prev[t]
        dg = dc_pre * i
        dz = np.concatenate(
            [
                di * i * (1.0 - i),
                df * f * (1.0 - f),
                dg * dphi_dg,
                do * o * (1.0 - o),
            ]
        )
        grads.W_x += np.outer(dz, caches.inputs[t])
        grads.W_h += np.outer(dz, caches.h_prev[t])
        grads.b += dz
        dh_next = params.W_h.T @ dz
        dc_next = dc_pre * f
    grads.b_out = float(db_out)
    return grads


_CKPT_MAGIC = b"FLOWLSTM"
_CKPT_VERSION = 1
_ACT_CODES = {RELU: 0, TANH: 1}
_ACT_NAMES = {code: name for name, code in _ACT_CODES.items()}


def save_params(path, params: LstmParams) -> None:
    """Versioned binary checkpoint; 64-bit little-endian coefficients in
    the order W_x, W_h, b, w_out, b_out."""
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(
            struct.pack(
                "<IIIB3x",
                _CKPT_VERSION,
                params.hidden,
                params.input_dim,
                _ACT_CODES[params.activation],
            )
        )
        for name in ("W_x", "W_h", "b", "w_out"):
            fh.write(np.ascontiguousarray(getattr(params, name), dtype="<f8").tobytes())
        fh.write(struct.pack("<d", params.b_out))


def load_params(path) -> LstmParams:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _CKPT_MAGIC:
            raise ValueError(f"not a checkpoint file: {magic!r}")
        version, hidden, input_dim, act_code = struct.unpack("<IIIB3x", fh.read(16))
        if version != _CKPT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        if act_code not in _ACT_NAMES:
            raise ValueError(f"unknown activation code {act_code}")

        def read_array(shape: tuple[int, ...]) -> np.ndarray:
            count = int(np.prod(shape))
            buf = fh.read(8 * count)
            if len(buf) != 8 * count:
                raise ValueError("checkpoint truncated")
            return np.frombuffer(buf, dtype="<f8").reshape(shape).astype(np.float64)

        params = LstmParams(
            W_x=read_array((4 * hidden, input_dim)),
            W_h=read_array((4 * hidden, hidden)),
            b=read_array((4 * hidden,)),
            w_out=read_array((hidden,)),
            b_out=struct.unpack("<d", fh.read(8))[0],
            activation=_ACT_NAMES[act_code],
        )
        if fh.read(1):
            raise ValueError("trailing bytes after checkpoint payload")
    return params
