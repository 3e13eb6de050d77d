"""Minimal LSTM binary classifier over frozen word embeddings.

One recurrent layer (forget/input/output gates with logistic activations,
tanh candidate and cell readout), a logistic head on the final hidden state
(mean pooling behind a flag), mean binary cross-entropy minimized with Adam,
and a central-finite-difference check certifying the analytic backward pass.
Everything runs in double precision.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .corpus import EncodedSequence
from .textprep import EmbeddingTable

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# b_out magnitude for the constant-output shortcut when training data holds one class
_CONSTANT_LOGIT = 30.0

_MATRIX_FIELDS = ("W_f", "W_i", "W_o", "W_c", "U_f", "U_i", "U_o", "U_c")
_VECTOR_FIELDS = ("b_f", "b_i", "b_o", "b_c", "w_out")
PARAM_FIELDS = _MATRIX_FIELDS + _VECTOR_FIELDS + ("b_out",)

_CHECKPOINT_MAGIC = b"PTLSTM01"


class LstmState(NamedTuple):
    c: np.ndarray
    h: np.ndarray


@dataclass(eq=False)
class LstmParams:
    """Gate weights (input W, recurrent U, bias b per gate) plus the logistic head."""

    W_f: np.ndarray
    W_i: np.ndarray
    W_o: np.ndarray
    W_c: np.ndarray
    U_f: np.ndarray
    U_i: np.ndarray
    U_o: np.ndarray
    U_c: np.ndarray
    b_f: np.ndarray
    b_i: np.ndarray
    b_o: np.ndarray
    b_c: np.ndarray
    w_out: np.ndarray
    b_out: float

    def __post_init__(self):
        h, d = self.W_f.shape
        for name in _MATRIX_FIELDS:
            mat = np.asarray(getattr(self, name), dtype=np.float64)
            want = (h, d) if name.startswith("W") else (h, h)
            if mat.shape != want:
                raise ValueError(f"{name} must have shape {want}, got {mat.shape}")
            setattr(self, name, mat)
        for name in _VECTOR_FIELDS:
            vec = np.asarray(getattr(self, name), dtype=np.float64)
            if vec.shape != (h,):
                raise ValueError(f"{name} must have shape ({h},)")
            setattr(self, name, vec)
        self.b_out = float(self.b_out)
        for name in PARAM_FIELDS[:-1]:
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} holds non-finite values")
        if not np.isfinite(self.b_out):
            raise ValueError("b_out is non-finite")

    @property
    def hidden_size(self) -> int:
        return int(self.W_f.shape[0])

    @property
    def input_dim(self) -> int:
        return int(self.W_f.shape[1])


def init_params(hidden_size: int, input_dim: int, seed: int = 0) -> LstmParams:
    """Uniform init scaled by 1/sqrt(fan-in); the forget-gate bias starts at 1."""
    if hidden_size < 1 or input_dim < 1:
        raise ValueError("hidden_size and input_dim must be >= 1")
    rng = np.random.default_rng(seed & 0xFFFFFFFFFFFFFFFF)
    r_in = 1.0 / np.sqrt(input_dim)
    r_rec = 1.0 / np.sqrt(hidden_size)
    mats = {}
    for name in _MATRIX_FIELDS:
        if name.startswith("W"):
            mats[name] = rng.uniform(-r_in, r_in, size=(hidden_size, input_dim))
        else:
            mats[name] = rng.uniform(-r_rec, r_rec, size=(hidden_size, hidden_size))
    return LstmParams(
        **mats,
        b_f=np.ones(hidden_size),
        b_i=np.zeros(hidden_size),
        b_o=np.zeros(hidden_size),
        b_c=np.zeros(hidden_size),
        w_out=rng.uniform(-r_rec, r_rec, size=hidden_size),
        b_out=0.0,
    )


def zero_state(hidden_size: int) -> LstmState:
    return LstmState(c=np.zeros(hidden_size), h=np.zeros(hidden_size))


def flatten(params: LstmParams) -> np.ndarray:
    parts = [np.asarray(getattr(params, name), dtype=np.float64).ravel() for name in PARAM_FIELDS[:-1]]
    parts.append(np.array([params.b_out]))
    return np.concatenate(parts)


def param_slices(hidden_size: int, input_dim: int) -> dict[str, slice]:
    """Flat-vector slice of every parameter, in flatten() order."""
    out: dict[str, slice] = {}
    offset = 0
    for name in PARAM_FIELDS:
        if name in _MATRIX_FIELDS:
            size = hidden_size * (input_dim if name.startswith("W") else hidden_size)
        elif name in _VECTOR_FIELDS:
            size = hidden_size
        else:
            size = 1
        out[name] = slice(offset, offset + size)
        offset += size
    return out


def n_params(hidden_size: int, input_dim: int) -> int:
    return 4 * (hidden_size * input_dim + hidden_size * hidden_size + hidden_size) + hidden_size + 1


def from_flat(flat: np.ndarray, hidden_size: int, input_dim: int) -> LstmParams:
    if flat.size != n_params(hidden_size, input_dim):
        raise ValueError("flat vector length does not match (hidden_size, input_dim)")
    slices = param_slices(hidden_size, input_dim)
    kwargs = {}
    for name, sl in slices.items():
        chunk = flat[sl]
        if name in _MATRIX_FIELDS:
            shape = (hidden_size, input_dim) if name.startswith("W") else (hidden_size, hidden_size)
            kwargs[name] = chunk.reshape(shape)
        elif name in _VECTOR_FIELDS:
            kwargs[name] = chunk
        else:
            kwargs[name] = float(chunk[0])
    return LstmParams(**kwargs)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softplus(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def cell_step(params: LstmParams, x_t: np.ndarray, prev: LstmState) -> LstmState:
    """One recurrence step: gate the previous cell, blend in the candidate, emit h."""
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_t.shape != (params.input_dim,):
        raise ValueError(f"x_t must have shape ({params.input_dim},)")
    if prev.c.shape != (params.hidden_size,) or prev.h.shape != (params.hidden_size,):
        raise ValueError("previous state shape mismatch")
    f = _sigmoid(params.W_f @ x_t + params.U_f @ prev.h + params.b_f)
    i = _sigmoid(params.W_i @ x_t + params.U_i @ prev.h + params.b_i)
    o = _sigmoid(params.W_o @ x_t + params.U_o @ prev.h + params.b_o)
    g = np.tanh(params.W_c @ x_t + params.U_c @ prev.h + params.b_c)
    for name, arr in (("forget gate", f), ("input gate", i), ("output gate", o), ("candidate", g)):
        if not np.all(np.isfinite(arr)):
            raise FloatingPointError(f"non-finite activation in {name}")
    c = f * prev.c + i * g
    if not np.all(np.isfinite(c)):
        raise FloatingPointError("non-finite activation in memory cell")
    h = o * np.tanh(c)
    if not np.all(np.isfinite(h)):
        raise FloatingPointError("non-finite activation in hidden output")
    return LstmState(c=c, h=h)


def forward(
    params: LstmParams,
    seq: EncodedSequence,
    table: EmbeddingTable,
    pool: str = "final",
) -> float:
    """Probability for one sequence: iterate the cell over the true length only."""
    if pool not in ("final", "mean"):
        raise ValueError("pool must be 'final' or 'mean'")
    state = zero_state(params.hidden_size)
    acc = np.zeros(params.hidden_size)
    for t in range(seq.length):
        state = cell_step(params, table.vectors[seq.ids[t]], state)
        acc += state.h
    head = acc / seq.length if (pool == "mean" and seq.length) else state.h
    z = float(params.w_out @ head + params.b_out)
    return float(_sigmoid(np.array([z]))[0])


def _forward_pass(params: LstmParams, E: np.ndarray, lengths: np.ndarray, keep_cache: bool):
    """Masked batch forward; rows sit frozen once t reaches their length."""
    B, T, _ = E.shape
    hsize = params.hidden_size
    h = np.zeros((B, hsize))
    c = np.zeros((B, hsize))
    h_sum = np.zeros((B, hsize))
    cache = []
    for t in range(T):
        active = (t < lengths).astype(np.float64)[:, None]
        if not active.any():
            break
        x = E[:, t, :]
        h_prev, c_prev = h, c
        f = _sigmoid(x @ params.W_f.T + h_prev @ params.U_f.T + params.b_f)
        i = _sigmoid(x @ params.W_i.T + h_prev @ params.U_i.T + params.b_i)
        o = _sigmoid(x @ params.W_o.T + h_prev @ params.U_o.T + params.b_o)
        g = np.tanh(x @ params.W_c.T + h_prev @ params.U_c.T + params.b_c)
        c_new = f * c_prev + i * g
        tanh_c = np.tanh(c_new)
        h_new = o * tanh_c
        c = active * c_new + (1.0 - active) * c_prev
        h = active * h_new + (1.0 - active) * h_prev
        h_sum += active * h_new
        if keep_cache:
            cache.append((x, h_prev, c_prev, f, i, o, g, tanh_c, active))
    return h, c, h_sum, cache


def _head(params: LstmParams, h_final: np.ndarray, h_sum: np.ndarray, lengths: np.ndarray, pool: str):
    if pool == "mean":
        denom = np.maximum(lengths, 1).astype(np.float64)[:, None]
        return h_sum / denom
    return h_final


def probabilities(
    params: LstmParams,
    ids: np.ndarray,
    lengths: np.ndarray,
    table: EmbeddingTable,
    pool: str = "final",
) -> np.ndarray:
    """Batched inference; equivalent to forward() per row."""
    E = table.vectors[ids]
    h_final, _, h_sum, _ = _forward_pass(params, E, lengths, keep_cache=False)
    head = _head(params, h_final, h_sum, lengths, pool)
    return _sigmoid(head @ params.w_out + params.b_out)


def loss_and_gradients(
    params: LstmParams,
    E: np.ndarray,
    lengths: np.ndarray,
    y: np.ndarray,
    pool: str = "final",
) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy over the batch and its gradient, flattened."""
    B = E.shape[0]
    h_final, _, h_sum, cache = _forward_pass(params, E, lengths, keep_cache=True)
    head = _head(params, h_final, h_sum, lengths, pool)
    z = head @ params.w_out + params.b_out
    p = _sigmoid(z)
    loss = float(np.mean(_softplus(z) - y * z))

    dz = (p - y) / B
    grads = {name: np.zeros_like(getattr(params, name)) for name in PARAM_FIELDS[:-1]}
    grads_b_out = float(dz.sum())
    grads["w_out"] = head.T @ dz
    dhead = dz[:, None] * params.w_out[None, :]

    if pool == "mean":
        denom = np.maximum(lengths, 1).astype(np.float64)[:, None]
        d_step_h = dhead / denom
        dh = np.zeros_like(h_final)
    else:
        d_step_h = None
        dh = dhead.copy()
    dc = np.zeros_like(h_final)

    for x, h_prev, c_prev, f, i, o, g, tanh_c, active in reversed(cache):
        if d_step_h is not None:
            dh = dh + active * d_step_h
        dh_new = dh * active
        dc_new = dc * active + dh_new * o * (1.0 - tanh_c**2)
        do = dh_new * tanh_c
        da_o = do * o * (1.0 - o)
        df = dc_new * c_prev
        da_f = df * f * (1.0 - f)
        di = dc_new * g
        da_i = di * i * (1.0 - i)
        dg = dc_new * i
        da_c = dg * (1.0 - g**2)
        grads["W_f"] += da_f.T @ x
        grads["W_i"] += da_i.T @ x
        grads["W_o"] += da_o.T @ x
        grads["W_c"] += da_c.T @ x
        grads["U_f"] += da_f.T @ h_prev
        grads["U_i"] += da_i.T @ h_prev
        grads["U_o"] += da_o.T @ h_prev
        grads["U_c"] += da_c.T @ h_prev
        grads["b_f"] += da_f.sum(axis=0)
        grads["b_i"] += da_i.sum(axis=0)
        grads["b_o"] += da_o.sum(axis=0)
        grads["b_c"] += da_c.sum(axis=0)
        dh_gates = da_f @ params.U_f + da_i @ params.U_i + da_o @ params.U_o + da_c @ params.U_c
        dh = dh * (1.0 - active) + dh_gates
        dc = dc * (1.0 - active) + dc_new * f

    flat = np.concatenate(
        [grads[name].ravel() for name in PARAM_FIELDS[:-1]] + [np.array([grads_b_out])]
    )
    return loss, flat


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and batching settings for one binary model."""

    hidden_size: int
    batch_size: int
    epochs: int
    learning_rate: float
    max_sequence_length: int
    seed: int = 0
    pool: str = "final"

    def __post_init__(self):
        for name in ("hidden_size", "batch_size", "epochs", "max_sequence_length"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not (self.learning_rate > 0 and np.isfinite(self.learning_rate)):
            raise ValueError("learning_rate must be positive and finite")
        if self.pool not in ("final", "mean"):
            raise ValueError("pool must be 'final' or 'mean'")


def constant_params(hidden_size: int, input_dim: int, positive: bool) -> LstmParams:
    """Zero weights with a saturated head bias: emits ~1 or ~0 for every input."""
    flat = np.zeros(n_params(hidden_size, input_dim))
    params = from_flat(flat, hidden_size, input_dim)
    params.b_out = _CONSTANT_LOGIT if positive else -_CONSTANT_LOGIT
    return params


def train(
    data: Sequence[tuple[EncodedSequence, int]],
    cfg: TrainConfig,
    table: EmbeddingTable,
) -> LstmParams:
    """Minimize mean binary cross-entropy with Adam over seeded shuffled mini-batches.

    Embeddings stay frozen.  Single-class data short-circuits to a constant
    model, mirroring the base-learner contract.
    """
    if not data:
        raise ValueError("empty training data")
    y = np.array([int(label) for _, label in data], dtype=np.float64)
    if set(np.unique(y)) - {0.0, 1.0}:
        raise ValueError("labels must be binary")
    if np.all(y == y[0]):
        return constant_params(cfg.hidden_size, table.dim, positive=bool(y[0]))
    ids = np.stack([seq.ids for seq, _ in data])
    lengths = np.array([seq.length for seq, _ in data], dtype=np.int64)
    if lengths.max() > cfg.max_sequence_length:
        raise ValueError("sequence longer than max_sequence_length")
    if ids.size and ids.max() >= table.vectors.shape[0]:
        raise ValueError("token id outside the embedding table")

    params = init_params(cfg.hidden_size, table.dim, cfg.seed)
    flat = flatten(params)
    m = np.zeros_like(flat)
    v = np.zeros_like(flat)
    step = 0
    rng = np.random.default_rng(cfg.seed & 0xFFFFFFFFFFFFFFFF)
    n = len(data)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            E = table.vectors[ids[batch]]
            params = from_flat(flat, cfg.hidden_size, table.dim)
            loss, grad = loss_and_gradients(params, E, lengths[batch], y[batch], cfg.pool)
            if not np.isfinite(loss):
                raise RuntimeError(f"training diverged (non-finite loss) at epoch {epoch}")
            step += 1
            m = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * grad
            v = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * grad**2
            m_hat = m / (1.0 - ADAM_BETA1**step)
            v_hat = v / (1.0 - ADAM_BETA2**step)
            flat = flat - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return from_flat(flat, cfg.hidden_size, table.dim)


def gradient_check(
    params: LstmParams,
    batch: Sequence[tuple[EncodedSequence, int]],
    table: EmbeddingTable,
    step: float = 1e-6,
    pool: str = "final",
    zero_grad_of: str | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``zero_grad_of`` deliberately blanks one analytic gradient block before
    the comparison, for fault-injection tests of the check itself.
    """
    if not 1 <= len(batch) <= 4:
        raise ValueError("gradient check batches hold 1..4 sequences")
    if any(seq.length > 6 for seq, _ in batch):
        raise ValueError("gradient check sequences must be <= 6 steps")
    ids = np.stack([seq.ids for seq, _ in batch])
    lengths = np.array([seq.length for seq, _ in batch], dtype=np.int64)
    y = np.array([float(label) for _, label in batch])
    E = table.vectors[ids]

    _, analytic = loss_and_gradients(params, E, lengths, y, pool)
    if zero_grad_of is not None:
        slices = param_slices(params.hidden_size, params.input_dim)
        if zero_grad_of not in slices:
            raise ValueError(f"unknown parameter {zero_grad_of!r}")
        analytic = analytic.copy()
        analytic[slices[zero_grad_of]] = 0.0

    flat = flatten(params)
    numeric = np.zeros_like(flat)
    for j in range(flat.size):
        bumped = flat.copy()
        bumped[j] = flat[j] + step
        plus = _loss_only(bumped, params, E, lengths, y, pool)
        bumped[j] = flat[j] - step
        minus = _loss_only(bumped, params, E, lengths, y, pool)
        numeric[j] = (plus - minus) / (2.0 * step)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


def _loss_only(flat, like: LstmParams, E, lengths, y, pool) -> float:
    params = from_flat(flat, like.hidden_size, like.input_dim)
    h_final, _, h_sum, _ = _forward_pass(params, E, lengths, keep_cache=False)
    head = _head(params, h_final, h_sum, lengths, pool)
    z = head @ params.w_out + params.b_out
    return float(np.mean(_softplus(z) - y * z))


def save_params(params: LstmParams, path: str | Path) -> None:
    """Flat IEEE-754 doubles after an 8-byte magic and an int64 (h, d) shape header."""
    flat = flatten(params)
    with Path(path).open("wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        fh.write(np.array([params.hidden_size, params.input_dim], dtype="<i8").tobytes())
        fh.write(flat.astype("<f8").tobytes())


def load_params(path: str | Path) -> LstmParams:
    raw = Path(path).read_bytes()
    if raw[:8] != _CHECKPOINT_MAGIC:
        raise ValueError("not an LSTM checkpoint (bad magic)")
    h, d = (int(x) for x in np.frombuffer(raw[8:24], dtype="<i8"))
    flat = np.frombuffer(raw[24:], dtype="<f8")
    if flat.size != n_params(h, d):
        raise ValueError("checkpoint payload length does not match its shape header")
    return from_flat(flat.copy(), h, d)
