"""Bidirectional LSTM sequence classifier, implemented from scratch.

Each direction runs a conventional LSTM cell (sigmoid input/forget/output
gates, tanh cell update, no peepholes).  The classifier head takes the
concatenated final hidden states of both directions through inverted
dropout (train mode only) and a fully connected softmax layer.  Training
is plain SGD over shuffled minibatches with global-norm gradient clipping;
everything is seeded and bitwise reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .errors import DegenerateDatasetError, MalformedFileError, ShapeMismatchError

PARAM_FIELDS = ("w_fwd", "u_fwd", "b_fwd", "w_bwd", "u_bwd", "b_bwd", "fc_w", "fc_b")


@dataclass(frozen=True)
class BiLstmParams:
    """Gate rows are stacked [input, forget, cell, output], 4H total."""

    w_fwd: np.ndarray  # (4H, D)
    u_fwd: np.ndarray  # (4H, H)
    b_fwd: np.ndarray  # (4H,)
    w_bwd: np.ndarray
    u_bwd: np.ndarray
    b_bwd: np.ndarray
    fc_w: np.ndarray  # (C, 2H)
    fc_b: np.ndarray  # (C,)

    def __post_init__(self):
        arrays = {}
        for f in fields(self):
            a = np.ascontiguousarray(np.asarray(getattr(self, f.name), dtype=np.float64))
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{f.name} must be finite")
            arrays[f.name] = a
        H = arrays["u_fwd"].shape[1]
        D = arrays["w_fwd"].shape[1]
        C = arrays["fc_w"].shape[0]
        expected = {
            "w_fwd": (4 * H, D),
            "u_fwd": (4 * H, H),
            "b_fwd": (4 * H,),
            "w_bwd": (4 * H, D),
            "u_bwd": (4 * H, H),
            "b_bwd": (4 * H,),
            "fc_w": (C, 2 * H),
            "fc_b": (C,),
        }
        for name, shape in expected.items():
            if arrays[name].shape != shape:
                raise ValueError(f"{name} must have shape {shape}, got {arrays[name].shape}")
            arrays[name].flags.writeable = False
            object.__setattr__(self, name, arrays[name])

    @property
    def input_dim(self) -> int:
        return self.w_fwd.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.u_fwd.shape[1]

    @property
    def class_count(self) -> int:
        return self.fc_w.shape[0]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 25
    batch_size: int = 16
    dropout_rate: float = 0.5
    seed: int = 0
    gradient_clip_norm: float = 5.0

    def __post_init__(self):
        if not (self.learning_rate > 0):
            raise ValueError("learning_rate must be positive")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if not (self.gradient_clip_norm > 0):
            raise ValueError("gradient_clip_norm must be positive")


@dataclass(frozen=True)
class ScoreVector:
    probabilities: np.ndarray

    def __post_init__(self):
        p = np.ascontiguousarray(np.asarray(self.probabilities, dtype=np.float64))
        if p.ndim != 1:
            raise ValueError("probabilities must be 1-D")
        if p.min() < 0.0 or abs(float(p.sum()) - 1.0) > 1e-9:
            raise ValueError("probabilities must be nonnegative and sum to 1")
        p.flags.writeable = False
        object.__setattr__(self, "probabilities", p)


def init_params(D: int, H: int, C: int = 6, seed: int = 0) -> BiLstmParams:
    """Uniform(-1/sqrt(H), 1/sqrt(H)) weights; forget-gate bias 1, others 0."""
    rng = np.random.default_rng([int(seed), 101])
    bound = 1.0 / math.sqrt(H)

    def w(*shape):
        return rng.uniform(-bound, bound, size=shape)

    def bias():
        b = np.zeros(4 * H)
        b[H : 2 * H] = 1.0
        return b

    return BiLstmParams(
        w_fwd=w(4 * H, D),
        u_fwd=w(4 * H, H),
        b_fwd=bias(),
        w_bwd=w(4 * H, D),
        u_bwd=w(4 * H, H),
        b_bwd=bias(),
        fc_w=w(C, 2 * H),
        fc_b=np.zeros(C),
    )


def zeros_params(D: int, H: int, C: int = 6) -> BiLstmParams:
    return BiLstmParams(
        w_fwd=np.zeros((4 * H, D)),
        u_fwd=np.zeros((4 * H, H)),
        b_fwd=np.zeros(4 * H),
        w_bwd=np.zeros((4 * H, D)),
        u_bwd=np.zeros((4 * H, H)),
        b_bwd=np.zeros(4 * H),
        fc_w=np.zeros((C, 2 * H)),
        fc_b=np.zeros(C),
    )


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _run_direction(W, U, b, X):
    """Unroll one direction over a (n, T, D) batch; returns the step cache."""
    X = np.ascontiguousarray(X)  # one BLAS path regardless of input strides
    n, T, _ = X.shape
    H = U.shape[1]
    h = np.zeros((n, H))
    c = np.zeros((n, H))
    xw = X @ W.T  # (n, T, 4H), input contribution precomputed
    cache = {
        "x": X,
        "i": np.empty((n, T, H)), "f": np.empty((n, T, H)),
        "g": np.empty((n, T, H)), "o": np.empty((n, T, H)),
        "c_prev": np.empty((n, T, H)), "h_prev": np.empty((n, T, H)),
        "tanh_c": np.empty((n, T, H)),
    }
    for t in range(T):
        z = xw[:, t] + h @ U.T + b
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H : 2 * H])
        g = np.tanh(z[:, 2 * H : 3 * H])
        o = _sigmoid(z[:, 3 * H :])
        cache["c_prev"][:, t] = c
        cache["h_prev"][:, t] = h
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        cache["i"][:, t], cache["f"][:, t] = i, f
        cache["g"][:, t], cache["o"][:, t] = g, o
        cache["tanh_c"][:, t] = tc
    cache["h_final"] = h
    return cache


def _backprop_direction(cache, U, dh_final):
    """BPTT from the final hidden state back to the parameters."""
    X = cache["x"]
    n, T, _ = X.shape
    H = U.shape[1]
    dW = np.zeros((4 * H, X.shape[2]))
    dU = np.zeros((4 * H, H))
    db = np.zeros(4 * H)
    dh = dh_final
    dc = np.zeros((n, H))
    for t in range(T - 1, -1, -1):
        i, f = cache["i"][:, t], cache["f"][:, t]
        g, o = cache["g"][:, t], cache["o"][:, t]
        tc = cache["tanh_c"][:, t]
        c_prev = cache["c_prev"][:, t]
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc * tc)
        di = dc * g
        df = dc * c_prev
        dg = dc * i
        dz = np.concatenate(
            [
                di * i * (1.0 - i),
                df * f * (1.0 - f),
                dg * (1.0 - g * g),
                do * o * (1.0 - o),
            ],
            axis=1,
        )
        dW += dz.T @ X[:, t]
        dU += dz.T @ cache["h_prev"][:, t]
        db += dz.sum(axis=0)
        dh = dz @ U
        dc = dc * f
    return dW, dU, db


def _forward_batch(params: BiLstmParams, X: np.ndarray, mode: str, rng, dropout_rate: float):
    """Shared forward pass for a (n, T, D) batch of equal-length sequences."""
    fwd = _run_direction(params.w_fwd, params.u_fwd, params.b_fwd, X)
    bwd = _run_direction(params.w_bwd, params.u_bwd, params.b_bwd, X[:, ::-1])
    rep = np.concatenate([fwd["h_final"], bwd["h_final"]], axis=1)
    if mode == "train" and dropout_rate > 0.0:
        mask = (rng.random(rep.shape) >= dropout_rate) / (1.0 - dropout_rate)
    else:
        mask = np.ones_like(rep)
    dropped = rep * mask
    logits = dropped @ params.fc_w.T + params.fc_b
    probs = _softmax_rows(logits)
    return {
        "fwd": fwd,
        "bwd": bwd,
        "representation": rep,
        "mask": mask,
        "dropped": dropped,
        "logits": logits,
        "probs": probs,
    }


def _check_sequence(params: BiLstmParams, seq: np.ndarray) -> np.ndarray:
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 2 or seq.shape[1] != params.input_dim:
        raise ShapeMismatchError(
            f"sequence must be (T, {params.input_dim}), got {seq.shape}"
        )
    if seq.shape[0] < 1:
        raise ShapeMismatchError("sequence must have at least one frame")
    return seq


def forward(
    params: BiLstmParams,
    sequence: np.ndarray,
    mode: str = "infer",
    rng: np.random.Generator | None = None,
    dropout_rate: float = 0.5,
):
    """Score one sequence; returns (ScoreVector, cache)."""
    if mode not in ("train", "infer"):
        raise ValueError(f"unknown mode {mode!r}")
    seq = _check_sequence(params, sequence)
    if mode == "train" and dropout_rate > 0.0 and rng is None:
        raise ValueError("train mode with dropout needs an rng")
    cache = _forward_batch(params, seq[None], mode, rng, dropout_rate)
    return ScoreVector(cache["probs"][0]), cache


def predict_scores(params: BiLstmParams, sequence: np.ndarray) -> ScoreVector:
    score, _ = forward(params, sequence, mode="infer")
    return score


def loss_and_gradients(params: BiLstmParams, batch, cfg: TrainConfig, rng) -> tuple[float, dict]:
    """Mean cross-entropy and clipped analytic gradients over a batch.

    Sequences are grouped by length; groups are processed in ascending-T
    order with the dropout mask drawn once for the whole batch, so the
    result does not depend on input ordering beyond the batch content.
    """
    if not batch:
        raise ValueError("batch must be nonempty")
    seqs = [_check_sequence(params, s) for s, _ in batch]
    labels = [int(y) for _, y in batch]
    if any(not (0 <= y < params.class_count) for y in labels):
        raise ShapeMismatchError("label outside class range")
    n = len(batch)
    H2 = 2 * params.hidden_dim
    if cfg.dropout_rate > 0.0:
        full_mask = (rng.random((n, H2)) >= cfg.dropout_rate) / (1.0 - cfg.dropout_rate)
    else:
        full_mask = np.ones((n, H2))

    grads = {name: np.zeros_like(getattr(params, name)) for name in PARAM_FIELDS}
    loss = 0.0
    lengths = sorted({s.shape[0] for s in seqs})
    for T in lengths:
        pos = [k for k in range(n) if seqs[k].shape[0] == T]
        X = np.stack([seqs[k] for k in pos])
        y = np.array([labels[k] for k in pos])
        mask = full_mask[pos]
        fwd = _run_direction(params.w_fwd, params.u_fwd, params.b_fwd, X)
        bwd = _run_direction(params.w_bwd, params.u_bwd, params.b_bwd, X[:, ::-1])
        rep = np.concatenate([fwd["h_final"], bwd["h_final"]], axis=1)
        dropped = rep * mask
        logits = dropped @ params.fc_w.T + params.fc_b
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        loss += -log_probs[np.arange(len(pos)), y].sum() / n

        dlogits = np.exp(log_probs)
        dlogits[np.arange(len(pos)), y] -= 1.0
        dlogits /= n
        grads["fc_w"] += dlogits.T @ dropped
        grads["fc_b"] += dlogits.sum(axis=0)
        drep = (dlogits @ params.fc_w) * mask
        H = params.hidden_dim
        dW, dU, db = _backprop_direction(fwd, params.u_fwd, drep[:, :H])
        grads["w_fwd"] += dW
        grads["u_fwd"] += dU
        grads["b_fwd"] += db
        dW, dU, db = _backprop_direction(bwd, params.u_bwd, drep[:, H:])
        grads["w_bwd"] += dW
        grads["u_bwd"] += dU
        grads["b_bwd"] += db

    gnorm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if gnorm > cfg.gradient_clip_norm:
        scale = cfg.gradient_clip_norm / gnorm
        grads = {k: g * scale for k, g in grads.items()}
    return float(loss), grads


def train(
    dataset,
    cfg: TrainConfig,
    hidden_dim: int = 32,
    class_count: int = 6,
    history: list | None = None,
) -> BiLstmParams:
    """SGD over shuffled minibatches; returns the final parameters.

    `history`, when given, receives one (epoch, mean loss) pair per epoch.
    """
    data = [(np.asarray(s, dtype=np.float64), int(y)) for s, y in dataset]
    if len({y for _, y in data}) < 2:
        raise DegenerateDatasetError("training needs at least 2 classes")
    widths = {s.shape[1] for s, _ in data}
    if len(widths) != 1:
        raise ShapeMismatchError(f"mixed feature widths {widths}")
    params = init_params(widths.pop(), hidden_dim, class_count, seed=cfg.seed)
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, 7, epoch]).permutation(len(data))
        losses = []
        for step, start in enumerate(range(0, len(data), cfg.batch_size)):
            batch = [data[k] for k in order[start : start + cfg.batch_size]]
            step_rng = np.random.default_rng([cfg.seed, 11, epoch, step])
            loss, grads = loss_and_gradients(params, batch, cfg, step_rng)
            losses.append(loss * len(batch))
            params = BiLstmParams(
                **{
                    name: getattr(params, name) - cfg.learning_rate * grads[name]
                    for name in PARAM_FIELDS
                }
            )
        if history is not None:
            history.append((epoch, math.fsum(losses) / len(data)))
    return params


# --------------------------------------------------------------------------
# checkpoint and log serialization

def write_checkpoint(params: BiLstmParams, path: str | Path) -> None:
    """Flat CSV: one line per tensor, `name,rows,cols,v0,v1,...` (cols 0 for
    vectors)."""
    with open(path, "w", encoding="utf-8") as fh:
        for name in PARAM_FIELDS:
            a = getattr(params, name)
            rows, cols = (a.shape[0], a.shape[1]) if a.ndim == 2 else (a.shape[0], 0)
            flat = ",".join(repr(float(v)) for v in a.ravel())
            fh.write(f"{name},{rows},{cols},{flat}\n")


def read_checkpoint(path: str | Path) -> BiLstmParams:
    path = Path(path)
    tensors = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split(",")
            if len(parts) < 4:
                raise MalformedFileError(f"{path}:{lineno}: short tensor line")
            name, rows, cols = parts[0], int(parts[1]), int(parts[2])
            values = np.array([float(v) for v in parts[3:]])
            shape = (rows, cols) if cols else (rows,)
            if values.size != rows * max(cols, 1):
                raise MalformedFileError(f"{path}:{lineno}: value count mismatch")
            tensors[name] = values.reshape(shape)
    missing = set(PARAM_FIELDS) - tensors.keys()
    if missing:
        raise MalformedFileError(f"{path}: missing tensors {sorted(missing)}")
    return BiLstmParams(**{name: tensors[name] for name in PARAM_FIELDS})


def write_training_log(history, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,loss\n")
        for epoch, loss in history:
            fh.write(f"{int(epoch)},{repr(float(loss))}\n")
