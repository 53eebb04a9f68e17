"""
Elman ReLU recurrent network:

    h_0 = ReLU(M0)
    h_t = ReLU(W h_{t-1} + A e_{z_t})
    f_t = B . h_t

with binary cross-entropy over the supervised positions d..T and exact backpropagation
through time. Everything is batched over rows of z; a single sequence is a batch of one.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from .errors import SubtaskLabError
from .fileio import atomic_write_bytes
from .numerics import DTYPE, Matrix, NumericsError, SeededRng, checksum, gauss_init, matvec, relu


log = logging.getLogger(__name__)


Scope = Literal["W_ONLY", "ALL_WEIGHTS"]

_CKPT_MAGIC = b"SLRNN\x00\x00\x01"
_CKPT_HEADER = struct.Struct("<IqQ")  # m, seed, step


class CheckpointError(SubtaskLabError, ValueError):
    pass


@dataclass(frozen=True)
class RnnParams:
    W: Matrix  # m×m, trainable
    A: Matrix  # m×2
    B: np.ndarray  # m
    M0: np.ndarray  # m

    def __post_init__(self) -> None:
        m = self.W.shape[0]
        if self.W.shape != (m, m) or self.A.shape != (m, 2) or self.B.shape != (m,) or self.M0.shape != (m,):
            raise NumericsError(
                f"inconsistent shapes: W{self.W.shape} A{self.A.shape} B{self.B.shape} M0{self.M0.shape}"
            )

    @property
    def m(self) -> int:
        return int(self.W.shape[0])

    def frozen_checksum(self) -> str:
        return checksum(self.A, self.B, self.M0)

    def copy(self) -> "RnnParams":
        return RnnParams(W=self.W.copy(), A=self.A.copy(), B=self.B.copy(), M0=self.M0.copy())


@dataclass(frozen=True)
class Grads:
    W: Matrix
    A: Matrix
    B: np.ndarray
    M0: np.ndarray
    loss: float

    def arrays(self) -> tuple[np.ndarray, ...]:
        return (self.W, self.A, self.B, self.M0)


@dataclass(frozen=True)
class BatchTrace:
    """h: (n, T+1, m) with h[:, 0] = h_0; pre: (n, T, m); logits: (n, T). Column t-1 is position t."""

    h: np.ndarray
    pre: np.ndarray
    logits: np.ndarray


@dataclass(frozen=True)
class ForwardTrace:
    h: np.ndarray  # (T+1, m)
    pre: np.ndarray  # (T, m)
    logits: np.ndarray  # (T,)


def init_params(m: int, rng: SeededRng) -> RnnParams:
    """W, A, M0 ~ N(0, 2/m) and B ~ N(0, 1/m), drawn in that order."""
    if m < 1:
        raise NumericsError(f"width m must be >= 1, got {m}")
    W = gauss_init(m, m, 2.0 / m, rng)
    A = gauss_init(m, 2, 2.0 / m, rng)
    M0 = gauss_init(m, 1, 2.0 / m, rng)[:, 0].copy()
    B = gauss_init(m, 1, 1.0 / m, rng)[:, 0].copy()
    return RnnParams(W=W, A=A, B=B, M0=M0)


def _as_z(z: np.ndarray | Sequence[int]) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(z, dtype=np.intp))
    if arr.shape[1] == 0:
        raise NumericsError("empty sequence")
    if np.any((arr != 0) & (arr != 1)):
        raise NumericsError("sequence entries must be 0 or 1")
    return arr


def forward_batch(p: RnnParams, z: np.ndarray) -> BatchTrace:
    z = _as_z(z)
    n, T = z.shape
    h = np.empty((n, T + 1, p.m), dtype=DTYPE)
    pre = np.empty((n, T, p.m), dtype=DTYPE)
    h[:, 0] = relu(p.M0)
    At = p.A.T  # row z_t is A e_{z_t}
    for t in range(T):
        a = matvec(p.W, h[:, t]) + At[z[:, t]]
        pre[:, t] = a
        h[:, t + 1] = relu(a)
    logits = h[:, 1:] @ p.B
    return BatchTrace(h=h, pre=pre, logits=logits)


def forward(p: RnnParams, z: Sequence[int] | np.ndarray) -> ForwardTrace:
    tr = forward_batch(p, np.asarray(z)[None, :] if np.ndim(z) == 1 else z)
    return ForwardTrace(h=tr.h[0], pre=tr.pre[0], logits=tr.logits[0])


def _bce(targets: np.ndarray, logits: np.ndarray) -> np.ndarray:
    # log(1 + exp(-y s)), stable for large |s|
    return np.logaddexp(0.0, -targets * logits)


def loss(targets: Sequence[float] | np.ndarray, logits: Sequence[float] | np.ndarray) -> float:
    """Mean of log(1 + exp(-y_t s_t)) over the K = T - d + 1 supervised positions."""
    y = np.asarray(targets, dtype=DTYPE)
    s = np.asarray(logits, dtype=DTYPE)
    if y.shape != s.shape:
        raise NumericsError(f"length mismatch: {y.shape} targets vs {s.shape} logits")
    if y.size == 0:
        raise NumericsError("no supervised positions")
    return float(np.mean(_bce(y, s)))


def supervised_logits(trace: BatchTrace, num_targets: int) -> np.ndarray:
    return trace.logits[:, trace.logits.shape[1] - num_targets :]


def batch_loss(p: RnnParams, z: np.ndarray, targets: np.ndarray) -> float:
    targets = np.atleast_2d(targets)
    tr = forward_batch(p, z)
    return float(np.mean(_bce(targets, supervised_logits(tr, targets.shape[1]))))


def gradients(p: RnnParams, z: np.ndarray, targets: np.ndarray, *, scope: Scope = "W_ONLY") -> Grads:
    """
    Gradient of the batch-mean loss by reverse accumulation through time.

    ReLU'(0) is taken as 0. In W_ONLY scope the A/B/M0 entries of the result are zeros.
    """
    z = _as_z(z)
    targets = np.atleast_2d(np.asarray(targets, dtype=DTYPE))
    n, T = z.shape
    K = targets.shape[1]
    if targets.shape[0] != n or not 1 <= K <= T:
        raise NumericsError(f"targets shape {targets.shape} does not fit sequences {z.shape}")

    tr = forward_batch(p, z)
    s = supervised_logits(tr, K)
    loss_value = float(np.mean(_bce(targets, s)))

    # d/ds log(1 + e^{-ys}) = -y sigmoid(-ys)
    dlogits = np.zeros((n, T), dtype=DTYPE)
    dlogits[:, T - K :] = -targets * np.exp(-np.logaddexp(0.0, targets * s)) / (K * n)

    all_weights = scope == "ALL_WEIGHTS"
    dW = np.zeros_like(p.W)
    dA = np.zeros_like(p.A)
    dB = np.zeros_like(p.B)
    carry = np.zeros((n, p.m), dtype=DTYPE)
    for t in range(T - 1, -1, -1):
        dh = dlogits[:, t, None] * p.B + carry
        da = dh * (tr.pre[:, t] > 0.0)
        dW += da.T @ tr.h[:, t]
        if all_weights:
            onehot = np.zeros((n, 2), dtype=DTYPE)
            onehot[np.arange(n), z[:, t]] = 1.0
            dA += da.T @ onehot
            dB += dlogits[:, t] @ tr.h[:, t + 1]
        carry = da @ p.W
    dM0 = (carry * (p.M0 > 0.0)).sum(axis=0) if all_weights else np.zeros_like(p.M0)

    return Grads(W=dW, A=dA, B=dB, M0=dM0, loss=loss_value)


def grad_W(p: RnnParams, z: Sequence[int] | np.ndarray, targets: Sequence[float] | np.ndarray) -> Matrix:
    return gradients(p, np.asarray(z)[None, :], np.asarray(targets, dtype=DTYPE)[None, :]).W


def predict_bit(logit: float) -> int:
    """sign with sign(0) := +1, mapped to a bit."""
    return 1 if logit >= 0 else 0


def predict_bits(logits: np.ndarray) -> np.ndarray:
    return (np.asarray(logits) >= 0).astype(np.int8)


def apply_update(p: RnnParams, g: Grads, eta: float, *, scope: Scope = "W_ONLY") -> RnnParams:
    W = p.W - eta * g.W
    if scope == "W_ONLY":
        return replace(p, W=W)
    return RnnParams(W=W, A=p.A - eta * g.A, B=p.B - eta * g.B, M0=p.M0 - eta * g.M0)


@dataclass(frozen=True)
class Checkpoint:
    params: RnnParams
    seed: int
    step: int


def save_checkpoint(path: str | Path, params: RnnParams, *, seed: int, step: int) -> None:
    """Header, then W, A, B, M0 as little-endian float64 in row-major order."""
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in (params.W, params.A, params.B, params.M0))
    atomic_write_bytes(path, _CKPT_MAGIC + _CKPT_HEADER.pack(params.m, seed, step) + body)


def load_checkpoint(path: str | Path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if not raw.startswith(_CKPT_MAGIC):
        raise CheckpointError(f"{path}: not an RNN checkpoint")
    off = len(_CKPT_MAGIC)
    m, seed, step = _CKPT_HEADER.unpack_from(raw, off)
    off += _CKPT_HEADER.size
    expected = 8 * (m * m + 2 * m + m + m)
    if len(raw) - off != expected:
        raise CheckpointError(f"{path}: expected {expected} payload bytes for m={m}, got {len(raw) - off}")
    flat = np.frombuffer(raw, dtype="<f8", offset=off).astype(DTYPE)
    W = flat[: m * m].reshape(m, m)
    A = flat[m * m : m * m + 2 * m].reshape(m, 2)
    B = flat[m * m + 2 * m : m * m + 3 * m]
    M0 = flat[m * m + 3 * m :]
    return Checkpoint(params=RnnParams(W=W.copy(), A=A.copy(), B=B.copy(), M0=M0.copy()), seed=seed, step=step)
