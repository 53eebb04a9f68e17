"""
Teacher-forced and autoregressive evaluation, and the per-sample union-bound check.

The union bound is exact per sample: if every teacher-forced position of a sample is right,
greedy decoding reproduces the ground-truth sequence, so an autoregressive miss implies a
teacher-forced miss on the same sample. `lemma1_check` asserts exactly that.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from .errors import SubtaskLabError
from .parity import SequenceBatch, labels_to_bits
from .numerics import matvec, relu
from .rnn import RnnParams, batch_loss, forward_batch, predict_bits, supervised_logits

if TYPE_CHECKING:
    from .training import TrainLog


log = logging.getLogger(__name__)


class VerificationError(SubtaskLabError, AssertionError):
    pass


class EvaluationError(SubtaskLabError, ValueError):
    pass


@dataclass(frozen=True)
class EvalReport:
    samples: int
    tf_losses: tuple[float, ...]  # positions d..T
    ar_final_loss: float
    union_bound_slack: float
    accuracy: float
    bce: float

    def as_record(self) -> dict[str, object]:
        return {
            "samples": self.samples,
            "tf_losses": list(self.tf_losses),
            "ar_final_loss": self.ar_final_loss,
            "union_bound_slack": self.union_bound_slack,
            "accuracy": self.accuracy,
            "bce": self.bce,
        }


def _require_nonempty(batch: SequenceBatch) -> None:
    if batch.size == 0:
        raise EvaluationError("evaluation set is empty")


def teacher_forced_errors(p: RnnParams, batch: SequenceBatch) -> np.ndarray:
    """(n, K) booleans: prediction at position t mismatches the bit-encoded target."""
    _require_nonempty(batch)
    K = batch.targets.shape[1]
    preds = predict_bits(supervised_logits(forward_batch(p, batch.z), K))
    return preds != labels_to_bits(batch.targets)


def teacher_forced_eval(p: RnnParams, batch: SequenceBatch) -> np.ndarray:
    return teacher_forced_errors(p, batch).mean(axis=0)


@dataclass(frozen=True)
class Decoded:
    z: np.ndarray  # (n, T) bits actually fed to the model
    final: np.ndarray  # (n,) labels predicted at position T


def greedy_decode_batch(p: RnnParams, x: np.ndarray, T: int) -> Decoded:
    x = np.atleast_2d(np.asarray(x, dtype=np.int8))
    n, d = x.shape
    if T < d:
        raise EvaluationError(f"T={T} is shorter than the input length d={d}")
    z = np.empty((n, T), dtype=np.int8)
    z[:, :d] = x
    At = p.A.T
    h = np.repeat(relu(p.M0)[None, :], n, axis=0)
    logit = np.zeros(n)
    for t in range(T):
        if t >= d:
            z[:, t] = predict_bits(logit)
        h = relu(matvec(p.W, h) + At[z[:, t].astype(np.intp)])
        logit = h @ p.B
    final = np.where(predict_bits(logit) == 1, 1.0, -1.0)
    return Decoded(z=z, final=final)


def greedy_decode(p: RnnParams, x: Sequence[int], T: int) -> tuple[tuple[int, ...], int]:
    out = greedy_decode_batch(p, np.asarray(x)[None, :], T)
    return tuple(int(b) for b in out.z[0]), int(out.final[0])


def autoregressive_errors(p: RnnParams, batch: SequenceBatch) -> tuple[np.ndarray, Decoded]:
    _require_nonempty(batch)
    decoded = greedy_decode_batch(p, batch.x, batch.T)
    return decoded.final != batch.finals, decoded


def autoregressive_eval(p: RnnParams, batch: SequenceBatch) -> float:
    errors, _ = autoregressive_errors(p, batch)
    return float(errors.mean())


def lemma1_check(p: RnnParams, batch: SequenceBatch) -> EvalReport:
    """Both sides of the union bound on the same samples; any violation is a hard failure."""
    tf = teacher_forced_errors(p, batch)
    ar, decoded = autoregressive_errors(p, batch)

    clean = ~tf.any(axis=1)
    bad = np.flatnonzero(ar & clean)
    if bad.size:
        raise VerificationError(
            f"autoregressive error without any teacher-forced error on {bad.size} sample(s), first row {bad[0]}"
        )
    mismatch = np.flatnonzero(clean & np.any(decoded.z != batch.z, axis=1))
    if mismatch.size:
        raise VerificationError(
            f"decoded sequence differs from ground truth on {mismatch.size} fully-correct sample(s)"
        )

    tf_losses = tf.mean(axis=0)
    ar_loss = float(ar.mean())
    # Counts keep the comparison exact.
    tf_count, ar_count = int(tf.sum()), int(ar.sum())
    if tf_count < ar_count:
        raise VerificationError(f"union bound violated: {tf_count} teacher-forced errors < {ar_count} final errors")
    slack = (tf_count - ar_count) / batch.size

    return EvalReport(
        samples=batch.size,
        tf_losses=tuple(float(v) for v in tf_losses),
        ar_final_loss=ar_loss,
        union_bound_slack=slack,
        accuracy=1.0 - ar_loss,
        bce=batch_loss(p, batch.z, batch.targets),
    )


def iterations_to_threshold(log: "TrainLog | Iterable[object]", threshold: float) -> int | None:
    """First checkpoint step whose validation autoregressive accuracy reaches `threshold`."""
    if not 0.5 < threshold <= 1.0:
        raise EvaluationError(f"threshold must be in (0.5, 1], got {threshold}")
    records = getattr(log, "records", log)
    for rec in records:
        acc = getattr(rec, "val_accuracy", None)
        if acc is not None and acc >= threshold:
            return int(rec.step)  # type: ignore[attr-defined]
    return None
