"""
SGD (W <- W - eta * grad), finite-precision SGD (the gradient is replaced by a member of its
sigma-ball) and finite-precision full GD (the gradient of the input expectation), all with
teacher forcing.

Random streams per run: init = make_rng(seed, 0), data = make_rng(seed, 1),
noise = make_rng(seed, 2). Modes that do not perturb never touch the noise stream, so
FP_SGD with sigma = 0 replays SGD bit for bit.
"""

from __future__ import annotations

import logging
import math
import time
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Literal

import numpy as np

from .errors import SubtaskLabError
from .evaluation import EvalReport, lemma1_check, teacher_forced_eval
from .numerics import SeededRng, make_rng
from .parity import SequenceBatch, Task, all_inputs, sample_inputs
from .rnn import Grads, RnnParams, Scope, apply_update, gradients, init_params, save_checkpoint


log = logging.getLogger(__name__)


Mode = Literal["SGD", "FP_SGD", "FP_GD"]
NoiseModel = Literal["UNIFORM", "NONE"]

TRAIN_LOG_SCHEMA = 1
GD_ENUMERATION_LIMIT = 4096
_GRAD_CHUNK = 512


class TrainingError(SubtaskLabError, ValueError):
    pass


class TrainingAbort(SubtaskLabError, RuntimeError):
    def __init__(self, message: str, checkpoint: Path | None) -> None:
        super().__init__(f"{message} (diagnostic checkpoint: {checkpoint or 'not written'})")
        self.checkpoint = checkpoint


def default_eta(m: int, n: int) -> float:
    if m < 1 or n < 1:
        raise TrainingError(f"m and n must be >= 1, got m={m}, n={n}")
    return 1.0 / (m * math.sqrt(n))


@dataclass(frozen=True)
class TrainConfig:
    m: int
    n: int
    eta: float | None = None  # None -> default_eta(m, n)
    sigma: float = 0.0
    mode: Mode = "SGD"
    train_scope: Scope = "W_ONLY"
    seed: int = 0
    eval_every: int = 100
    noise_model: NoiseModel = "UNIFORM"
    batch_size: int = 1
    gd_sample_size: int = GD_ENUMERATION_LIMIT
    loss_window: int = 100
    early_stop_accuracy: float | None = None
    diagnostics_dir: Path | None = None

    def __post_init__(self) -> None:
        errors: list[str] = []
        if self.m < 1:
            errors.append("m must be >= 1")
        if self.n < 1:
            errors.append("n must be >= 1")
        if self.eta is not None and not self.eta >= 0:
            errors.append("eta must be >= 0")
        if not self.sigma >= 0:
            errors.append("sigma must be >= 0")
        elif self.mode == "SGD" and self.sigma != 0:
            errors.append("sigma must be 0 in SGD mode")
        if self.mode not in ("SGD", "FP_SGD", "FP_GD"):
            errors.append(f"mode must be SGD, FP_SGD or FP_GD, got {self.mode!r}")
        if self.train_scope not in ("W_ONLY", "ALL_WEIGHTS"):
            errors.append(f"train_scope must be W_ONLY or ALL_WEIGHTS, got {self.train_scope!r}")
        if self.noise_model not in ("UNIFORM", "NONE"):
            errors.append(f"noise_model must be UNIFORM or NONE, got {self.noise_model!r}")
        if self.eval_every < 1 or self.batch_size < 1 or self.gd_sample_size < 1 or self.loss_window < 1:
            errors.append("eval_every, batch_size, gd_sample_size and loss_window must be >= 1")
        if self.early_stop_accuracy is not None and not 0.0 < self.early_stop_accuracy <= 1.0:
            errors.append("early_stop_accuracy must be in (0, 1]")
        if errors:
            raise TrainingError("; ".join(errors))

    @property
    def effective_eta(self) -> float:
        return default_eta(self.m, self.n) if self.eta is None else self.eta


@dataclass(frozen=True)
class LogRecord:
    step: int
    train_loss: float  # mean minibatch loss over the last `loss_window` steps
    last_loss: float
    iterate_avg_loss: float  # running mean over all iterates so far
    iterate_avg_tf_error: float  # running mean of the minibatch summed teacher-forced 0-1 loss
    val_tf_losses: tuple[float, ...] | None
    val_accuracy: float | None
    val_bce: float | None
    union_bound_slack: float | None
    frozen_checksum: str
    wall_time: float

    def as_record(self) -> dict[str, object]:
        rec = asdict(self)
        rec["val_tf_losses"] = list(self.val_tf_losses) if self.val_tf_losses is not None else None
        rec["schema"] = TRAIN_LOG_SCHEMA
        return rec

    @classmethod
    def from_record(cls, rec: dict[str, object]) -> "LogRecord":
        if rec.get("schema") != TRAIN_LOG_SCHEMA:
            raise TrainingError(f"unsupported TrainLog schema: {rec.get('schema')!r}")
        vals = {k: v for k, v in rec.items() if k != "schema"}
        tf = vals.get("val_tf_losses")
        vals["val_tf_losses"] = tuple(tf) if tf is not None else None  # type: ignore[arg-type]
        return cls(**vals)  # type: ignore[arg-type]


@dataclass
class TrainLog:
    mode: str
    train_scope: str
    eta: float
    sigma: float
    batch_size: int
    gd_examples: int | None = None  # inputs per FP_GD expectation
    gd_exact: bool | None = None
    records: list[LogRecord] = field(default_factory=list)

    def append(self, rec: LogRecord) -> None:
        if self.records and rec.step <= self.records[-1].step:
            raise TrainingError(f"log steps must increase: {rec.step} after {self.records[-1].step}")
        self.records.append(rec)

    def header(self) -> dict[str, object]:
        return {
            "schema": TRAIN_LOG_SCHEMA,
            "kind": "header",
            "mode": self.mode,
            "train_scope": self.train_scope,
            "eta": self.eta,
            "sigma": self.sigma,
            "batch_size": self.batch_size,
            "gd_examples": self.gd_examples,
            "gd_exact": self.gd_exact,
        }

    def to_records(self) -> list[dict[str, object]]:
        return [self.header()] + [r.as_record() for r in self.records]

    @classmethod
    def from_records(cls, records: list[dict[str, object]]) -> "TrainLog":
        if not records or records[0].get("kind") != "header":
            raise TrainingError("TrainLog must start with a header record")
        h = records[0]
        out = cls(
            mode=str(h["mode"]),
            train_scope=str(h["train_scope"]),
            eta=float(h["eta"]),  # type: ignore[arg-type]
            sigma=float(h["sigma"]),  # type: ignore[arg-type]
            batch_size=int(h["batch_size"]),  # type: ignore[arg-type]
            gd_examples=h.get("gd_examples"),  # type: ignore[arg-type]
            gd_exact=h.get("gd_exact"),  # type: ignore[arg-type]
        )
        for rec in records[1:]:
            out.append(LogRecord.from_record(rec))
        return out

    def without_timing(self) -> list[dict[str, object]]:
        recs = self.to_records()
        for r in recs[1:]:
            r.pop("wall_time", None)
        return recs


CheckpointHook = Callable[[int, RnnParams, LogRecord], None]


def fp_perturb(grad: np.ndarray, sigma: float, rng: SeededRng, noise_model: NoiseModel = "UNIFORM") -> np.ndarray:
    """A member of the elementwise sigma-ball around `grad`."""
    if sigma < 0:
        raise TrainingError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0 or noise_model == "NONE":
        return grad
    # Shrunk by 1e-9 so rounding in the addition cannot leave the ball.
    noise = rng.uniform(-sigma, sigma, size=grad.shape) * (1.0 - 1e-9)
    return grad + noise


def _perturb_grads(g: Grads, cfg: TrainConfig, rng: SeededRng) -> Grads:
    if cfg.sigma == 0 or cfg.noise_model == "NONE":
        return g
    W = fp_perturb(g.W, cfg.sigma, rng, cfg.noise_model)
    if cfg.train_scope == "W_ONLY":
        return replace(g, W=W)
    return replace(
        g,
        W=W,
        A=fp_perturb(g.A, cfg.sigma, rng, cfg.noise_model),
        B=fp_perturb(g.B, cfg.sigma, rng, cfg.noise_model),
        M0=fp_perturb(g.M0, cfg.sigma, rng, cfg.noise_model),
    )


def mean_gradients(p: RnnParams, batch: SequenceBatch, scope: Scope, *, chunk: int = _GRAD_CHUNK) -> Grads:
    """Mean per-example gradient over `batch`, reduced chunk by chunk in a fixed order."""
    if batch.size <= chunk:
        return gradients(p, batch.z, batch.targets, scope=scope)
    acc: list[np.ndarray] | None = None
    loss_sum = 0.0
    for start in range(0, batch.size, chunk):
        part = batch.take(slice(start, start + chunk))
        g = gradients(p, part.z, part.targets, scope=scope)
        w = part.size / batch.size
        arrays = [a * w for a in g.arrays()]
        acc = arrays if acc is None else [a + b for a, b in zip(acc, arrays)]
        loss_sum += g.loss * w
    assert acc is not None
    return Grads(W=acc[0], A=acc[1], B=acc[2], M0=acc[3], loss=loss_sum)


def _tf_error_sum(p: RnnParams, batch: SequenceBatch) -> float:
    return float(teacher_forced_eval(p, batch).sum())


class _Runner:
    """Shared loop for the three procedures; only the gradient oracle differs."""

    def __init__(
        self,
        cfg: TrainConfig,
        task: Task,
        data: SequenceBatch | None,
        validation: SequenceBatch | None,
        on_checkpoint: CheckpointHook | None,
    ) -> None:
        self.cfg = cfg
        self.task = task
        self.data = data
        self.validation = validation
        self.on_checkpoint = on_checkpoint
        self.eta = cfg.effective_eta
        self.data_rng = make_rng(cfg.seed, 1)
        self.noise_rng = make_rng(cfg.seed, 2)
        self.params = init_params(cfg.m, make_rng(cfg.seed, 0))
        self.log = TrainLog(
            mode=cfg.mode, train_scope=cfg.train_scope, eta=self.eta, sigma=cfg.sigma, batch_size=cfg.batch_size
        )
        self._frozen = self.params.frozen_checksum()

    def sample_batch(self) -> SequenceBatch:
        if self.data is not None:
            idx = self.data_rng.integers(0, self.data.size, size=self.cfg.batch_size)
            return self.data.take(idx)
        return self.task.encode(sample_inputs(self.task.d, self.cfg.batch_size, self.data_rng))

    def _abort(self, step: int, what: str) -> None:
        path = None
        if self.cfg.diagnostics_dir is not None:
            path = Path(self.cfg.diagnostics_dir) / f"abort_step{step}.ckpt"
            save_checkpoint(path, self.params, seed=self.cfg.seed, step=step)
        log.error("Training aborted at step %d: %s", step, what)
        raise TrainingAbort(f"non-finite {what} at step {step}", path)

    def run(self, oracle: Callable[[RnnParams], tuple[Grads, SequenceBatch]]) -> tuple[RnnParams, TrainLog]:
        cfg = self.cfg
        window: deque[float] = deque(maxlen=cfg.loss_window)
        loss_total = 0.0
        tf_total = 0.0
        started = time.perf_counter()

        for step in range(1, cfg.n + 1):
            g, batch = oracle(self.params)
            if not math.isfinite(g.loss):
                self._abort(step - 1, "loss")
            g = _perturb_grads(g, cfg, self.noise_rng)
            if not all(np.all(np.isfinite(a)) for a in g.arrays()):
                self._abort(step - 1, "gradient")

            window.append(g.loss)
            loss_total += g.loss
            tf_total += _tf_error_sum(self.params, batch)
            self.params = apply_update(self.params, g, self.eta, scope=cfg.train_scope)

            if step % cfg.eval_every == 0 or step == cfg.n:
                rec = self._checkpoint(step, window, loss_total / step, tf_total / step, g.loss, started)
                if (
                    cfg.early_stop_accuracy is not None
                    and rec.val_accuracy is not None
                    and rec.val_accuracy >= cfg.early_stop_accuracy
                ):
                    log.info("Early stop at step %d (val accuracy %.3f)", step, rec.val_accuracy)
                    break

        return self.params, self.log

    def _checkpoint(
        self, step: int, window: deque[float], avg_loss: float, avg_tf: float, last: float, started: float
    ) -> LogRecord:
        frozen = self.params.frozen_checksum()
        if self.cfg.train_scope == "W_ONLY" and frozen != self._frozen:
            raise TrainingError("frozen parameters changed in W_ONLY mode")

        report: EvalReport | None = lemma1_check(self.params, self.validation) if self.validation is not None else None
        rec = LogRecord(
            step=step,
            train_loss=float(np.mean(window)),
            last_loss=last,
            iterate_avg_loss=avg_loss,
            iterate_avg_tf_error=avg_tf,
            val_tf_losses=report.tf_losses if report else None,
            val_accuracy=report.accuracy if report else None,
            val_bce=report.bce if report else None,
            union_bound_slack=report.union_bound_slack if report else None,
            frozen_checksum=frozen,
            wall_time=time.perf_counter() - started,
        )
        self.log.append(rec)
        log.info(
            "step=%d loss=%.4f val_acc=%s slack=%s",
            step,
            rec.train_loss,
            "n/a" if rec.val_accuracy is None else f"{rec.val_accuracy:.3f}",
            "n/a" if rec.union_bound_slack is None else f"{rec.union_bound_slack:.3f}",
        )
        if self.on_checkpoint is not None:
            self.on_checkpoint(step, self.params, rec)
        return rec


def _require_mode(cfg: TrainConfig, mode: Mode) -> None:
    if cfg.mode != mode:
        raise TrainingError(f"config mode is {cfg.mode}, expected {mode}")


def sgd_train(
    cfg: TrainConfig,
    task: Task,
    data: SequenceBatch | None = None,
    *,
    validation: SequenceBatch | None = None,
    on_checkpoint: CheckpointHook | None = None,
) -> tuple[RnnParams, TrainLog]:
    _require_mode(cfg, "SGD")
    return _stochastic(cfg, task, data, validation, on_checkpoint)


def fp_sgd_train(
    cfg: TrainConfig,
    task: Task,
    data: SequenceBatch | None = None,
    *,
    validation: SequenceBatch | None = None,
    on_checkpoint: CheckpointHook | None = None,
) -> tuple[RnnParams, TrainLog]:
    _require_mode(cfg, "FP_SGD")
    return _stochastic(cfg, task, data, validation, on_checkpoint)


def _stochastic(
    cfg: TrainConfig,
    task: Task,
    data: SequenceBatch | None,
    validation: SequenceBatch | None,
    on_checkpoint: CheckpointHook | None,
) -> tuple[RnnParams, TrainLog]:
    runner = _Runner(cfg, task, data, validation, on_checkpoint)

    def oracle(p: RnnParams) -> tuple[Grads, SequenceBatch]:
        batch = runner.sample_batch()
        return gradients(p, batch.z, batch.targets, scope=cfg.train_scope), batch

    return runner.run(oracle)


def expectation_set(task: Task, cfg: TrainConfig) -> tuple[SequenceBatch, bool]:
    """All 2^d inputs when 2^d <= 4096, else a fixed uniform sample of `gd_sample_size` inputs."""
    if 2**task.d <= GD_ENUMERATION_LIMIT:
        return task.encode(all_inputs(task.d)), True
    rng = make_rng(cfg.seed, 3)
    return task.encode(sample_inputs(task.d, cfg.gd_sample_size, rng)), False


def fp_gd_train(
    cfg: TrainConfig,
    task: Task,
    *,
    validation: SequenceBatch | None = None,
    on_checkpoint: CheckpointHook | None = None,
) -> tuple[RnnParams, TrainLog]:
    _require_mode(cfg, "FP_GD")
    population, exact = expectation_set(task, cfg)
    runner = _Runner(cfg, task, None, validation, on_checkpoint)
    runner.log.gd_examples = population.size
    runner.log.gd_exact = exact
    log.info("FP_GD expectation over %d inputs (%s)", population.size, "exact" if exact else "sampled")

    def oracle(p: RnnParams) -> tuple[Grads, SequenceBatch]:
        return mean_gradients(p, population, cfg.train_scope), population

    return runner.run(oracle)


def train(
    cfg: TrainConfig,
    task: Task,
    data: SequenceBatch | None = None,
    *,
    validation: SequenceBatch | None = None,
    on_checkpoint: CheckpointHook | None = None,
) -> tuple[RnnParams, TrainLog]:
    if cfg.mode == "FP_GD":
        return fp_gd_train(cfg, task, validation=validation, on_checkpoint=on_checkpoint)
    if cfg.mode == "FP_SGD":
        return fp_sgd_train(cfg, task, data, validation=validation, on_checkpoint=on_checkpoint)
    return sgd_train(cfg, task, data, validation=validation, on_checkpoint=on_checkpoint)
