"""
Training runs, sweeps over (d, supervision, seed[, eta]) and the CSV reports built from them.

A run directory holds:

    config.yaml        the exact single-run config
    data/              dataset splits (see datasets.py), unless an external data dir was used
    train_log.jsonl    TrainLog header + one record per checkpoint
    record.json        RunRecord
    final.ckpt         final parameters
    ckpt/              per-checkpoint parameters when output.keep_checkpoints is set
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .circuits import CircuitTask, load_circuit
from .config import ExperimentConfig, config_digest, config_to_raw, dump_config, load_config, with_cell
from .datasets import DatasetSplits, SplitSizes, make_splits, read_splits, write_splits
from .errors import SubtaskLabError
from .evaluation import EvalReport, iterations_to_threshold, lemma1_check
from .fileio import atomic_write_text, dumps_record, read_jsonl, write_jsonl
from .numerics import make_rng
from .parity import ParityTask, Task, sample_subset
from .rnn import RnnParams, save_checkpoint
from .training import LogRecord, TrainConfig, TrainLog, default_eta, train


log = logging.getLogger(__name__)


RUN_RECORD_SCHEMA = 1
RECORD_FILE = "record.json"
LOG_FILE = "train_log.jsonl"

# Stream ids under the run seed; 0-3 belong to training.py.
_SUBSET_STREAM = 10
_SPLIT_STREAM = 11


class ExperimentError(SubtaskLabError, RuntimeError):
    pass


@dataclass(frozen=True)
class RunRecord:
    config_digest: str
    seed: int
    d: int
    supervision: bool
    mode: str
    train_scope: str
    eta: float
    iterations: int  # steps actually run
    iterations_to_threshold: int | None
    grok_step: int | None  # first checkpoint at or above the grokking threshold
    grokking_steps: int | None  # grok_step - iterations_to_threshold
    final_val_accuracy: float | None
    final_val_bce: float | None
    test_accuracy: float | None
    test_tf_losses: tuple[float, ...] | None
    test_union_bound_slack: float | None
    status: str = "ok"
    error: str | None = None
    run_dir: str | None = None

    def as_record(self) -> dict[str, Any]:
        rec = asdict(self)
        rec["test_tf_losses"] = None if self.test_tf_losses is None else list(self.test_tf_losses)
        rec["schema"] = RUN_RECORD_SCHEMA
        return rec

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> "RunRecord":
        if rec.get("schema") != RUN_RECORD_SCHEMA:
            raise ExperimentError(f"unsupported RunRecord schema: {rec.get('schema')!r}")
        vals = {k: v for k, v in rec.items() if k != "schema"}
        if vals.get("test_tf_losses") is not None:
            vals["test_tf_losses"] = tuple(vals["test_tf_losses"])
        return cls(**vals)

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def build_task(cfg: ExperimentConfig) -> Task:
    if cfg.task.kind == "circuit":
        if cfg.task.circuit is None:
            raise ExperimentError("task.circuit is not set")
        return CircuitTask(load_circuit(str(cfg.task.circuit)), supervised=cfg.task.supervision)
    inst = sample_subset(cfg.task.d, make_rng(cfg.subset_seed, _SUBSET_STREAM))
    log.info("Parity instance d=%d subset=%s", inst.d, list(inst.subset))
    return ParityTask(inst, supervised=cfg.task.supervision)


def task_meta(task: Task, cfg: ExperimentConfig) -> dict[str, Any]:
    meta: dict[str, Any] = {"kind": cfg.task.kind, "seed": cfg.seed}
    if isinstance(task, ParityTask):
        meta["subset"] = list(task.instance.subset)
    elif cfg.task.circuit is not None:
        meta["circuit"] = str(cfg.task.circuit)
    return meta


def split_sizes(cfg: ExperimentConfig, d: int) -> SplitSizes:
    return SplitSizes.for_dims(d, train=cfg.eval.train_size, val=cfg.eval.val_size, test=cfg.eval.test_size)


def generate(cfg: ExperimentConfig, task: Task | None = None) -> tuple[Task, DatasetSplits]:
    task = task or build_task(cfg)
    splits = make_splits(task, split_sizes(cfg, task.d), make_rng(cfg.seed, _SPLIT_STREAM))
    return task, splits


def cmd_gen(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> Path:
    task, splits = generate(cfg)
    return write_splits(out_dir or Path(cfg.output.out_dir) / "data", splits, task, task_meta(task, cfg))


def train_config(cfg: ExperimentConfig, *, diagnostics_dir: Path | None = None) -> TrainConfig:
    tr = cfg.training
    return TrainConfig(
        m=cfg.model.m,
        n=tr.iterations,
        eta=tr.eta,
        sigma=tr.sigma,
        mode=tr.mode,
        train_scope=tr.train_scope,
        seed=cfg.seed,
        eval_every=cfg.eval.eval_every,
        noise_model=tr.noise_model,
        batch_size=tr.batch_size,
        gd_sample_size=tr.gd_sample_size,
        loss_window=tr.loss_window,
        early_stop_accuracy=cfg.eval.grok_threshold if tr.early_stop else None,
        diagnostics_dir=diagnostics_dir,
    )


def summarize(
    cfg: ExperimentConfig,
    train_log: TrainLog,
    *,
    d: int | None = None,
    test: EvalReport | None = None,
    run_dir: Path | None = None,
) -> RunRecord:
    """RunRecord fields that come from the TrainLog, plus the test report when given."""
    first = iterations_to_threshold(train_log, cfg.eval.threshold)
    grok = iterations_to_threshold(train_log, cfg.eval.grok_threshold)
    last: LogRecord | None = train_log.records[-1] if train_log.records else None
    return RunRecord(
        config_digest=config_digest(cfg),
        seed=cfg.seed,
        d=cfg.task.d if d is None else d,
        supervision=cfg.task.supervision,
        mode=train_log.mode,
        train_scope=train_log.train_scope,
        eta=train_log.eta,
        iterations=0 if last is None else last.step,
        iterations_to_threshold=first,
        grok_step=grok,
        grokking_steps=None if first is None or grok is None else grok - first,
        final_val_accuracy=None if last is None else last.val_accuracy,
        final_val_bce=None if last is None else last.val_bce,
        test_accuracy=None if test is None else test.accuracy,
        test_tf_losses=None if test is None else test.tf_losses,
        test_union_bound_slack=None if test is None else test.union_bound_slack,
        run_dir=None if run_dir is None else str(run_dir),
    )


def run_dir_name(cfg: ExperimentConfig, *, with_eta: bool = False) -> str:
    name = f"d{cfg.task.d}_{'on' if cfg.task.supervision else 'off'}_seed{cfg.seed}"
    if with_eta:
        name += f"_eta{cfg.training.eta!r}"
    return name


def cmd_train(
    cfg: ExperimentConfig, run_dir: str | Path | None = None, *, data_dir: str | Path | None = None
) -> RunRecord:
    """Train one configuration; the test split is scored at the end of the budget."""
    out = Path(run_dir) if run_dir is not None else Path(cfg.output.out_dir) / run_dir_name(cfg)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "config.yaml", dump_config(cfg))

    task = build_task(cfg)
    if data_dir is not None:
        splits = read_splits(data_dir, task)
    else:
        _, splits = generate(cfg, task)
        write_splits(out / "data", splits, task, task_meta(task, cfg))

    hook = None
    if cfg.output.keep_checkpoints:

        def hook(step: int, params: RnnParams, rec: LogRecord) -> None:
            save_checkpoint(out / "ckpt" / f"step_{step:08d}.ckpt", params, seed=cfg.seed, step=step)

    log.info("Training %s (T=%d, supervised=%s) in %s", run_dir_name(cfg), task.T, task.supervised, out)
    params, train_log = train(
        train_config(cfg, diagnostics_dir=out), task, splits.train, validation=splits.val, on_checkpoint=hook
    )
    write_jsonl(out / LOG_FILE, train_log.to_records())
    save_checkpoint(out / "final.ckpt", params, seed=cfg.seed, step=train_log.records[-1].step)

    record = summarize(cfg, train_log, d=task.d, test=lemma1_check(params, splits.test), run_dir=out)
    atomic_write_text(out / RECORD_FILE, dumps_record(record.as_record()) + "\n")
    log.info(
        "Finished %s: test_acc=%.4f iters_to_%.0f%%=%s",
        out.name,
        record.test_accuracy,
        100 * cfg.eval.threshold,
        record.iterations_to_threshold,
    )
    return record


# --- sweeps -------------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepCell:
    d: int
    supervision: bool
    seed: int
    eta: float | None

    @property
    def key(self) -> tuple[int, int, float, int]:
        return (self.d, 0 if self.supervision else 1, -1.0 if self.eta is None else self.eta, self.seed)


def sweep_cells(cfg: ExperimentConfig) -> list[SweepCell]:
    sw = cfg.sweep
    etas: Sequence[float | None] = sw.etas if sw.etas is not None else (cfg.training.eta,)
    cells = [SweepCell(d=d, supervision=s, seed=seed, eta=eta) for d, s, eta, seed in itertools.product(sw.d, sw.supervision, etas, sw.seeds)]
    return sorted(cells, key=lambda c: c.key)


def _run_cell(cfg: ExperimentConfig, cell: SweepCell, run_dir: Path) -> RunRecord:
    cell_cfg = with_cell(cfg, d=cell.d, supervision=cell.supervision, seed=cell.seed, eta=cell.eta)
    try:
        return cmd_train(cell_cfg, run_dir)
    except SubtaskLabError as e:
        log.error("Cell %s failed: %s", run_dir.name, e)
        return _failed_record(cell_cfg, run_dir, e)


def _failed_record(cfg: ExperimentConfig, run_dir: Path, e: BaseException) -> RunRecord:
    record = RunRecord(
        config_digest=config_digest(cfg),
        seed=cfg.seed,
        d=cfg.task.d,
        supervision=cfg.task.supervision,
        mode=cfg.training.mode,
        train_scope=cfg.training.train_scope,
        eta=default_eta(cfg.model.m, cfg.training.iterations) if cfg.training.eta is None else cfg.training.eta,
        iterations=0,
        iterations_to_threshold=None,
        grok_step=None,
        grokking_steps=None,
        final_val_accuracy=None,
        final_val_bce=None,
        test_accuracy=None,
        test_tf_losses=None,
        test_union_bound_slack=None,
        status="failed",
        error=f"{type(e).__name__}: {e}",
        run_dir=str(run_dir),
    )
    run_dir.mkdir(parents=True, exist_ok=True)
    atomic_write_text(run_dir / RECORD_FILE, dumps_record(record.as_record()) + "\n")
    return record


def cmd_sweep(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> tuple[list[RunRecord], Path]:
    """Run every grid cell (cells in parallel, each with its own seed and directory) and write the CSVs."""
    out = Path(out_dir or cfg.output.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells = sweep_cells(cfg)
    for c in cells:
        if c.supervision and replace(c, supervision=False) in cells:
            supervision_pair(
                with_cell(cfg, d=c.d, supervision=True, seed=c.seed, eta=c.eta),
                with_cell(cfg, d=c.d, supervision=False, seed=c.seed, eta=c.eta),
            )
    with_eta = cfg.sweep.etas is not None and len(cfg.sweep.etas) > 1
    log.info("Sweep: %d cells, %d worker(s), output %s", len(cells), cfg.sweep.workers, out)

    records: dict[SweepCell, RunRecord] = {}
    dirs = {
        c: out / run_dir_name(with_cell(cfg, d=c.d, supervision=c.supervision, seed=c.seed, eta=c.eta), with_eta=with_eta)
        for c in cells
    }
    if cfg.sweep.workers == 1:
        for c in cells:
            records[c] = _run_cell(cfg, c, dirs[c])
    else:
        with ProcessPoolExecutor(max_workers=cfg.sweep.workers) as executor:
            futures = {executor.submit(_run_cell, cfg, c, dirs[c]): c for c in cells}
            for fut in as_completed(futures):
                c = futures[fut]
                try:
                    records[c] = fut.result()
                except Exception as e:  # worker crashed outside the library error hierarchy
                    log.error("Cell %s crashed: %s", dirs[c].name, e)
                    records[c] = _failed_record(
                        with_cell(cfg, d=c.d, supervision=c.supervision, seed=c.seed, eta=c.eta), dirs[c], e
                    )
                log.info("Cell %s done (%s)", dirs[c].name, records[c].status)

    ordered = [records[c] for c in cells]
    report = write_reports(ordered, out)
    failed = sum(not r.ok for r in ordered)
    if failed:
        log.warning("%d of %d cells failed; see their record.json", failed, len(ordered))
    return ordered, report


# --- reports ------------------------------------------------------------------------------

SUMMARY_COLUMNS = [
    "d",
    "supervision",
    "eta",
    "runs",
    "failed",
    "reached_threshold",
    "test_accuracy_mean",
    "test_accuracy_2std",
    "iterations_mean",
    "iterations_2std",
    "grokking_steps_mean",
    "val_bce_mean",
]
RUN_COLUMNS = [
    "d",
    "supervision",
    "seed",
    "eta",
    "mode",
    "train_scope",
    "status",
    "iterations",
    "iterations_to_threshold",
    "grokking_steps",
    "test_accuracy",
    "final_val_bce",
]


def _fmt(x: float | None) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.6f}"


def _mean_2std(values: Iterable[float]) -> tuple[float | None, float | None]:
    """Mean and two population standard deviations; (None, None) for no values."""
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        return None, None
    return float(arr.mean()), float(2.0 * arr.std())


@dataclass(frozen=True)
class SummaryRow:
    d: int
    supervision: bool
    eta: float
    runs: int
    failed: int
    reached: int
    test_accuracy: tuple[float | None, float | None]
    iterations: tuple[float | None, float | None]
    grokking_steps: float | None
    val_bce: float | None

    def as_csv(self) -> dict[str, str]:
        return {
            "d": str(self.d),
            "supervision": "on" if self.supervision else "off",
            "eta": repr(self.eta),
            "runs": str(self.runs),
            "failed": str(self.failed),
            "reached_threshold": f"{self.reached}/{self.runs - self.failed}",
            "test_accuracy_mean": _fmt(self.test_accuracy[0]),
            "test_accuracy_2std": _fmt(self.test_accuracy[1]),
            "iterations_mean": _fmt(self.iterations[0]),
            "iterations_2std": _fmt(self.iterations[1]),
            "grokking_steps_mean": _fmt(self.grokking_steps),
            "val_bce_mean": _fmt(self.val_bce),
        }


def summarize_group(records: Sequence[RunRecord]) -> SummaryRow:
    ok = [r for r in records if r.ok]
    reached = [r.iterations_to_threshold for r in ok if r.iterations_to_threshold is not None]
    grok = [r.grokking_steps for r in ok if r.grokking_steps is not None]
    bce = [r.final_val_bce for r in ok if r.final_val_bce is not None]
    head = records[0]
    return SummaryRow(
        d=head.d,
        supervision=head.supervision,
        eta=head.eta,
        runs=len(records),
        failed=len(records) - len(ok),
        reached=len(reached),
        test_accuracy=_mean_2std(r.test_accuracy for r in ok if r.test_accuracy is not None),
        iterations=_mean_2std(reached),
        grokking_steps=_mean_2std(grok)[0],
        val_bce=_mean_2std(bce)[0],
    )


def _selection_key(row: SummaryRow) -> tuple[float, float, float]:
    # Lowest validation cross-entropy, then fewer iterations to threshold.
    bce = math.inf if row.val_bce is None else row.val_bce
    iters = math.inf if row.iterations[0] is None else row.iterations[0]
    return (bce, iters, row.eta)


def summary_rows(records: Sequence[RunRecord]) -> list[SummaryRow]:
    """One row per (d, supervision); with several etas the best-selected one is kept."""
    groups: dict[tuple[int, bool, float], list[RunRecord]] = {}
    for r in records:
        groups.setdefault((r.d, r.supervision, r.eta), []).append(r)
    best: dict[tuple[int, bool], SummaryRow] = {}
    for key in sorted(groups, key=lambda k: (k[0], not k[1], k[2])):
        row = summarize_group(sorted(groups[key], key=lambda r: r.seed))
        cur = best.get(key[:2])
        if cur is None or _selection_key(row) < _selection_key(cur):
            best[key[:2]] = row
    return [best[k] for k in sorted(best, key=lambda k: (k[0], not k[1]))]


def _csv_text(columns: list[str], rows: Iterable[dict[str, str]]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow(row)
    return buf.getvalue()


def summary_csv(records: Sequence[RunRecord]) -> str:
    return _csv_text(SUMMARY_COLUMNS, (row.as_csv() for row in summary_rows(records)))


def runs_csv(records: Sequence[RunRecord]) -> str:
    def row(r: RunRecord) -> dict[str, str]:
        return {
            "d": str(r.d),
            "supervision": "on" if r.supervision else "off",
            "seed": str(r.seed),
            "eta": repr(r.eta),
            "mode": r.mode,
            "train_scope": r.train_scope,
            "status": r.status,
            "iterations": str(r.iterations),
            "iterations_to_threshold": "" if r.iterations_to_threshold is None else str(r.iterations_to_threshold),
            "grokking_steps": "" if r.grokking_steps is None else str(r.grokking_steps),
            "test_accuracy": _fmt(r.test_accuracy),
            "final_val_bce": _fmt(r.final_val_bce),
        }

    ordered = sorted(records, key=lambda r: (r.d, not r.supervision, r.eta, r.seed))
    return _csv_text(RUN_COLUMNS, (row(r) for r in ordered))


def write_reports(records: Sequence[RunRecord], out_dir: str | Path) -> Path:
    out = Path(out_dir)
    atomic_write_text(out / "runs.csv", runs_csv(records))
    path = out / "summary.csv"
    atomic_write_text(path, summary_csv(records))
    log.info("Wrote %s", path)
    return path


def load_run(run_dir: str | Path) -> RunRecord:
    """Read a run's record and recheck every log-derived number against its TrainLog."""
    base = Path(run_dir)
    rec = RunRecord.from_record(json.loads((base / RECORD_FILE).read_text(encoding="utf-8")))
    if not rec.ok:
        return rec
    cfg = load_config(base / "config.yaml")
    train_log = TrainLog.from_records(list(read_jsonl(base / LOG_FILE)))
    derived = summarize(cfg, train_log, d=rec.d)
    for name in ("iterations", "iterations_to_threshold", "grok_step", "final_val_accuracy", "final_val_bce"):
        if getattr(derived, name) != getattr(rec, name):
            raise ExperimentError(
                f"{base}: record field {name}={getattr(rec, name)!r} disagrees with the TrainLog ({getattr(derived, name)!r})"
            )
    if derived.config_digest != rec.config_digest:
        log.warning("%s: config digest changed since the run was recorded", base)
    return rec


def find_runs(paths: Iterable[str | Path]) -> list[Path]:
    found: list[Path] = []
    for p in paths:
        p = Path(p)
        if (p / RECORD_FILE).exists():
            found.append(p)
        else:
            found.extend(sorted(r.parent for r in p.rglob(RECORD_FILE)))
    return found


def cmd_report(paths: Iterable[str | Path], out_dir: str | Path) -> Path:
    runs = find_runs(paths)
    if not runs:
        raise ExperimentError("no run records found")
    records = [load_run(r) for r in runs]
    log.info("Report over %d run(s)", len(records))
    return write_reports(records, out_dir)


def paired_config_diff(a: ExperimentConfig, b: ExperimentConfig) -> list[str]:
    """Dotted keys whose values differ between two configs."""
    def flat(node: Any, prefix: str = "") -> dict[str, Any]:
        if isinstance(node, dict):
            out: dict[str, Any] = {}
            for k, v in node.items():
                out.update(flat(v, f"{prefix}{k}."))
            return out
        return {prefix[:-1]: node}

    fa, fb = flat(config_to_raw(a)), flat(config_to_raw(b))
    return sorted(k for k in fa.keys() | fb.keys() if fa.get(k) != fb.get(k))


def supervision_pair(on: ExperimentConfig, off: ExperimentConfig) -> tuple[ExperimentConfig, ExperimentConfig]:
    """Check that two run configs form a gap pair: supervision on vs off and nothing else."""
    if not on.task.supervision or off.task.supervision:
        raise ExperimentError("a supervision pair needs one run with supervision on and one with it off")
    diff = paired_config_diff(on, off)
    if diff != ["task.supervision"]:
        raise ExperimentError(f"paired runs differ in more than supervision: {diff}")
    return on, off
