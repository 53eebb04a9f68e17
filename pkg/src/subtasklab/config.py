from __future__ import annotations

from dataclasses import dataclass, field, replace
import hashlib
from pathlib import Path
from typing import Any, Literal, Mapping

import yaml

from .errors import SubtaskLabError
from .rnn import Scope
from .training import Mode, NoiseModel


class ConfigError(SubtaskLabError):
    def __init__(self, errors: list[str]) -> None:
        super().__init__("\n".join(errors))
        self.errors = errors


TaskKind = Literal["parity", "circuit"]

_LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


def _require_mapping(obj: Any, where: str) -> dict[str, Any]:
    if not isinstance(obj, dict):
        raise ConfigError([f"{where} must be a mapping/object"])
    return obj


def _require_list(obj: Any, where: str) -> list[Any]:
    if not isinstance(obj, list) or not obj:
        raise ConfigError([f"{where} must be a non-empty list"])
    return obj


def _require_str(obj: Any, where: str) -> str:
    if not isinstance(obj, str) or not obj.strip():
        raise ConfigError([f"{where} must be a non-empty string"])
    return obj


def _require_int(obj: Any, where: str, *, minimum: int | None = None) -> int:
    if isinstance(obj, bool) or not isinstance(obj, int):
        raise ConfigError([f"{where} must be an integer"])
    if minimum is not None and obj < minimum:
        raise ConfigError([f"{where} must be >= {minimum}"])
    return obj


def _optional_int(obj: Any, where: str, *, minimum: int | None = None) -> int | None:
    return None if obj is None else _require_int(obj, where, minimum=minimum)


def _require_number(obj: Any, where: str, *, minimum: float | None = None) -> float:
    if isinstance(obj, bool) or not isinstance(obj, (int, float)):
        raise ConfigError([f"{where} must be a number"])
    if minimum is not None and not obj >= minimum:
        raise ConfigError([f"{where} must be >= {minimum}"])
    return float(obj)


def _optional_number(obj: Any, where: str, *, minimum: float | None = None) -> float | None:
    return None if obj is None else _require_number(obj, where, minimum=minimum)


def _require_bool(obj: Any, where: str) -> bool:
    # YAML spells booleans many ways; "on"/"off" are what the CLI uses.
    if isinstance(obj, bool):
        return obj
    if isinstance(obj, str) and obj.lower() in ("on", "off"):
        return obj.lower() == "on"
    raise ConfigError([f"{where} must be true/false (or on/off)"])


def _require_choice(obj: Any, where: str, choices: tuple[str, ...]) -> str:
    s = _require_str(obj, where)
    if s not in choices:
        raise ConfigError([f"{where} must be one of: {', '.join(choices)}"])
    return s


def _optional_path(obj: Any, where: str, base_dir: Path | None) -> Path | None:
    if obj is None:
        return None
    p = Path(_require_str(obj, where))
    if base_dir is not None and not p.is_absolute():
        p = (base_dir / p).resolve()
    return p


@dataclass(frozen=True)
class TaskConfig:
    kind: TaskKind = "parity"
    d: int = 8
    supervision: bool = True
    circuit: Path | None = None  # required when kind == "circuit"
    subset_seed: int | None = None  # None -> the master seed


@dataclass(frozen=True)
class ModelConfig:
    m: int = 128


@dataclass(frozen=True)
class TrainingSection:
    mode: Mode = "SGD"
    train_scope: Scope = "ALL_WEIGHTS"
    iterations: int = 10000
    eta: float | None = 0.05  # None -> 1 / (m sqrt(n))
    sigma: float = 0.0
    noise_model: NoiseModel = "UNIFORM"
    batch_size: int = 32
    gd_sample_size: int = 4096
    loss_window: int = 100
    early_stop: bool = False


@dataclass(frozen=True)
class EvalConfig:
    eval_every: int = 250
    train_size: int | None = None  # None -> every input not held out
    val_size: int | None = None  # None -> min(1024, 12.5% of 2^d)
    test_size: int | None = None
    threshold: float = 0.6
    grok_threshold: float = 0.95


@dataclass(frozen=True)
class OutputConfig:
    out_dir: Path = Path("runs")
    keep_checkpoints: bool = False
    log_level: str = "INFO"


@dataclass(frozen=True)
class SweepConfig:
    d: tuple[int, ...] = (8, 16)
    supervision: tuple[bool, ...] = (True, False)
    seeds: tuple[int, ...] = (0, 1, 2)
    etas: tuple[float, ...] | None = None  # None -> training.eta only
    workers: int = 1


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    task: TaskConfig = field(default_factory=TaskConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingSection = field(default_factory=TrainingSection)
    eval: EvalConfig = field(default_factory=EvalConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    @property
    def subset_seed(self) -> int:
        return self.seed if self.task.subset_seed is None else self.task.subset_seed


def config_to_raw(cfg: ExperimentConfig) -> dict[str, Any]:
    t, tr, ev, out, sw = cfg.task, cfg.training, cfg.eval, cfg.output, cfg.sweep
    return {
        "seed": cfg.seed,
        "task": {
            "kind": t.kind,
            "d": t.d,
            "supervision": t.supervision,
            "circuit": None if t.circuit is None else str(t.circuit),
            "subset_seed": t.subset_seed,
        },
        "model": {"m": cfg.model.m},
        "training": {
            "mode": tr.mode,
            "train_scope": tr.train_scope,
            "iterations": tr.iterations,
            "eta": tr.eta,
            "sigma": tr.sigma,
            "noise_model": tr.noise_model,
            "batch_size": tr.batch_size,
            "gd_sample_size": tr.gd_sample_size,
            "loss_window": tr.loss_window,
            "early_stop": tr.early_stop,
        },
        "eval": {
            "eval_every": ev.eval_every,
            "train_size": ev.train_size,
            "val_size": ev.val_size,
            "test_size": ev.test_size,
            "threshold": ev.threshold,
            "grok_threshold": ev.grok_threshold,
        },
        "output": {
            "out_dir": str(out.out_dir),
            "keep_checkpoints": out.keep_checkpoints,
            "log_level": out.log_level,
        },
        "sweep": {
            "d": list(sw.d),
            "supervision": list(sw.supervision),
            "seeds": list(sw.seeds),
            "etas": None if sw.etas is None else list(sw.etas),
            "workers": sw.workers,
        },
    }


def config_from_raw(raw: Any, base_dir: Path | None = None) -> ExperimentConfig:
    """Validate a parsed YAML tree; every problem found is reported in one ConfigError."""
    errors: list[str] = []
    defaults = ExperimentConfig()

    def collect(fn, *a, **kw):  # type: ignore[no-untyped-def]
        try:
            return fn(*a, **kw)
        except ConfigError as ce:
            errors.extend(ce.errors)
            return None

    def pick(fn, section: dict[str, Any], key: str, where: str, default: Any, **kw: Any) -> Any:  # type: ignore[no-untyped-def]
        if key not in section:
            return default
        val = collect(fn, section[key], f"{where}.{key}", **kw)
        return default if val is None and section[key] is not None else val

    if not isinstance(raw, dict):
        raise ConfigError(["Root of config must be a YAML mapping/object"])

    known = {"seed", "task", "model", "training", "eval", "output", "sweep"}
    for key in raw:
        if key not in known:
            errors.append(f"unknown top-level key {key!r}")

    def section(name: str) -> dict[str, Any]:
        return collect(_require_mapping, raw.get(name, {}), name) or {}

    task_raw = section("task")
    model_raw = section("model")
    training_raw = section("training")
    eval_raw = section("eval")
    output_raw = section("output")
    sweep_raw = section("sweep")

    seed = defaults.seed if "seed" not in raw else collect(_require_int, raw["seed"], "seed", minimum=0)

    td = defaults.task
    kind = pick(_require_choice, task_raw, "kind", "task", td.kind, choices=("parity", "circuit"))
    circuit = collect(_optional_path, task_raw.get("circuit"), "task.circuit", base_dir)
    if kind == "circuit" and circuit is None:
        errors.append("task.circuit is required when task.kind is 'circuit'")
    task = TaskConfig(
        kind=kind or td.kind,
        d=pick(_require_int, task_raw, "d", "task", td.d, minimum=1),
        supervision=pick(_require_bool, task_raw, "supervision", "task", td.supervision),
        circuit=circuit,
        subset_seed=collect(_optional_int, task_raw.get("subset_seed"), "task.subset_seed", minimum=0),
    )

    model = ModelConfig(m=pick(_require_int, model_raw, "m", "model", defaults.model.m, minimum=1))

    trd = defaults.training
    eta = trd.eta if "eta" not in training_raw else collect(_optional_number, training_raw["eta"], "training.eta", minimum=0.0)
    training = TrainingSection(
        mode=pick(_require_choice, training_raw, "mode", "training", trd.mode, choices=("SGD", "FP_SGD", "FP_GD")),
        train_scope=pick(
            _require_choice, training_raw, "train_scope", "training", trd.train_scope, choices=("W_ONLY", "ALL_WEIGHTS")
        ),
        iterations=pick(_require_int, training_raw, "iterations", "training", trd.iterations, minimum=1),
        eta=eta,
        sigma=pick(_require_number, training_raw, "sigma", "training", trd.sigma, minimum=0.0),
        noise_model=pick(
            _require_choice, training_raw, "noise_model", "training", trd.noise_model, choices=("UNIFORM", "NONE")
        ),
        batch_size=pick(_require_int, training_raw, "batch_size", "training", trd.batch_size, minimum=1),
        gd_sample_size=pick(_require_int, training_raw, "gd_sample_size", "training", trd.gd_sample_size, minimum=1),
        loss_window=pick(_require_int, training_raw, "loss_window", "training", trd.loss_window, minimum=1),
        early_stop=pick(_require_bool, training_raw, "early_stop", "training", trd.early_stop),
    )

    ed = defaults.eval
    ev = EvalConfig(
        eval_every=pick(_require_int, eval_raw, "eval_every", "eval", ed.eval_every, minimum=1),
        train_size=collect(_optional_int, eval_raw.get("train_size"), "eval.train_size", minimum=1),
        val_size=collect(_optional_int, eval_raw.get("val_size"), "eval.val_size", minimum=1),
        test_size=collect(_optional_int, eval_raw.get("test_size"), "eval.test_size", minimum=1),
        threshold=pick(_require_number, eval_raw, "threshold", "eval", ed.threshold),
        grok_threshold=pick(_require_number, eval_raw, "grok_threshold", "eval", ed.grok_threshold),
    )
    for name, value in (("threshold", ev.threshold), ("grok_threshold", ev.grok_threshold)):
        if value is not None and not 0.5 < value <= 1.0:
            errors.append(f"eval.{name} must be in (0.5, 1]")
    if ev.threshold is not None and ev.grok_threshold is not None and ev.grok_threshold < ev.threshold:
        errors.append("eval.grok_threshold must be >= eval.threshold")

    od = defaults.output
    out_dir = collect(_optional_path, output_raw.get("out_dir", str(od.out_dir)), "output.out_dir", base_dir)
    log_level = output_raw.get("log_level", od.log_level)
    if not isinstance(log_level, str) or log_level.upper() not in _LOG_LEVELS:
        errors.append(f"output.log_level must be one of: {', '.join(_LOG_LEVELS)}")
        log_level = od.log_level
    output = OutputConfig(
        out_dir=out_dir or od.out_dir,
        keep_checkpoints=pick(_require_bool, output_raw, "keep_checkpoints", "output", od.keep_checkpoints),
        log_level=log_level.upper(),
    )

    sd = defaults.sweep

    def int_list(key: str, default: tuple[int, ...], minimum: int) -> tuple[int, ...]:
        if key not in sweep_raw:
            return default
        items = collect(_require_list, sweep_raw[key], f"sweep.{key}") or []
        vals = [collect(_require_int, v, f"sweep.{key}[{i}]", minimum=minimum) for i, v in enumerate(items)]
        return tuple(v for v in vals if v is not None) or default

    sup_items = collect(_require_list, sweep_raw.get("supervision", list(sd.supervision)), "sweep.supervision") or []
    sup = tuple(
        v for v in (collect(_require_bool, s, f"sweep.supervision[{i}]") for i, s in enumerate(sup_items)) if v is not None
    )
    etas: tuple[float, ...] | None = None
    if sweep_raw.get("etas") is not None:
        eta_items = collect(_require_list, sweep_raw["etas"], "sweep.etas") or []
        etas = tuple(
            v
            for v in (collect(_require_number, e, f"sweep.etas[{i}]", minimum=0.0) for i, e in enumerate(eta_items))
            if v is not None
        )
    sweep = SweepConfig(
        d=int_list("d", sd.d, 4),
        supervision=sup or sd.supervision,
        seeds=int_list("seeds", sd.seeds, 0),
        etas=etas or None,
        workers=pick(_require_int, sweep_raw, "workers", "sweep", sd.workers, minimum=1),
    )

    if errors:
        raise ConfigError(errors)

    cfg = ExperimentConfig(
        seed=seed, task=task, model=model, training=training, eval=ev, output=output, sweep=sweep
    )
    _check_cross_fields(cfg)
    return cfg


def _check_cross_fields(cfg: ExperimentConfig) -> None:
    errors: list[str] = []
    if cfg.task.kind == "parity":
        half = cfg.task.d // 2
        if cfg.task.d < 4 or cfg.task.d % 2 or half & (half - 1):
            errors.append(f"task.d must be >= 4 with d/2 a power of two, got {cfg.task.d}")
    if cfg.training.mode == "SGD" and cfg.training.sigma != 0:
        errors.append("training.sigma must be 0 in SGD mode (use FP_SGD for perturbed gradients)")
    if errors:
        raise ConfigError(errors)


def load_config_text(text: str, base_dir: Path | None = None) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError([f"Failed to parse YAML: {e}"])
    return config_from_raw({} if raw is None else raw, base_dir)


def load_config(path: str | Path) -> ExperimentConfig:
    config_path = Path(path).resolve()
    try:
        raw_text = config_path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError([f"Config file not found: {config_path}"])
    return load_config_text(raw_text, config_path.parent)


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(config_to_raw(cfg), sort_keys=False, default_flow_style=False)


def config_digest(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(dump_config(cfg).encode("utf-8")).hexdigest()


def apply_overrides(cfg: ExperimentConfig, overrides: Mapping[str, Any]) -> ExperimentConfig:
    """
    Set dotted keys ("training.eta", "seed", ...) and re-validate the whole tree.

    Paths given as overrides are taken relative to the working directory.
    """
    if not overrides:
        return cfg
    raw = config_to_raw(cfg)
    for key, value in overrides.items():
        node = raw
        *parents, leaf = key.split(".")
        for p in parents:
            if not isinstance(node.get(p), dict):
                raise ConfigError([f"unknown config key {key!r}"])
            node = node[p]
        if leaf not in node:
            raise ConfigError([f"unknown config key {key!r}"])
        node[leaf] = value
    return config_from_raw(raw, Path.cwd())


def with_cell(cfg: ExperimentConfig, *, d: int, supervision: bool, seed: int, eta: float | None) -> ExperimentConfig:
    """The single-run config of one sweep cell."""
    return replace(
        cfg,
        seed=seed,
        task=replace(cfg.task, d=d, supervision=supervision),
        training=replace(cfg.training, eta=eta),
    )
