import argparse
import logging
from pathlib import Path
import sys
from typing import Any

import numpy as np

from subtasklab.circuits import CircuitError, compile_circuit, format_circuit, load_circuit
from subtasklab.config import ConfigError, ExperimentConfig, apply_overrides, load_config
from subtasklab.datasets import DatasetError
from subtasklab.errors import SubtaskLabError
from subtasklab.evaluation import VerificationError
from subtasklab.experiment import cmd_gen, cmd_report, cmd_sweep, cmd_train
from subtasklab.training import TrainingAbort
from subtasklab.verify import DEFAULT_CORPUS, VerifyReport, run_verify


EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VERIFY = 2
EXIT_ABORT = 3

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

_MODES = {"sgd": "SGD", "fp-sgd": "FP_SGD", "fp-gd": "FP_GD"}
_SCOPES = {"w-only": "W_ONLY", "all": "ALL_WEIGHTS"}

log = logging.getLogger("subtasklab")


def _default_config_path() -> Path | None:
    p = Path("experiment.yaml").resolve()
    return p if p.exists() else None


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="Path to experiment.yaml (default: ./experiment.yaml if present)")
    p.add_argument("--d", type=int, help="Input bits")
    p.add_argument("--supervision", choices=("on", "off"), help="Intermediate supervision")
    p.add_argument("--m", type=int, help="Hidden width")
    p.add_argument("--eta", type=float, help="Learning rate")
    p.add_argument("--iters", type=int, help="Training iterations")
    p.add_argument("--sigma", type=float, help="Finite-precision perturbation radius")
    p.add_argument("--mode", choices=tuple(_MODES), help="Training procedure")
    p.add_argument("--scope", choices=tuple(_SCOPES), help="Trainable parameters")
    p.add_argument("--seed", type=int, help="Master seed")
    p.add_argument("--out", default=None, help="Output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="subtasklab")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="Write train/validation/test splits")
    _add_config_flags(gen)

    tr = sub.add_parser("train", help="Train one configuration")
    _add_config_flags(tr)
    tr.add_argument("--data", default=None, help="Dataset directory written by `gen` (default: generate inline)")

    sw = sub.add_parser("sweep", help="Run the sweep grid and write CSV reports")
    _add_config_flags(sw)
    sw.add_argument("--workers", type=int, help="Parallel cells")

    ver = sub.add_parser("verify", help="Run the verification suites")
    ver.add_argument("--corpus", default=str(DEFAULT_CORPUS), help="Circuit corpus directory")
    ver.add_argument("--quick", action="store_true", help="Smaller gradient/variance/union-bound suites")

    comp = sub.add_parser("compile", help="Show the supervision trace of a circuit file")
    comp.add_argument("circuit", help="Circuit file")
    comp.add_argument("--bits", default=None, help="Input bits, e.g. 10")

    rep = sub.add_parser("report", help="Rebuild CSV reports from stored runs")
    rep.add_argument("runs", nargs="+", help="Run directories or directories containing them")
    rep.add_argument("--out", required=True, help="Where to write summary.csv and runs.csv")

    for p in (gen, tr, sw, ver, comp, rep):
        p.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING, ...")
    return parser


def overrides_from_args(args: argparse.Namespace) -> dict[str, Any]:
    o: dict[str, Any] = {}
    simple = {
        "d": "task.d",
        "m": "model.m",
        "eta": "training.eta",
        "iters": "training.iterations",
        "sigma": "training.sigma",
        "seed": "seed",
        "out": "output.out_dir",
        "workers": "sweep.workers",
    }
    for attr, key in simple.items():
        value = getattr(args, attr, None)
        if value is not None:
            o[key] = value
    if getattr(args, "supervision", None) is not None:
        o["task.supervision"] = args.supervision == "on"
    if getattr(args, "mode", None) is not None:
        o["training.mode"] = _MODES[args.mode]
    if getattr(args, "scope", None) is not None:
        o["training.train_scope"] = _SCOPES[args.scope]
    if getattr(args, "d", None) is not None:
        o["sweep.d"] = [args.d]
    if getattr(args, "supervision", None) is not None:
        o["sweep.supervision"] = [args.supervision == "on"]
    return o


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    config_path = Path(args.config).resolve() if args.config else _default_config_path()
    cfg = load_config(config_path) if config_path is not None else ExperimentConfig()
    log.info("Config: %s", config_path or "built-in defaults")
    return apply_overrides(cfg, overrides_from_args(args))


def _set_level(level: str) -> None:
    logging.basicConfig(level=getattr(logging, level.upper(), logging.INFO), format=LOG_FORMAT, force=True)


def _parse_bits(text: str, n: int) -> tuple[int, ...]:
    if len(text) != n or set(text) - {"0", "1"}:
        raise CircuitError(f"--bits must be {n} characters of 0/1, got {text!r}")
    return tuple(int(c) for c in text)


def cmd_compile(circuit_path: str, bits: str | None = None) -> list[str]:
    """Reduced circuit, topological order and, given input bits, the supervision sequence."""
    trace = compile_circuit(load_circuit(circuit_path))
    lines = ["# reduced circuit", *format_circuit(trace.circuit).splitlines()]
    lines.append(f"# topological order (T = {trace.T})")
    lines.append(" ".join(trace.circuit.inputs + trace.order))
    if bits is not None:
        seq = trace.sequence(_parse_bits(bits, trace.circuit.num_inputs))
        lines.append("# supervision sequence")
        lines.append("z:      " + "".join(str(b) for b in seq.z))
        lines.append("labels: " + " ".join(f"{g}={'+' if y > 0 else '-'}" for g, y in zip(trace.order, seq.targets)))
        lines.append(f"final:  {'+' if seq.final > 0 else '-'}1")
    return lines


def cmd_verify(corpus_dir: str | Path = DEFAULT_CORPUS, *, quick: bool = False) -> VerifyReport:
    return run_verify(corpus_dir=Path(corpus_dir), quick=quick)


def _run_command(args: argparse.Namespace) -> int:
    if args.command == "compile":
        for line in cmd_compile(args.circuit, args.bits):
            print(line)
        return EXIT_OK

    if args.command == "verify":
        report = cmd_verify(args.corpus, quick=args.quick)
        for line in report.lines():
            print(line)
        return EXIT_OK if report.passed else EXIT_VERIFY

    if args.command == "report":
        path = cmd_report(args.runs, args.out)
        print(path.read_text(encoding="utf-8"), end="")
        return EXIT_OK

    cfg = resolve_config(args)
    if args.log_level is None:
        _set_level(cfg.output.log_level)

    if args.command == "gen":
        out = cmd_gen(cfg, args.out)
        print(out)
    elif args.command == "train":
        record = cmd_train(cfg, args.out, data_dir=args.data)
        for key, value in record.as_record().items():
            if key not in ("schema", "test_tf_losses"):
                print(f"{key}: {value}")
    elif args.command == "sweep":
        records, report = cmd_sweep(cfg)
        print(report.read_text(encoding="utf-8"), end="")
        if any(not r.ok for r in records):
            return EXIT_ABORT
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE

    logging.basicConfig(level=logging.INFO, format=LOG_FORMAT)
    if args.log_level is not None:
        _set_level(args.log_level)
    np.seterr(over="ignore", under="ignore")

    try:
        return _run_command(args)
    except ConfigError as ce:
        logging.basicConfig(level=logging.INFO, format="%(message)s", force=True)
        for err in ce.errors:
            log.error("Config error: %s", err)
        return EXIT_USAGE
    except (CircuitError, DatasetError) as e:
        log.error("%s", e)
        return EXIT_USAGE
    except VerificationError as e:
        log.error("Verification failed: %s", e)
        return EXIT_VERIFY
    except TrainingAbort as e:
        log.error("%s", e)
        return EXIT_ABORT
    except SubtaskLabError as e:
        log.error("%s", e)
        return EXIT_ABORT
    except KeyboardInterrupt:
        log.info("Interrupted")
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
