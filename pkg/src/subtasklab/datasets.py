"""
Train / validation / test splits and their on-disk form.

Validation and test inputs are drawn without replacement from the 2^d distinct inputs, so no
x appears in two held-out splits. The training split is either an explicit number of further
distinct inputs or, by default, every input that was not held out. When 2^d is too large to
enumerate, the default training source is fresh uniform sampling.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .errors import SubtaskLabError
from .fileio import atomic_write_text, dumps_record
from .numerics import SeededRng
from .parity import SequenceBatch, Task, TaskError, format_line, parse_line


log = logging.getLogger(__name__)


ENUMERATE_TRAIN_MAX_D = 20
DATASET_SCHEMA = 1
SPLIT_FILES = {"train": "train.txt", "val": "val.txt", "test": "test.txt"}
MANIFEST = "dataset.json"


class DatasetError(SubtaskLabError, ValueError):
    pass


def default_holdout_size(d: int) -> int:
    """min(1024, 12.5% of the 2^d inputs)."""
    return max(1, min(1024, 2**d // 8))


@dataclass(frozen=True)
class SplitSizes:
    train: int | None  # None -> all remaining inputs (or online sampling for large d)
    val: int
    test: int

    @classmethod
    def for_dims(cls, d: int, *, train: int | None = None, val: int | None = None, test: int | None = None) -> "SplitSizes":
        dflt = default_holdout_size(d)
        return cls(train=train, val=dflt if val is None else val, test=dflt if test is None else test)


@dataclass(frozen=True)
class DatasetSplits:
    train: SequenceBatch | None  # None -> sample fresh inputs every step
    val: SequenceBatch
    test: SequenceBatch


def index_to_bits(idx: np.ndarray, d: int) -> np.ndarray:
    """Row i is the MSB-first binary expansion of idx[i] (same order as parity.all_inputs)."""
    shifts = np.arange(d - 1, -1, -1, dtype=np.int64)[None, :]
    return ((np.asarray(idx, dtype=np.int64)[:, None] >> shifts) & 1).astype(np.int8)


def bits_to_index(x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(x).astype(np.int64)
    weights = 1 << np.arange(x.shape[1] - 1, -1, -1, dtype=np.int64)
    return x @ weights


def make_splits(task: Task, sizes: SplitSizes, rng: SeededRng) -> DatasetSplits:
    d = task.d
    if d > 62:
        raise DatasetError(f"d={d} is too large for index-based splitting")
    population = 2**d
    held = sizes.val + sizes.test
    wanted = held + (sizes.train or 0)
    if sizes.val < 1 or sizes.test < 1 or (sizes.train is not None and sizes.train < 1):
        raise DatasetError(f"split sizes must be >= 1, got {sizes}")
    if wanted > population:
        raise DatasetError(
            f"requested {wanted} distinct inputs (train={sizes.train}, val={sizes.val}, test={sizes.test}) "
            f"but d={d} has only {population}"
        )

    picked = rng.choice(population, size=wanted, replace=False)
    val_idx, test_idx = picked[: sizes.val], picked[sizes.val : held]

    train: SequenceBatch | None
    if sizes.train is not None:
        train = task.encode(index_to_bits(picked[held:], d))
    elif d <= ENUMERATE_TRAIN_MAX_D:
        rest = np.setdiff1d(np.arange(population, dtype=np.int64), picked, assume_unique=True)
        if rest.size == 0:
            raise DatasetError(f"validation and test splits use all {population} inputs; nothing left to train on")
        train = task.encode(index_to_bits(rest, d))
    else:
        train = None
        log.info("d=%d: training inputs are sampled online; held-out overlap is possible but rare", d)

    log.info(
        "Splits for d=%d: train=%s val=%d test=%d",
        d,
        "online" if train is None else train.size,
        sizes.val,
        sizes.test,
    )
    return DatasetSplits(train=train, val=task.encode(index_to_bits(val_idx, d)), test=task.encode(index_to_bits(test_idx, d)))


def format_split(batch: SequenceBatch, *, supervised: bool) -> str:
    return "".join(
        format_line(batch.x[i], batch.row(i), supervised=supervised) + "\n" for i in range(batch.size)
    )


def parse_split(text: str, task: Task, *, where: str = "<split>") -> SequenceBatch:
    """Re-encode the inputs with `task` and insist the stored labels agree."""
    xs: list[tuple[int, ...]] = []
    stored: list[tuple[tuple[int, ...], int]] = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            x, targets, final = parse_line(line)
        except TaskError as e:
            raise DatasetError(f"{where}:{line_no}: {e}") from None
        if len(x) != task.d:
            raise DatasetError(f"{where}:{line_no}: expected {task.d} input bits, got {len(x)}")
        xs.append(x)
        stored.append((targets, final))
    if not xs:
        raise DatasetError(f"{where}: no examples")

    batch = task.encode(np.asarray(xs, dtype=np.int8))
    for i, (targets, final) in enumerate(stored):
        if final != int(batch.finals[i]):
            raise DatasetError(f"{where}: final label of example {i + 1} does not match the task")
        if task.supervised and targets != tuple(int(y) for y in batch.targets[i]):
            raise DatasetError(f"{where}: intermediate labels of example {i + 1} do not match the task")
        if not task.supervised and targets:
            raise DatasetError(f"{where}: example {i + 1} carries intermediate labels but supervision is off")
    return batch


def write_splits(out_dir: str | Path, splits: DatasetSplits, task: Task, meta: dict[str, Any]) -> Path:
    out = Path(out_dir)
    for name, batch in (("train", splits.train), ("val", splits.val), ("test", splits.test)):
        if batch is None:
            continue
        atomic_write_text(out / SPLIT_FILES[name], format_split(batch, supervised=task.supervised))
    manifest = {
        "schema": DATASET_SCHEMA,
        "d": task.d,
        "T": task.T,
        "supervised": task.supervised,
        "online_train": splits.train is None,
        "sizes": {
            "train": None if splits.train is None else splits.train.size,
            "val": splits.val.size,
            "test": splits.test.size,
        },
        **meta,
    }
    atomic_write_text(out / MANIFEST, dumps_record(manifest) + "\n")
    log.info("Wrote dataset to %s", out)
    return out


def read_splits(data_dir: str | Path, task: Task) -> DatasetSplits:
    base = Path(data_dir)
    if not (base / MANIFEST).exists():
        raise DatasetError(f"{base}: no {MANIFEST} found (run `gen` first)")

    def load(name: str) -> SequenceBatch | None:
        path = base / SPLIT_FILES[name]
        if not path.exists():
            return None
        return parse_split(path.read_text(encoding="utf-8"), task, where=str(path))

    val, test = load("val"), load("test")
    if val is None or test is None:
        raise DatasetError(f"{base}: validation and test files are required")
    splits = DatasetSplits(train=load("train"), val=val, test=test)
    _check_disjoint(splits)
    return splits


def _check_disjoint(splits: DatasetSplits) -> None:
    named = [("val", splits.val), ("test", splits.test)]
    if splits.train is not None:
        named.append(("train", splits.train))
    seen: dict[int, str] = {}
    for name, batch in named:
        for idx in bits_to_index(batch.x).tolist():
            if idx in seen and seen[idx] != name:
                raise DatasetError(f"input {idx} appears in both {seen[idx]} and {name}")
            seen[idx] = name
