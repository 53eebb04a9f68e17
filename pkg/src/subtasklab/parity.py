"""
Bit-subset parity and its binary-tree intermediate supervision.

Indices are 1-based everywhere in the public interface (`ParityInstance.subset`,
sequence positions). Storage is 0-based: position t lives at column t - 1.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .errors import SubtaskLabError
from .numerics import SeededRng


log = logging.getLogger(__name__)


Bits = Sequence[int]


class TaskError(SubtaskLabError, ValueError):
    pass


@dataclass(frozen=True)
class ParityInstance:
    d: int
    subset: tuple[int, ...]  # sorted, 1-based, d/2 entries

    def __post_init__(self) -> None:
        validate_dims(self.d)
        s = tuple(int(i) for i in self.subset)
        if len(s) != self.d // 2:
            raise TaskError(f"subset must have d/2={self.d // 2} entries, got {len(s)}")
        if any(b <= a for a, b in zip(s, s[1:])):
            raise TaskError(f"subset must be strictly increasing: {s}")
        if s[0] < 1 or s[-1] > self.d:
            raise TaskError(f"subset entries must lie in [1, {self.d}]: {s}")
        object.__setattr__(self, "subset", s)

    @property
    def T(self) -> int:
        return 3 * self.d // 2 - 2

    @property
    def num_targets(self) -> int:
        return self.d // 2 - 1

    @property
    def subset0(self) -> np.ndarray:
        return np.asarray(self.subset, dtype=np.intp) - 1


@dataclass(frozen=True)
class SupervisedSequence:
    """
    z: model input bits (length T); targets: ±1 labels for positions d..T; final: the answer.

    Invariant shared by every task: len(targets) == T - d + 1.
    """

    d: int
    z: tuple[int, ...]
    targets: tuple[int, ...]
    final: int

    @property
    def T(self) -> int:
        return len(self.z)

    @property
    def positions(self) -> range:
        return range(self.d, self.T + 1)


@dataclass(frozen=True)
class SequenceBatch:
    """Row-stacked sequences of one task: x (n×d), z (n×T) as int8, targets (n×K) as ±1 floats."""

    x: np.ndarray
    z: np.ndarray
    targets: np.ndarray

    @property
    def d(self) -> int:
        return int(self.x.shape[1])

    @property
    def T(self) -> int:
        return int(self.z.shape[1])

    @property
    def size(self) -> int:
        return int(self.x.shape[0])

    @property
    def finals(self) -> np.ndarray:
        return self.targets[:, -1]

    def take(self, rows: np.ndarray | slice) -> "SequenceBatch":
        return SequenceBatch(x=self.x[rows], z=self.z[rows], targets=self.targets[rows])

    def row(self, i: int) -> SupervisedSequence:
        return SupervisedSequence(
            d=self.d,
            z=tuple(int(b) for b in self.z[i]),
            targets=tuple(int(y) for y in self.targets[i]),
            final=int(self.targets[i, -1]),
        )


class Task(Protocol):
    """Anything that turns input bit rows into supervised sequences."""

    @property
    def d(self) -> int: ...

    @property
    def T(self) -> int: ...

    @property
    def supervised(self) -> bool: ...

    def encode(self, x: np.ndarray) -> SequenceBatch: ...


def labels_to_bits(labels: np.ndarray) -> np.ndarray:
    return ((1 + np.asarray(labels)) // 2).astype(np.int8)


def bits_to_labels(bits: np.ndarray) -> np.ndarray:
    return (2 * np.asarray(bits, dtype=np.float64) - 1.0)


def validate_dims(d: int) -> None:
    half = d // 2
    if d < 4 or d % 2 or half & (half - 1):
        raise TaskError(f"d must be >= 4 with d/2 a power of two (d = 4, 8, 16, 32, ...), got {d}")


def sample_subset(d: int, rng: SeededRng) -> ParityInstance:
    validate_dims(d)
    picked = rng.choice(d, size=d // 2, replace=False)
    return ParityInstance(d=d, subset=tuple(int(i) + 1 for i in np.sort(picked)))


def _as_bit_rows(x: np.ndarray | Bits, d: int) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(x, dtype=np.int8))
    if arr.shape[1] != d:
        raise TaskError(f"expected {d} input bits, got {arr.shape[1]}")
    if np.any((arr != 0) & (arr != 1)):
        raise TaskError("input bits must be 0 or 1")
    return arr


def final_parity_batch(x: np.ndarray, inst: ParityInstance) -> np.ndarray:
    x = _as_bit_rows(x, inst.d)
    ones = x[:, inst.subset0].sum(axis=1)
    return np.where(ones % 2 == 0, 1.0, -1.0)


def final_parity(x: Bits, inst: ParityInstance) -> int:
    if len(x) != inst.d:
        raise TaskError(f"expected {inst.d} input bits, got {len(x)}")
    return int(final_parity_batch(x, inst)[0])


def tree_targets_batch(x: np.ndarray, inst: ParityInstance) -> np.ndarray:
    """
    Labels y_d..y_T for each row.

    Leaves (d <= t < 5d/4) are 2-bit parities of adjacent subset pairs. Internal nodes
    (5d/4 <= t <= T) are the product of their two children y_{2(t-5d/4)+d}, y_{2(t-5d/4)+d+1}.
    """
    x = _as_bit_rows(x, inst.d)
    d = inst.d
    s = inst.subset0
    ys: list[np.ndarray] = []
    for t in range(d, 5 * d // 4):
        j = 2 * (t - d)
        pair = x[:, s[j]].astype(np.int64) + x[:, s[j + 1]]
        ys.append(np.where(pair % 2 == 0, 1.0, -1.0))
    for t in range(5 * d // 4, inst.T + 1):
        k = 2 * (t - 5 * d // 4)
        ys.append(ys[k] * ys[k + 1])
    return np.stack(ys, axis=1)


def tree_targets(x: Bits, inst: ParityInstance) -> tuple[int, ...]:
    if len(x) != inst.d:
        raise TaskError(f"expected {inst.d} input bits, got {len(x)}")
    return tuple(int(y) for y in tree_targets_batch(x, inst)[0])


def train_sequences(x: np.ndarray, inst: ParityInstance) -> SequenceBatch:
    x = _as_bit_rows(x, inst.d)
    targets = tree_targets_batch(x, inst)
    # z_t = (1 + y_{t-1}) / 2 for d < t <= T; the root y_T is never fed back.
    z = np.concatenate([x, labels_to_bits(targets[:, :-1])], axis=1)
    return SequenceBatch(x=x, z=z, targets=targets)


def train_sequence(x: Bits, inst: ParityInstance) -> SupervisedSequence:
    if len(x) != inst.d:
        raise TaskError(f"expected {inst.d} input bits, got {len(x)}")
    return train_sequences(x, inst).row(0)


def sample_inputs(d: int, n: int, rng: SeededRng) -> np.ndarray:
    return rng.integers(0, 2, size=(n, d), dtype=np.int8)


def sample_example(inst: ParityInstance, rng: SeededRng) -> tuple[tuple[int, ...], SupervisedSequence]:
    x = sample_inputs(inst.d, 1, rng)
    return tuple(int(b) for b in x[0]), train_sequences(x, inst).row(0)


def all_inputs(d: int) -> np.ndarray:
    """Every x in {0,1}^d, row i being the binary expansion of i (MSB first)."""
    if d > 24:
        raise TaskError(f"refusing to enumerate 2^{d} inputs")
    idx = np.arange(2**d, dtype=np.int64)[:, None]
    shifts = np.arange(d - 1, -1, -1, dtype=np.int64)[None, :]
    return ((idx >> shifts) & 1).astype(np.int8)


@dataclass(frozen=True)
class ParityTask:
    """Parity with (supervised=True) or without intermediate supervision."""

    instance: ParityInstance
    supervised: bool = True

    @property
    def d(self) -> int:
        return self.instance.d

    @property
    def T(self) -> int:
        return self.instance.T if self.supervised else self.instance.d

    def encode(self, x: np.ndarray) -> SequenceBatch:
        if self.supervised:
            return train_sequences(x, self.instance)
        x = _as_bit_rows(x, self.d)
        final = final_parity_batch(x, self.instance)
        return SequenceBatch(x=x, z=x.copy(), targets=final[:, None])


# Dataset line format: "<x as 0/1> \t <targets as +/-> \t <final as +/->".


def _signs(labels: Sequence[int]) -> str:
    return "".join("+" if int(y) > 0 else "-" for y in labels)


def format_line(x: Bits, seq: SupervisedSequence, *, supervised: bool = True) -> str:
    bits = "".join(str(int(b)) for b in x)
    targets = _signs(seq.targets) if supervised else ""
    return f"{bits}\t{targets}\t{_signs([seq.final])}"


def parse_line(line: str) -> tuple[tuple[int, ...], tuple[int, ...], int]:
    parts = line.rstrip("\n").split("\t")
    if len(parts) != 3:
        raise TaskError(f"expected 3 tab-separated fields, got {len(parts)}")
    bits, targets, final = parts
    if not bits or set(bits) - {"0", "1"}:
        raise TaskError(f"bad input bits field: {bits!r}")
    if set(targets) - {"+", "-"} or final not in ("+", "-"):
        raise TaskError(f"bad label field in line: {line.strip()!r}")
    return (
        tuple(int(c) for c in bits),
        tuple(1 if c == "+" else -1 for c in targets),
        1 if final == "+" else -1,
    )
