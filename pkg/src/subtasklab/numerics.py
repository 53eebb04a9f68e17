"""
Deterministic numerical substrate: float64 matrices, seeded generators, Gaussian init.

Generators are numpy `Generator(PCG64)` instances. Normal draws use numpy's ziggurat
sampler, which is part of numpy's stable stream contract for a given seed, so seeds are
portable across machines. Parallel runs derive their own generator from
(master seed, run index) through `SeedSequence`, never by sharing one instance.
"""

from __future__ import annotations

import hashlib
import logging
import math
from typing import Sequence

import numpy as np

from .errors import SubtaskLabError


log = logging.getLogger(__name__)


Matrix = np.ndarray  # 2-D float64, C order (row-major)
SeededRng = np.random.Generator

DTYPE = np.float64


class NumericsError(SubtaskLabError, ValueError):
    pass


def make_rng(seed: int, *stream: int) -> SeededRng:
    """
    Build a generator for `seed`, optionally keyed by extra stream ids.

    `make_rng(seed, run_index)` gives each concurrent run a disjoint stream.
    """
    if seed < 0:
        raise NumericsError(f"seed must be >= 0, got {seed}")
    ss = np.random.SeedSequence([int(seed), *(int(s) for s in stream)])
    return np.random.Generator(np.random.PCG64(ss))


def check_finite(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericsError(f"{what} contains NaN or Inf")
    return arr


def _check_dims(rows: int, cols: int) -> None:
    if rows < 1 or cols < 1:
        raise NumericsError(f"matrix dimensions must be >= 1, got {rows}x{cols}")


def gauss_init(rows: int, cols: int, variance: float, rng: SeededRng) -> Matrix:
    """Entries i.i.d. Normal(0, variance)."""
    _check_dims(rows, cols)
    if not (variance >= 0 and math.isfinite(variance)):
        raise NumericsError(f"variance must be finite and >= 0, got {variance}")
    draws = rng.standard_normal((rows, cols))
    # Zero variance still consumes the draws so the stream position does not depend on it.
    return check_finite(np.ascontiguousarray(draws * np.sqrt(variance), dtype=DTYPE), "gauss_init")


def matvec(m: Matrix, v: np.ndarray) -> np.ndarray:
    """
    m @ v for a vector v; for a stack of row vectors v (n, cols) the rows of the result are
    m @ v[i], computed as one product.
    """
    v = np.asarray(v, dtype=DTYPE)
    if m.ndim != 2 or v.ndim not in (1, 2) or m.shape[1] != v.shape[-1]:
        raise NumericsError(f"dimension mismatch: {m.shape} x {v.shape}")
    return m @ v if v.ndim == 1 else v @ m.T


def relu(v: np.ndarray) -> np.ndarray:
    return np.maximum(v, 0.0)


def checksum(*arrays: np.ndarray) -> str:
    """Hex digest of the exact bytes of the given arrays (frozen-parameter integrity)."""
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a, dtype=DTYPE).tobytes())
    return h.hexdigest()
