"""
Executable oracles for the learnability results: gate polynomials over one-hot encodings,
the phi complexity index, parity decorrelation, gradient variance across parity targets
and the random-guessing error.

Gate polynomials act on x = <w, (e_{z_1}; ...; e_{z_N})> with e_0 = (1, 0), e_1 = (0, 1).
With the weights of gate_weight_vector, x = c_N * alpha(z) where c_N = sqrt(3 / (4^N - 1)), so
interpolation is done at the integer nodes alpha = 0 .. 2^N - 1 (Newton divided
differences) and the monomial coefficients are rescaled by c_N^-i afterwards.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import polynomial as P

from .circuits import Circuit, Gate, fanin_reduce
from .errors import SubtaskLabError
from .numerics import SeededRng
from .parity import all_inputs
from .rnn import RnnParams, gradients


log = logging.getLogger(__name__)


MAX_GATE_FANIN = 6
MAX_ENUM_D = 20


class TheoryError(SubtaskLabError, ValueError):
    pass


def stacked_onehots(bits: Sequence[int]) -> np.ndarray:
    out = np.zeros(2 * len(bits))
    for i, b in enumerate(bits):
        out[2 * i + int(b)] = 1.0
    return out


@dataclass(frozen=True)
class PolyGate:
    N: int
    w: np.ndarray  # length 2N, unit norm
    coeffs: np.ndarray  # a_0 .. a_deg in x = <w, onehots>
    # Newton form in the alpha variable (nodes, divided differences, x-to-alpha scale).
    newton: tuple[np.ndarray, np.ndarray, float] | None = None

    @property
    def degree(self) -> int:
        return int(len(self.coeffs) - 1)

    @property
    def max_coef(self) -> float:
        return float(np.max(np.abs(self.coeffs)))

    def evaluate(self, x: float | np.ndarray) -> float | np.ndarray:
        if self.newton is None:
            return P.polyval(x, self.coeffs)
        nodes, dd, scale = self.newton
        a = np.asarray(x, dtype=np.float64) / scale
        y = np.full_like(a, dd[-1])
        for j in range(len(dd) - 2, -1, -1):
            y = dd[j] + (a - nodes[j]) * y
        return float(y) if np.ndim(y) == 0 else y

    def evaluate_bits(self, bits: Sequence[int]) -> float:
        if len(bits) != self.N:
            raise TheoryError(f"expected {self.N} bits, got {len(bits)}")
        return float(self.evaluate(float(self.w @ stacked_onehots(bits))))


TWO_BIT_NODES = {(0, 0): math.sqrt(2.0), (0, 1): 1.0 / math.sqrt(2.0), (1, 0): 1.0 / math.sqrt(2.0), (1, 1): 0.0}


def two_bit_parity_poly() -> PolyGate:
    """
    psi(x) = 4 x^2 - 4 sqrt(2) x + 1 with w = (1, 0, 1, 0)/sqrt(2).

    <w, onehots> is sqrt(2), 1/sqrt(2), 0 for two zeros, one zero, no zeros, and psi takes
    exactly +1, -1, +1 there.
    """
    w = np.array([1.0, 0.0, 1.0, 0.0]) / math.sqrt(2.0)
    return PolyGate(N=2, w=w, coeffs=np.array([1.0, -4.0 * math.sqrt(2.0), 4.0]))


def two_bit_parity_poly_sign_only() -> PolyGate:
    """9/2 x^2 - 7/sqrt(2) x + 1: right signs on the same nodes, but values 3, -1/4, 1."""
    w = np.array([1.0, 0.0, 1.0, 0.0]) / math.sqrt(2.0)
    return PolyGate(N=2, w=w, coeffs=np.array([1.0, -7.0 / math.sqrt(2.0), 4.5]))


def alpha_encode(bits: Sequence[int]) -> int:
    """sum_i 2^i [z_{i+1} = 0] (0-based i)."""
    if len(bits) < 1:
        raise TheoryError("alpha_encode needs at least one bit")
    return sum(1 << i for i, b in enumerate(bits) if int(b) == 0)


def alpha_decode(alpha: int, N: int) -> tuple[int, ...]:
    return tuple(0 if (alpha >> i) & 1 else 1 for i in range(N))


def gate_weight_scale(N: int) -> float:
    return math.sqrt(3.0 / (4**N - 1))


def gate_weight_vector(N: int) -> np.ndarray:
    """sqrt(3/(4^N - 1)) * (2^0, 0, 2^1, 0, ..., 2^{N-1}, 0); <w, onehots(z)> = scale * alpha(z)."""
    if N < 1:
        raise TheoryError(f"fan-in must be >= 1, got {N}")
    w = np.zeros(2 * N)
    w[0::2] = 2.0 ** np.arange(N)
    return gate_weight_scale(N) * w


GateTruthTable = Sequence[int]  # entry i is the gate on the pattern alpha_decode(i, N)


def truth_table(fn: Callable[[tuple[int, ...]], int], N: int) -> tuple[int, ...]:
    return tuple(int(fn(alpha_decode(a, N))) for a in range(2**N))


def divided_differences(nodes: np.ndarray, values: np.ndarray) -> np.ndarray:
    n = len(values)
    coef = np.array(values, dtype=np.float64)
    for j in range(1, n):
        coef[j:] = (coef[j:] - coef[j - 1 : -1]) / (nodes[j:] - nodes[: n - j])
    return coef


def _newton_to_monomial(nodes: np.ndarray, dd: np.ndarray) -> np.ndarray:
    poly = np.array([dd[-1]])
    for j in range(len(dd) - 2, -1, -1):
        poly = P.polyadd(P.polymul(poly, [-nodes[j], 1.0]), [dd[j]])
    return poly


def lagrange_gate_poly(table: GateTruthTable) -> PolyGate:
    size = len(table)
    N = size.bit_length() - 1
    if size < 2 or 2**N != size:
        raise TheoryError(f"truth table length must be 2^N with N >= 1, got {size}")
    if N > MAX_GATE_FANIN:
        raise TheoryError(f"fan-in {N} exceeds the interpolation cap of {MAX_GATE_FANIN}")

    nodes = np.arange(size, dtype=np.float64)
    values = np.asarray(table, dtype=np.float64)
    dd = divided_differences(nodes, values)
    alpha_coeffs = _newton_to_monomial(nodes, dd)
    scale = gate_weight_scale(N)
    coeffs = alpha_coeffs / scale ** np.arange(len(alpha_coeffs))
    if not np.all(np.isfinite(coeffs)):
        raise TheoryError(f"non-finite interpolation coefficients for fan-in {N}")
    return PolyGate(N=N, w=gate_weight_vector(N), coeffs=coeffs, newton=(nodes, dd, scale))


def gate_table(gate: Gate) -> tuple[int, ...]:
    ops: dict[str, Callable[[tuple[int, ...]], int]] = {
        "AND": lambda z: int(all(z)),
        "OR": lambda z: int(any(z)),
        "XOR": lambda z: sum(z) % 2,
        "NOT": lambda z: 1 - z[0],
    }
    if gate.kind not in ops:
        raise TheoryError(f"gate {gate.id!r} of kind {gate.kind} has no inputs to interpolate over")
    return truth_table(ops[gate.kind], gate.fanin)


def circuit_gate_polys(c: Circuit) -> dict[str, PolyGate]:
    """A PolyGate for every non-constant gate of the fan-in reduced circuit."""
    reduced = fanin_reduce(c)
    return {g.id: lagrange_gate_poly(gate_table(g)) for g in reduced.gates if g.fanin > 0}


def log_phi_index(T: int, max_deg: int, max_coef: float, N: int) -> float:
    if T < 1 or max_deg < 1 or N < 1 or not max_coef > 0:
        raise TheoryError("phi_index needs T, max_deg, N >= 1 and max_coef > 0")
    return (16 + 3 * N + max_deg) * math.log(T) + 3 * N * math.log(max_deg) + 2 * math.log(max_coef)


def phi_index(T: int, max_deg: int, max_coef: float, N: int) -> float:
    """T^(16+3N+deg) * deg^(3N) * max|a|^2 with C = 1 and log factors dropped; inf on overflow."""
    lg = log_phi_index(T, max_deg, max_coef, N)
    try:
        return math.exp(lg)
    except OverflowError:
        log.debug("phi_index overflow (log value %.1f)", lg)
        return math.inf


@dataclass(frozen=True)
class PhiGap:
    d: int
    log_with: float
    log_without: float


def phi_gap(d: int) -> PhiGap:
    """Index of the parity task with tree supervision (N = 2) against the bare task (N = d/2)."""
    if d < 4 or d % 2:
        raise TheoryError(f"d must be an even number >= 4, got {d}")
    two = two_bit_parity_poly()
    with_sup = log_phi_index(3 * d // 2 - 2, two.degree, two.max_coef, 2)
    N = d // 2
    if N <= MAX_GATE_FANIN:
        full = lagrange_gate_poly(truth_table(lambda z: 1 - sum(z) % 2, N))
        deg, coef = max(full.degree, 1), max(full.max_coef, 1e-12)
    else:
        deg, coef = 2**N - 1, 1.0
    return PhiGap(d=d, log_with=with_sup, log_without=log_phi_index(d, deg, coef, N))


def _subset_mask(subset: Sequence[int], d: int) -> np.ndarray:
    mask = np.zeros(d, dtype=np.int64)
    for i in subset:
        if not 1 <= int(i) <= d:
            raise TheoryError(f"subset index {i} outside [1, {d}]")
        mask[int(i) - 1] = 1
    return mask


def _labels(x: np.ndarray, subset: Sequence[int]) -> np.ndarray:
    ones = x.astype(np.int64) @ _subset_mask(subset, x.shape[1])
    return np.where(ones % 2 == 0, 1, -1)


def parity_correlation(subset_a: Sequence[int], subset_b: Sequence[int], d: int) -> float:
    """Exact E_x[chi_A(x) chi_B(x)] over all 2^d inputs."""
    if d > MAX_ENUM_D:
        raise TheoryError(f"d={d} too large for exact enumeration (max {MAX_ENUM_D})")
    x = all_inputs(d)
    total = int(np.sum(_labels(x, subset_a) * _labels(x, subset_b)))
    return total / 2**d


def hypothesis_count(d: int) -> int:
    return math.comb(d, d // 2)


def all_hypotheses(d: int) -> list[tuple[int, ...]]:
    return [tuple(c) for c in itertools.combinations(range(1, d + 1), d // 2)]


@dataclass(frozen=True)
class VarianceReport:
    d: int
    hypotheses: int  # K actually used
    inputs: int  # M actually used
    variance: float
    class_size: int  # |H| = C(d, d/2), exact
    exact: bool  # every hypothesis and every input enumerated

    @property
    def normalized(self) -> float:
        return self.variance * self.class_size


def variance_estimate(
    predictor: RnnParams,
    d: int,
    K: int,
    M: int,
    rng: SeededRng,
    *,
    subsets: Sequence[Sequence[int]] | None = None,
    shared_inputs: bool = True,
) -> VarianceReport:
    """
    Var(H, F, w) for the unsupervised RNN (loss at position d only), w = W.

    K >= |H| enumerates every hypothesis; M >= 2^d enumerates every input. Otherwise
    hypotheses and inputs are sampled uniformly, inputs shared across hypotheses unless
    `shared_inputs` is False.
    """
    if K < 2 or M < 2:
        raise TheoryError(f"K and M must be >= 2, got K={K}, M={M}")
    if d < 2 or d % 2:
        raise TheoryError(f"d must be even and >= 2, got {d}")
    size = hypothesis_count(d)

    if subsets is not None:
        hyps = [tuple(s) for s in subsets]
    elif K >= size:
        hyps = all_hypotheses(d)
    else:
        hyps = [tuple(int(i) + 1 for i in np.sort(rng.choice(d, size=d // 2, replace=False))) for _ in range(K)]

    enumerate_inputs = M >= 2**d
    shared = all_inputs(d) if enumerate_inputs else rng.integers(0, 2, size=(M, d), dtype=np.int8)

    grads = []
    for h in hyps:
        x = shared if (shared_inputs or enumerate_inputs) else rng.integers(0, 2, size=(M, d), dtype=np.int8)
        targets = _labels(x, h).astype(np.float64)[:, None]
        grads.append(gradients(predictor, x, targets).W.ravel())
    g = np.stack(grads)
    var = float(np.mean(np.sum((g - g.mean(axis=0)) ** 2, axis=1)))

    return VarianceReport(
        d=d,
        hypotheses=len(hyps),
        inputs=int(shared.shape[0]),
        variance=var,
        class_size=size,
        exact=enumerate_inputs and subsets is None and K >= size,
    )


def guess_error(alpha: float, H_size: int) -> float:
    """1/2 (1 - 1/(alpha |H|)), computed in exact rationals and rounded once."""
    if not 0 < alpha <= 1:
        raise TheoryError(f"alpha must be in (0, 1], got {alpha}")
    frac = Fraction(alpha) * H_size
    if frac < 1:
        raise TheoryError(f"alpha * |H| must be >= 1, got {float(frac)}")
    return float(Fraction(1, 2) * (1 - 1 / frac))


def pair_guess_loss(target: Sequence[int], guess: Sequence[int], d: int) -> Fraction:
    """Exact zero-one loss of predicting parity `guess` when the truth is parity `target`."""
    x = all_inputs(d)
    return Fraction(int(np.sum(_labels(x, target) != _labels(x, guess))), 2**d)


def guess_error_empirical(d: int) -> float:
    """Expected loss of a uniformly guessed hypothesis against a fixed target, by enumeration."""
    if d > 10:
        raise TheoryError(f"d={d} too large for enumeration (max 10)")
    if d < 2 or d % 2:
        raise TheoryError(f"d must be even and >= 2, got {d}")
    x = all_inputs(d)
    hyps = all_hypotheses(d)
    truth = _labels(x, hyps[0])
    mismatches = sum(int(np.sum(truth != _labels(x, h))) for h in hyps)
    return float(Fraction(mismatches, 2**d * len(hyps)))
