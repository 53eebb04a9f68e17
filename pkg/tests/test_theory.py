import itertools
import math
from fractions import Fraction

import numpy as np
import numpy.testing as npt
import pytest

from subtasklab.circuits import parse_circuit
from subtasklab.numerics import make_rng
from subtasklab.rnn import init_params
from subtasklab.theory import (
    TWO_BIT_NODES,
    TheoryError,
    alpha_decode,
    alpha_encode,
    circuit_gate_polys,
    gate_weight_vector,
    guess_error,
    guess_error_empirical,
    hypothesis_count,
    lagrange_gate_poly,
    log_phi_index,
    pair_guess_loss,
    parity_correlation,
    phi_gap,
    phi_index,
    stacked_onehots,
    truth_table,
    two_bit_parity_poly,
    two_bit_parity_poly_sign_only,
    variance_estimate,
)


def test_two_bit_parity_exact_on_nodes():
    psi = two_bit_parity_poly()
    for (z1, z2), x in TWO_BIT_NODES.items():
        assert float(psi.evaluate(x)) == pytest.approx(1.0 if z1 == z2 else -1.0, abs=1e-12)
        assert psi.evaluate_bits((z1, z2)) == pytest.approx(1.0 if z1 == z2 else -1.0, abs=1e-12)
    assert psi.degree == 2
    assert psi.max_coef < 10
    assert np.linalg.norm(psi.w) == pytest.approx(1.0)


def test_sign_only_variant_has_right_signs_only():
    psi = two_bit_parity_poly_sign_only()
    values = {bits: float(psi.evaluate(x)) for bits, x in TWO_BIT_NODES.items()}
    assert values[(0, 0)] == pytest.approx(3.0)
    assert values[(0, 1)] == pytest.approx(-0.25)
    assert values[(1, 1)] == pytest.approx(1.0)


@pytest.mark.parametrize("N", [1, 2, 3, 4])
def test_alpha_roundtrip(N):
    for a in range(2**N):
        assert alpha_encode(alpha_decode(a, N)) == a


@pytest.mark.parametrize("N", [1, 2, 3])
def test_weight_vector_is_unit_and_encodes_alpha(N):
    w = gate_weight_vector(N)
    assert np.linalg.norm(w) == pytest.approx(1.0)
    for bits in itertools.product((0, 1), repeat=N):
        assert w @ stacked_onehots(bits) == pytest.approx(w[0] * alpha_encode(bits))


@pytest.mark.parametrize("table", list(itertools.product((0, 1), repeat=4)))
def test_every_two_input_gate_interpolates(table):
    psi = lagrange_gate_poly(table)
    for a in range(4):
        assert psi.evaluate_bits(alpha_decode(a, 2)) == pytest.approx(table[a], abs=1e-9)


def test_three_input_majority():
    table = truth_table(lambda z: int(sum(z) >= 2), 3)
    psi = lagrange_gate_poly(table)
    assert psi.degree <= 7
    for a in range(8):
        assert round(psi.evaluate_bits(alpha_decode(a, 3))) == table[a]


def test_interpolated_xor_agrees_with_the_closed_form_parity_gate():
    interpolated = lagrange_gate_poly(truth_table(lambda z: sum(z) % 2, 2))
    closed = two_bit_parity_poly()
    for bits in itertools.product((0, 1), repeat=2):
        bit = interpolated.evaluate_bits(bits)
        # bit 0 <-> +1, bit 1 <-> -1
        assert 1.0 - 2.0 * bit == pytest.approx(closed.evaluate_bits(bits), abs=1e-9)
        assert np.sign(closed.evaluate_bits(bits)) == (1 if sum(bits) % 2 == 0 else -1)


def test_bad_table_lengths():
    with pytest.raises(TheoryError):
        lagrange_gate_poly((0, 1, 1))
    with pytest.raises(TheoryError):
        lagrange_gate_poly((0,) * 2**7)


def test_circuit_gate_polys_skip_constants():
    c = parse_circuit("INPUT a\nINPUT b\nINPUT c\nCONST k 1\ng = XOR a b c k\nOUTPUT g\n")
    polys = circuit_gate_polys(c)
    assert "k" not in polys
    assert all(p.N == 2 for p in polys.values())
    assert len(polys) == 3


def test_phi_index_formula():
    lg = log_phi_index(10, 2, 4.0, 2)
    assert lg == pytest.approx(24 * math.log(10) + 6 * math.log(2) + 2 * math.log(4.0))
    assert phi_index(10, 2, 4.0, 2) == pytest.approx(math.exp(lg))
    assert phi_index(10**6, 2**20, 1.0, 40) == math.inf
    with pytest.raises(TheoryError):
        log_phi_index(0, 2, 1.0, 2)


def test_phi_gap_widens_with_d():
    gaps = [phi_gap(d) for d in (4, 8, 16, 32)]
    diffs = [g.log_without - g.log_with for g in gaps]
    assert diffs == sorted(diffs)
    assert diffs[-1] > 0


def test_distinct_parities_are_uncorrelated():
    assert parity_correlation((1, 2), (3, 4), 4) == 0.0
    assert parity_correlation((1, 2, 5), (1, 2, 5), 6) == 1.0
    assert parity_correlation((), (1,), 3) == 0.0


def test_hypothesis_count():
    assert hypothesis_count(4) == 6
    assert hypothesis_count(8) == 70


@pytest.mark.parametrize("d", [4, 6, 8])
def test_guess_error_matches_enumeration(d):
    expected = float(Fraction(1, 2) * (1 - Fraction(1, hypothesis_count(d))))
    assert guess_error(1.0, hypothesis_count(d)) == expected
    assert guess_error_empirical(d) == expected


def test_guess_error_domain():
    with pytest.raises(TheoryError):
        guess_error(0.0, 10)
    with pytest.raises(TheoryError):
        guess_error(0.01, 10)


def test_pair_guess_loss():
    assert pair_guess_loss((1, 2), (1, 2), 4) == 0
    assert pair_guess_loss((1, 2), (1, 3), 4) == Fraction(1, 2)


def test_variance_estimate_exact_mode():
    p = init_params(8, make_rng(0))
    rep = variance_estimate(p, 4, K=100, M=100, rng=make_rng(1))
    assert rep.exact
    assert rep.hypotheses == 6 and rep.inputs == 16
    assert rep.variance >= 0
    assert rep.normalized == pytest.approx(rep.variance * 6)


def test_variance_estimate_is_deterministic_and_validates():
    p = init_params(8, make_rng(0))
    a = variance_estimate(p, 8, K=5, M=32, rng=make_rng(2))
    b = variance_estimate(p, 8, K=5, M=32, rng=make_rng(2))
    assert a.variance == b.variance and not a.exact
    with pytest.raises(TheoryError):
        variance_estimate(p, 8, K=1, M=32, rng=make_rng(2))


def test_identical_hypotheses_have_zero_variance():
    p = init_params(8, make_rng(0))
    rep = variance_estimate(p, 4, K=2, M=16, rng=make_rng(0), subsets=[(1, 2), (1, 2)])
    npt.assert_allclose(rep.variance, 0.0, atol=1e-30)
