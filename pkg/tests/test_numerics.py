import numpy as np
import numpy.testing as npt
import pytest

from subtasklab.numerics import NumericsError, checksum, gauss_init, make_rng, matvec, relu


def test_same_seed_same_stream():
    a = make_rng(7).standard_normal(5)
    b = make_rng(7).standard_normal(5)
    npt.assert_array_equal(a, b)


def test_streams_are_distinct():
    a = make_rng(7, 0).standard_normal(5)
    b = make_rng(7, 1).standard_normal(5)
    assert not np.array_equal(a, b)


def test_negative_seed_rejected():
    with pytest.raises(NumericsError):
        make_rng(-1)


def test_gauss_init_variance_and_shape():
    m = gauss_init(400, 50, 0.25, make_rng(0))
    assert m.shape == (400, 50)
    assert m.dtype == np.float64
    assert m.flags["C_CONTIGUOUS"]
    assert abs(m.var() - 0.25) < 0.02


def test_zero_variance_still_advances_stream():
    r1, r2 = make_rng(3), make_rng(3)
    gauss_init(4, 4, 0.0, r1)
    gauss_init(4, 4, 1.0, r2)
    npt.assert_array_equal(r1.standard_normal(3), r2.standard_normal(3))


@pytest.mark.parametrize("rows,cols", [(0, 3), (3, 0)])
def test_empty_dimensions_rejected(rows, cols):
    with pytest.raises(NumericsError):
        gauss_init(rows, cols, 1.0, make_rng(0))


def test_matvec_dimension_mismatch():
    with pytest.raises(NumericsError):
        matvec(np.ones((2, 3)), np.ones(2))


@pytest.mark.parametrize("variance", [-0.5, float("inf"), float("nan")])
def test_gauss_init_rejects_bad_variance(variance):
    with pytest.raises(NumericsError):
        gauss_init(3, 3, variance, make_rng(0))


def test_checksum_tracks_bytes():
    a = np.arange(4.0)
    before = checksum(a)
    assert checksum(a.copy()) == before
    a[0] = 1e-300
    assert checksum(a) != before


def test_gauss_init_moments_at_width_1000():
    m = gauss_init(1000, 1000, 2 / 1000, make_rng(7))
    assert abs(m.mean()) < 0.005
    assert abs(m.var() - 0.002) < 0.0002


def test_matvec_examples():
    npt.assert_array_equal(matvec(np.eye(3), np.array([1.0, 2.0, 3.0])), [1.0, 2.0, 3.0])
    npt.assert_array_equal(matvec(np.zeros((2, 2)), np.array([5.0, 5.0])), [0.0, 0.0])
    npt.assert_array_equal(matvec(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([1.0, 1.0])), [3.0, 7.0])


def test_matvec_rows_match_single_products():
    rng = make_rng(2)
    m = rng.standard_normal((4, 3))
    vs = rng.standard_normal((5, 3))
    stacked = matvec(m, vs)
    assert stacked.shape == (5, 4)
    for i in range(5):
        npt.assert_allclose(stacked[i], matvec(m, vs[i]), rtol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_matvec_is_linear(seed):
    rng = make_rng(seed)
    m = rng.standard_normal((4, 6))
    u, v = rng.standard_normal(6), rng.standard_normal(6)
    a, b = rng.standard_normal(2)
    npt.assert_allclose(matvec(m, a * u + b * v), a * matvec(m, u) + b * matvec(m, v), rtol=1e-12, atol=1e-12)


def test_relu_examples():
    npt.assert_array_equal(relu(np.array([-1.0, 0.0, 2.0])), [0.0, 0.0, 2.0])
    npt.assert_array_equal(relu(-np.arange(1.0, 5.0)), np.zeros(4))


def test_relu_is_idempotent():
    v = make_rng(3).standard_normal(50)
    once = relu(v)
    npt.assert_array_equal(relu(once), once)
    assert np.all(once >= 0)
