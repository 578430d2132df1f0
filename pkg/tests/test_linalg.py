import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lifelong_reid.errors import ConvergenceError, DimensionError, NotPSDError, SymmetryError
from lifelong_reid.numerics import linalg
from lifelong_reid.numerics.linalg import sqrtm_psd, sym_eig, trace_sqrt_psd

from .conftest import random_spd


def test_identity(backend):
    w, v = sym_eig(np.eye(3))
    np.testing.assert_allclose(w, [1, 1, 1])
    np.testing.assert_allclose(v.T @ v, np.eye(3), atol=1e-14)


def test_diagonal(backend):
    w, v = sym_eig(np.diag([9.0, 4.0]))
    np.testing.assert_array_equal(w, [4.0, 9.0])
    np.testing.assert_allclose(np.abs(v), [[0, 1], [1, 0]], atol=1e-15)


def test_reconstruction_8x8(backend):
    rng = np.random.default_rng(0)
    b = rng.standard_normal((8, 8))
    a = b @ b.T
    w, v = sym_eig(a)
    assert np.all(np.diff(w) >= 0)
    np.testing.assert_allclose(v @ np.diag(w) @ v.T, a, atol=1e-8)
    np.testing.assert_allclose(w, np.linalg.eigvalsh(a), rtol=1e-10, atol=1e-12)


def test_sqrtm_cases(backend):
    np.testing.assert_allclose(sqrtm_psd(np.eye(4)), np.eye(4), atol=1e-14)
    np.testing.assert_allclose(sqrtm_psd(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]), atol=1e-14)
    assert trace_sqrt_psd(np.diag([4.0, 9.0])) == pytest.approx(5.0, abs=1e-14)


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 64), seed=st.integers(0, 2 ** 31))
def test_eig_and_sqrt_properties(n, seed):
    rng = np.random.default_rng(seed)
    a = random_spd(rng, n)
    w, v = sym_eig(a)
    scale = np.abs(a).max()
    assert np.abs(v.T @ v - np.eye(n)).max() < 1e-10
    assert np.abs(v @ np.diag(w) @ v.T - a).max() < 1e-10 * scale
    r = sqrtm_psd(a)
    assert np.linalg.norm(r @ r - a) <= 1e-7 * np.linalg.norm(a)
    np.testing.assert_array_equal(r, r.T)


def test_bulk_corpus_both_backends(backend):
    """Reconstruction and squaring bounds over 1000 random SPD matrices."""
    rng = np.random.default_rng(11)
    sizes = rng.integers(1, 65, 1000) if backend == "compiled" else rng.integers(1, 17, 1000)
    for n in sizes:
        a = random_spd(rng, int(n))
        w, v = sym_eig(a)
        assert np.abs(v @ np.diag(w) @ v.T - a).max() < 1e-10 * np.abs(a).max()
        r = sqrtm_psd(a)
        assert np.linalg.norm(r @ r - a) <= 1e-7 * np.linalg.norm(a)


def test_rank_deficient_psd_is_clamped():
    v = np.array([[1.0, 2.0, 3.0]])
    a = v.T @ v
    r = sqrtm_psd(a)
    np.testing.assert_allclose(r @ r, a, atol=1e-10)


def test_errors():
    with pytest.raises(DimensionError):
        sym_eig(np.ones((2, 3)))
    with pytest.raises(SymmetryError):
        sym_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(DimensionError):
        sym_eig(np.array([[np.nan, 0.0], [0.0, 1.0]]))
    with pytest.raises(NotPSDError):
        sqrtm_psd(np.diag([1.0, -0.5]))
    with pytest.raises(ConvergenceError):
        sym_eig(random_spd(np.random.default_rng(0), 12), max_sweeps=1)


def test_error_categories_are_distinct():
    codes = {DimensionError.exit_code, ConvergenceError.exit_code, NotPSDError.exit_code}
    assert len(codes) == 3
    assert issubclass(SymmetryError, DimensionError)
    assert linalg.JACOBI_TOL < 1e-12
