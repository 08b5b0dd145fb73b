import numpy as np
import pytest

from rbfuq import *


def _matrix(rng, m=40, n=8):
    # graded spectrum so every truncation is well separated
    U, _ = np.linalg.qr(rng.normal(size=(m, n)))
    V, _ = np.linalg.qr(rng.normal(size=(n, n)))
    return (U * 10.0 ** -np.arange(n, dtype=float) * 0.5) @ V.T


@pytest.mark.parametrize("seed", range(20))
def test_discarded_energy_matches_dense(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(30 + seed, 6))
    s = np.linalg.svd(X, compute_uv=False)
    total = np.sum(s**2)
    for k in range(7):
        result = fast_svd(X, rank=k)
        assert result.k == k
        assert result.discarded_energy == pytest.approx(np.sum(s[k:] ** 2), abs=1e-8 * total)
        residual = np.sum((X - result.reconstruct()) ** 2)
        assert residual == pytest.approx(result.discarded_energy, abs=1e-8 * total)
    assert np.allclose(fast_svd(X, rank=6).spectrum, s)


def test_full_rank_reconstructs(rng):
    X = rng.normal(size=(25, 5))
    result = fast_svd(X)
    assert result.k == 5
    assert result.M == 25
    assert result.N == 5
    assert np.allclose(result.reconstruct(), X)
    assert np.allclose(result.F.T @ result.F, np.eye(5))
    assert np.allclose(result.Vt @ result.Vt.T, np.eye(5))


def test_energy_curve(rng):
    X = _matrix(rng)
    result = fast_svd(X, rank=3)
    curve = result.energy_curve()
    assert len(curve) == 9
    assert curve[0] == pytest.approx(result.total_energy)
    assert curve[-1] == 0.0
    assert np.all(np.diff(curve) <= 0)
    assert curve[3] == pytest.approx(result.discarded_energy)


def test_energy_fraction(rng):
    X = _matrix(rng)
    s = np.linalg.svd(X, compute_uv=False)
    total = np.sum(s**2)
    result = fast_svd(X, energy_fraction=1 - 1e-5)
    # 0.5 * 10^-k: the first three modes leave 0.25e-6 * (1 + 1e-2 + ...) of the energy
    assert result.k == 3
    assert result.discarded_energy <= 1e-5 * total
    assert fast_svd(X, energy_fraction=1.0).k == 8


def test_abs_error(rng):
    X = _matrix(rng)
    result = fast_svd(X, abs_error=1e-4)
    assert result.k == 4
    assert np.linalg.norm(X - result.reconstruct()) <= 1e-4
    assert fast_svd(X, abs_error=10.0).k == 0


def test_rank_deficient():
    a = np.arange(1.0, 21.0)
    b = np.array([1.0, -1.0, 2.0, 0.5])
    result = fast_svd(np.outer(a, b))
    assert result.k == 1
    assert result.singular_values[0] == pytest.approx(np.linalg.norm(a) * np.linalg.norm(b))
    assert np.allclose(result.reconstruct(), np.outer(a, b))


def test_zero_matrix():
    result = fast_svd(np.zeros((10, 3)))
    assert result.k == 0
    assert result.F.shape == (10, 0)
    assert result.discarded_energy == 0.0
    assert np.all(result.reconstruct() == 0)


def test_block_rows(rng):
    X = rng.normal(size=(50, 7))
    whole = fast_svd(X, rank=4)
    streamed = fast_svd(X, rank=4, block_rows=3)
    assert np.allclose(whole.singular_values, streamed.singular_values)
    assert np.allclose(whole.reconstruct(), streamed.reconstruct())


def test_design_matrix_input():
    design = run_doe(star_doe(2), lambda p: np.array([1.0, p[0], p[1], p[0] * p[1], 2.0]))
    result = fast_svd(design)
    assert result.N == 5
    assert np.allclose(result.reconstruct(), design.snapshots)


def test_errors(rng):
    X = rng.normal(size=(10, 3))
    with pytest.raises(ValueError):
        fast_svd(X, rank=2, abs_error=1e-3)
    with pytest.raises(ValueError):
        fast_svd(X, energy_fraction=0.0)
    with pytest.raises(ShapeMismatch):
        fast_svd(np.zeros(5))
    X[2, 1] = np.nan
    with pytest.raises(ValueError):
        fast_svd(X)
    with pytest.raises(ShapeMismatch):
        TruncatedSvd(np.zeros((4, 2)), [1.0], np.zeros((1, 3)), 0.0)
