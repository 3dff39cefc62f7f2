"""Hand-checkable cases for the rank-aware linear algebra helpers."""

import numpy as np
import pytest

from mflq.linalg import is_psd, pinv, projector, range_contained, range_residual


def test_pinv_full_rank_matches_inverse():
    M = np.array([[2.0, 1.0], [0.0, 3.0]])
    res = pinv(M)
    np.testing.assert_allclose(res.pinv, np.linalg.inv(M), atol=1e-14)
    assert res.rank == 2


def test_pinv_drops_tiny_singular_values():
    # diag(3, 1e-14, 0): cutoff = 1e-10 * 3 * 3 = 9e-10, so only the 3 survives.
    M = np.diag([3.0, 1e-14, 0.0])
    res = pinv(M)
    assert res.rank == 1
    assert res.cutoff == pytest.approx(9e-10)
    assert res.smallest_retained == 3.0
    np.testing.assert_allclose(res.pinv, np.diag([1 / 3.0, 0.0, 0.0]))


def test_pinv_zero_matrix():
    res = pinv(np.zeros((2, 2)))
    assert res.rank == 0
    assert res.smallest_retained == 0.0
    assert np.all(res.pinv == 0.0)


def test_pinv_rejects_non_matrix():
    with pytest.raises(ValueError):
        pinv(np.zeros(3))


def test_pinv_penrose_identities():
    rng = np.random.default_rng(42)
    M = rng.standard_normal((4, 3)) @ rng.standard_normal((3, 5))
    P = pinv(M).pinv
    np.testing.assert_allclose(M @ P @ M, M, atol=1e-12)
    np.testing.assert_allclose(P @ M @ P, P, atol=1e-12)
    np.testing.assert_allclose(M @ P, (M @ P).T, atol=1e-12)
    np.testing.assert_allclose(P @ M, (P @ M).T, atol=1e-12)


def test_is_psd_detects_indefinite():
    ok, lam = is_psd(np.array([[1.0, 2.0], [2.0, 1.0]]))
    assert not ok
    assert lam == pytest.approx(-1.0)


def test_is_psd_accepts_with_slack():
    ok, lam = is_psd(np.array([[1.0, 2.0], [2.0, 1.0]]), tol=1.0)
    assert ok


def test_is_psd_rejects_asymmetric():
    with pytest.raises(ValueError):
        is_psd(np.array([[1.0, 5.0], [0.0, 1.0]]))


def test_range_residual_orthogonal_direction():
    # N = e2, M = diag(1, 0): the whole unit-norm column is projected out,
    # and the normalisation gives 1 / (1 + 1) = 0.5 exactly.
    N = np.array([[0.0], [1.0]])
    M = np.diag([1.0, 0.0])
    assert range_residual(N, M) == 0.5


def test_range_residual_contained_is_zero():
    M = np.diag([1.0, 2.0])
    N = np.array([[3.0], [4.0]])
    assert range_residual(N, M) == pytest.approx(0.0, abs=1e-15)
    ok, r = range_contained(N, M)
    assert ok


def test_range_of_zero_matrix_only_contains_zero():
    M = np.zeros((2, 2))
    ok, r = range_contained(np.zeros((2, 1)), M)
    assert ok and r == 0.0
    ok, r = range_contained(np.array([[1.0], [0.0]]), M)
    assert not ok
    assert r == 0.5


def test_projector_is_idempotent():
    rng = np.random.default_rng(3)
    M = rng.standard_normal((3, 2)) @ rng.standard_normal((2, 3))
    Pi = projector(M)
    np.testing.assert_allclose(Pi @ Pi, Pi, atol=1e-12)
    np.testing.assert_allclose(Pi @ M.T, M.T, atol=1e-12)
