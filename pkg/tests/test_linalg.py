import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ldpsr.linalg import (
    CovarianceNotInvertible,
    hard_truncate,
    project_l2_ball,
    soft_threshold,
    solve_spd,
    spectrum,
    symmetrize_from_upper,
)

from conftest import random_spd

finite_floats = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


def vec(n):
    return arrays(np.float64, n, elements=finite_floats)


# ---------------------------------------------------------------------------
# soft_threshold


def test_soft_threshold_basic():
    out = soft_threshold(np.array([3.0, -0.5, 1.0]), 1.0)
    assert np.array_equal(out, [2.0, 0.0, 0.0])


def test_soft_threshold_lambda_zero_is_identity(rng):
    u = rng.standard_normal(50)
    assert np.array_equal(soft_threshold(u, 0.0), u)


def test_soft_threshold_negative_lambda_rejected():
    with pytest.raises(ValueError):
        soft_threshold(np.ones(3), -0.1)


def _prox_grid_oracle(u: float, lam: float) -> float:
    """Two-stage grid minimizer of (t - u)^2 + 2*lam*|t|, final step 1e-6."""
    span = abs(u) + lam + 1.0
    coarse = np.arange(-span, span, 1e-3)
    f = (coarse - u) ** 2 + 2.0 * lam * np.abs(coarse)
    t0 = coarse[np.argmin(f)]
    fine = np.arange(t0 - 2e-3, t0 + 2e-3, 1e-6)
    f = (fine - u) ** 2 + 2.0 * lam * np.abs(fine)
    return float(fine[np.argmin(f)])


def test_soft_threshold_matches_prox_oracle(rng):
    u = rng.standard_normal(8) * 2.0
    lam = 0.3
    expected = [_prox_grid_oracle(ui, lam) for ui in u]
    assert np.allclose(soft_threshold(u, lam), expected, atol=1e-5)


@settings(max_examples=200)
@given(vec(6), vec(6), st.floats(0, 10))
def test_soft_threshold_nonexpansive(u, v, lam):
    lhs = np.linalg.norm(soft_threshold(u, lam) - soft_threshold(v, lam))
    assert lhs <= np.linalg.norm(u - v) * (1 + 1e-12) + 1e-12


@settings(max_examples=200)
@given(vec(6), st.floats(0, 10))
def test_soft_threshold_kills_small_entries_exactly(u, lam):
    out = soft_threshold(u, lam)
    killed = np.abs(u) <= lam
    assert np.all(out[killed] == 0.0)


# ---------------------------------------------------------------------------
# hard_truncate


def test_hard_truncate_basic():
    out = hard_truncate(np.array([0.1, -5.0, 2.0, 0.3]), 2)
    assert np.array_equal(out, [0.0, -5.0, 2.0, 0.0])


def test_hard_truncate_k_equals_d_identity(rng):
    v = rng.standard_normal(9)
    assert np.array_equal(hard_truncate(v, 9), v)


def test_hard_truncate_k_too_large_rejected():
    with pytest.raises(ValueError):
        hard_truncate(np.ones(4), 5)


def _truncate_sort_oracle(v: np.ndarray, k: int) -> np.ndarray:
    order = sorted(range(len(v)), key=lambda i: (-abs(v[i]), i))
    out = np.zeros_like(v)
    for i in order[:k]:
        out[i] = v[i]
    return out


def test_hard_truncate_matches_sort_oracle(rng):
    for _ in range(200):
        v = rng.standard_normal(12)
        assert np.array_equal(hard_truncate(v, 4), _truncate_sort_oracle(v, 4))


def test_hard_truncate_ties_keep_lower_index():
    v = np.array([1.0, -1.0, 1.0, 0.5])
    out = hard_truncate(v, 2)
    assert np.array_equal(out, [1.0, -1.0, 0.0, 0.0])


def test_hard_truncate_sparsity_fuzz(rng):
    # spec-level bulk check: output never exceeds k nonzeros
    for _ in range(10_000):
        d = int(rng.integers(1, 10))
        k = int(rng.integers(0, d + 1))
        v = rng.standard_normal(d)
        out = hard_truncate(v, k)
        assert np.count_nonzero(out) <= k


# ---------------------------------------------------------------------------
# project_l2_ball


def test_project_ball_boundary_untouched():
    assert np.array_equal(project_l2_ball(np.array([3.0, 4.0]), 5.0), [3.0, 4.0])


def test_project_ball_scales_down():
    assert np.allclose(project_l2_ball(np.array([6.0, 8.0]), 5.0), [3.0, 4.0])


def test_project_ball_norm_and_idempotence(rng):
    for _ in range(200):
        v = rng.standard_normal(7) * rng.uniform(0, 4)
        p = project_l2_ball(v, 1.0)
        assert np.linalg.norm(p) <= 1.0 + 1e-12
        assert np.allclose(project_l2_ball(p, 1.0), p)


def test_project_ball_minimizes_distance_on_grid(rng):
    # 2-D slices: the projection beats every grid point inside the ball
    angles = np.linspace(0, 2 * np.pi, 720, endpoint=False)
    radii = np.linspace(0, 1.0, 101)
    grid = np.stack(
        [np.outer(radii, np.cos(angles)).ravel(), np.outer(radii, np.sin(angles)).ravel()],
        axis=1,
    )
    for _ in range(20):
        v = rng.standard_normal(2) * 3.0
        p = project_l2_ball(v, 1.0)
        best = grid[np.argmin(np.linalg.norm(grid - v, axis=1))]
        assert np.linalg.norm(p - v) <= np.linalg.norm(best - v) + 1e-6


def test_project_ball_radius_must_be_positive():
    with pytest.raises(ValueError):
        project_l2_ball(np.ones(2), 0.0)


# ---------------------------------------------------------------------------
# solve_spd


def test_solve_identity():
    b = np.array([1.0, -2.0, 0.5])
    assert np.array_equal(solve_spd(np.eye(3), b), b)


def test_solve_diagonal():
    x = solve_spd(np.diag([2.0, 4.0]), np.array([2.0, 8.0]))
    assert np.allclose(x, [1.0, 2.0], atol=1e-12)


def test_solve_residual_oracle(rng):
    for _ in range(1000):
        d = int(rng.integers(2, 65))
        a = random_spd(rng, d)
        b = rng.standard_normal(d)
        x = solve_spd(a, b)
        assert np.linalg.norm(a @ x - b) <= 1e-8 * (1.0 + np.linalg.norm(b))


def test_solve_rejects_asymmetric():
    a = np.array([[1.0, 2.0], [0.0, 1.0]])
    with pytest.raises(ValueError):
        solve_spd(a, np.ones(2))


def test_solve_indefinite_raises():
    a = np.diag([1.0, -1.0])
    with pytest.raises(CovarianceNotInvertible):
        solve_spd(a, np.ones(2))


def test_solve_pivot_floor():
    a = np.diag([1.0, 1e-12])
    with pytest.raises(CovarianceNotInvertible):
        solve_spd(a, np.ones(2), min_eig_floor=1e-10)
    x = solve_spd(a, np.ones(2), min_eig_floor=1e-14)
    assert np.allclose(a @ x, np.ones(2))


# ---------------------------------------------------------------------------
# spectrum


def test_spectrum_diagonal():
    rep = spectrum(np.diag([1.0, 3.0]))
    assert rep.min_eigenvalue == pytest.approx(1.0, abs=1e-12)
    assert rep.max_eigenvalue == pytest.approx(3.0, abs=1e-12)
    assert rep.is_positive_definite


def test_spectrum_identity():
    rep = spectrum(np.eye(6))
    assert rep.min_eigenvalue == pytest.approx(1.0) == pytest.approx(rep.max_eigenvalue)


def _charpoly_coefficients(a: np.ndarray) -> np.ndarray:
    """Faddeev-LeVerrier recursion; no eigen-solver involved."""
    d = a.shape[0]
    coeffs = np.zeros(d + 1)
    coeffs[0] = 1.0
    m = np.zeros_like(a)
    for k in range(1, d + 1):
        m = a @ m + coeffs[k - 1] * np.eye(d)
        coeffs[k] = -np.trace(a @ m) / k
    return coeffs


def test_spectrum_matches_charpoly_roots(rng):
    for _ in range(25):
        a = random_spd(rng, 5)
        roots = np.sort(np.roots(_charpoly_coefficients(a)).real)
        rep = spectrum(a)
        assert rep.min_eigenvalue == pytest.approx(roots[0], rel=1e-5, abs=1e-5)
        assert rep.max_eigenvalue == pytest.approx(roots[-1], rel=1e-5, abs=1e-5)


def test_symmetrize_from_upper():
    a = np.array([[1.0, 2.0], [99.0, 3.0]])
    s = symmetrize_from_upper(a)
    assert np.array_equal(s, [[1.0, 2.0], [2.0, 3.0]])
