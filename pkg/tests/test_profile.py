import numpy as np
import pytest
from scipy.integrate import quad

from conftest import BC_ORACLE, P_VALUES
from gkdv_blowup.errors import ConvergenceError, GKdVError
from gkdv_blowup.grid import Grid, differentiate, integrate
from gkdv_blowup.groundstate import EIGEN_SLOPE_P5, ground_state, ground_state_dy
from gkdv_blowup.profile import (B_MAX, cutoff, find_bc, profile_energy, profile_grid,
                                 solve_profile, target_gamma)


def q_integrals(p):
    """(int Q_p, int Q_p^2) by adaptive quadrature of the closed form."""
    q = lambda y: ((p + 1) / 2 / np.cosh((p - 1) * y / 2) ** 2) ** (1 / (p - 1))
    return (quad(q, -60, 60, limit=200)[0], quad(lambda y: q(y) ** 2, -60, 60, limit=200)[0])


def test_b_zero_returns_ground_state():
    sol = solve_profile(5.1, 0.0)
    np.testing.assert_array_equal(sol.v.values, ground_state(5.1, sol.grid.x))
    assert sol.gamma == target_gamma(5.1)
    # closed form sampled on the grid: residual is the stencil truncation error
    assert sol.residual_norm < 1e-5


def test_solution_invariants():
    b = 0.015
    sol = solve_profile(5.1, b)
    v, y = sol.v.values, sol.grid.x
    assert v.min() > -1e-6 * v.max()
    assert abs(integrate(v * ground_state_dy(5.1, y), sol.grid)) < 1e-8
    assert sol.residual_norm < 1e-6


def test_profile_tends_to_ground_state():
    dist = []
    for b in (0.02, 0.01):
        sol = solve_profile(5.1, b)
        dist.append(np.abs(sol.v.values - ground_state(5.1, sol.grid.x)).max())
    assert dist[1] < 0.6 * dist[0]


def test_continuation_consistency():
    p, b, d = 5.1, 0.018, 0.001
    grid = profile_grid(b - d)
    lo = solve_profile(p, b - d, grid, check_domain=False)
    hi = solve_profile(p, b + d, grid, check_domain=False)
    a = solve_profile(p, b, grid, init=lo, check_domain=False)
    c = solve_profile(p, b, grid, init=hi, check_domain=False)
    assert np.abs(a.v.values - c.v.values).max() < 1e-6


@pytest.mark.parametrize("b", [-0.01, B_MAX * 1.01])
def test_b_out_of_range(b):
    with pytest.raises(GKdVError):
        solve_profile(5.1, b)


def test_grid_must_cover_domain():
    with pytest.raises(GKdVError, match="cover"):
        solve_profile(5.1, 0.02, Grid(-50.0, 50.0, 2001))


def test_newton_failure_carries_residual():
    with pytest.raises(ConvergenceError) as info:
        solve_profile(5.1, 0.02, max_iter=1)
    assert info.value.residual > 0 and len(info.value.history) == 1


@pytest.mark.parametrize("p", [5.0, 5.4])
def test_find_bc_exponent_range(p):
    with pytest.raises(GKdVError):
        find_bc(p)


@pytest.mark.parametrize("p", P_VALUES)
def test_bc_matches_collocation_oracle(eigen_data, p):
    bc, sol = eigen_data[0][p]
    assert bc == pytest.approx(BC_ORACLE[p], rel=2e-6)
    assert abs(sol.gamma - target_gamma(p)) < 1e-8


@pytest.mark.parametrize("p", P_VALUES)
def test_sign_change_across_bc(eigen_data, p):
    bc, sol = eigen_data[0][p]
    g = [solve_profile(p, bc + s * bc / 50, sol.grid, init=sol).gamma - target_gamma(p)
         for s in (-1, 1)]
    assert g[0] * g[1] < 0


def test_bc_slope_near_five(eigen_data):
    bc = eigen_data[0][5.02][0]
    assert bc / 0.02 == pytest.approx(EIGEN_SLOPE_P5, rel=0.10)


def test_gamma_slope_at_bc(eigen_data):
    """dgamma/db ~ -(int Q)^2 / (8 int Q^2) near p = 5."""
    i1, i2 = q_integrals(5.0)
    assert i1**2 == pytest.approx(11.908, rel=1e-3) and i2 == pytest.approx(2.7207, rel=1e-4)
    curve = eigen_data[1]
    slope = curve.dgamma_db[curve.p_values.index(5.02)]
    assert slope == pytest.approx(-i1**2 / (8 * i2), rel=0.15)
    assert all(s < 0 for s in curve.dgamma_db)


def test_curve_fit_and_monotonicity(eigen_data):
    curve = eigen_data[1]
    slope, intercept = curve.linear_fit()
    assert abs(intercept) < 1e-3
    assert slope == pytest.approx(EIGEN_SLOPE_P5, rel=0.10)
    assert np.all(np.diff(curve.bc_values) > 0)


@pytest.mark.parametrize("p", P_VALUES)
def test_zero_energy_at_bc(eigen_data, p):
    bc, sol = eigen_data[0][p]
    v, grid = sol.v.values, sol.grid
    vy = differentiate(v, grid, 1, 6)
    kinetic = 0.5 * integrate(vy * vy, grid)
    assert abs(profile_energy(v, grid, p)) < 1e-5 * kinetic


@pytest.mark.parametrize("p", P_VALUES)
def test_left_tail_power_law(eigen_data, p):
    """log v against log(1 - b y) on [-2/b, -1/b] has slope -(1 + gamma)."""
    bc, sol = eigen_data[0][p]
    y = sol.grid.x
    sel = (y >= -2 / bc) & (y <= -1 / bc)
    slope = np.polyfit(np.log(1 - bc * y[sel]), np.log(sol.v.values[sel]), 1)[0]
    assert slope == pytest.approx(-(1 + sol.gamma), rel=0.05)


# ----------------------------------------------------------------------------
# localized profile


def test_cutoff_shape():
    y = np.linspace(-3, 3, 601)
    c = cutoff(y)
    assert np.all(c[np.abs(y) <= 1] == 1) and np.all(c[np.abs(y) >= 2] == 0)
    assert np.all(np.diff(c[y >= 0]) <= 0)


@pytest.mark.parametrize("p", P_VALUES)
def test_support(profiles, p):
    lp = profiles[p]
    y = lp.grid.x
    outside = np.abs(y) > 2 / lp.b_c
    assert np.all(lp.Q_b.values[outside] == 0) and np.all(lp.P_b.values[outside] == 0)
    probe = np.array([-2 / lp.b_c - 1, 2 / lp.b_c + 1, 1e6])
    assert np.all(lp.evaluate(probe) == 0)


def test_evaluate_interpolates_samples(profile51):
    lp = profile51
    idx = np.arange(100, lp.grid.n - 100, 997)
    np.testing.assert_allclose(lp.evaluate(lp.grid.x[idx]), lp.Q_b.values[idx], atol=1e-13)
    b = lp.b_c * 1.01
    np.testing.assert_allclose(lp.evaluate(lp.grid.x[idx], b), lp.values_at(b)[idx],
                               atol=1e-13)


@pytest.mark.parametrize("p", P_VALUES)
def test_pb_against_q_integral(profiles, p):
    lp = profiles[p]
    pq = integrate(lp.P_b.values * ground_state(p, lp.grid.x), lp.grid)
    assert pq == pytest.approx(q_integrals(p)[0] ** 2 / 16, rel=0.15)


def test_pb_reference_constant_p5():
    assert q_integrals(5.0)[0] ** 2 / 16 == pytest.approx(0.7443, abs=1e-4)


def test_energy_scales_like_bc_cubed(profiles):
    ratios = [abs(profiles[p].energy()) / profiles[p].b_c ** 3 for p in P_VALUES]
    assert max(ratios) / min(ratios) < 3


@pytest.mark.parametrize("p", P_VALUES)
def test_energy_off_bc(profiles, p):
    """|E(Q_b)| <= C (b_c^3 + |b - b_c|) at b - b_c = +-b_c^2 with a common C."""
    lp = profiles[p]
    c0 = abs(lp.energy()) / lp.b_c**3
    for s in (-1, 1):
        bt = s * lp.b_c**2
        assert abs(lp.energy(lp.b_c + bt)) <= 2 * max(c0, 1.0) * (lp.b_c**3 + abs(bt))


def test_distance_to_ground_state(profiles):
    c2, cd, cinf = [], [], []
    for p in P_VALUES:
        lp = profiles[p]
        diff = lp.Q_b.values - ground_state(p, lp.grid.x)
        dy = differentiate(diff, lp.grid, 1, 6)
        c2.append(np.sqrt(integrate(diff**2, lp.grid)) / lp.b_c**0.5)
        cd.append(np.sqrt(integrate(dy**2, lp.grid)) / lp.b_c)
        cinf.append(np.abs(diff).max() / lp.b_c)
    for c in (c2, cd, cinf):
        assert max(c) / min(c) < 1.5


@pytest.mark.parametrize("p", P_VALUES)
def test_profile_error_is_small(profiles, p):
    lp = profiles[p]
    y = lp.grid.x
    sel = np.abs(y) <= 1 / (2 * lp.b_c)
    weighted = np.abs(lp.Phi_b.values[sel] * np.exp(np.abs(y[sel]) / 20)).max()
    assert weighted <= lp.b_c**2
