import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gkdv_blowup.errors import ConvergenceError, GKdVError, RegimeError
from gkdv_blowup.modulation import ReducedState, reduced_flow
from gkdv_blowup.placement import (BlowupEstimate, MapEvaluation, PlacementProblem,
                                   ReducedPlacementRunner, ScalingMap, drift_bound,
                                   estimate_blowup_data, face_check, place, reduce_by_scaling)
from gkdv_blowup.sync import InitialData, ScaleTrack, reduced_sync

B_C = 0.02


def formal_track(lam0, b0, x0, t_stop):
    state = ReducedState(lam0, b0, x0)
    traj = reduced_flow(state, "formal", t_end=t_stop, n_samples=400)
    return ScaleTrack(traj.t, traj.lam, traj.status, x=traj.x), traj


def pair_runner(b=(B_C, B_C), model="formal"):
    return ReducedPlacementRunner(InitialData([1.0, 1.0], list(b), [0.0, 0.0]), model,
                                  b_c=B_C)


# ----------------------------------------------------------------------------
# extrapolation


@pytest.mark.parametrize("lam0,b0", [(1.0, 0.02), (0.8, 0.05), (1.0, 0.011)])
def test_formal_extrapolation_exact(lam0, b0):
    T = lam0**3 / (3 * b0)
    track, traj = formal_track([lam0], [b0], [3.0], 0.999 * T)
    est = estimate_blowup_data(track)
    assert est.T == pytest.approx(T, abs=1e-10 * T)
    tail = 3 ** (1 / 3) * b0 ** (-2 / 3) * (T - traj.t[-1]) ** (1 / 3)
    assert est.x[0] == pytest.approx(traj.x[0, -1] + tail, abs=1e-10)
    # the whole drift of the formal law is lambda0 / b0
    assert est.x[0] - 3.0 == pytest.approx(lam0 / b0, rel=1e-10)
    assert est.r2[0] == pytest.approx(1.0, abs=1e-12)


def test_synchronized_pair_spread():
    b = [0.02, 0.03]
    lam = reduced_sync(1.0, b)
    T = lam[0] ** 3 / (3 * b[0])
    track, _ = formal_track(lam, b, [0.0, 400.0], 0.999 * T)
    assert estimate_blowup_data(track).spread < 0.01


@pytest.mark.parametrize("lam0", [0.3, 0.7, 1.0])
def test_drift_bound_formal(lam0):
    T = lam0**3 / (3 * B_C)
    track, _ = formal_track([lam0], [B_C], [0.0], 0.999 * T)
    est = estimate_blowup_data(track)
    assert est.drift[0] <= drift_bound(B_C)


def test_regime_error_short_collapse():
    track, _ = formal_track([1.0], [0.02], [0.0], 5.0)
    with pytest.raises(RegimeError, match="self-similar"):
        estimate_blowup_data(track)


def test_regime_error_poor_fit():
    t = np.linspace(0, 10, 200)
    lam = np.cbrt(np.exp(-t) + 1e-4 * np.sin(40 * t) ** 2 + 1e-4)
    track = ScaleTrack(t, lam[None, :], x=np.zeros((1, 200)))
    with pytest.raises(RegimeError):
        estimate_blowup_data(track)


def test_track_without_centers():
    with pytest.raises(GKdVError, match="centers"):
        estimate_blowup_data(ScaleTrack(np.linspace(0, 1, 5), np.ones((1, 5))))


# ----------------------------------------------------------------------------
# scaling reduction


def test_reduce_by_scaling_examples():
    lam_bar, scaled, _ = reduce_by_scaling([0.0, 1.0], 400)
    assert lam_bar == 400 and scaled.tolist() == [0.0, 400.0]
    lam_bar, scaled, _ = reduce_by_scaling([0.0, 500.0, -700.0], 400)
    assert lam_bar == 1 and scaled.tolist() == [0.0, 500.0, -700.0]


def test_reduce_by_scaling_errors():
    with pytest.raises(GKdVError, match="distinct"):
        reduce_by_scaling([1.0, 2.0, 1.0], 400)
    with pytest.raises(GKdVError):
        reduce_by_scaling([0.0, 1.0], 0.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=5, unique=True),
       st.floats(1.0, 1e3))
def test_scaling_round_trip(targets, threshold):
    x = np.array(targets)
    if np.min(np.diff(np.sort(x))) < 1e-6:
        return
    lam_bar, scaled, inv = reduce_by_scaling(x, threshold)
    assert np.min(np.diff(np.sort(scaled))) >= threshold * (1 - 1e-12)
    np.testing.assert_allclose(inv.points(scaled), x, rtol=1e-15, atol=1e-12)


def test_blowup_time_transforms():
    """T_u = lam_bar^-3 T_v between a spread-out solution v and u."""
    lam_bar, p = 4.0, 5.1
    lam_v, b, x_v = [1.0, 1.0], [0.02, 0.02], [0.0, 400.0]
    inv = ScalingMap(lam_bar, p)
    Tv = lam_v[0] ** 3 / (3 * b[0])
    tv, _ = formal_track(lam_v, b, x_v, 0.999 * Tv)
    tu, _ = formal_track(inv.scales(lam_v), b, inv.points(x_v), 0.999 * Tv / lam_bar**3)
    ev, eu = estimate_blowup_data(tv), estimate_blowup_data(tu)
    assert eu.T == pytest.approx(lam_bar**-3 * ev.T, rel=1e-12)
    mapped = inv.estimate(ev)
    assert mapped.T == pytest.approx(eu.T, rel=1e-12)
    np.testing.assert_allclose(mapped.x, eu.x, rtol=1e-10)
    np.testing.assert_allclose(mapped.slopes, eu.slopes, rtol=1e-10)
    assert inv.amplitude() == pytest.approx(lam_bar ** (2 / (p - 1)))


def test_problem_requires_separation():
    with pytest.raises(GKdVError, match="reduced"):
        PlacementProblem([0.0, 10.0], 400.0)
    prob = PlacementProblem.reduced([0.0, 10.0], 400.0)
    assert prob.lam_bar == 40 and np.min(np.diff(prob.scaled_targets)) == 400


# ----------------------------------------------------------------------------
# placement


def test_place_two_bubbles():
    prob = PlacementProblem.reduced([0.0, 300.0], 8 / B_C)
    res = place(prob, pair_runner())
    assert res.converged and res.iterations <= 5 and res.residual < 1e-6
    np.testing.assert_allclose(res.blowup_set, [0.0, 300.0], atol=1e-6)
    # formal law: every center drifts by lambda_0 / b
    np.testing.assert_allclose(res.initial_centers, [0 - 1 / (B_C * prob.lam_bar),
                                                     300 - 1 / (B_C * prob.lam_bar)], atol=1e-6)
    res_hist = [h["residual"] for h in res.history]
    assert all(a > b for a, b in zip(res_hist, res_hist[1:]))
    for h in res.history:
        assert np.max(np.abs(np.subtract(h["image"], h["x0"]))) <= drift_bound(B_C)


def test_place_single_bubble_one_iteration():
    runner = ReducedPlacementRunner(InitialData([1.0], [B_C], [0.0]), b_c=B_C)
    res = place(PlacementProblem([37.0], 400.0), runner)
    assert res.iterations == 1 and res.residual < runner.tol


def test_place_unequal_b():
    prob = PlacementProblem([-250.0, 250.0, 800.0], 8 / B_C)
    runner = ReducedPlacementRunner(InitialData([1.0] * 3, [B_C, 0.024, 0.03], [0.0] * 3),
                                    b_c=B_C)
    res = place(prob, runner)
    assert res.converged and res.iterations <= 5
    np.testing.assert_allclose(res.blowup_set, prob.targets, atol=1e-6)


@settings(max_examples=5, deadline=None)
@given(st.floats(-1000.0, 1000.0))
def test_place_translation_equivariance(c):
    base = place(PlacementProblem([0.0, 420.0], 400.0), pair_runner((B_C, 0.025)))
    shifted = place(PlacementProblem([c, c + 420.0], 400.0), pair_runner((B_C, 0.025)))
    np.testing.assert_allclose(shifted.initial_centers, base.initial_centers + c, atol=1e-7)
    np.testing.assert_allclose(shifted.blowup_set, base.blowup_set + c, atol=1e-7)


def test_face_check_formal():
    prob = PlacementProblem.reduced([0.0, 300.0], 8 / B_C)
    faces, r = face_check(prob, pair_runner())
    assert r == drift_bound(B_C) and len(faces) == 4
    assert all(ok for *_, ok in faces)
    assert all(dev == pytest.approx(1 / B_C, rel=1e-8) for _, _, dev, _ in faces)


class StuckRunner:
    tol = 1e-8

    def __call__(self, x0):
        x = np.asarray(x0, dtype=float)
        est = BlowupEstimate(1.0, np.zeros_like(x), np.ones(len(x)), -np.ones(len(x)),
                             np.ones(len(x)), 0.5, x, x, 0.0)
        return MapEvaluation(InitialData([1.0] * len(x), [B_C] * len(x), list(x)), est)


def test_place_stagnation_error():
    with pytest.raises(ConvergenceError, match="stagnated") as info:
        place(PlacementProblem([100.0, 600.0], 400.0), StuckRunner())
    assert len(info.value.history) == 4


def test_place_theta_range():
    with pytest.raises(GKdVError):
        place(PlacementProblem([0.0], 1.0), StuckRunner(), theta=0.0)
