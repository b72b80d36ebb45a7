import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gkdv_blowup.errors import BracketError, GKdVError
from gkdv_blowup.modulation import ReducedState, collapse_series, reduced_flow
from gkdv_blowup.sync import (ABOVE, BALANCED, BELOW, BandPolicy, InitialData, ReducedRunner,
                              ScaleTrack, bisect_scale, classify, reduced_sync, solve_sync)


def pair(lam2, b=(0.02, 0.02)):
    return InitialData([1.0, lam2], list(b), [0.0, 400.0])


@pytest.mark.parametrize("k", [1, 2, 3, 5])
def test_band_policy(k):
    pol = BandPolicy(k)
    assert pol.lower * pol.upper == 1.0 and pol.upper == 2 ** (k + 1)
    assert pol.trigger < pol.upper


@pytest.mark.parametrize("kw", [{"k": 0}, {"k": 2, "trigger": 1.0}, {"k": 1, "trigger": 5.0}])
def test_band_policy_validation(kw):
    with pytest.raises(GKdVError):
        BandPolicy(**kw)


def test_classify_escape_above():
    track = ReducedRunner()(pair(1.5))
    assert classify(track, BandPolicy(2), 1, 0) == ABOVE
    assert classify(track, BandPolicy(2), 0, 1) == BELOW


def test_classify_synchronized_pair():
    lam = reduced_sync(1.0, [0.02, 0.05])
    runner = ReducedRunner()
    track = runner.verify(pair(lam[1], (0.02, 0.05)))
    assert classify(track, BandPolicy(2), 1, 0) == BALANCED


def test_classify_constant_ratio():
    t = np.linspace(0, 1, 50)
    track = ScaleTrack(t, np.vstack([np.ones(50), 1.5 * np.ones(50)]))
    assert classify(track, BandPolicy(2), 1, 0) == BALANCED


@pytest.mark.parametrize("r,expected", [(0.1, BELOW), (9.0, ABOVE)])
def test_classify_band_crossing(r, expected):
    t = np.linspace(0, 1, 5)
    lam2 = np.array([1.0, 1.0, r, 1.0, 1.0])
    assert classify(ScaleTrack(t, np.vstack([np.ones(5), lam2])), BandPolicy(2), 1, 0) == expected


def test_classify_first_crossing_wins():
    t = np.linspace(0, 1, 4)
    lam2 = np.array([1.0, 0.1, 9.0, 9.0])
    assert classify(ScaleTrack(t, np.vstack([np.ones(4), lam2])), BandPolicy(2), 1, 0) == BELOW


def test_classify_needs_tracked_scales():
    with pytest.raises(GKdVError):
        classify(ScaleTrack([], np.zeros((2, 0))), BandPolicy(2), 1, 0)
    with pytest.raises(GKdVError):
        classify(None, BandPolicy(2), 1, 0)
    with pytest.raises(GKdVError):
        classify(ScaleTrack([0.0], [[1.0]]), BandPolicy(2), 1, 0)


@pytest.mark.parametrize("b,expected", [((0.02, 0.02), [1.0, 1.0]), ((0.02, 0.16), [1.0, 2.0])])
def test_reduced_sync_examples(b, expected):
    np.testing.assert_allclose(reduced_sync(1.0, b), expected, rtol=1e-15)


def test_reduced_sync_common_blowup_time():
    b = [0.02, 0.035, 0.11]
    lam = reduced_sync(0.8, b)
    traj = reduced_flow(ReducedState(lam, b, [0.0, 400.0, 800.0]), "formal")
    assert np.ptp(traj.T) < 1e-9


@pytest.mark.parametrize("b", [[0.02, 0.0], [-0.1, 0.02]])
def test_reduced_sync_rejects_nonpositive_b(b):
    with pytest.raises(GKdVError):
        reduced_sync(1.0, b)


def test_bisect_recovers_cube_root():
    runner = ReducedRunner()
    hist = []
    scale, hist, *_ = bisect_scale(1, (1.0, 4.0), pair(1.0, (0.02, 0.16)), runner,
                                   BandPolicy(2), history=hist)
    assert scale == pytest.approx(2.0, abs=1e-9)
    assert all(cls in (BELOW, ABOVE, BALANCED) for _, _, cls in hist)


def test_bisect_width_halves():
    """Candidates after the two endpoints are successive midpoints."""
    _, hist, *_ = bisect_scale(1, (1.0, 4.0), pair(1.0, (0.02, 0.16)), ReducedRunner(),
                               BandPolicy(2), max_iter=6)
    cand = [c for _, c, _ in hist[2:]]
    steps = np.abs(np.diff(cand))
    np.testing.assert_allclose(steps[1:] / steps[:-1], 0.5)


def test_bisect_invalid_bracket():
    with pytest.raises(BracketError, match="bracket invalid") as info:
        bisect_scale(1, (2.5, 4.0), pair(1.0, (0.02, 0.16)), ReducedRunner(), BandPolicy(2))
    assert len(info.value.history) == 2
    with pytest.raises(BracketError):
        bisect_scale(1, (0.0, 4.0), pair(1.0), ReducedRunner(), BandPolicy(2))


@pytest.mark.parametrize("b", [(0.02, 0.16), (0.02, 0.02), (0.05, 0.03)])
def test_solve_sync_matches_closed_form_k2(b):
    res = solve_sync(pair(1.0, b), ReducedRunner())
    np.testing.assert_allclose(res.scales, reduced_sync(1.0, b), rtol=0, atol=1e-9)
    assert res.final_class == BALANCED
    assert res.runner_calls == len(res.history) + 1


@pytest.mark.parametrize("b", [(0.02, 0.02, 0.02), (0.02, 0.04, 0.03)])
def test_solve_sync_matches_closed_form_k3(b):
    data = InitialData([1.0, 1.0, 1.0], list(b), [0.0, 400.0, 800.0])
    res = solve_sync(data, ReducedRunner())
    np.testing.assert_allclose(res.scales, reduced_sync(1.0, b), rtol=0, atol=1e-9)
    assert res.final_class == BALANCED


def test_solve_sync_damped_model():
    b_c = 0.02
    b = (b_c, b_c + b_c**2)
    res = solve_sync(pair(1.0, b), ReducedRunner("damped", b_c=b_c))
    assert res.final_class == BALANCED
    t, lam, T = collapse_series(ReducedState(res.scales, b, [0.0, 400.0]), "damped", b_c)
    assert np.ptp(T) < 1e-8 * T.max()


def test_solve_sync_single_bubble():
    res = solve_sync(InitialData([1.0], [0.02], [0.0]), ReducedRunner())
    assert res.scales == [1.0] and res.final_class == BALANCED


def test_label_equivariance():
    b = [0.02, 0.05, 0.1]
    data = InitialData([1.0] * 3, b, [0.0, 400.0, 800.0])
    perm = InitialData([1.0] * 3, [b[0], b[2], b[1]], [0.0, 800.0, 400.0])
    a = solve_sync(data, ReducedRunner()).scales
    c = solve_sync(perm, ReducedRunner()).scales
    np.testing.assert_allclose([c[0], c[2], c[1]], a, atol=1e-9)


def test_bracket_independence():
    data = pair(1.0, (0.02, 0.16))
    tol = ReducedRunner.rel_tol
    a = solve_sync(data, ReducedRunner(), brackets={1: (1.0, 4.0)}).scales[1]
    c = solve_sync(data, ReducedRunner(), brackets={1: (1.3, 2.9)}).scales[1]
    assert abs(a - c) < 2 * tol * a


def test_inner_bracket_error_surfaces_history():
    data = InitialData([1.0] * 3, [0.02] * 3, [0.0, 400.0, 800.0])
    with pytest.raises(BracketError) as info:
        solve_sync(data, ReducedRunner(), brackets={1: (1.5, 3.0)})
    assert info.value.history


@settings(max_examples=25, deadline=None)
@given(r0=st.floats(10 / 9, 3.0), db=st.floats(-1.0, 1.0))
def test_monotone_escape_damped(r0, db):
    """Once lambda_2/lambda_1 >= 10/9 the ratio keeps growing (b near b_c)."""
    b_c = 0.02
    b = [b_c, b_c + db * b_c**3]
    t, lam, _ = collapse_series(ReducedState([1.0, r0], b, [0.0, 400.0]), "damped", b_c)
    r = lam[1] / lam[0]
    assert np.all(np.diff(r) >= -1e-12 * r[1:])
