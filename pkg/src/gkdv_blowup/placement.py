"""Placing the blow-up points.

The map M sends initial centers (with synchronized scales) to the blow-up
set of the resulting solution. Blow-up time and points are extrapolated
from the tail of a run: lambda^3 is fitted by a line in t over the last
decade of its collapse, and x_j(T) adds the closed-form integral of
dx/dt = lambda^-2 under that law. ``place`` then iterates the initial
centers by damped fixed-point updates until M hits the targets.

Arbitrary targets are first spread apart by the scaling symmetry
u(t, x) -> lam^(2/(p-1)) u(lam^3 t, lam x); the answer is mapped back at the
end.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, GKdVError, RegimeError
from .modulation import ReducedState, collapse_series, reduced_flow
from .sync import (BALANCED, InitialData, PDERunner, ReducedRunner, ScaleTrack,
                   solve_sync)

log = logging.getLogger(__name__)

FIT_WINDOW = 10.0      # last decade of lambda^3
MIN_COLLAPSE = 2.0     # lambda must have fallen by this factor
MIN_R2 = 0.99
DRIFT_CONSTANT = 5.0   # |x_j(0) - x_j(T)| <= DRIFT_CONSTANT / b_c


# ----------------------------------------------------------------------------
# blow-up extrapolation


@dataclass
class BlowupEstimate:
    T: float                 # mean of the per-bubble fits
    x: np.ndarray            # extrapolated blow-up points
    T_bubbles: np.ndarray
    slopes: np.ndarray       # fitted d(lambda^3)/dt
    r2: np.ndarray
    t_last: float
    x_last: np.ndarray
    x_first: np.ndarray
    window_spread: float     # |T(window) - T(window^2)| / T, estimator sensitivity

    def __iter__(self):
        return iter((self.T, self.x))

    @property
    def spread(self):
        """Relative spread of the per-bubble blow-up times."""
        return float(np.ptp(self.T_bubbles) / abs(self.T)) if self.T else 0.0

    @property
    def drift(self):
        return np.abs(self.x - self.x_first)

    def to_dict(self):
        return {"T": self.T, "x": self.x.tolist(), "T_bubbles": self.T_bubbles.tolist(),
                "slopes": self.slopes.tolist(), "r2": self.r2.tolist(),
                "t_last": self.t_last, "spread": self.spread,
                "drift": self.drift.tolist(), "window_spread": self.window_spread}


def _track_arrays(track):
    """(t, lambda[k, n], x[k, n]) from a trajectory, scale track or tracker."""
    if hasattr(track, "series") and hasattr(track, "points"):
        t, lam, _, x = track.series()
    else:
        t, lam, x = track.t, track.lam, getattr(track, "x", None)
    if x is None:
        raise GKdVError("the run carries no tracked centers")
    t = np.asarray(t, dtype=float)
    lam = np.atleast_2d(np.asarray(lam, dtype=float))
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if lam.shape != x.shape or lam.shape[1] != len(t):
        raise GKdVError("inconsistent track shapes")
    return t, lam, x


def _line_fit(t, m):
    A = np.vstack([t - t[-1], np.ones_like(t)]).T
    (beta, alpha), *_ = np.linalg.lstsq(A, m, rcond=None)
    fit = alpha + beta * (t - t[-1])
    ss_tot = float(np.sum((m - m.mean()) ** 2))
    r2 = 1.0 - float(np.sum((m - fit) ** 2)) / ss_tot if ss_tot > 0 else 0.0
    # time measured from the last sample keeps the intercept well conditioned
    return beta, t[-1] - alpha / beta, r2


def _fit_bubble(t, lam, window):
    m = lam**3
    sel = np.nonzero(m <= window * m[-1])[0]
    sel = np.arange(min(sel[0], len(t) - 3), len(t))
    return _line_fit(t[sel], m[sel])


def estimate_blowup_data(track, window=FIT_WINDOW, min_r2=MIN_R2) -> BlowupEstimate:
    """Extrapolated blow-up time and points of a collapsing run.

    Per bubble, lambda^3 = alpha + beta t is fitted over the samples with
    lambda^3 within ``window`` of its last value, giving T_j = -alpha/beta;
    the reported T is the mean. The blow-up point follows from the tail
    integral x_j(T) = x_j(t_last) + 3 (-beta)^(-2/3) (T_j - t_last)^(1/3).
    """
    t, lam, x = _track_arrays(track)
    if len(t) < 3:
        raise RegimeError("not in self-similar regime: fewer than three samples")
    if np.any(lam[:, -1] * MIN_COLLAPSE > lam[:, 0]):
        raise RegimeError("not in self-similar regime: lambda has not fallen by a factor 2")
    k = lam.shape[0]
    slopes, T, r2, T_wide = (np.zeros(k) for _ in range(4))
    for j in range(k):
        slopes[j], T[j], r2[j] = _fit_bubble(t, lam[j], window)
        T_wide[j] = _fit_bubble(t, lam[j], window**2)[1]
    if np.any(r2 < min_r2) or np.any(slopes >= 0):
        raise RegimeError(f"not in self-similar regime: fit R^2 = {r2.min():.4f}")
    tail = np.maximum(T - t[-1], 0.0)
    x_T = x[:, -1] + 3.0 * (-slopes) ** (-2.0 / 3) * np.cbrt(tail)
    T_mean = float(T.mean())
    spread = float(abs(T_wide.mean() - T_mean) / abs(T_mean)) if T_mean else 0.0
    log.debug("blow-up fit T=%s R2=%s window spread %.2e", T, r2, spread)
    return BlowupEstimate(T_mean, x_T, T, slopes, r2, float(t[-1]), x[:, -1].copy(),
                          x[:, 0].copy(), spread)


def drift_bound(b_c, constant=DRIFT_CONSTANT):
    return constant / b_c


# ----------------------------------------------------------------------------
# scaling reduction


@dataclass(frozen=True)
class ScalingMap:
    """u(t, x) = lam_bar^(2/(p-1)) v(lam_bar^3 t, lam_bar x).

    v is the solution built for the spread-out targets; the map sends its
    times, points, scales and samples back to u.
    """

    lam_bar: float
    p: float | None = None

    @property
    def time_factor(self):
        return self.lam_bar ** -3

    @property
    def space_factor(self):
        return 1.0 / self.lam_bar

    def time(self, t_v):
        return np.asarray(t_v, dtype=float) * self.time_factor

    def points(self, x_v):
        return np.asarray(x_v, dtype=float) * self.space_factor

    def to_v(self, x_u):
        return np.asarray(x_u, dtype=float) * self.lam_bar

    def scales(self, lam_v):
        return np.asarray(lam_v, dtype=float) * self.space_factor

    def amplitude(self):
        if self.p is None:
            raise GKdVError("the amplitude factor needs p")
        return self.lam_bar ** (2.0 / (self.p - 1))

    def field(self, values_v, x_v):
        """Samples of u at the points x_v / lam_bar from samples of v at x_v."""
        return self.points(x_v), self.amplitude() * np.asarray(values_v, dtype=float)

    def estimate(self, est: BlowupEstimate) -> BlowupEstimate:
        f = self.time_factor
        return BlowupEstimate(est.T * f, self.points(est.x), est.T_bubbles * f,
                              est.slopes * self.space_factor**3 / f, est.r2, est.t_last * f,
                              self.points(est.x_last), self.points(est.x_first),
                              est.window_spread)

    def to_dict(self):
        return {"lambda_bar": self.lam_bar, "time_factor": self.time_factor,
                "space_factor": self.space_factor, "p": self.p}


def reduce_by_scaling(targets, threshold, p=None):
    """Spread the targets so their minimal distance reaches ``threshold``.

    Returns (lam_bar, scaled targets, inverse map) with
    lam_bar = max(1, threshold / min distance).
    """
    x = np.asarray(targets, dtype=float).ravel()
    if not np.all(np.isfinite(x)) or x.size == 0:
        raise GKdVError("targets must be finite")
    if threshold <= 0:
        raise GKdVError("separation threshold must be positive")
    d = _min_distance(x)
    if d == 0:
        raise GKdVError("targets must be pairwise distinct")
    lam_bar = max(1.0, threshold / d)
    return lam_bar, lam_bar * x, ScalingMap(lam_bar, p)


def _min_distance(x):
    if len(x) < 2:
        return math.inf
    return float(np.min(np.diff(np.sort(x))))


@dataclass
class PlacementProblem:
    """Targets in the original frame, the separation threshold and the
    scale factor lam_bar taking them to the working frame."""

    targets: np.ndarray
    threshold: float
    lam_bar: float = 1.0

    def __post_init__(self):
        self.targets = np.asarray(self.targets, dtype=float).ravel()
        if _min_distance(self.targets) == 0:
            raise GKdVError("targets must be pairwise distinct")
        if self.threshold <= 0 or self.lam_bar < 1:
            raise GKdVError("need threshold > 0 and lam_bar >= 1")
        if _min_distance(self.scaled_targets) < self.threshold * (1 - 1e-12):
            raise GKdVError("targets closer than the separation threshold; "
                            "use PlacementProblem.reduced")

    @classmethod
    def reduced(cls, targets, threshold):
        lam_bar, _, _ = reduce_by_scaling(targets, threshold)
        return cls(targets, threshold, lam_bar)

    @property
    def k(self):
        return len(self.targets)

    @property
    def scaled_targets(self):
        return self.lam_bar * self.targets

    def scaling(self, p=None):
        return ScalingMap(self.lam_bar, p)

    def to_dict(self):
        return {"targets": self.targets.tolist(), "threshold": self.threshold,
                "lambda_bar": self.lam_bar}


# ----------------------------------------------------------------------------
# the map M


@dataclass
class MapEvaluation:
    """One evaluation of M: synchronized initial data and its blow-up data."""

    data: InitialData
    estimate: BlowupEstimate
    track: ScaleTrack | None = None
    sync_class: str = BALANCED

    @property
    def image(self):
        return self.estimate.x


class ReducedPlacementRunner:
    """M from the reduced modulation ODEs.

    ``template`` fixes lambda_1 and every b_j; the other scales are
    re-synchronized (nested bisection) for every evaluation, then the
    synchronized flow is run until the first bubble has collapsed to
    ``floor`` times its initial scale and extrapolated.
    """

    def __init__(self, template: InitialData, model="formal", b_c=None, c_p=2.0,
                 floor=1e-2, n_samples=400, tol=1e-8, sync_rel_tol=1e-12):
        self.template, self.model, self.b_c, self.c_p = template, model, b_c, c_p
        self.floor, self.n_samples, self.tol = floor, n_samples, tol
        self.sync_rel_tol = sync_rel_tol
        self.calls = 0

    @property
    def drift_scale(self):
        return self.b_c if self.b_c is not None else min(self.template.b)

    def synchronize(self, data: InitialData):
        if data.k == 1:
            return data, BALANCED
        runner = ReducedRunner(self.model, self.b_c, self.c_p)
        res = solve_sync(data, runner, rel_tol=self.sync_rel_tol)
        return InitialData(res.scales, data.b, data.x), res.final_class

    def __call__(self, x0) -> MapEvaluation:
        self.calls += 1
        data, cls = self.synchronize(self.template.with_centers(x0))
        state = ReducedState(data.lam, data.b, data.x)
        t, _, _ = collapse_series(state, self.model, self.b_c, self.c_p, self.floor,
                                  self.n_samples)
        traj = reduced_flow(state, self.model, b_c=self.b_c, c_p=self.c_p, floor=self.floor,
                            t_eval=t)
        track = ScaleTrack(traj.t, traj.lam, traj.status, f"reduced-place-{self.calls}",
                           {"T": traj.T.tolist()}, traj.x)
        return MapEvaluation(data, estimate_blowup_data(track), track, cls)

    def to_dict(self):
        return {"runner": "reduced", "model": self.model, "b_c": self.b_c,
                "template": self.template.to_dict(), "floor": self.floor}


class PDEPlacementRunner:
    """M from full evolutions: synchronize with PDE runs, extrapolate the
    blow-up data of the final (verification) run."""

    def __init__(self, profile, grid, template: InitialData, brackets=None, collapse=3.0,
                 config_overrides=None, rel_change=1e-3, sync_rel_tol=None):
        self.runner = PDERunner(profile, grid, collapse, config_overrides, rel_change)
        self.template, self.brackets = template, brackets
        self.sync_rel_tol = sync_rel_tol
        self.tol = 2 * grid.h
        self.b_c = profile.b_c
        self.calls = 0

    @property
    def drift_scale(self):
        return self.b_c

    def __call__(self, x0) -> MapEvaluation:
        self.calls += 1
        data = self.template.with_centers(x0)
        res = solve_sync(data, self.runner, brackets=self.brackets, rel_tol=self.sync_rel_tol)
        data = InitialData(res.scales, data.b, data.x)
        return MapEvaluation(data, estimate_blowup_data(res.final_track), res.final_track,
                             res.final_class)

    def to_dict(self):
        d = self.runner.to_dict()
        d["template"] = self.template.to_dict()
        return d


# ----------------------------------------------------------------------------
# fixed-point iteration


@dataclass
class PlacementResult:
    """Outcome in the original frame (working-frame values in ``working``)."""

    initial_centers: np.ndarray
    initial_scales: np.ndarray
    blowup_set: np.ndarray
    T: float
    residual: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list)
    lam_bar: float = 1.0
    working: dict = field(default_factory=dict)
    verification: MapEvaluation | None = None

    def to_dict(self):
        return {"initial_centers": self.initial_centers.tolist(),
                "initial_scales": self.initial_scales.tolist(),
                "blowup_set": self.blowup_set.tolist(), "T": self.T,
                "residual": self.residual, "iterations": self.iterations,
                "converged": self.converged, "lambda_bar": self.lam_bar,
                "working": self.working, "history": self.history}


def place(problem: PlacementProblem, runner, max_iter=20, theta=1.0, tol=None,
          stagnation=3) -> PlacementResult:
    """Damped fixed-point iteration x0 <- x0 + theta (targets - M(x0)).

    Runs in the working (scaled) frame starting from x0 = targets. The
    residual max_j |target_j - x_j(T)| of each evaluation of M is recorded;
    the iteration stops once it is below ``tol`` (default: the runner's
    ``tol``) and fails if it has not decreased for ``stagnation``
    consecutive iterations.
    """
    if not 0 < theta <= 1:
        raise GKdVError("damping must lie in (0, 1]")
    targets = problem.scaled_targets
    tol = tol if tol is not None else runner.tol
    x0 = targets.copy()
    history = []
    best, stalled = math.inf, 0
    ev = None
    for it in range(max_iter + 1):
        if it > 0:
            x0 = x0 + theta * (targets - ev.image)
        ev = runner(x0)
        res = float(np.max(np.abs(targets - ev.image)))
        history.append({"iteration": it, "x0": x0.tolist(), "image": ev.image.tolist(),
                        "scales": list(ev.data.lam), "T": ev.estimate.T, "residual": res,
                        "sync": ev.sync_class})
        log.info("placement iteration %d: residual %.3e", it, res)
        if res < tol:
            break
        if res < best * (1 - 1e-12):
            best, stalled = res, 0
        else:
            stalled += 1
            if stalled >= stagnation:
                raise ConvergenceError(
                    f"placement residual stagnated at {res:.3e} (tol {tol:.1e})", res, history)
    converged = res < tol
    if not converged:
        log.warning("placement stopped after %d iterations with residual %.3e", it, res)
    scale = problem.scaling()
    return PlacementResult(scale.points(x0), scale.scales(ev.data.lam), scale.points(ev.image),
                           float(scale.time(ev.estimate.T)), res / problem.lam_bar, it,
                           converged, history, problem.lam_bar,
                           {"initial_centers": x0.tolist(), "blowup_set": ev.image.tolist(),
                            "T": ev.estimate.T, "residual": res, "tol": tol}, ev)


def face_check(problem: PlacementProblem, runner, r=None):
    """|M(y) - y|_inf < r at the centers of the 2k faces of [targets +- r].

    ``r`` defaults to the drift bound DRIFT_CONSTANT / b_c. Returns a list of
    (bubble index, side, |M(y) - y|_inf, holds) and r.
    """
    targets = problem.scaled_targets
    r = r if r is not None else drift_bound(runner.drift_scale)
    out = []
    for j, side in itertools.product(range(problem.k), (-1, 1)):
        y = targets.copy()
        y[j] += side * r
        ev = runner(y)
        dev = float(np.max(np.abs(ev.image - y)))
        out.append((j, side, dev, dev < r))
    return out, r
