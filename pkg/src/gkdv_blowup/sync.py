"""Choosing initial scales so that all bubbles collapse together.

A run is classified by the ratio lambda_i/lambda_j of two tracked scales:
Below / Above when it leaves the band [2^-(k+1), 2^(k+1)] (or when, at the
end of the run, it has drifted from its initial value by the escape trigger
10/9, after which it only moves further away), Balanced otherwise. Bisection on one initial scale
between a Below and an Above candidate then locates the balanced scale;
for k > 2 the choices are nested, the inner scales being re-solved for
every candidate of an outer one.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BracketError, GKdVError
from .grid import Grid
from .modulation import (BubbleParams, DecompositionTracker, ReducedState, collapse_series,
                         synthesize)
from .pde import EvolutionConfig, evolve

log = logging.getLogger(__name__)

BELOW, ABOVE, BALANCED = "Below", "Above", "Balanced"


@dataclass(frozen=True)
class BandPolicy:
    k: int
    trigger: float = 10.0 / 9.0

    def __post_init__(self):
        if self.k < 1:
            raise GKdVError("need at least one bubble")
        if not 1 < self.trigger < self.upper:
            raise GKdVError("trigger ratio must lie in (1, upper)")

    @property
    def lower(self):
        return 2.0 ** (-(self.k + 1))

    @property
    def upper(self):
        return 2.0 ** (self.k + 1)

    def to_dict(self):
        return {"k": self.k, "lower": self.lower, "upper": self.upper, "trigger": self.trigger}


@dataclass
class ScaleTrack:
    """Tracked scales of one run: t[n], lam[k, n], optionally the centers
    x[k, n], and the terminal status."""

    t: np.ndarray
    lam: np.ndarray
    status: str = "completed"
    run_id: str = ""
    extra: dict = field(default_factory=dict)
    x: np.ndarray | None = None

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.lam = np.atleast_2d(np.asarray(self.lam, dtype=float))
        if self.x is not None:
            self.x = np.atleast_2d(np.asarray(self.x, dtype=float))

    def ratio(self, i, j):
        return self.lam[i] / self.lam[j]


def classify(track: ScaleTrack, policy: BandPolicy, i, j):
    """Below / Above / Balanced for the ratio lambda_i/lambda_j of a run."""
    if track is None or track.lam.size == 0 or len(track.t) == 0:
        raise GKdVError("run carries no tracked scales")
    if max(i, j) >= track.lam.shape[0]:
        raise GKdVError("bubble index out of range for the tracked run")
    r = track.ratio(i, j)
    below = np.nonzero(r < policy.lower)[0]
    above = np.nonzero(r > policy.upper)[0]
    if below.size or above.size:
        first_below = below[0] if below.size else math.inf
        first_above = above[0] if above.size else math.inf
        return BELOW if first_below < first_above else ABOVE
    # monotone escape: once the ratio has drifted from its initial value by
    # the trigger factor it keeps moving away
    drift = r[-1] / r[0]
    if drift >= policy.trigger:
        return ABOVE
    if drift <= 1.0 / policy.trigger:
        return BELOW
    return BALANCED


def reduced_sync(lambda_1, b):
    """Scales with equal formal blow-up times lambda_j^3/(3 b_j)."""
    b = np.asarray(b, dtype=float)
    if np.any(b <= 0):
        raise GKdVError("all b_j must be positive")
    if not lambda_1 > 0:
        raise GKdVError("lambda_1 must be positive")
    return [float(lambda_1 * (bj / b[0]) ** (1.0 / 3)) for bj in b]


# ----------------------------------------------------------------------------
# runners


@dataclass
class InitialData:
    lam: list
    b: list
    x: list

    def __post_init__(self):
        self.lam = [float(v) for v in self.lam]
        self.b = [float(v) for v in self.b]
        self.x = [float(v) for v in self.x]
        if not len(self.lam) == len(self.b) == len(self.x):
            raise GKdVError("initial data needs lambda, b and x per bubble")

    @property
    def k(self):
        return len(self.lam)

    def with_scale(self, j, value):
        lam = list(self.lam)
        lam[j] = float(value)
        return InitialData(lam, self.b, self.x)

    def with_centers(self, x):
        return InitialData(self.lam, self.b, list(x))

    def bubbles(self):
        return [BubbleParams(l, bb, xx) for l, bb, xx in zip(self.lam, self.b, self.x)]

    def to_dict(self):
        return {"lambda": self.lam, "b": self.b, "x": self.x}


class ReducedRunner:
    """Classification oracle from the reduced modulation ODEs."""

    rel_tol = 1e-9

    def __init__(self, model="formal", b_c=None, c_p=2.0, floor=1e-6, n_samples=400,
                 verify_floor=1e-2):
        self.model, self.b_c, self.c_p = model, b_c, c_p
        self.floor, self.n_samples = floor, n_samples
        self.verify_floor = verify_floor
        self.calls = 0

    def __call__(self, data: InitialData, floor=None) -> ScaleTrack:
        self.calls += 1
        st = ReducedState(data.lam, data.b, data.x)
        t, lam, T = collapse_series(st, self.model, self.b_c, self.c_p, floor or self.floor,
                                    self.n_samples)
        return ScaleTrack(t, lam, "blow-up", f"reduced-{self.calls}", {"T": T.tolist()})

    def verify(self, data: InitialData) -> ScaleTrack:
        """Run to a moderate collapse: with exact ODEs any nonzero mismatch
        eventually escapes, so the deep bisection horizon cannot certify
        balance at finite precision."""
        return self(data, floor=self.verify_floor)

    def to_dict(self):
        return {"runner": "reduced", "model": self.model, "b_c": self.b_c, "c_p": self.c_p,
                "floor": self.floor}


class PDERunner:
    """Classification oracle from full evolutions with a decomposition tracker.

    Each call synthesizes the bubbles on ``grid``, evolves until the smallest
    tracked scale has fallen by ``collapse`` (default 3) and returns the
    tracked scales. Reports of every call are kept in ``reports``.
    """

    rel_tol = 1e-3   # default bisection width: each call is a full evolution

    def __init__(self, profile, grid: Grid, collapse=3.0, config_overrides=None,
                 rel_change=1e-3, t_end=None):
        self.profile, self.grid, self.collapse = profile, grid, collapse
        self.overrides = dict(config_overrides or {})
        self.rel_change = rel_change
        self.t_end = t_end
        self.calls = 0
        self.reports = []

    def evolution_config(self, data: InitialData):
        lam_min = min(data.lam)
        # generous time budget: the formal law collapses by `collapse` before this
        t_end = self.t_end or 2.0 * max(l**3 / (3 * b) for l, b in zip(data.lam, data.b))
        kw = dict(p=self.profile.p, grid=self.grid, t_end=t_end,
                  min_scale=lam_min / self.collapse, sponge_width=0.05, sample_every=50)
        kw.update(self.overrides)
        return EvolutionConfig(**kw)

    def run(self, data: InitialData):
        self.calls += 1
        bubbles = data.bubbles()
        u0 = synthesize(bubbles, self.profile, self.grid)
        tracker = DecompositionTracker(self.profile, bubbles, rel_change=self.rel_change)
        report = evolve(u0, self.evolution_config(data), [tracker])
        self.reports.append(report)
        return report, tracker

    def __call__(self, data: InitialData) -> ScaleTrack:
        report, tracker = self.run(data)
        t, lam, _, x = tracker.series()
        log.info("pde run %d: lambda0=%s status=%s final ratio=%s", self.calls, data.lam,
                 report.status, (lam[:, -1] / lam[0, -1]).tolist())
        return ScaleTrack(t, lam, report.status, f"pde-{self.calls}",
                          {"t_final": report.t_final, "steps": report.steps}, x)

    def to_dict(self):
        return {"runner": "pde", "grid": self.grid.to_dict(), "collapse": self.collapse,
                "overrides": {k: v for k, v in self.overrides.items()}}


# ----------------------------------------------------------------------------
# bisection


@dataclass
class SyncResult:
    scales: list
    history: list = field(default_factory=list)
    final_class: str = ""
    run_id: str = ""
    runner_calls: int = 0
    band_margin: float = float("nan")
    final_track: ScaleTrack | None = None

    def to_dict(self):
        return {"scales": self.scales, "final_class": self.final_class, "run_id": self.run_id,
                "runner_calls": self.runner_calls, "band_margin": self.band_margin,
                "history": [{"bubble": j + 1, "candidate": c, "class": cl}
                            for j, c, cl in self.history]}


def bisect_scale(j, bracket, fixed: InitialData, runner, policy: BandPolicy, max_iter=200,
                 rel_tol=1e-9, ref=0, inner=None, history=None):
    """Bisection on the initial scale of bubble ``j`` (0-based).

    ``inner(data) -> data`` re-solves the scales of lower-index bubbles for
    each candidate (nested choice). Returns (scale, history, last data,
    last track, last class).
    """
    history = [] if history is None else history

    def evaluate(value):
        data = fixed.with_scale(j, value)
        if inner is not None:
            data = inner(data)
        track = runner(data)
        cls = classify(track, policy, j, ref)
        history.append((j, float(value), cls))
        return cls, data, track

    a, c = float(min(bracket)), float(max(bracket))
    if not 0 < a < c:
        raise BracketError("bracket must be an increasing pair of positive scales", history)
    cls_a, data_a, track_a = evaluate(a)
    if cls_a == BALANCED:
        return a, history, data_a, track_a, cls_a
    cls_c, data_c, track_c = evaluate(c)
    if cls_c == BALANCED:
        return c, history, data_c, track_c, cls_c
    if cls_a == cls_c:
        raise BracketError(f"bracket invalid: both ends classify {cls_a} for bubble {j + 1}",
                           history)
    last = (cls_c, data_c, track_c)
    for _ in range(max_iter):
        mid = 0.5 * (a + c)
        if (c - a) <= rel_tol * mid:
            break
        cls_m, data_m, track_m = evaluate(mid)
        last = (cls_m, data_m, track_m)
        if cls_m == BALANCED:
            return mid, history, data_m, track_m, cls_m
        if cls_m == cls_a:
            a = mid
        else:
            c = mid
    mid = 0.5 * (a + c)
    return mid, history, last[1].with_scale(j, mid), last[2], last[0]


def default_bracket(data: InitialData, j, widen=2.0):
    guess = reduced_sync(data.lam[0], [data.b[0], data.b[j]])[1]
    return (guess / widen, guess * widen)


def solve_sync(template: InitialData, runner, policy: BandPolicy | None = None, brackets=None,
               rel_tol=None, max_iter=200) -> SyncResult:
    """Nested bisection for the scales of bubbles 2..k (bubble 1 is fixed).

    The scale of bubble j is chosen with the scales of bubbles 2..j-1
    re-solved for every candidate, bubbles j+1..k held at their current
    values; the outermost level is bubble k. ``rel_tol`` defaults to the
    runner's ``rel_tol``.
    """
    k = template.k
    policy = policy or BandPolicy(k)
    if rel_tol is None:
        rel_tol = getattr(runner, "rel_tol", 1e-9)
    if k == 1:
        track = runner(template)
        return SyncResult(list(template.lam), [], BALANCED, track.run_id,
                          getattr(runner, "calls", 0), final_track=track)
    brackets = dict(brackets or {})
    history = []
    calls0 = getattr(runner, "calls", 0)

    def solve_upto(j, data):
        """Fix the scales of bubbles 1..j (0-based j) given the others."""
        if j == 0:
            return data
        br = brackets.get(j) or default_bracket(data, j)
        inner = (lambda d: solve_upto(j - 1, d)) if j > 1 else None
        scale, *_ = bisect_scale(j, br, data, runner, policy, max_iter, rel_tol, 0, inner,
                                 history)
        out = data.with_scale(j, scale)
        return inner(out) if inner is not None else out

    final = solve_upto(k - 1, template)
    # verification run at the chosen scales
    track = getattr(runner, "verify", runner)(final)
    classes = [classify(track, policy, j, 0) for j in range(1, k)]
    final_class = BALANCED if all(c == BALANCED for c in classes) else \
        next(c for c in classes if c != BALANCED)
    r = track.lam / track.lam[0]
    margin = float(min(np.min(np.log(policy.upper) - np.log(r[1:])),
                       np.min(np.log(r[1:]) - np.log(policy.lower))))
    return SyncResult(list(final.lam), history, final_class, track.run_id,
                      getattr(runner, "calls", 0) - calls0, margin, track)
