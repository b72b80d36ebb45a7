"""Pseudo-spectral time stepping of gKdV on a periodic box.

    u_t + (u_xx + u|u|^(p-1))_x = 0

The linear dispersion is integrated exactly in Fourier space (a mode e^{ikx}
picks up the phase e^{i k^3 t}); the nonlinear flux is advanced by classical
RK4 on the integrating-factor variable, with the 2/3 rule applied to the
product. An optional sponge damps a collar at the box edge so radiation does
not wrap around.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.fft

from .errors import GKdVError, GridError, ObserverError
from .grid import Field, Grid

log = logging.getLogger(__name__)

STATUSES = ("completed", "blow-up-detected", "min-scale-reached", "gradient-cap-reached")


def _workers():
    try:
        return max(1, int(os.environ.get("GKDV_THREADS", "1")))
    except ValueError:
        return 1


def nonlinear_flux(u, p):
    """|u|^(p-1) u evaluated as sign(u)|u|^p (real arithmetic throughout)."""
    return np.sign(u) * np.abs(u) ** p


@dataclass
class EvolutionConfig:
    p: float
    grid: Grid
    t_end: float
    dt: float | None = None          # fixed step; None selects the adaptive rule
    safety: float = 0.5
    cfl: float = 0.5                 # adaptive dt = safety*cfl*h/(1 + p max|u|^(p-1))
    dt_max: float = 1e-2
    min_scale: float | None = None   # stop when the tracked scale drops below this
    grad_cap: float | None = None    # stop when ||u_x||_2 exceeds this
    sponge_width: float = 0.0        # fraction of the box used as damping collar
    sponge_strength: float = 1.0
    dealias: bool = True
    nonlinear: bool = True           # test hook: False gives the pure Airy flow
    sample_every: int = 10           # diagnostics stride in steps
    max_steps: int = 10_000_000

    def __post_init__(self):
        if not self.grid.periodic:
            raise GridError("evolution requires a periodic grid")
        if self.dt is not None and not self.dt > 0:
            raise GKdVError("dt must be positive")
        if not 0 < self.safety <= 1:
            raise GKdVError("safety factor must lie in (0, 1]")
        if not 0 <= self.sponge_width <= 0.05:
            raise GKdVError("sponge collar may use at most 5% of the box")
        if not self.t_end >= 0:
            raise GKdVError("t_end must be nonnegative")

    def to_dict(self):
        d = asdict(self)
        d["grid"] = self.grid.to_dict()
        return d


@dataclass(frozen=True)
class DiagnosticsSample:
    t: float
    mass: float
    energy: float
    E2: float
    grad_norm: float

    def as_row(self):
        return [self.t, self.mass, self.energy, self.E2, self.grad_norm]


def invariants(u: Field, p, t=0.0) -> DiagnosticsSample:
    """Mass, energy, the pseudo-energy E2 and ||u_x||_2 of a periodic field."""
    grid = u.grid
    if not grid.periodic:
        raise GridError("invariants are computed on periodic grids")
    k = grid.wavenumbers
    uh = np.fft.rfft(u.values)
    ik = 1j * k
    if grid.n % 2 == 0:
        ik = ik.copy()
        ik[-1] = 0.0
    ux = np.fft.irfft(ik * uh, n=grid.n)
    uxx = np.fft.irfft(-(k * k) * uh, n=grid.n)
    h = grid.h
    au = np.abs(u.values)
    mass = float(np.sum(u.values**2) * h)
    grad2 = float(np.sum(ux * ux) * h)
    energy = 0.5 * grad2 - float(np.sum(au ** (p + 1)) * h) / (p + 1)
    e2 = float(np.sum(uxx * uxx) * h) - 5 * p / 3 * float(np.sum(ux * ux * au ** (p - 1)) * h)
    return DiagnosticsSample(float(t), mass, energy, e2, math.sqrt(grad2))


class Stepper:
    """Integrating-factor RK4 on a fixed periodic grid."""

    def __init__(self, grid: Grid, p, dealias=True, nonlinear=True):
        if not grid.periodic:
            raise GridError("the spectral stepper needs a periodic grid")
        self.grid, self.p, self.nonlinear = grid, p, nonlinear
        k = grid.wavenumbers
        self.k = k
        self.ik = 1j * k
        self.mask = np.ones_like(k)
        if dealias:
            self.mask[np.abs(k) > (2.0 / 3.0) * np.abs(k).max()] = 0.0
        if grid.n % 2 == 0:
            self.ik = self.ik.copy()
            self.ik[-1] = 0.0
        self.n = grid.n
        self._dt = None
        self.workers = _workers()

    def _factors(self, dt):
        if dt != self._dt:
            self._dt = dt
            self._e_half = np.exp(0.5j * self.k**3 * dt)
            self._e_full = self._e_half**2
        return self._e_half, self._e_full

    def _rhs(self, uh):
        u = scipy.fft.irfft(uh, n=self.n, workers=self.workers)
        fh = scipy.fft.rfft(nonlinear_flux(u, self.p), workers=self.workers)
        return -self.ik * self.mask * fh

    def step_hat(self, uh, dt):
        e1, e2 = self._factors(dt)
        if not self.nonlinear:
            return e2 * uh
        k1 = dt * self._rhs(uh)
        k2 = dt * self._rhs(e1 * (uh + 0.5 * k1))
        k3 = dt * self._rhs(e1 * uh + 0.5 * k2)
        k4 = dt * self._rhs(e2 * uh + e1 * k3)
        return e2 * uh + (e2 * k1 + 2 * e1 * (k2 + k3) + k4) / 6.0

    def to_hat(self, values):
        return scipy.fft.rfft(values, workers=self.workers)

    def to_real(self, uh):
        return scipy.fft.irfft(uh, n=self.n, workers=self.workers)


def step(u: Field, dt, p, nonlinear=True, dealias=True) -> Field:
    """Advance ``u`` by one integrating-factor RK4 step of size ``dt``.

    Raises :class:`GKdVError` when the result is not finite; :func:`evolve`
    turns that into the blow-up-detected status.
    """
    if not dt > 0:
        raise GKdVError("dt must be positive")
    st = Stepper(u.grid, p, dealias=dealias, nonlinear=nonlinear)
    out = st.to_real(st.step_hat(st.to_hat(u.values), dt))
    if not np.all(np.isfinite(out)):
        raise GKdVError("non-finite state after step (blow-up detected)")
    return Field(u.grid, out)


def sponge_profile(grid: Grid, width_fraction, strength):
    """Damping rate sigma(x): smooth ramp on a collar at both box edges."""
    if width_fraction <= 0:
        return None
    w = width_fraction * grid.length
    x = grid.x
    d = np.minimum(x - grid.x_min, grid.x_max - x)  # distance to the edge
    s = np.clip(1.0 - d / w, 0.0, 1.0)
    return strength * s * s * (3 - 2 * s)


def adaptive_dt(cfg: EvolutionConfig, umax):
    h = cfg.grid.h
    return min(cfg.dt_max, cfg.safety * cfg.cfl * h / (1.0 + cfg.p * umax ** (cfg.p - 1)))


@dataclass
class RunReport:
    config: dict
    status: str
    t_final: float
    steps: int
    samples: list = field(default_factory=list)
    observations: dict = field(default_factory=dict)
    final: Field | None = None
    partial: bool = False
    message: str = ""

    def series(self, name):
        return np.array([getattr(s, name) for s in self.samples])

    def drift(self, name):
        vals = self.series(name)
        ref = abs(vals[0]) if vals[0] != 0 else 1.0
        return float(np.max(np.abs(vals - vals[0])) / ref)

    def to_dict(self):
        d = {"config": self.config, "status": self.status, "t_final": self.t_final,
             "steps": self.steps, "partial": self.partial, "message": self.message,
             "n_samples": len(self.samples)}
        if self.samples:
            d["mass_drift"] = self.drift("mass")
            d["energy_drift"] = self.drift("energy")
            d["grad_norm_ratio"] = self.samples[-1].grad_norm / max(self.samples[0].grad_norm,
                                                                    1e-300)
        return d

    def csv_rows(self):
        return [s.as_row() for s in self.samples]


CSV_COLUMNS = ("t", "mass", "energy", "E2", "grad_norm")


def scale_from_amplitude(u: Field, amplitude0, p):
    """Bubble-scale proxy from the sup norm: u ~ lambda^(-2/(p-1))."""
    amax = float(np.abs(u.values).max())
    if amax == 0:
        return math.inf
    return (amax / amplitude0) ** (-(p - 1) / 2)


def evolve(u0: Field, cfg: EvolutionConfig, observers=()) -> RunReport:
    """Advance ``u0`` until ``cfg.t_end`` or a stop rule fires.

    Observers are callables ``obs(t, u) -> record | None`` invoked every
    ``obs.stride`` steps (attribute, default 1) and once at the start and
    end. An observer may expose ``current_scale()``, in which case the
    min-scale stop rule uses it; otherwise the sup-norm proxy is used.
    Observer exceptions abort the run with :class:`ObserverError` whose
    ``report`` attribute holds the partial, flagged report.
    """
    if u0.grid != cfg.grid:
        raise GridError("initial data must live on the configured grid")
    stepper = Stepper(cfg.grid, cfg.p, cfg.dealias, cfg.nonlinear)
    sigma = sponge_profile(cfg.grid, cfg.sponge_width, cfg.sponge_strength)
    uh = stepper.to_hat(u0.values)
    u = u0.values.copy()
    t, nstep = 0.0, 0
    amp0 = float(np.abs(u).max())
    report = RunReport(cfg.to_dict(), "completed", 0.0, 0)
    report.samples.append(invariants(u0, cfg.p, 0.0))
    g0 = report.samples[0].grad_norm
    if cfg.grad_cap is not None and cfg.grad_cap <= g0:
        raise GKdVError("gradient-norm cap must exceed the initial gradient norm")
    names = [getattr(o, "name", f"observer{i}") for i, o in enumerate(observers)]
    for nm in names:
        report.observations[nm] = []
    scale_obs = [o for o in observers if hasattr(o, "current_scale")]

    last_seen = {}

    def run_observers(force=False):
        for nm, obs in zip(names, observers):
            stride = getattr(obs, "stride", 1)
            if last_seen.get(nm) == nstep:
                continue
            if force or nstep % stride == 0:
                last_seen[nm] = nstep
                try:
                    rec = obs(t, Field(cfg.grid, u))
                except Exception as exc:  # noqa: BLE001 - surfaced with the partial report
                    report.partial = True
                    report.t_final, report.steps = t, nstep
                    report.final = Field(cfg.grid, u)
                    report.message = f"observer {nm} failed: {exc}"
                    err = ObserverError(report.message)
                    err.report = report
                    raise err from exc
                if rec is not None:
                    report.observations[nm].append(rec)

    def current_scale():
        if scale_obs:
            return min(o.current_scale() for o in scale_obs)
        return scale_from_amplitude(Field(cfg.grid, u), amp0, cfg.p)

    run_observers(force=True)
    status = "completed"
    while t < cfg.t_end - 1e-14 and nstep < cfg.max_steps:
        umax = float(np.abs(u).max())
        dt = cfg.dt if cfg.dt is not None else adaptive_dt(cfg, umax)
        dt = min(dt, cfg.t_end - t)
        new_hat = stepper.step_hat(uh, dt)
        new_u = stepper.to_real(new_hat)
        if not np.all(np.isfinite(new_u)):
            status = "blow-up-detected"
            break
        if sigma is not None:
            new_u = new_u * np.exp(-sigma * dt)
            new_hat = stepper.to_hat(new_u)
        uh, u = new_hat, new_u
        t += dt
        nstep += 1
        if nstep % cfg.sample_every == 0:
            report.samples.append(invariants(Field(cfg.grid, u), cfg.p, t))
        run_observers()
        if cfg.grad_cap is not None and report.samples[-1].grad_norm > cfg.grad_cap:
            status = "gradient-cap-reached"
            break
        if cfg.min_scale is not None and current_scale() <= cfg.min_scale:
            status = "min-scale-reached"
            break
    if report.samples[-1].t != t:
        report.samples.append(invariants(Field(cfg.grid, u), cfg.p, t))
    if status != "blow-up-detected":
        run_observers(force=True)
    report.status, report.t_final, report.steps = status, t, nstep
    report.final = Field(cfg.grid, u)
    log.info("evolve: %s at t=%.6g after %d steps", status, t, nstep)
    return report
