"""Multi-bubble geometric decomposition, localized norms and the reduced flows.

A state is written as

    u(x) = sum_j lambda_j^(-2/(p-1)) Q_{b_j}((x - x_j)/lambda_j) + u_tilde(x)

with (lambda_j, b_j, x_j) fixed by requiring the rescaled error
eps_j(y) = lambda_j^(2/(p-1)) u_tilde(lambda_j y + x_j) to be orthogonal to
Q_p, Lambda Q_p and y Lambda Q_p. The orthogonality functionals are evaluated
in the lab frame by the change of variables y = (x - x_j)/lambda_j, so no
resampling of u_tilde is needed; eps_j itself is available on demand.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_simpson, solve_ivp
from scipy.interpolate import make_interp_spline

from .errors import DecompositionError, GKdVError
from .grid import Field, Grid, differentiate, integrate
from .groundstate import ground_state, lambda_ground_state, y_lambda_ground_state
from .profile import LocalizedProfile, _smooth_unit_step

log = logging.getLogger(__name__)

TEST_RADIUS = 40.0  # Q_p and its companions are below 1e-15 beyond this


@dataclass(frozen=True)
class BubbleParams:
    lam: float
    b: float
    x: float

    def __post_init__(self):
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise GKdVError(f"bubble scale must be positive, got {self.lam}")
        if not (math.isfinite(self.b) and math.isfinite(self.x)):
            raise GKdVError("bubble parameters must be finite")

    def as_tuple(self):
        return (self.lam, self.b, self.x)

    def to_dict(self):
        return {"lambda": self.lam, "b": self.b, "x": self.x}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d.get("lambda", d.get("lam"))), float(d["b"]), float(d["x"]))


def _pack(bubbles):
    return np.array([v for bb in bubbles for v in bb.as_tuple()], dtype=float)


def _unpack(z):
    return [BubbleParams(*z[3 * j:3 * j + 3]) for j in range(len(z) // 3)]


# ----------------------------------------------------------------------------
# synthesis


def support_interval(bubble: BubbleParams, b_c):
    r = 2.0 * bubble.lam / b_c
    return bubble.x - r, bubble.x + r


def check_separation(bubbles, b_c, grid: Grid | None = None):
    ivs = sorted(support_interval(bb, b_c) for bb in bubbles)
    for (a0, a1), (c0, c1) in zip(ivs, ivs[1:]):
        if c0 < a1:
            raise GKdVError("bubble supports overlap; bubbles are not separated")
    if grid is not None and ivs:
        if ivs[0][0] < grid.x_min or ivs[-1][1] > grid.x_max:
            raise GKdVError("a bubble support leaves the computational box")


def bubble_field(bubble: BubbleParams, profile: LocalizedProfile, x):
    """lambda^(-2/(p-1)) Q_b((x - x0)/lambda) at the points ``x``."""
    alpha = 2.0 / (profile.p - 1)
    return bubble.lam ** (-alpha) * profile.evaluate((x - bubble.x) / bubble.lam, bubble.b)


def synthesize(bubbles, profile: LocalizedProfile, grid: Grid, residual=None) -> Field:
    """Sum of rescaled, translated localized profiles plus an optional residual."""
    check_separation(bubbles, profile.b_c, grid)
    x = grid.x
    out = np.zeros(grid.n)
    for bb in bubbles:
        lo, hi = support_interval(bb, profile.b_c)
        i0, i1 = np.searchsorted(x, [lo, hi])
        out[i0:i1] += bubble_field(bb, profile, x[i0:i1])
    if residual is not None:
        out = out + (residual.values if isinstance(residual, Field) else residual)
    return Field(grid, out)


# ----------------------------------------------------------------------------
# decomposition


@dataclass
class Decomposition:
    p: float
    b_c: float
    bubbles: list
    residual: Field
    orthogonality: np.ndarray = field(repr=False, default=None)
    iterations: int = 0
    t: float = 0.0

    @property
    def k(self):
        return len(self.bubbles)

    def epsilon(self, j, y):
        """eps_j sampled at bubble-frame points ``y`` (cubic interpolation of u_tilde)."""
        bb = self.bubbles[j]
        alpha = 2.0 / (self.p - 1)
        grid = self.residual.grid
        xs = bb.lam * np.asarray(y, dtype=float) + bb.x
        spl = make_interp_spline(grid.x, self.residual.values, k=3)
        vals = np.where((xs >= grid.x_min) & (xs <= grid.x_max), spl(xs), 0.0)
        return bb.lam**alpha * vals

    def epsilon_field(self, j, y_grid: Grid) -> Field:
        return Field(y_grid, self.epsilon(j, y_grid.x))

    def to_dict(self):
        return {"p": self.p, "b_c": self.b_c, "t": self.t, "iterations": self.iterations,
                "bubbles": [bb.to_dict() for bb in self.bubbles],
                "orthogonality": [float(v) for v in np.ravel(self.orthogonality)],
                "residual_l2": math.sqrt(integrate(self.residual.values**2, self.residual.grid))}


def _test_functions(p, y):
    return (ground_state(p, y), lambda_ground_state(p, y), y_lambda_ground_state(p, y))


def orthogonality_functionals(residual: Field, bubbles, p):
    """Matrix (k, 3) of (eps_j, Q_p), (eps_j, Lambda Q_p), (eps_j, y Lambda Q_p)."""
    grid = residual.grid
    x = grid.x
    alpha = 2.0 / (p - 1)
    out = np.zeros((len(bubbles), 3))
    for j, bb in enumerate(bubbles):
        i0, i1 = np.searchsorted(x, [bb.x - TEST_RADIUS * bb.lam, bb.x + TEST_RADIUS * bb.lam])
        y = (x[i0:i1] - bb.x) / bb.lam
        r = residual.values[i0:i1]
        for m, f in enumerate(_test_functions(p, y)):
            # (eps_j, f) = lambda^(alpha-1) int u_tilde(x) f((x-x_j)/lambda) dx
            out[j, m] = bb.lam ** (alpha - 1) * np.sum(r * f) * grid.h
    return out


def decompose(u: Field, guess, profile: LocalizedProfile, tol=1e-12, max_iter=50,
              fd_step=1e-6, t=0.0) -> Decomposition:
    """Newton iteration on the 3k modulation parameters.

    Zeroes the 3k orthogonality functionals; the Jacobian is built by
    centered finite differences with relative step ``fd_step``. Converges
    when every functional is below ``tol * ||u||_2``.
    """
    p, b_c = profile.p, profile.b_c
    grid = u.grid
    unorm = math.sqrt(integrate(u.values**2, grid))
    scale_ref = max(unorm, 1e-300)
    z = _pack(guess)
    k = len(guess)

    def resid(zv):
        bubbles = _unpack(zv)
        rest = Field(grid, u.values - synthesize(bubbles, profile, grid).values)
        return orthogonality_functionals(rest, bubbles, p).ravel(), rest, bubbles

    try:
        R, rest, bubbles = resid(z)
    except GKdVError as exc:
        raise DecompositionError(f"initial guess inadmissible: {exc}") from exc
    history = [float(np.abs(R).max())]
    for it in range(1, max_iter + 1):
        if np.abs(R).max() <= tol * scale_ref:
            break
        J = np.zeros((3 * k, 3 * k))
        for i in range(3 * k):
            j, m = divmod(i, 3)
            lam = z[3 * j]
            step = fd_step * (lam if m != 1 else max(abs(z[i]), b_c))
            zp, zm = z.copy(), z.copy()
            zp[i] += step
            zm[i] -= step
            try:
                J[:, i] = (resid(zp)[0] - resid(zm)[0]) / (2 * step)
            except GKdVError as exc:
                raise DecompositionError(f"Jacobian probe left the admissible set: {exc}",
                                         history[-1], history) from exc
        try:
            dz = np.linalg.solve(J, -R)
        except np.linalg.LinAlgError as exc:
            raise DecompositionError("singular modulation Jacobian", history[-1], history) from exc
        accepted = False
        for _ in range(12):
            trial = z + dz
            try:
                R_t, rest_t, bubbles_t = resid(trial)
            except GKdVError:
                dz = 0.5 * dz
                continue
            if np.abs(R_t).max() < np.abs(R).max() or np.abs(R_t).max() <= tol * scale_ref:
                accepted = True
                break
            dz = 0.5 * dz
        if not accepted:
            if np.abs(R).max() <= 1e-10 * scale_ref:
                break  # round-off floor reached
            raise DecompositionError("decomposition Newton failed to reduce the residual",
                                     history[-1], history)
        z, R, rest, bubbles = trial, R_t, rest_t, bubbles_t
        history.append(float(np.abs(R).max()))
        log.debug("decompose it=%d max|R|=%.3e", it, history[-1])
    else:
        raise DecompositionError("decomposition Newton did not converge", history[-1], history)
    return Decomposition(p, b_c, bubbles, rest, R.reshape(k, 3), len(history) - 1, t)


# ----------------------------------------------------------------------------
# weights


def _hermite(t, y0, y1, m0, m1, width):
    """Cubic Hermite interpolant on [0, 1] (t), with slopes in physical units."""
    h00 = 2 * t**3 - 3 * t**2 + 1
    h10 = t**3 - 2 * t**2 + t
    h01 = -2 * t**3 + 3 * t**2
    h11 = t**3 - t**2
    return h00 * y0 + h10 * width * m0 + h01 * y1 + h11 * width * m1


def _hermite_d(t, y0, y1, m0, m1, width):
    d00 = 6 * t**2 - 6 * t
    d10 = 3 * t**2 - 4 * t + 1
    d01 = -6 * t**2 + 6 * t
    d11 = 3 * t**2 - 2 * t
    return (d00 * y0 + d01 * y1) / width + d10 * m0 + d11 * m1


@dataclass(frozen=True)
class Weights:
    """phi, psi, eta_0 and their B-rescaled versions.

    phi = e^y (y < -1), 1 + y on (-kappa, kappa), 3 (y > 1), joined by C^1
    cubic Hermite pieces; psi = e^y (y < -1), 1 (y > -kappa), blended from
    phi in between.
    """

    b_c: float
    kappa: float = 0.1

    def __post_init__(self):
        if not 0 < self.kappa < 0.5:
            raise GKdVError("kappa must lie in (0, 1/2)")
        if not self.b_c > 0:
            raise GKdVError("b_c must be positive")

    @property
    def B(self):
        return self.b_c ** (-1.0 / 20)

    def _phi_pieces(self, y, deriv):
        k = self.kappa
        y = np.asarray(y, dtype=float)
        e1 = math.exp(-1.0)
        out = np.empty_like(y)
        left = y < -1
        mid_l = (y >= -1) & (y < -k)
        core = (y >= -k) & (y <= k)
        mid_r = (y > k) & (y <= 1)
        right = y > 1
        w_l, w_r = 1 - k, 1 - k
        if deriv == 0:
            out[left] = np.exp(y[left])
            out[mid_l] = _hermite((y[mid_l] + 1) / w_l, e1, 1 - k, e1, 1.0, w_l)
            out[core] = 1 + y[core]
            out[mid_r] = _hermite((y[mid_r] - k) / w_r, 1 + k, 3.0, 1.0, 0.0, w_r)
            out[right] = 3.0
        else:
            out[left] = np.exp(y[left])
            out[mid_l] = _hermite_d((y[mid_l] + 1) / w_l, e1, 1 - k, e1, 1.0, w_l)
            out[core] = 1.0
            out[mid_r] = _hermite_d((y[mid_r] - k) / w_r, 1 + k, 3.0, 1.0, 0.0, w_r)
            out[right] = 0.0
        return out

    def phi(self, y):
        return self._phi_pieces(y, 0)

    def dphi(self, y):
        return self._phi_pieces(y, 1)

    def psi(self, y):
        # psi = phi + (1 - phi) S on [-1, -kappa], S the smoothstep of t^3:
        # S(0) = S'(0) = S'(1) = 0 keeps psi C^1 and monotone, and the late
        # rise keeps psi <= (1 + 3 kappa) phi
        k = self.kappa
        y = np.asarray(y, dtype=float)
        out = np.ones_like(y)
        left = y < -1
        mid = (y >= -1) & (y < -k)
        out[left] = np.exp(y[left])
        t3 = ((y[mid] + 1) / (1 - k)) ** 3
        ph = self.phi(y[mid])
        out[mid] = ph + (1 - ph) * (3 * t3**2 - 2 * t3**3)
        return out

    @staticmethod
    def eta0(y):
        return 1.0 - _smooth_unit_step(np.asarray(y, dtype=float) - 1.0)

    def phi_B(self, y):
        return self.phi(np.asarray(y) / self.B)

    def dphi_B(self, y):
        return self.dphi(np.asarray(y) / self.B) / self.B

    def psi_B(self, y):
        return self.psi(np.asarray(y) / self.B) * self.eta0(self.b_c**10 * np.asarray(y))

    def zeta_B(self, y):
        return self.phi_B(y) * self.eta0(np.asarray(y) / self.B**2)


# ----------------------------------------------------------------------------
# localized norms


def _lab_frame(dec: Decomposition, j):
    """(y, eps, eps_y, dy) for bubble j evaluated on the lab grid."""
    bb = dec.bubbles[j]
    grid = dec.residual.grid
    alpha = 2.0 / (dec.p - 1)
    r = dec.residual.values
    rx = differentiate(r, grid, 1)
    y = (grid.x - bb.x) / bb.lam
    eps = bb.lam**alpha * r
    eps_y = bb.lam ** (alpha + 1) * rx
    return y, eps, eps_y, grid.h / bb.lam


def _quad(values, grid, dy):
    if grid.periodic:
        return float(np.sum(values) * dy)
    return float(np.trapezoid(values, dx=dy))


def local_norm(dec: Decomposition, j, w: Weights) -> float:
    """N_j = int ((eps_j)_y^2 + eps_j^2) phi_B'."""
    y, eps, eps_y, dy = _lab_frame(dec, j)
    return _quad((eps_y**2 + eps**2) * w.dphi_B(y), dec.residual.grid, dy)


def lyapunov(dec: Decomposition, j, w: Weights, profile: LocalizedProfile) -> float:
    """F_j: the weighted H^1 energy of eps_j minus the nonlinear correction."""
    y, eps, eps_y, dy = _lab_frame(dec, j)
    p = dec.p
    q = np.abs(profile.evaluate(y, dec.bubbles[j].b))
    nl = np.abs(eps + q) ** (p + 1) - q ** (p + 1) - (p + 1) * eps * q**p
    psi_b = w.psi_B(y)
    integrand = eps_y**2 * psi_b + eps**2 * w.zeta_B(y) - 2.0 / (p + 1) * nl * psi_b
    return _quad(integrand, dec.residual.grid, dy)


# ----------------------------------------------------------------------------
# modulation equations along a track


def rescaled_time(t, lam, rule="trapezoid"):
    """s(t) = int_{t_0}^t lambda^-3 by the trapezoid or Simpson rule."""
    t = np.asarray(t, dtype=float)
    f = np.asarray(lam, dtype=float) ** -3
    if rule == "simpson":
        return cumulative_simpson(f, x=t, initial=0.0)
    if rule != "trapezoid":
        raise GKdVError(f"unknown quadrature rule {rule!r}")
    s = np.zeros_like(t)
    s[1:] = np.cumsum(0.5 * (f[1:] + f[:-1]) * np.diff(t))
    return s


@dataclass
class ModulationResiduals:
    t: np.ndarray
    s: np.ndarray
    scale: np.ndarray        # (1/lambda) d lambda/ds + b
    translation: np.ndarray  # (1/lambda) dx/ds - 1
    drift: np.ndarray        # db/ds + c_p (b - b_c) b_c


def residuals_from_series(t, lam, b, x, b_c, c_p=2.0) -> ModulationResiduals:
    t = np.asarray(t, dtype=float)
    if len(t) < 3:
        raise GKdVError("need at least three samples for modulation residuals")
    dt = np.diff(t)
    if not (np.all(dt > 0) or np.all(dt < 0)):
        raise GKdVError("track times must be strictly monotone")
    lam, b, x = (np.asarray(a, dtype=float) for a in (lam, b, x))
    s = rescaled_time(t, lam)
    lam_s = np.gradient(lam, s, edge_order=2)
    x_s = np.gradient(x, s, edge_order=2)
    b_s = np.gradient(b, s, edge_order=2)
    return ModulationResiduals(t, s, lam_s / lam + b, x_s / lam - 1.0,
                               b_s + c_p * (b - b_c) * b_c)


def modulation_residuals(track, c_p=2.0):
    """Per-bubble residuals of the modulation equations along a sequence of
    decompositions or track points (each carrying ``t``, ``b_c`` and
    ``bubbles``)."""
    if len(track) < 3:
        raise GKdVError("need at least three decompositions")
    t = np.array([d.t for d in track])
    out = []
    for j in range(track[0].k):
        lam = [d.bubbles[j].lam for d in track]
        b = [d.bubbles[j].b for d in track]
        x = [d.bubbles[j].x for d in track]
        out.append(residuals_from_series(t, lam, b, x, track[0].b_c, c_p))
    return out


# ----------------------------------------------------------------------------
# reduced flows


@dataclass
class ReducedState:
    lam: np.ndarray
    b: np.ndarray
    x: np.ndarray
    t: float = 0.0
    s: np.ndarray | None = None

    def __post_init__(self):
        self.lam = np.atleast_1d(np.asarray(self.lam, dtype=float))
        self.b = np.atleast_1d(np.asarray(self.b, dtype=float))
        self.x = np.atleast_1d(np.asarray(self.x, dtype=float))
        if not (len(self.lam) == len(self.b) == len(self.x)):
            raise GKdVError("lambda, b and x must have one entry per bubble")
        if np.any(self.lam <= 0) or np.any(self.b <= 0):
            raise GKdVError("reduced flow needs lambda > 0 and b > 0")
        if self.s is None:
            self.s = np.zeros_like(self.lam)

    @property
    def k(self):
        return len(self.lam)

    @classmethod
    def from_bubbles(cls, bubbles, t=0.0):
        return cls([bb.lam for bb in bubbles], [bb.b for bb in bubbles],
                   [bb.x for bb in bubbles], t)


class _BubbleFlow:
    """One bubble of the reduced system, parametrized by u = ln(lambda^3).

    Along u the system is regular up to the collapse:
        db/du = c_p b_c (b - b_c) / (3 b)       (damped; 0 for formal)
        dt/du = -e^u / (3 b),  dx/du = -e^(u/3) / (3 b),  ds/du = -1 / (3 b)
    """

    def __init__(self, lam0, b0, x0, t0, s0, model, b_c, c_p, floor, rtol):
        self.lam0, self.b0, self.x0, self.t0, self.s0 = lam0, b0, x0, t0, s0
        self.model = model
        self.b_c, self.c_p = b_c, c_p
        self.u0 = 3 * math.log(lam0)
        self.u_end = 3 * math.log(lam0 * floor)
        if model == "formal":
            self.T = t0 + lam0**3 / (3 * b0)
            return
        cb = c_p * b_c

        def rhs(u, z):
            b = z[0]
            return [cb * (b - b_c) / (3 * b), -math.exp(u) / (3 * b),
                    -math.exp(u / 3) / (3 * b), -1.0 / (3 * b)]

        sol = solve_ivp(rhs, (self.u0, self.u_end), [b0, t0, x0, s0], method="DOP853",
                        rtol=rtol, atol=1e-14, dense_output=True)
        if not sol.success:
            raise GKdVError(f"reduced flow integration failed: {sol.message}")
        self.sol = sol
        b_end, t_end = sol.y[0, -1], sol.y[1, -1]
        self.tau_end = math.exp(self.u_end) / (3 * b_end)
        self.T = t_end + self.tau_end

        # q = ln(T - t) integrated back from the collapse end, so times close
        # to T keep full relative precision: dq/du = e^(u - q) / (3 b)
        def rhs_q(u, q):
            return [math.exp(u - q[0]) / (3 * sol.sol(u)[0])]

        self.qsol = solve_ivp(rhs_q, (self.u_end, self.u0), [math.log(self.tau_end)],
                              method="DOP853", rtol=rtol, atol=1e-12, dense_output=True)

    def at_u(self, u):
        u = np.asarray(u, dtype=float)
        if self.model == "formal":
            m0 = self.lam0**3
            m = np.exp(u)
            b = np.full_like(u, self.b0)
            t = self.t0 + (m0 - m) / (3 * self.b0)
            x = self.x0 + (self.lam0 - np.exp(u / 3)) / self.b0
            s = self.s0 + (self.u0 - u) / (3 * self.b0)
            return b, t, x, s
        z = self.sol.sol(u)
        return z[0], z[1], z[2], z[3]

    def u_at_tau(self, tau):
        """u at the time T - tau, accurate also for tau much smaller than T."""
        tau = np.asarray(tau, dtype=float)
        if self.model == "formal":
            return np.log(3 * self.b0 * tau)
        q = np.log(tau)
        u = np.clip(np.log(3 * self.b_c * tau), self.u_end, self.u0)
        for _ in range(30):
            f = self.qsol.sol(u)[0] - q
            b = self.sol.sol(u)[0]
            u = np.clip(u - f / (np.exp(u - (f + q)) / (3 * b)), self.u_end, self.u0)
            if np.all(np.abs(f) <= 1e-13):
                break
        return u

    def u_at_time(self, t):
        """Invert t(u) (monotone) for times before the collapse."""
        t = np.asarray(t, dtype=float)
        if self.model == "formal":
            m = self.lam0**3 - 3 * self.b0 * (t - self.t0)
            return np.maximum(np.log(np.maximum(m, 1e-300)), self.u_end)
        # Newton on t(u) - t = 0 with dt/du = -e^u/(3b), seeded by the formal law
        m = np.maximum(3 * self.b_c * (self.T - t), 1e-300)
        u = np.clip(np.log(m), self.u_end, self.u0)
        for _ in range(30):
            b, tu, _, _ = self.at_u(u)
            f = tu - t
            du = f / (-np.exp(u) / (3 * b))
            u = np.clip(u - du, self.u_end, self.u0)
            if np.all(np.abs(f) <= 1e-13 * max(1.0, abs(self.T))):
                break
        return u


@dataclass
class Trajectory:
    """Reduced-flow samples on a common time grid (one row per bubble)."""

    model: str
    t: np.ndarray
    lam: np.ndarray
    b: np.ndarray
    x: np.ndarray
    s: np.ndarray
    T: np.ndarray            # per-bubble blow-up times
    status: str = "completed"

    def to_dict(self):
        return {"model": self.model, "status": self.status, "T": self.T.tolist(),
                "t_final": float(self.t[-1]), "lambda_final": self.lam[:, -1].tolist(),
                "x_final": self.x[:, -1].tolist()}


def _flows(state0: ReducedState, model, b_c, c_p, floor, rtol):
    if model not in ("formal", "damped"):
        raise GKdVError(f"unknown reduced model {model!r}")
    if model == "damped" and b_c is None:
        raise GKdVError("the damped model needs b_c")
    return [_BubbleFlow(state0.lam[j], state0.b[j], state0.x[j], state0.t, state0.s[j],
                        model, b_c, c_p, floor, rtol) for j in range(state0.k)]


def reduced_flow(state0: ReducedState, model="formal", t_end=math.inf, b_c=None, c_p=2.0,
                 n_samples=2001, floor=1e-6, rtol=1e-10, t_eval=None) -> Trajectory:
    """Integrate the reduced modulation system for every bubble.

    formal: d lambda/ds = -b lambda, db/ds = 0, dx/ds = lambda, dt/ds = lambda^3
    damped: as formal but db/ds = -c_p (b - b_c) b_c.

    The formal model is evaluated in closed form; the damped model by an
    adaptive 8th-order Runge-Kutta integration (tolerance ``rtol``). The
    run stops at ``t_end`` or when the first bubble collapses to ``floor``
    times its initial scale (status "blow-up"); ``T`` holds every bubble's
    blow-up time.
    """
    flows = _flows(state0, model, b_c, c_p, floor, rtol)
    T = np.array([f.T for f in flows])
    t_stop_collapse = min(f.t0 + (f.lam0**3 - (f.lam0 * floor) ** 3) / (3 * f.b0)
                          if model == "formal" else float(f.at_u(f.u_end)[1]) for f in flows)
    status = "completed"
    t_stop = t_end
    if t_end >= t_stop_collapse:
        t_stop, status = t_stop_collapse, "blow-up"
    if t_eval is None:
        t_eval = np.linspace(state0.t, t_stop, n_samples)
    else:
        t_eval = np.asarray(t_eval, dtype=float)
        if t_eval.max() > t_stop * (1 + 1e-15):
            raise GKdVError("t_eval extends past the end of the run")
    k = state0.k
    lam, b, x, s = (np.zeros((k, len(t_eval))) for _ in range(4))
    for j, f in enumerate(flows):
        u = f.u_at_time(t_eval)
        bj, _, xj, sj = f.at_u(u)
        lam[j], b[j], x[j], s[j] = np.exp(u / 3), bj, xj, sj
    return Trajectory(model, t_eval, lam, b, x, s, T, status)


def collapse_series(state0: ReducedState, model="formal", b_c=None, c_p=2.0, floor=1e-6,
                    n_samples=400, rtol=1e-10):
    """All bubble scales sampled towards the first collapse.

    Time is measured backwards from the first blow-up, tau = T_first - t, on
    a geometric grid ending when the first bubble reaches ``floor`` times its
    initial scale. For the formal model the scales are evaluated as
    lambda^3 = 3 b (T - T_first + tau), which keeps full relative precision
    close to the collapse. Returns (t, lambda[k, n], T).
    """
    flows = _flows(state0, model, b_c, c_p, floor, rtol)
    T = np.array([f.T for f in flows])
    first = int(np.argmin(T))
    T0 = T[first]
    f0 = flows[first]
    if model == "formal":
        tau_end = (f0.lam0 * floor) ** 3 / (3 * f0.b0)
    else:
        tau_end = f0.tau_end
    tau = np.geomspace(T0 - state0.t, tau_end, n_samples)
    tau[0] = T0 - state0.t
    lam = np.zeros((state0.k, n_samples))
    for j, fl in enumerate(flows):
        if model == "formal":
            lam[j] = (3 * fl.b0 * ((fl.T - T0) + tau)) ** (1.0 / 3)
        else:
            lam[j] = np.exp(fl.u_at_tau((fl.T - T0) + tau) / 3)
    return T0 - tau, lam, T


# ----------------------------------------------------------------------------
# tracking a PDE run


@dataclass(frozen=True)
class TrackPoint:
    t: float
    b_c: float
    bubbles: tuple
    N: tuple = ()
    F: tuple = ()
    orthogonality: float = 0.0

    @property
    def k(self):
        return len(self.bubbles)

    def row(self):
        out = {"t": self.t}
        for j, bb in enumerate(self.bubbles):
            out[f"lambda_{j + 1}"] = bb.lam
            out[f"b_{j + 1}"] = bb.b
            out[f"x_{j + 1}"] = bb.x
            if self.N:
                out[f"N_{j + 1}"] = self.N[j]
                out[f"F_{j + 1}"] = self.F[j]
        return out


class DecompositionTracker:
    """Evolution observer that re-decomposes the state as the bubbles shrink.

    A decomposition is attempted when the sup norm has changed by more than
    ``rel_change`` since the last one (a proxy for a 0.1% change of the
    smallest scale) or after ``max_stride`` calls, warm-started from the
    previous parameters.
    """

    name = "tracker"
    stride = 1

    def __init__(self, profile: LocalizedProfile, guess, weights: Weights | None = None,
                 rel_change=1e-3, max_stride=200, tol=1e-12, functionals=True):
        self.profile = profile
        self.params = list(guess)
        self.weights = weights or Weights(profile.b_c)
        self.rel_change, self.max_stride, self.tol = rel_change, max_stride, tol
        self.functionals = functionals
        self.points: list[TrackPoint] = []
        self._amp = None
        self._since = 0

    def current_scale(self):
        return min(bb.lam for bb in self.params)

    def __call__(self, t, u: Field):
        amp = float(np.abs(u.values).max())
        self._since += 1
        if (self._amp is not None and abs(amp / self._amp - 1) < self.rel_change
                and self._since < self.max_stride):
            return None
        dec = decompose(u, self.params, self.profile, tol=self.tol, t=t)
        self.params = dec.bubbles
        self._amp, self._since = amp, 0
        N = F = ()
        if self.functionals:
            N = tuple(local_norm(dec, j, self.weights) for j in range(dec.k))
            F = tuple(lyapunov(dec, j, self.weights, self.profile) for j in range(dec.k))
        pt = TrackPoint(t, dec.b_c, tuple(dec.bubbles), N, F,
                        float(np.abs(dec.orthogonality).max()))
        self.points.append(pt)
        return pt.row()

    def series(self):
        """(t, lambda[k, n], b[k, n], x[k, n]) of the tracked points."""
        t = np.array([pt.t for pt in self.points])
        lam = np.array([[bb.lam for bb in pt.bubbles] for pt in self.points]).T
        b = np.array([[bb.b for bb in pt.bubbles] for pt in self.points]).T
        x = np.array([[bb.x for bb in pt.bubbles] for pt in self.points]).T
        return t, lam, b, x
