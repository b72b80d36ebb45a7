"""Uniform 1-D grids, sampled fields, differentiation and quadrature.

Periodic grids use FFT differentiation and the rectangle rule; bounded grids
use centered finite differences (one-sided near the ends) and the trapezoid
rule.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np
import scipy.sparse as sp

from .errors import GridError

MIN_POINTS = 16


@dataclass(frozen=True)
class Grid:
    x_min: float
    x_max: float
    n: int
    periodic: bool = False

    def __post_init__(self):
        if not (np.isfinite(self.x_min) and np.isfinite(self.x_max)):
            raise GridError("grid bounds must be finite")
        if not self.x_min < self.x_max:
            raise GridError(f"x_min={self.x_min} must be < x_max={self.x_max}")
        if int(self.n) != self.n or self.n < MIN_POINTS:
            raise GridError(f"grid needs at least {MIN_POINTS} points, got {self.n}")

    @property
    def length(self) -> float:
        return self.x_max - self.x_min

    @property
    def h(self) -> float:
        if self.periodic:
            return self.length / self.n
        return self.length / (self.n - 1)

    @cached_property
    def x(self) -> np.ndarray:
        return self.x_min + self.h * np.arange(self.n)

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        """Angular wavenumbers matching ``np.fft.rfft`` ordering."""
        if not self.periodic:
            raise GridError("wavenumbers are only defined on periodic grids")
        return 2 * np.pi * np.fft.rfftfreq(self.n, d=self.h)

    @classmethod
    def covering(cls, x_min, x_max, h_max, periodic=False, fft_friendly=False):
        """Smallest grid on [x_min, x_max] with spacing at most ``h_max``."""
        length = x_max - x_min
        n = int(np.ceil(length / h_max)) + (0 if periodic else 1)
        if fft_friendly:
            n = _next_fast_even(n)
        return cls(float(x_min), float(x_max), max(n, MIN_POINTS), periodic)

    def to_dict(self) -> dict:
        return {"x_min": self.x_min, "x_max": self.x_max, "n": self.n,
                "periodic": self.periodic}


def _next_fast_even(n):
    import scipy.fft

    m = scipy.fft.next_fast_len(n, real=True)
    while m % 2:
        m = scipy.fft.next_fast_len(m + 1, real=True)
    return m


@dataclass(frozen=True, eq=False)
class Field:
    """Real samples of a function on a :class:`Grid`."""

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.grid.n,):
            raise GridError(f"expected {self.grid.n} samples, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise GridError("field contains non-finite values")
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(cls, grid, func):
        return cls(grid, func(grid.x))

    @property
    def x(self):
        return self.grid.x

    def derivative(self, order=1) -> "Field":
        return Field(self.grid, differentiate(self.values, self.grid, order))

    def integral(self) -> float:
        return integrate(self.values, self.grid)

    def inner(self, other) -> float:
        g = other.values if isinstance(other, Field) else np.asarray(other)
        return integrate(self.values * g, self.grid)

    def __add__(self, other):
        g = other.values if isinstance(other, Field) else other
        return Field(self.grid, self.values + g)

    def __sub__(self, other):
        g = other.values if isinstance(other, Field) else other
        return Field(self.grid, self.values - g)

    def __mul__(self, scalar):
        return Field(self.grid, self.values * scalar)

    __rmul__ = __mul__


# ----------------------------------------------------------------------------
# finite differences

def fd_weights(offsets, deriv):
    """Weights w with sum_k w_k f(x + offsets_k h) ~ h^deriv f^(deriv)(x)."""
    offsets = np.asarray(offsets, dtype=float)
    m = len(offsets)
    if m <= deriv:
        raise GridError("stencil too small for requested derivative")
    vander = np.vander(offsets, m, increasing=True).T
    rhs = np.zeros(m)
    rhs[deriv] = float(np.prod(np.arange(1, deriv + 1)))
    return np.linalg.solve(vander, rhs)


@lru_cache(maxsize=64)
def fd_matrix(n, h, deriv, accuracy=4):
    """Sparse differentiation matrix on a bounded uniform grid.

    Interior rows use the centered stencil of the requested accuracy; rows
    too close to an end use a one-sided stencil of the same width (plus one
    point for even derivatives so the accuracy does not drop).
    """
    half = (deriv + 1) // 2 - 1 + accuracy // 2
    width = 2 * half + 1
    if deriv % 2 == 0:
        edge_width = width + 1
    else:
        edge_width = width
    if n < edge_width:
        raise GridError(f"need at least {edge_width} points for d^{deriv} stencils")
    centered = fd_weights(np.arange(-half, half + 1), deriv) / h**deriv
    interior = np.arange(half, n - half)
    rows = [np.repeat(interior, width)]
    cols = [(interior[:, None] + np.arange(-half, half + 1)).ravel()]
    vals = [np.tile(centered, len(interior))]
    for i in list(range(half)) + list(range(n - half, n)):
        start = 0 if i < half else n - edge_width
        idx = np.arange(start, start + edge_width)
        rows.append(np.full(edge_width, i))
        cols.append(idx)
        vals.append(fd_weights(idx - i, deriv) / h**deriv)
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )


def spectral_derivative(values, grid, order=1):
    k = grid.wavenumbers
    vhat = np.fft.rfft(values)
    mult = (1j * k) ** order
    if order % 2 == 1 and grid.n % 2 == 0:
        mult[-1] = 0.0
    return np.fft.irfft(mult * vhat, n=grid.n)


def differentiate(values, grid, order=1, accuracy=4):
    """Derivative of sampled values by the grid's differentiation rule."""
    if grid.n < MIN_POINTS:
        raise GridError("grid too coarse for differentiation")
    if order == 0:
        return np.array(values, dtype=float)
    if grid.periodic:
        return spectral_derivative(values, grid, order)
    return fd_matrix(grid.n, grid.h, order, accuracy) @ values


def integrate(values, grid) -> float:
    values = np.asarray(values)
    if grid.periodic:
        return float(values.sum() * grid.h)
    return float(np.trapezoid(values, dx=grid.h))
