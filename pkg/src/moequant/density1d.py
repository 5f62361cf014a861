"""Segment densities on [0, 1] and the compander construction of segmentations.

A segment density says how finely the interval should be cut: for ``m``
experts the region around ``x`` has length roughly ``1 / (m * lambda(x))``.
Breakpoints are obtained by inverting the running integral of the density at
``i / m``.
"""
import io
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import (DegenerateDensity, DimensionMismatch, InvalidM,
                     NonMonotone, OutOfDomain)
from .numerics import (DEFAULT_QUAD, MonotoneTable, cumulative_table,
                       integrate, invert_monotone)

DEFAULT_EPS = 1e-16
DEFAULT_GRID = 10_001


@dataclass(frozen=True)
class DensityFn:
    """Normalized positive density on [0, 1] with a cached cumulative table."""

    func: Callable
    cumulative: MonotoneTable
    eps: float = 0.0
    floor_applied: bool = False
    name: str = "density"
    dim: int = 1

    def __call__(self, x):
        return self.func(np.asarray(x, dtype=float))

    @property
    def xs(self):
        return self.cumulative.xs

    @property
    def values(self):
        return self.func(self.cumulative.xs)

    def to_csv(self):
        buf = io.StringIO()
        buf.write("x,lambda\n")
        for x, v in zip(self.xs, self.values):
            buf.write(f"{x:.16e},{v:.16e}\n")
        return buf.getvalue()


def density_from_function(f, name="density", grid_size=DEFAULT_GRID, eps=0.0,
                          floor_applied=False, quad=DEFAULT_QUAD):
    """Normalize a nonnegative vectorized ``f`` into a :class:`DensityFn`."""
    total = integrate(f, 0.0, 1.0, quad)
    if not total > 0:
        raise DegenerateDensity(f"{name}: density integrates to {total!r}")

    def func(x):
        return np.asarray(f(x), dtype=float) / total

    # the grid rule is less accurate than the adaptive total near cusps, so pin
    # the table's end value to 1 and spread the small discrepancy over the grid
    table = cumulative_table(func, grid_size, normalize=True)
    return DensityFn(func, table, eps, floor_applied, name)


def floored_power_density(product, exponent, eps=DEFAULT_EPS, name="density",
                          grid_size=DEFAULT_GRID, quad=DEFAULT_QUAD):
    """Density proportional to ``max(product(x), eps) ** exponent``."""
    if not eps > 0:
        raise DegenerateDensity("eps must be positive to keep the density invertible")

    def raw(x):
        return np.maximum(product(x), eps) ** exponent

    return density_from_function(raw, name, grid_size, eps, True, quad)


def _check_1d(*objs):
    for o in objs:
        if o.dim != 1:
            raise DimensionMismatch(f"{getattr(o, 'name', o)} is not one-dimensional")


def optimal_density_1d(target, dist, eps=DEFAULT_EPS, grid_size=DEFAULT_GRID):
    """Density proportional to the cube root of ``p(x) * beta'(x)**2``, floored at eps."""
    _check_1d(target, dist)

    def product(x):
        return dist.pdf(x) * target.grad_sq_norm(x)

    return floored_power_density(product, 1.0 / 3.0, eps, "optimal", grid_size)


def quantizer_density(dist, eps=DEFAULT_EPS, grid_size=DEFAULT_GRID):
    """Scalar-quantizer point density, proportional to ``p(x) ** (1/3)``."""
    _check_1d(dist)
    return floored_power_density(dist.pdf, 1.0 / 3.0, eps, "quantizer", grid_size)


def uniform_density(grid_size=DEFAULT_GRID):
    return density_from_function(lambda x: np.ones_like(x), "uniform", grid_size)


@dataclass(frozen=True)
class Segmentation1D:
    """Breakpoints ``0 = a_0 < ... < a_m = 1``; region i is ``[a_i, a_{i+1})``.

    Regions are indexed from 0. The last region is closed on the right.
    """

    breakpoints: np.ndarray
    dim: int = field(default=1, init=False)

    def __post_init__(self):
        a = np.asarray(self.breakpoints, dtype=float)
        if a.ndim != 1 or len(a) < 2:
            raise InvalidM("a segmentation needs at least one region")
        if a[0] != 0.0 or a[-1] != 1.0:
            raise NonMonotone("breakpoints must start at 0 and end at 1")
        if np.any(np.diff(a) <= 0):
            raise NonMonotone("breakpoints must be strictly increasing")
        a.setflags(write=False)
        object.__setattr__(self, "breakpoints", a)

    @property
    def m(self):
        return len(self.breakpoints) - 1

    @property
    def lengths(self):
        return np.diff(self.breakpoints)

    @property
    def centers(self):
        a = self.breakpoints
        return 0.5 * (a[:-1] + a[1:])

    def route(self, x):
        """Region index for each point (0-based, half-open intervals)."""
        x = np.asarray(x, dtype=float)
        if np.any((x < 0) | (x > 1)) or np.any(np.isnan(x)):
            raise OutOfDomain("inputs must lie in [0, 1]")
        idx = np.searchsorted(self.breakpoints, x, side="right") - 1
        return np.minimum(idx, self.m - 1)

    def integrate_regions(self, func, quad=DEFAULT_QUAD):
        """``[int_{A_i} func(x, i) dx for each region i]``."""
        a = self.breakpoints
        return np.array([integrate(lambda x, i=i: func(x, i), a[i], a[i + 1], quad)
                         for i in range(self.m)])

    def to_csv(self):
        lines = ["i,a_i"] + [f"{i},{v:.16e}" for i, v in enumerate(self.breakpoints)]
        return "\n".join(lines) + "\n"


def uniform_segmentation(m):
    if m < 1:
        raise InvalidM(f"m must be >= 1, got {m}")
    a = np.arange(m + 1) / m
    a[-1] = 1.0
    return Segmentation1D(a)


def segmentation_from_density(density, m):
    """Breakpoints ``a_i = v(i/m)`` with ``v`` the inverse of the density's cumulative."""
    if m < 1:
        raise InvalidM(f"m must be >= 1, got {m}")
    table = density.cumulative
    targets = np.arange(1, m) / m * table.total
    inner = np.atleast_1d(invert_monotone(table, targets)) if m > 1 else np.empty(0)
    a = np.concatenate([[0.0], inner, [1.0]])
    if np.any(np.diff(a) <= 0):
        raise NonMonotone(
            f"breakpoints collapsed for m={m}; increase the density grid size")
    return Segmentation1D(a)
