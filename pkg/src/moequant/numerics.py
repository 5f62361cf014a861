"""Quadrature, monotone-table inversion and seeded random streams.

Every integral in the package goes through :func:`integrate`, an adaptive
composite Simpson rule that works on vectorized integrands (callables that map
a numpy array of abscissae to an array of values).
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import (DegenerateTable, DepthExceeded, InvalidParams,
                     NegativeDensity, NonFinite, OutOfRange)

RNG_ALGORITHM = "numpy.PCG64 seeded by SeedSequence(entropy=seed, spawn_key=(stream_id, *substream))"


@dataclass(frozen=True)
class QuadratureSpec:
    panels: int = 256
    refine_tol: float = 1e-10
    max_depth: int = 20

    def __post_init__(self):
        if self.panels < 2 or self.panels % 2:
            raise InvalidParams(f"panels must be even and >= 2, got {self.panels}")
        if not self.refine_tol > 0:
            raise InvalidParams("refine_tol must be positive")
        if self.max_depth < 1:
            raise InvalidParams("max_depth must be >= 1")


DEFAULT_QUAD = QuadratureSpec()


def _eval(f, x):
    y = np.asarray(f(x), dtype=float)
    y = np.broadcast_to(y, x.shape)
    if not np.all(np.isfinite(y)):
        raise NonFinite("integrand is not finite on the quadrature grid")
    return y


def _simpson(h, fa, fm, fb):
    return h / 6.0 * (fa + 4.0 * fm + fb)


def simpson(f, lo, hi, panels):
    """Plain composite Simpson rule on ``panels`` equal subintervals (no refinement)."""
    x = np.linspace(lo, hi, 2 * panels + 1)
    y = _eval(f, x)
    h = (hi - lo) / panels
    return float(np.sum(_simpson(h, y[:-2:2], y[1:-1:2], y[2::2])))


def integrate(f, lo, hi, spec=DEFAULT_QUAD):
    """Integrate a vectorized ``f`` over ``[lo, hi]``.

    Starts from ``spec.panels`` Simpson panels and halves the panels whose
    Richardson error estimate exceeds their share of the budget, until the
    summed estimate drops below ``refine_tol`` times the L1 mass of ``f``.
    """
    lo, hi = float(lo), float(hi)
    if hi < lo:
        raise InvalidParams(f"integration bounds out of order: [{lo}, {hi}]")
    if hi == lo:
        return 0.0
    width = hi - lo

    edges = np.linspace(lo, hi, spec.panels + 1)
    a, b = edges[:-1], edges[1:]
    m = 0.5 * (a + b)
    fa, fm, fb = _eval(f, a), _eval(f, m), _eval(f, b)
    whole = _simpson(b - a, fa, fm, fb)

    done_val = 0.0
    done_abs = 0.0
    done_err = 0.0
    for _ in range(spec.max_depth):
        h = b - a
        fl = _eval(f, 0.5 * (a + m))
        fr = _eval(f, 0.5 * (m + b))
        left = _simpson(0.5 * h, fa, fl, fm)
        right = _simpson(0.5 * h, fm, fr, fb)
        pair = left + right
        err = np.abs(pair - whole) / 15.0
        refined = pair + (pair - whole) / 15.0
        pair_abs = (_simpson(0.5 * h, np.abs(fa), np.abs(fl), np.abs(fm))
                    + _simpson(0.5 * h, np.abs(fm), np.abs(fr), np.abs(fb)))

        scale = done_abs + float(np.sum(pair_abs))
        budget = spec.refine_tol * scale
        if done_err + float(np.sum(err)) <= budget or scale == 0.0:
            return done_val + float(np.sum(refined))

        split = err > budget * h / width
        if not split.any():
            return done_val + float(np.sum(refined))
        keep = ~split
        done_val += float(np.sum(refined[keep]))
        done_abs += float(np.sum(pair_abs[keep]))
        done_err += float(np.sum(err[keep]))

        a_s, m_s, b_s = a[split], m[split], b[split]
        a = np.concatenate([a_s, m_s])
        b = np.concatenate([m_s, b_s])
        m = 0.5 * (a + b)
        fa = np.concatenate([fa[split], fm[split]])
        fb = np.concatenate([fm[split], fb[split]])
        fm = np.concatenate([fl[split], fr[split]])
        whole = np.concatenate([left[split], right[split]])
    raise DepthExceeded(
        f"no convergence to relative tolerance {spec.refine_tol} after "
        f"{spec.max_depth} halvings on [{lo}, {hi}]")


@dataclass(frozen=True)
class MonotoneTable:
    """Tabulated nondecreasing function on a strictly increasing grid."""

    xs: np.ndarray
    ys: np.ndarray

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        ys = np.asarray(self.ys, dtype=float)
        if xs.ndim != 1 or xs.shape != ys.shape or len(xs) < 2:
            raise InvalidParams("xs and ys must be 1-D arrays of equal length >= 2")
        if np.any(np.diff(xs) <= 0):
            raise InvalidParams("xs must be strictly increasing")
        if np.any(np.diff(ys) < 0):
            raise InvalidParams("ys must be nondecreasing")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)

    @property
    def total(self):
        return float(self.ys[-1])

    def __call__(self, x):
        return np.interp(x, self.xs, self.ys)


def cumulative_table(f, grid_size=10_001, normalize=False, lo=0.0, hi=1.0):
    """Running integral of a nonnegative ``f`` on a uniform grid.

    Each cell is integrated by Simpson's rule using its midpoint, so the table
    is exact for piecewise cubics.
    """
    if grid_size < 2:
        raise InvalidParams("grid_size must be >= 2")
    xs = np.linspace(lo, hi, grid_size)
    mids = 0.5 * (xs[:-1] + xs[1:])
    fx = _eval(f, xs)
    fm = _eval(f, mids)
    if np.any(fx < 0) or np.any(fm < 0):
        raise NegativeDensity("cumulative_table requires f >= 0")
    cells = _simpson(np.diff(xs), fx[:-1], fm, fx[1:])
    ys = np.concatenate([[0.0], np.cumsum(cells)])
    if ys[-1] <= 0:
        raise DegenerateTable("integrand has zero total mass")
    if normalize:
        ys = ys / ys[-1]
        ys[-1] = 1.0
    return MonotoneTable(xs, ys)


def invert_monotone(table, y):
    """Solve ``table(x) = y`` by bracketing binary search and linear interpolation.

    ``y`` may be a scalar or an array.
    """
    y_arr = np.asarray(y, dtype=float)
    total = table.ys[-1]
    if np.any(y_arr < 0) or np.any(y_arr > total) or np.any(np.isnan(y_arr)):
        raise OutOfRange(f"y must lie in [0, {total}]")
    xs, ys = table.xs, table.ys
    k = np.searchsorted(ys, y_arr, side="left")
    k = np.clip(k, 1, len(xs) - 1)
    y0, y1 = ys[k - 1], ys[k]
    x0, x1 = xs[k - 1], xs[k]
    dy = y1 - y0
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(dy > 0, (y_arr - y0) / dy, 0.0)
    x = x0 + t * (x1 - x0)
    x = np.where(y_arr == total, xs[-1], x)
    x = np.where(y_arr == 0, xs[0], x)
    return float(x) if np.ndim(x) == 0 else x


@dataclass
class RngStream:
    """Reproducible random stream identified by ``(seed, stream_id)``.

    Not safe to share between threads; give each worker its own stream_id.
    """

    seed: int
    stream_id: int = 0
    substream: tuple = ()
    gen: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        key = (int(self.stream_id),) + tuple(int(k) for k in self.substream)
        ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=key)
        self.gen = np.random.Generator(np.random.PCG64(ss))

    def child(self, stream_id):
        """A fresh independent stream under the same seed."""
        return RngStream(self.seed, stream_id)

    def spawn(self, *key):
        """Independent sub-stream, e.g. one per experiment repeat."""
        return RngStream(self.seed, self.stream_id, self.substream + key)

    @property
    def algorithm(self):
        return RNG_ALGORITHM

    def random(self, size=None):
        return self.gen.random(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.gen.normal(loc, scale, size)
