"""Box segmentations of [0, 1]^d, moment-of-inertia geometry and error bounds.

Regions are axis-aligned boxes, so volume, center and the normalized second
moment are closed form. Integrals over boxes and over the cube use tensor
Gauss-Legendre rules up to ``MAX_QUAD_DIM`` dimensions and Monte Carlo beyond.
"""
import itertools
import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .density1d import (DEFAULT_EPS, Segmentation1D, floored_power_density,
                        segmentation_from_density)
from .errors import (DegenerateDensity, DegenerateRegion, DimensionMismatch,
                     InvalidCounts, InvalidParams, OutOfDomain, ZeroMassRegion)
from .numerics import DEFAULT_QUAD, RngStream, integrate

MAX_QUAD_DIM = 6
MC_SAMPLES = 100_000
HEXAGON_M = 5.0 / (36.0 * np.sqrt(3.0))

# Gauss-Legendre points per axis inside one box, by dimension
_BOX_NODES = {2: 12, 3: 8, 4: 5, 5: 4, 6: 3}
# (panels per axis, nodes per panel) for whole-cube rules
_CUBE_RULE = {2: (64, 8), 3: (16, 4), 4: (4, 4), 5: (3, 3), 6: (2, 3)}


def default_m_opt(d):
    """Normalized second moment of the best known space-filling cell.

    Interval for d = 1, regular hexagon for d = 2; the cube value 1/12 is used
    as a conservative stand-in for d >= 3.
    """
    return HEXAGON_M if d == 2 else 1.0 / 12.0


@dataclass(frozen=True)
class RegionMD:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape:
            raise DimensionMismatch("lo and hi differ in dimension")
        if np.any(hi - lo <= 0):
            raise DegenerateRegion(f"box has a non-positive side: {lo} .. {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self):
        return len(self.lo)

    @property
    def sides(self):
        return self.hi - self.lo

    @property
    def volume(self):
        return float(np.prod(self.sides))

    @property
    def center(self):
        return 0.5 * (self.lo + self.hi)

    @property
    def second_moment(self):
        """``int ||x - center||^2 dx`` over the box."""
        return self.volume * float(np.sum(self.sides ** 2)) / 12.0

    @property
    def normalized_moment(self):
        d = self.dim
        return self.second_moment / (d * self.volume ** (1.0 + 2.0 / d))

    def moment_k(self, k, rng=None, n=MC_SAMPLES):
        """Normalized k-th moment of inertia; closed form for k = 2, Monte Carlo otherwise."""
        if k == 2:
            return self.normalized_moment
        rng = rng if rng is not None else RngStream(0)
        u = rng.random((n, self.dim)) * self.sides + self.lo
        r = np.linalg.norm(u - self.center, axis=1)
        d = self.dim
        return float(np.mean(r ** k) / (d * self.volume ** (k / d)))

    def scaled(self, s):
        return RegionMD(self.lo * s, self.hi * s)


def region_geometry(region, rng=None, n_mc=MC_SAMPLES):
    return {
        "V": region.volume,
        "center": region.center,
        "M": region.normalized_moment,
        "M_k": {k: region.moment_k(k, rng, n_mc) for k in (1, 2, 3)},
    }


def _gauss_box(q, d):
    """Nodes in [0, 1]^d and weights summing to 1 for a q-point tensor rule."""
    t, w = np.polynomial.legendre.leggauss(q)
    t = 0.5 * (t + 1.0)
    w = 0.5 * w
    nodes = np.array(list(itertools.product(t, repeat=d)))
    weights = np.prod(np.array(list(itertools.product(w, repeat=d))), axis=1)
    return nodes, weights


@dataclass(frozen=True)
class GridSegmentationMD:
    """Cross product of per-axis breakpoints. Regions are numbered in C order."""

    axes: tuple
    lo: np.ndarray = field(init=False, repr=False)
    hi: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        axes = tuple(Segmentation1D(a).breakpoints for a in self.axes)
        if not axes:
            raise InvalidCounts("need at least one axis")
        object.__setattr__(self, "axes", axes)
        idx = np.array(list(np.ndindex(*self.counts)), dtype=int).reshape(-1, len(axes))
        lo = np.stack([axes[j][idx[:, j]] for j in range(len(axes))], axis=1)
        hi = np.stack([axes[j][idx[:, j] + 1] for j in range(len(axes))], axis=1)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self):
        return len(self.axes)

    @property
    def counts(self):
        return tuple(len(a) - 1 for a in self.axes)

    @property
    def m(self):
        return int(np.prod(self.counts))

    @property
    def regions(self):
        return [RegionMD(l, h) for l, h in zip(self.lo, self.hi)]

    @property
    def centers(self):
        c = 0.5 * (self.lo + self.hi)
        return c[:, 0] if self.dim == 1 else c

    @property
    def volumes(self):
        return np.prod(self.hi - self.lo, axis=1)

    @property
    def normalized_moments(self):
        s = self.hi - self.lo
        d = self.dim
        v = self.volumes
        return v * np.sum(s ** 2, axis=1) / 12.0 / (d * v ** (1.0 + 2.0 / d))

    def route(self, x):
        x = np.asarray(x, dtype=float)
        if self.dim == 1:
            x = x.reshape(-1, 1) if x.ndim <= 1 else x
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise DimensionMismatch(f"points must have {self.dim} coordinates")
        if np.any((x < 0) | (x > 1)) or np.any(np.isnan(x)):
            raise OutOfDomain("inputs must lie in the unit cube")
        per_axis = []
        for j, a in enumerate(self.axes):
            k = np.searchsorted(a, x[:, j], side="right") - 1
            per_axis.append(np.minimum(k, len(a) - 2))
        return np.ravel_multi_index(per_axis, self.counts)

    def integrate_regions(self, func, quad=DEFAULT_QUAD, nodes=None):
        """Per-region integrals of ``func(x, i)``; ``x`` follows the input convention."""
        d = self.dim
        if d == 1:
            return Segmentation1D(self.axes[0]).integrate_regions(func, quad)
        if d > MAX_QUAD_DIM:
            raise DimensionMismatch(f"quadrature is capped at d <= {MAX_QUAD_DIM}")
        q = nodes or _BOX_NODES[d]
        t, w = _gauss_box(q, d)
        out = np.empty(self.m)
        chunk = max(1, 500_000 // len(w))
        for start in range(0, self.m, chunk):
            stop = min(self.m, start + chunk)
            lo, hi = self.lo[start:stop], self.hi[start:stop]
            side = hi - lo
            pts = lo[:, None, :] + t[None, :, :] * side[:, None, :]
            ids = np.repeat(np.arange(start, stop), len(w))
            vals = np.asarray(func(pts.reshape(-1, d), ids), dtype=float).reshape(stop - start, len(w))
            out[start:stop] = vals @ w * np.prod(side, axis=1)
        return out

    def to_dict(self):
        return {"d": self.dim, "counts": list(self.counts),
                "breakpoints": [[float(v) for v in a] for a in self.axes]}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)


def grid_segmentation(d, counts, per_axis_densities=None):
    """Uniform (or per-axis compander) box grid with ``counts[j]`` cells on axis j."""
    counts = tuple(int(c) for c in counts)
    if len(counts) != d:
        raise InvalidCounts(f"{len(counts)} counts given for d={d}")
    if any(c < 1 for c in counts):
        raise InvalidCounts(f"counts must be >= 1, got {counts}")
    axes = []
    for j, c in enumerate(counts):
        dens = per_axis_densities[j] if per_axis_densities else None
        if dens is None:
            a = np.arange(c + 1) / c
            a[-1] = 1.0
        else:
            a = segmentation_from_density(dens, c).breakpoints
        axes.append(a)
    return GridSegmentationMD(tuple(axes))


def as_grid(seg):
    if isinstance(seg, GridSegmentationMD):
        return seg
    if isinstance(seg, Segmentation1D):
        return GridSegmentationMD((seg.breakpoints,))
    raise InvalidParams(f"not a segmentation: {seg!r}")


def _mc_region_sums(seg, values_fn, dist, rng, n):
    x = dist.sample(rng, n)
    idx = seg.route(x)
    return (np.bincount(idx, minlength=seg.m) / n,
            np.bincount(idx, weights=values_fn(x), minlength=seg.m) / n)


def optimal_constants_md(seg, target, dist, mode="exact", rng=None, n_mc=MC_SAMPLES):
    """Optimal constants on a box grid; quadrature up to d = 6, Monte Carlo beyond."""
    seg = as_grid(seg)
    if target.dim != seg.dim or dist.dim != seg.dim:
        raise DimensionMismatch("segmentation, target and distribution dims differ")
    if mode == "center":
        return np.asarray(target.eval(seg.centers), dtype=float)
    if mode != "exact":
        raise InvalidParams(f"unknown mode {mode!r}")
    if seg.dim <= MAX_QUAD_DIM:
        mass = seg.integrate_regions(lambda x, i: dist.pdf(x))
        moment = seg.integrate_regions(lambda x, i: target.eval(x) * dist.pdf(x))
    else:
        mass, moment = _mc_region_sums(seg, target.eval, dist, rng or RngStream(0), n_mc)
    if np.any(mass < 1e-14):
        raise ZeroMassRegion(f"regions {np.flatnonzero(mass < 1e-14).tolist()} have no mass")
    return moment / mass


def predict_md(seg, constants, x):
    return np.asarray(constants)[as_grid(seg).route(x)]


def test_error_md_mc(seg, constants, target, dist, noise, n_mc, rng):
    """Monte Carlo test error on fresh draws. Returns ``(estimate, standard_error)``."""
    if n_mc < 1:
        raise InvalidParams("n_mc must be >= 1")
    x = dist.sample(rng, n_mc)
    y = target.eval(x) + noise.sample(rng, n_mc)
    r2 = (predict_md(seg, constants, x) - y) ** 2
    se = float(r2.std(ddof=1) / np.sqrt(n_mc)) if n_mc > 1 else float("inf")
    return float(r2.mean()), se


def test_error_md_quad(seg, constants, target, dist, noise_var=0.0):
    """Noise variance plus per-box quadratures of ``(c_i - beta)^2 p``."""
    seg = as_grid(seg)
    c = np.asarray(constants, dtype=float)
    per = seg.integrate_regions(lambda x, i: (c[i] - target.eval(x)) ** 2 * dist.pdf(x))
    return float(noise_var + per.sum())


def error_bound_sum_md(seg, target, dist, noise_var=0.0):
    """Small-region upper bound ``d * sum |grad beta(x_i)|^2 p(x_i) M_i V_i^(1+2/d)``."""
    seg = as_grid(seg)
    d = seg.dim
    x = seg.centers
    terms = (target.grad_sq_norm(x) * dist.pdf(x) * seg.normalized_moments
             * seg.volumes ** (1.0 + 2.0 / d))
    return float(noise_var + d * terms.sum())


# -- integrals over the whole cube ------------------------------------------------

def cube_integrate(f, d, quad=DEFAULT_QUAD):
    """Integrate ``f`` over [0, 1]^d (adaptive Simpson for d = 1, tensor rule up to d = 6)."""
    if d == 1:
        return integrate(f, 0.0, 1.0, quad)
    if d > MAX_QUAD_DIM:
        raise DimensionMismatch(f"quadrature is capped at d <= {MAX_QUAD_DIM}")
    panels, q = _CUBE_RULE[d]
    t, w = np.polynomial.legendre.leggauss(q)
    edges = np.linspace(0.0, 1.0, panels + 1)
    h = np.diff(edges)
    x1 = (edges[:-1, None] + 0.5 * (t[None, :] + 1.0) * h[:, None]).ravel()
    w1 = (0.5 * w[None, :] * h[:, None]).ravel()
    grids = np.meshgrid(*([x1] * d), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    wts = np.ones(len(pts))
    for g in np.meshgrid(*([w1] * d), indexing="ij"):
        wts = wts * g.ravel()
    return float(np.dot(np.asarray(f(pts), dtype=float), wts))


@dataclass(frozen=True)
class DensityMD:
    """Normalized segment density on [0, 1]^d given by a vectorized callable."""

    func: Callable
    dim: int
    eps: float = 0.0
    name: str = "density"

    def __call__(self, x):
        return self.func(np.asarray(x, dtype=float))


def density_md_from_function(f, d, name="density", eps=0.0):
    total = cube_integrate(f, d)
    if not total > 0:
        raise DegenerateDensity(f"{name}: density integrates to {total!r}")
    return DensityMD(lambda x: np.asarray(f(x), dtype=float) / total, d, eps, name)


def ubm_density_md(target, dist, d=None, eps=DEFAULT_EPS):
    """Density proportional to ``(p |grad beta|^2)^(d/(d+2))``, floored like the 1-D case."""
    d = d or target.dim
    if target.dim != d or dist.dim != d:
        raise DimensionMismatch("target and distribution must both have dimension d")

    def product(x):
        return dist.pdf(x) * target.grad_sq_norm(x)

    expo = d / (d + 2.0)
    if d == 1:
        return floored_power_density(product, expo, eps, "ubm")
    return density_md_from_function(lambda x: np.maximum(product(x), eps) ** expo,
                                    d, "ubm", eps)


def _profile_fn(profile):
    if callable(profile):
        return profile
    val = float(profile)
    if not val > 0:
        raise InvalidParams("moment-of-inertia profile must be positive")
    return lambda x: val


def error_bound_integral_md(density, profile, m, target, dist, noise_var=0.0,
                            rng=None, n_mc=MC_SAMPLES):
    """Continuous bound ``d / m^(2/d) * int |grad beta|^2 p mu / lambda^(2/d)``."""
    d = target.dim
    if dist.dim != d:
        raise DimensionMismatch("target and distribution dims differ")
    mu = _profile_fn(profile)

    def lam(x):
        v = np.asarray(density(x), dtype=float)
        if np.any(v <= 0):
            raise DegenerateDensity("segment density touches zero")
        return v

    if d <= 3:
        val = cube_integrate(
            lambda x: target.grad_sq_norm(x) * dist.pdf(x) * mu(x) / lam(x) ** (2.0 / d), d)
    else:
        x = dist.sample(rng or RngStream(0), n_mc)
        val = float(np.mean(target.grad_sq_norm(x) * mu(x) / lam(x) ** (2.0 / d)))
    return float(noise_var + d / m ** (2.0 / d) * val)


def min_bound_md(m, d, m_opt, target, dist, noise_var=0.0, eps=DEFAULT_EPS):
    """Bound attained by the UBM density with a constant moment profile ``m_opt``."""
    if not m_opt > 0:
        raise InvalidParams("M_opt must be positive")
    expo = d / (d + 2.0)
    k = cube_integrate(lambda x: np.maximum(dist.pdf(x) * target.grad_sq_norm(x), eps) ** expo, d)
    return float(noise_var + d * m_opt / m ** (2.0 / d) * k ** (1.0 + 2.0 / d))
