"""Regression targets, input distributions, noise and datasets for y = beta(x) + noise.

Inputs use two array conventions: shape ``(n,)`` when ``dim == 1`` and
``(n, dim)`` otherwise. Targets and densities are vectorized over the first axis.
"""
import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import ndtr, ndtri

from .errors import (DimensionMismatch, InvalidParams, NormalizationFailure,
                     UnknownTarget)
from .numerics import cumulative_table, integrate, invert_monotone

FD_STEP = 1e-6
NORMALIZATION_TOL = 1e-6
TRUNC_GAUSS_DEFAULTS = {"mu": 0.5, "s": 0.2}


def _gen(rng):
    return rng.gen if hasattr(rng, "gen") else rng


def as_points(x, dim):
    """Coerce ``x`` to the array convention for ``dim``."""
    x = np.asarray(x, dtype=float)
    if dim == 1:
        if x.ndim == 2 and x.shape[1] == 1:
            x = x[:, 0]
        return x
    if x.ndim == 1 and x.shape[0] == dim:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise DimensionMismatch(f"expected points of dimension {dim}, got shape {x.shape}")
    return x


@dataclass(frozen=True)
class TargetFunction:
    name: str
    dim: int
    eval: Callable
    grad: Callable
    params: dict = field(default_factory=dict)
    fd_step: Optional[float] = None

    def __call__(self, x):
        return self.eval(as_points(x, self.dim))

    def grad_sq_norm(self, x):
        """Squared gradient norm, shape ``(n,)`` for either input convention."""
        g = self.grad(as_points(x, self.dim))
        return g * g if self.dim == 1 else np.sum(g * g, axis=-1)


# -- target registry -----------------------------------------------------------

def _first_coord(x, dim):
    return x if dim == 1 else x[..., 0]


def _unit_first(x, dim, values):
    if dim == 1:
        return values
    g = np.zeros_like(x)
    g[..., 0] = values
    return g


def _linear(dim=1):
    return TargetFunction(
        "linear", dim,
        lambda x: np.array(_first_coord(x, dim), dtype=float),
        lambda x: _unit_first(x, dim, np.ones_like(_first_coord(x, dim))),
        {"dim": dim})


def _quadratic(dim=1):
    return TargetFunction(
        "quadratic", dim,
        lambda x: _first_coord(x, dim) ** 2,
        lambda x: _unit_first(x, dim, 2.0 * _first_coord(x, dim)),
        {"dim": dim})


def _cosine10pi(dim=1):
    if dim != 1:
        raise DimensionMismatch("cosine10pi is one-dimensional")
    w = 10.0 * np.pi
    return TargetFunction("cosine10pi", 1,
                          lambda x: np.cos(w * x),
                          lambda x: -w * np.sin(w * x))


def _cosine_plateau(dim=1):
    if dim != 1:
        raise DimensionMismatch("cosine-plateau is one-dimensional")
    w = 10.0 * np.pi

    def flat(x):
        return (x > 0.4) & (x < 0.6)

    return TargetFunction("cosine-plateau", 1,
                          lambda x: np.where(flat(x), 1.0, np.cos(w * x)),
                          lambda x: np.where(flat(x), 0.0, -w * np.sin(w * x)))


def _sum_coords(dim=2):
    if dim == 1:
        return TargetFunction("sum-coords", 1, lambda x: np.array(x, dtype=float),
                              lambda x: np.ones_like(x), {"dim": 1})
    return TargetFunction("sum-coords", dim,
                          lambda x: np.sum(x, axis=-1),
                          lambda x: np.ones_like(x),
                          {"dim": dim})


def _constant(value=0.0, dim=1):
    value = float(value)
    return TargetFunction(
        "constant", dim,
        lambda x: np.full(np.shape(_first_coord(x, dim)), value),
        lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        {"value": value, "dim": dim})


def _custom_polynomial(coeffs, dim=1):
    if dim != 1:
        raise DimensionMismatch("custom-polynomial is one-dimensional")
    poly = np.polynomial.Polynomial(np.asarray(coeffs, dtype=float))
    deriv = poly.deriv()
    return TargetFunction("custom-polynomial", 1,
                          lambda x: poly(np.asarray(x, dtype=float)),
                          lambda x: deriv(np.asarray(x, dtype=float)),
                          {"coeffs": [float(c) for c in coeffs]})


def read_tabulated(path):
    """Read a two-column ``x,value`` CSV with strictly increasing x in [0, 1]."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
    if not rows or [c.strip() for c in rows[0]] != ["x", "value"]:
        raise InvalidParams(f"{path}: expected header 'x,value'")
    data = np.array([[float(a), float(b)] for a, b in rows[1:]], dtype=float)
    if data.ndim != 2 or len(data) < 2:
        raise InvalidParams(f"{path}: need at least two rows")
    return data[:, 0], data[:, 1]


def _check_grid(xs):
    if np.any(np.diff(xs) <= 0):
        raise InvalidParams("tabulated x must be strictly increasing")
    if xs[0] < 0 or xs[-1] > 1:
        raise InvalidParams("tabulated x must lie in [0, 1]")


def _tabulated(x=None, value=None, path=None, dim=1):
    if dim != 1:
        raise DimensionMismatch("tabulated targets are one-dimensional")
    if path is not None:
        x, value = read_tabulated(path)
    xs = np.asarray(x, dtype=float)
    vs = np.asarray(value, dtype=float)
    _check_grid(xs)
    spline = CubicSpline(xs, vs) if len(xs) > 2 else None

    def f(t):
        t = np.asarray(t, dtype=float)
        return spline(t) if spline is not None else np.interp(t, xs, vs)

    h = FD_STEP

    def df(t):
        t = np.asarray(t, dtype=float)
        lo = np.clip(t - h, 0.0, 1.0)
        hi = np.clip(t + h, 0.0, 1.0)
        # one-sided at the domain ends
        return (f(hi) - f(lo)) / (hi - lo)

    return TargetFunction("tabulated", 1, f, df,
                          {"n_nodes": int(len(xs)), "path": str(path) if path else None},
                          fd_step=h)


TARGETS = {
    "linear": _linear,
    "quadratic": _quadratic,
    "cosine10pi": _cosine10pi,
    "cosine-plateau": _cosine_plateau,
    "sum-coords": _sum_coords,
    "constant": _constant,
    "custom-polynomial": _custom_polynomial,
    "tabulated": _tabulated,
}


def _split_spec(spec):
    if isinstance(spec, str):
        return spec, {}
    spec = dict(spec)
    try:
        name = spec.pop("name")
    except KeyError:
        raise InvalidParams("spec is missing 'name'") from None
    return name, spec


def make_target(spec, dim=None):
    """Build a target from a registry name or a ``{"name": ..., **params}`` dict."""
    name, params = _split_spec(spec)
    if name not in TARGETS:
        raise UnknownTarget(f"unknown target {name!r}; choose from {sorted(TARGETS)}")
    if dim is not None:
        params.setdefault("dim", dim)
    try:
        target = TARGETS[name](**params)
    except TypeError as exc:
        raise InvalidParams(f"bad parameters for target {name!r}: {exc}") from None
    if dim is not None and target.dim != dim:
        raise DimensionMismatch(f"target {name!r} has dim {target.dim}, expected {dim}")
    return target


# -- input distributions ---------------------------------------------------------

@dataclass(frozen=True)
class InputDistribution:
    name: str
    dim: int
    pdf: Callable
    sampler: Callable
    params: dict = field(default_factory=dict)
    factors: tuple = ()

    def sample(self, rng, n):
        return self.sampler(_gen(rng), int(n))

    def __call__(self, x):
        return self.pdf(as_points(x, self.dim))


def _uniform(dim=1):
    if dim == 1:
        return InputDistribution(
            "uniform", 1,
            lambda x: np.where((x >= 0) & (x <= 1), 1.0, 0.0),
            lambda g, n: g.random(n), {"dim": 1})
    return InputDistribution(
        "uniform", dim,
        lambda x: np.where(np.all((x >= 0) & (x <= 1), axis=-1), 1.0, 0.0),
        lambda g, n: g.random((n, dim)), {"dim": dim})


def _truncated_gaussian(mu=TRUNC_GAUSS_DEFAULTS["mu"], s=TRUNC_GAUSS_DEFAULTS["s"], dim=1):
    if dim != 1:
        raise DimensionMismatch("truncated-gaussian is one-dimensional; use product-of-1d")
    mu, s = float(mu), float(s)
    if not s > 0:
        raise InvalidParams(f"truncated-gaussian scale must be positive, got {s}")
    c_lo, c_hi = ndtr(-mu / s), ndtr((1.0 - mu) / s)
    z = c_hi - c_lo
    norm = s * z * np.sqrt(2.0 * np.pi)

    def pdf(x):
        x = np.asarray(x, dtype=float)
        inside = (x >= 0) & (x <= 1)
        return np.where(inside, np.exp(-0.5 * ((x - mu) / s) ** 2) / norm, 0.0)

    def sampler(g, n):
        u = g.random(n)
        x = mu + s * ndtri(c_lo + u * z)
        return np.clip(x, 0.0, 1.0)

    return InputDistribution("truncated-gaussian", 1, pdf, sampler,
                             {"mu": mu, "s": s, "truncation": [0.0, 1.0]})


def _custom_tabulated(x=None, value=None, path=None, dim=1, grid_size=10_001):
    if dim != 1:
        raise DimensionMismatch("custom-tabulated densities are one-dimensional")
    if path is not None:
        x, value = read_tabulated(path)
    xs = np.asarray(x, dtype=float)
    vs = np.asarray(value, dtype=float)
    _check_grid(xs)
    if np.any(vs < 0):
        raise InvalidParams("tabulated pdf values must be nonnegative")
    mass = np.trapezoid(vs, xs)
    if not mass > 0:
        raise InvalidParams("tabulated pdf has zero mass")
    vs = vs / mass

    def pdf(t):
        t = np.asarray(t, dtype=float)
        return np.where((t >= xs[0]) & (t <= xs[-1]), np.interp(t, xs, vs), 0.0)

    table = cumulative_table(pdf, grid_size, normalize=True)

    def sampler(g, n):
        return invert_monotone(table, g.random(n))

    return InputDistribution("custom-tabulated", 1, pdf, sampler,
                             {"n_nodes": int(len(xs)), "path": str(path) if path else None})


def _product(factors, dim=None):
    dists = tuple(make_input_dist(f) for f in factors)
    if any(d.dim != 1 for d in dists):
        raise DimensionMismatch("product-of-1d factors must be one-dimensional")
    d = len(dists)
    if dim is not None and dim != d:
        raise DimensionMismatch(f"{d} factors given for dim {dim}")

    def pdf(x):
        x = np.asarray(x, dtype=float)
        out = np.ones(x.shape[:-1])
        for j, fac in enumerate(dists):
            out = out * fac.pdf(x[..., j])
        return out

    def sampler(g, n):
        return np.stack([fac.sampler(g, n) for fac in dists], axis=-1)

    return InputDistribution("product-of-1d", d, pdf, sampler,
                             {"factors": [dict(name=f.name, **f.params) for f in dists]},
                             factors=dists)


DISTRIBUTIONS = {
    "uniform": _uniform,
    "truncated-gaussian": _truncated_gaussian,
    "custom-tabulated": _custom_tabulated,
    "product-of-1d": _product,
}


def _check_normalized(dist):
    if dist.name == "uniform":
        return
    parts = dist.factors if dist.factors else (dist,)
    for part in parts:
        mass = integrate(part.pdf, 0.0, 1.0)
        if abs(mass - 1.0) > NORMALIZATION_TOL:
            raise NormalizationFailure(f"{part.name} integrates to {mass!r}, not 1")


def make_input_dist(spec, dim=None):
    """Build an input distribution on the unit cube from a name or spec dict."""
    if isinstance(spec, InputDistribution):
        return spec
    name, params = _split_spec(spec)
    if name not in DISTRIBUTIONS:
        raise InvalidParams(f"unknown distribution {name!r}; choose from {sorted(DISTRIBUTIONS)}")
    if dim is not None:
        params.setdefault("dim", dim)
    try:
        dist = DISTRIBUTIONS[name](**params)
    except TypeError as exc:
        raise InvalidParams(f"bad parameters for distribution {name!r}: {exc}") from None
    if dim is not None and dist.dim != dim:
        raise DimensionMismatch(f"distribution {name!r} has dim {dist.dim}, expected {dim}")
    _check_normalized(dist)
    return dist


# -- noise and data --------------------------------------------------------------

@dataclass(frozen=True)
class NoiseModel:
    kind: str = "none"
    low: float = 0.0
    high: float = 0.0
    std: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "uniform-range", "gaussian"):
            raise InvalidParams(f"unknown noise kind {self.kind!r}")
        if self.kind == "uniform-range":
            if not self.high > self.low:
                raise InvalidParams("uniform-range noise needs low < high")
            if not np.isclose(self.low, -self.high, rtol=0, atol=1e-15):
                raise InvalidParams("noise must have zero mean (use a symmetric range)")
        if self.kind == "gaussian" and self.std < 0:
            raise InvalidParams("gaussian noise std must be nonnegative")

    @classmethod
    def from_spec(cls, spec):
        if spec is None:
            return cls()
        if isinstance(spec, NoiseModel):
            return spec
        if isinstance(spec, str):
            return cls(spec)
        params = dict(spec)
        kind = params.pop("kind", params.pop("name", "none"))
        if "range" in params:
            params["low"], params["high"] = params.pop("range")
        try:
            return cls(kind, **{k: float(v) for k, v in params.items()})
        except TypeError as exc:
            raise InvalidParams(f"bad noise parameters: {exc}") from None

    @property
    def variance(self):
        if self.kind == "uniform-range":
            return (self.high - self.low) ** 2 / 12.0
        if self.kind == "gaussian":
            return self.std ** 2
        return 0.0

    @property
    def bounded(self):
        return self.kind != "gaussian"

    @property
    def range_size(self):
        """Width of the noise support (infinite for Gaussian noise)."""
        if self.kind == "uniform-range":
            return self.high - self.low
        if self.kind == "gaussian":
            return float("inf") if self.std > 0 else 0.0
        return 0.0

    def sample(self, rng, n):
        g = _gen(rng)
        if self.kind == "uniform-range":
            return g.uniform(self.low, self.high, n)
        if self.kind == "gaussian":
            return g.normal(0.0, self.std, n)
        return np.zeros(n)

    def to_dict(self):
        if self.kind == "uniform-range":
            return {"kind": self.kind, "range": [self.low, self.high]}
        if self.kind == "gaussian":
            return {"kind": self.kind, "std": self.std}
        return {"kind": "none"}


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    outputs: np.ndarray
    seed: Optional[int] = None
    stream_id: Optional[int] = None

    @property
    def n(self):
        return len(self.outputs)

    def __len__(self):
        return self.n


def sample_dataset(dist, target, noise, n, rng):
    """Draw ``n`` i.i.d. pairs ``(x, beta(x) + noise)``."""
    if dist.dim != target.dim:
        raise DimensionMismatch(f"distribution dim {dist.dim} != target dim {target.dim}")
    if n < 0:
        raise InvalidParams("n must be nonnegative")
    x = dist.sample(rng, n)
    y = target.eval(x) + noise.sample(rng, n)
    return Dataset(x, np.asarray(y, dtype=float),
                   getattr(rng, "seed", None), getattr(rng, "stream_id", None))
