"""Expert constants and test-error evaluators for one-dimensional inputs.

Three routes to the same quantity are provided so they can be checked against
each other: exact per-region quadrature, the small-interval sum, and the
continuous integral over a segment density.
"""
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .density1d import DEFAULT_EPS, Segmentation1D
from .errors import DegenerateDensity, InvalidM, InvalidParams, ZeroMassRegion
from .numerics import DEFAULT_QUAD, integrate

ZERO_MASS = 1e-14


@dataclass(frozen=True)
class MoEModel1D:
    segmentation: Segmentation1D
    constants: np.ndarray
    provenance: str = "optimal-exact"

    def __post_init__(self):
        c = np.asarray(self.constants, dtype=float)
        if c.shape != (self.segmentation.m,):
            raise InvalidParams(f"expected {self.segmentation.m} constants, got {c.shape}")
        object.__setattr__(self, "constants", c)

    @property
    def m(self):
        return self.segmentation.m

    def predict(self, x):
        return self.constants[self.segmentation.route(x)]


@dataclass
class ErrorReport:
    total: float
    noise_floor: float
    method: str
    m: int
    per_region: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def excess(self):
        return self.total - self.noise_floor

    def to_dict(self):
        d = {"total": self.total, "noise_floor": self.noise_floor,
             "excess": self.excess, "method": self.method, "m": self.m,
             "per_region": [] if self.per_region is None else
             [float(v) for v in self.per_region]}
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)


def _report(noise_var, per_region, method, m):
    per_region = np.asarray(per_region, dtype=float)
    return ErrorReport(float(noise_var + per_region.sum()), float(noise_var),
                       method, m, per_region)


def region_masses(seg, dist, quad=DEFAULT_QUAD):
    return seg.integrate_regions(lambda x, i: dist.pdf(x), quad)


def optimal_constants_1d(seg, target, dist, mode="exact", quad=DEFAULT_QUAD):
    """Per-region optimal constants.

    ``exact`` is the probability-weighted mean of beta over each region;
    ``midpoint`` evaluates beta at the region centers.
    """
    if mode == "midpoint":
        return np.asarray(target.eval(seg.centers), dtype=float)
    if mode != "exact":
        raise InvalidParams(f"unknown mode {mode!r}")
    mass = region_masses(seg, dist, quad)
    if np.any(mass < ZERO_MASS):
        bad = np.flatnonzero(mass < ZERO_MASS).tolist()
        raise ZeroMassRegion(f"regions {bad} carry no probability mass")
    moment = seg.integrate_regions(lambda x, i: target.eval(x) * dist.pdf(x), quad)
    return moment / mass


def optimal_model_1d(seg, target, dist, mode="exact"):
    c = optimal_constants_1d(seg, target, dist, mode)
    return MoEModel1D(seg, c, f"optimal-{mode}")


def test_error_exact_1d(model, target, dist, noise_var=0.0, quad=DEFAULT_QUAD):
    """Noise variance plus the per-region integrals of ``(c_i - beta)^2 p``."""
    c = model.constants
    per = model.segmentation.integrate_regions(
        lambda x, i: (c[i] - target.eval(x)) ** 2 * dist.pdf(x), quad)
    return _report(noise_var, per, "exact", model.m)


def test_error_sum_1d(seg, target, dist, noise_var=0.0):
    """Small-interval formula: ``sum beta'(x_i)^2 p(x_i) len_i^3 / 12``."""
    x = seg.centers
    per = target.grad_sq_norm(x) * dist.pdf(x) * seg.lengths ** 3 / 12.0
    return _report(noise_var, per, "sum", seg.m)


def test_error_integral_1d(density, m, target, dist, noise_var=0.0, quad=DEFAULT_QUAD):
    """Continuous approximation ``int beta'^2 p / lambda^2 dx / (12 m^2)``."""
    if m < 1:
        raise InvalidM(f"m must be >= 1, got {m}")

    def integrand(x):
        lam = density(x)
        if np.any(lam <= 0):
            raise DegenerateDensity("segment density touches zero")
        return target.grad_sq_norm(x) * dist.pdf(x) / lam ** 2

    val = integrate(integrand, 0.0, 1.0, quad) / (12.0 * m * m)
    return ErrorReport(float(noise_var + val), float(noise_var), "integral", m)


def cube_root_mass(product, eps=DEFAULT_EPS, quad=DEFAULT_QUAD):
    """``int max(product, eps)^(1/3) dx`` over [0, 1]."""
    return integrate(lambda x: np.maximum(product(x), eps) ** (1.0 / 3.0), 0.0, 1.0, quad)


def optimal_error_1d(m, target, dist, noise_var=0.0, eps=DEFAULT_EPS, quad=DEFAULT_QUAD):
    """Minimal continuous error ``(int (p beta'^2)^(1/3))^3 / (12 m^2)``."""
    if m < 1:
        raise InvalidM(f"m must be >= 1, got {m}")
    k = cube_root_mass(lambda x: dist.pdf(x) * target.grad_sq_norm(x), eps, quad)
    return ErrorReport(float(noise_var + k ** 3 / (12.0 * m * m)), float(noise_var),
                       "optimal", m)


def quantizer_error_optimal(m, dist, eps=DEFAULT_EPS, quad=DEFAULT_QUAD):
    """High-rate distortion of the optimal m-level scalar quantizer (no noise term)."""
    if m < 1:
        raise InvalidM(f"m must be >= 1, got {m}")
    k = cube_root_mass(dist.pdf, eps, quad)
    return float(k ** 3 / (12.0 * m * m))


def empirical_test_error(model, target, dist, noise, n_test, rng):
    """Mean squared residual on ``n_test`` fresh draws, with its standard error."""
    x = dist.sample(rng, n_test)
    y = target.eval(x) + noise.sample(rng, n_test)
    r2 = (model.predict(x) - y) ** 2
    return float(r2.mean()), float(r2.std(ddof=1) / np.sqrt(n_test))
