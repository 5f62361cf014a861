"""Learning expert constants from data for a fixed segmentation.

Covers routing, least-squares fitting, the split of test error into
approximation and estimation parts, the sample-size and deviation bounds for
the learned constants, and Monte Carlo experiments that check those bounds.
"""
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import EmptyDataset, InvalidParams, UnboundedNoise, ZeroMassRegion
from .model import sample_dataset
from .multidim import GridSegmentationMD

RANGE_POINTS_1D = 1001
RANGE_POINTS_MD = 250_000


def route(seg, x):
    """0-based region index of each input under the half-open convention."""
    return seg.route(x)


@dataclass(frozen=True)
class RoutedCounts:
    counts: np.ndarray
    n: int

    @property
    def empty_regions(self):
        return np.flatnonzero(self.counts == 0).tolist()


@dataclass(frozen=True)
class LearnedMoE:
    segmentation: object
    constants: np.ndarray
    counts: RoutedCounts
    fallback_value: float

    @property
    def fallback_regions(self):
        return self.counts.empty_regions

    @property
    def m(self):
        return self.segmentation.m

    def predict(self, x):
        return self.constants[self.segmentation.route(x)]


def fit_constants(seg, dataset):
    """Per-region output means; empty regions take the global output mean."""
    if dataset.n == 0:
        raise EmptyDataset("cannot fit constants without training data")
    idx = seg.route(dataset.inputs)
    counts = np.bincount(idx, minlength=seg.m)
    sums = np.bincount(idx, weights=dataset.outputs, minlength=seg.m)
    fallback = float(np.mean(dataset.outputs))
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.where(counts > 0, sums / np.maximum(counts, 1), fallback)
    return LearnedMoE(seg, c, RoutedCounts(counts, dataset.n), fallback)


def region_mass(seg, dist):
    """Probability of each region under the input distribution."""
    return seg.integrate_regions(lambda x, i: dist.pdf(x))


def optimal_constants(seg, target, dist):
    mass = region_mass(seg, dist)
    if np.any(mass < 1e-14):
        raise ZeroMassRegion(f"regions {np.flatnonzero(mass < 1e-14).tolist()} have no mass")
    moment = seg.integrate_regions(lambda x, i: target.eval(x) * dist.pdf(x))
    return moment / mass, mass


def test_error_quad(seg, constants, target, dist, noise_var=0.0):
    """Exact test error of piecewise-constant predictions by per-region quadrature."""
    c = np.asarray(constants, dtype=float)
    per = seg.integrate_regions(lambda x, i: (c[i] - target.eval(x)) ** 2 * dist.pdf(x))
    return float(noise_var + per.sum())


@dataclass
class DecompositionReport:
    test_error: float
    approximation_error: float
    estimation_error: float
    region_masses: np.ndarray = field(repr=False)

    @property
    def identity_gap(self):
        return self.test_error - (self.approximation_error + self.estimation_error)

    def to_dict(self):
        d = asdict(self)
        d["region_masses"] = [float(v) for v in self.region_masses]
        d["identity_gap"] = self.identity_gap
        return d


def decompose(seg, learned, target, dist, noise_var=0.0):
    """Test error of the learned model next to its approximation + estimation split.

    The left side integrates ``(c~_i - beta)^2 p`` directly; the right side uses
    the optimal constants and the mass-weighted squared gaps.
    """
    c_opt, rho = optimal_constants(seg, target, dist)
    c = learned.constants if isinstance(learned, LearnedMoE) else np.asarray(learned, dtype=float)
    test = test_error_quad(seg, c, target, dist, noise_var)
    app = test_error_quad(seg, c_opt, target, dist, noise_var)
    est = float(np.sum((c - c_opt) ** 2 * rho))
    return DecompositionReport(test, app, est, rho)


# -- concentration bounds ---------------------------------------------------------

def chernoff_min_n(rho, delta_tilde):
    """Smallest n with ``n >= 8 / rho * ln(1 / delta_tilde)``."""
    if not 0 < rho <= 1:
        raise InvalidParams(f"rho must lie in (0, 1], got {rho}")
    if not 0 < delta_tilde <= 1:
        raise InvalidParams(f"delta_tilde must lie in (0, 1], got {delta_tilde}")
    # round away float noise before taking the ceiling (e.g. 8.000000000000002)
    return int(math.ceil(round(8.0 / rho * math.log(1.0 / delta_tilde), 9)))


def hoeffding_radius(n, rho, gamma, r_beta, r_eps):
    """Deviation radius ``gamma (R_beta + R_eps) / sqrt(n rho)`` for one learned constant."""
    if n <= 0 or not 0 < rho <= 1 or gamma < 0 or r_beta < 0 or r_eps < 0:
        raise InvalidParams("need n > 0, rho in (0, 1], gamma >= 0 and nonnegative ranges")
    return gamma * (r_beta + r_eps) / math.sqrt(n * rho)


def estimation_bound(m, n, gamma, max_range):
    """High-probability ceiling ``(m / n) gamma^2 max_i (R_beta_i + R_eps)^2``."""
    if m < 1 or n <= 0 or gamma < 0 or max_range < 0:
        raise InvalidParams("need m >= 1, n > 0, gamma >= 0, max_range >= 0")
    return m / n * gamma ** 2 * max_range ** 2


def deviation_probability(gamma, delta_tilde, m=1):
    """Failure probability paired with the bounds above (clipped to 1)."""
    return min(1.0, m * (2.0 * math.exp(-gamma ** 2) + delta_tilde))


def value_ranges(seg, target, points_per_axis=None):
    """Range ``max - min`` of beta over each region by dense grid sampling."""
    d = seg.dim
    if isinstance(seg, GridSegmentationMD) and d > 1:
        k = points_per_axis or max(3, int(round(RANGE_POINTS_MD ** (1.0 / d))))
        t = np.linspace(0.0, 1.0, k)
        grid = np.stack([g.ravel() for g in np.meshgrid(*([t] * d), indexing="ij")], axis=1)
        out = np.empty(seg.m)
        for i in range(seg.m):
            pts = seg.lo[i] + grid * (seg.hi[i] - seg.lo[i])
            v = target.eval(pts)
            out[i] = v.max() - v.min()
        return out
    k = points_per_axis or RANGE_POINTS_1D
    a = seg.axes[0] if isinstance(seg, GridSegmentationMD) else seg.breakpoints
    t = np.linspace(0.0, 1.0, k)
    pts = a[:-1, None] + t[None, :] * np.diff(a)[:, None]
    v = target.eval(pts.ravel()).reshape(pts.shape)
    return v.max(axis=1) - v.min(axis=1)


@dataclass
class BoundCheckReport:
    gamma: float
    delta_tilde: float
    n: int
    m: int
    repeats: int
    chernoff_n: int
    n_sufficient: bool
    per_region: list
    estimation_violations: int
    bound: float
    region_probability: float
    estimation_probability: float

    @property
    def estimation_fraction(self):
        return self.estimation_violations / self.repeats

    def to_dict(self):
        d = asdict(self)
        d["estimation_fraction"] = self.estimation_fraction
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)


def empirical_bound_check(seg, target, dist, noise, n, gamma, delta_tilde, repeats, rng):
    """Refit the experts on ``repeats`` fresh datasets and count bound violations.

    A violation is a gap strictly larger than its radius or bound.

    Per region it also records the mean of the learned constant over the trials
    where the region received data, to compare against the optimal constant.
    """
    if not noise.bounded:
        raise UnboundedNoise("deviation bounds need noise with a bounded range")
    if repeats < 1:
        raise InvalidParams("repeats must be >= 1")
    c_opt, rho = optimal_constants(seg, target, dist)
    r_beta = value_ranges(seg, target)
    r_eps = noise.range_size
    radius = np.array([hoeffding_radius(n, p, gamma, rb, r_eps) for p, rb in zip(rho, r_beta)])
    bound = estimation_bound(seg.m, n, gamma, float(np.max(r_beta + r_eps)))
    n_min = chernoff_min_n(float(min(rho.min(), 1.0)), delta_tilde)

    m = seg.m
    viol = np.zeros(m, dtype=int)
    hit = np.zeros(m, dtype=int)
    s1 = np.zeros(m)
    s2 = np.zeros(m)
    est_viol = 0
    for r in range(repeats):
        data = sample_dataset(dist, target, noise, n, rng.spawn(r))
        learned = fit_constants(seg, data)
        gap = learned.constants - c_opt
        viol += np.abs(gap) > radius
        if float(np.sum(gap ** 2 * rho)) > bound:
            est_viol += 1
        got = learned.counts.counts > 0
        hit += got
        s1 += np.where(got, learned.constants, 0.0)
        s2 += np.where(got, learned.constants ** 2, 0.0)

    per_region = []
    for i in range(m):
        k = int(hit[i])
        mean = s1[i] / k if k else float("nan")
        var = (s2[i] - k * mean ** 2) / (k - 1) if k > 1 else float("nan")
        per_region.append({
            "rho": float(rho[i]), "violations": int(viol[i]), "radius": float(radius[i]),
            "r_beta": float(r_beta[i]), "c_opt": float(c_opt[i]),
            "mean_learned": float(mean), "n_trials_with_data": k,
            "stderr": float(math.sqrt(max(var, 0.0) / k)) if k > 1 else float("nan"),
        })
    return BoundCheckReport(
        float(gamma), float(delta_tilde), int(n), m, int(repeats), n_min, n >= n_min,
        per_region, est_viol, float(bound),
        deviation_probability(gamma, delta_tilde), deviation_probability(gamma, delta_tilde, m))


# -- approximation/estimation tradeoff ---------------------------------------------

@dataclass
class TradeoffCurve:
    n: int
    ms: list
    mean_test_error: np.ndarray
    stderr: np.ndarray
    approximation_error: np.ndarray

    @property
    def argmin_m(self):
        return int(self.ms[int(np.argmin(self.mean_test_error))])


def tradeoff_curves(make_segmentation, target, dist, noise, ms, ns, repeats, rng, workers=1):
    """Mean test error of least-squares experts against the number of experts.

    For every ``n`` the same ``repeats`` training sets are reused across all m,
    and each test error is evaluated exactly as approximation error plus the
    mass-weighted squared gaps of the learned constants.
    """
    ms = [int(m) for m in ms]

    def prep(m):
        seg = make_segmentation(m)
        c_opt, rho = optimal_constants(seg, target, dist)
        app = test_error_quad(seg, c_opt, target, dist, noise.variance)
        return seg, c_opt, rho, app

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            prepared = list(ex.map(prep, ms))
    else:
        prepared = [prep(m) for m in ms]

    curves = []
    for j, n in enumerate(ns):
        datasets = [sample_dataset(dist, target, noise, int(n), rng.spawn(j, r))
                    for r in range(repeats)]
        errs = np.empty((len(ms), repeats))
        for k, (seg, c_opt, rho, app) in enumerate(prepared):
            for r, data in enumerate(datasets):
                c = fit_constants(seg, data).constants
                errs[k, r] = app + np.sum((c - c_opt) ** 2 * rho)
        se = errs.std(axis=1, ddof=1) / np.sqrt(repeats) if repeats > 1 else np.zeros(len(ms))
        curves.append(TradeoffCurve(int(n), ms, errs.mean(axis=1), se,
                                    np.array([p[3] for p in prepared])))
    return curves
