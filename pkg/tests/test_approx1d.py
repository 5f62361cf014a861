import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from moequant import approx1d as a1
from moequant import density1d as d1
from moequant.errors import InvalidM, InvalidParams, ZeroMassRegion
from moequant.model import InputDistribution, NoiseModel, make_input_dist, make_target
from moequant.numerics import RngStream, integrate

UNIFORM = make_input_dist("uniform")
TG = make_input_dist("truncated-gaussian")
S2 = 1.0 / 300.0


def _two_x():
    return InputDistribution("two-x", 1, lambda x: 2.0 * np.asarray(x), lambda g, n: np.sqrt(g.random(n)))


def _random_density(rng):
    """Smooth strictly positive density: 1 + small random cosine series."""
    k = np.arange(1, 5)
    amp = rng.uniform(-0.2, 0.2, len(k))
    phase = rng.uniform(0, 2 * np.pi, len(k))
    return d1.density_from_function(
        lambda x: 1.0 + np.sum(amp[:, None] * np.cos(np.pi * k[:, None] * np.atleast_1d(x) + phase[:, None]),
                               axis=0).reshape(np.shape(x)))


class TestOptimalConstants:
    def test_constant_target(self):
        seg = d1.uniform_segmentation(5)
        t = make_target({"name": "constant", "value": 1.5})
        for mode in ("exact", "midpoint"):
            np.testing.assert_allclose(a1.optimal_constants_1d(seg, t, TG, mode), 1.5, rtol=1e-12)

    def test_quadratic_first_region(self):
        seg = d1.Segmentation1D(np.array([0.0, 0.2, 1.0]))
        t = make_target("quadratic")
        assert a1.optimal_constants_1d(seg, t, UNIFORM)[0] == pytest.approx(0.04 / 3, rel=1e-12)
        assert a1.optimal_constants_1d(seg, t, UNIFORM, "midpoint")[0] == pytest.approx(0.01)

    def test_unknown_mode(self):
        with pytest.raises(InvalidParams):
            a1.optimal_constants_1d(d1.uniform_segmentation(2), make_target("linear"), UNIFORM, "median")

    def test_zero_mass(self):
        p = make_input_dist({"name": "custom-tabulated", "x": [0.0, 0.5, 0.5001, 1.0],
                             "value": [0.0, 0.0, 1.0, 1.0]})
        with pytest.raises(ZeroMassRegion):
            a1.optimal_constants_1d(d1.uniform_segmentation(4), make_target("linear"), p)

    def test_stationarity(self):
        t = make_target("cosine10pi")
        seg = d1.segmentation_from_density(d1.optimal_density_1d(t, TG), 12)
        model = a1.optimal_model_1d(seg, t, TG)
        h = 1e-6
        for i in range(seg.m):
            up, dn = model.constants.copy(), model.constants.copy()
            up[i] += h
            dn[i] -= h
            e_up = a1.test_error_exact_1d(a1.MoEModel1D(seg, up), t, TG).total
            e_dn = a1.test_error_exact_1d(a1.MoEModel1D(seg, dn), t, TG).total
            assert abs((e_up - e_dn) / (2 * h)) < 1e-6

    @given(st.integers(0, 9), st.sampled_from([-0.01, 0.01]))
    @settings(max_examples=20, deadline=None)
    def test_perturbation_never_helps(self, i, delta):
        t = make_target("cosine10pi")
        seg = d1.uniform_segmentation(10)
        model = a1.optimal_model_1d(seg, t, TG)
        c = model.constants.copy()
        c[i] += delta
        base = a1.test_error_exact_1d(model, t, TG).total
        assert a1.test_error_exact_1d(a1.MoEModel1D(seg, c), t, TG).total >= base

    def test_midpoint_gap_is_first_order(self):
        t = make_target("cosine10pi")
        gaps = []
        for m in (20, 40, 80, 160):
            seg = d1.uniform_segmentation(m)
            gaps.append(np.max(np.abs(a1.optimal_constants_1d(seg, t, TG, "midpoint")
                                      - a1.optimal_constants_1d(seg, t, TG))))
        for coarse, fine in zip(gaps, gaps[1:]):
            assert coarse / fine >= 2.0


class TestExactError:
    def test_perfect_fit(self):
        t = make_target({"name": "constant", "value": 0.3})
        model = a1.MoEModel1D(d1.uniform_segmentation(3), np.full(3, 0.3))
        assert a1.test_error_exact_1d(model, t, UNIFORM).total == 0.0

    @pytest.mark.parametrize("m", [1, 7, 10, 100])
    def test_linear_closed_form(self, m):
        t = make_target("linear")
        model = a1.optimal_model_1d(d1.uniform_segmentation(m), t, UNIFORM, "midpoint")
        rep = a1.test_error_exact_1d(model, t, UNIFORM, S2)
        assert rep.excess == pytest.approx(1 / (12 * m * m), rel=1e-9)
        assert rep.noise_floor == S2

    def test_noise_floor_only(self):
        t = make_target({"name": "constant", "value": 1.0})
        model = a1.optimal_model_1d(d1.uniform_segmentation(3), t, UNIFORM)
        assert a1.test_error_exact_1d(model, t, UNIFORM, S2).total == pytest.approx(3.333e-3, rel=1e-3)

    def test_report_json(self):
        t = make_target("linear")
        rep = a1.test_error_exact_1d(a1.optimal_model_1d(d1.uniform_segmentation(2), t, UNIFORM), t, UNIFORM)
        assert '"method": "exact"' in rep.to_json()
        assert len(rep.to_dict()["per_region"]) == 2

    def test_wrong_constant_count(self):
        with pytest.raises(InvalidParams):
            a1.MoEModel1D(d1.uniform_segmentation(3), np.zeros(2))


class TestSumFormula:
    def test_constant(self):
        rep = a1.test_error_sum_1d(d1.uniform_segmentation(8), make_target("constant"), TG, S2)
        assert rep.total == S2

    @pytest.mark.parametrize("m", [3, 10])
    def test_linear(self, m):
        rep = a1.test_error_sum_1d(d1.uniform_segmentation(m), make_target("linear"), UNIFORM, S2)
        assert rep.excess == pytest.approx(1 / (12 * m * m), rel=1e-12)


class TestIntegralFormula:
    def test_linear_flat(self):
        rep = a1.test_error_integral_1d(d1.uniform_density(), 10, make_target("linear"), UNIFORM, S2)
        assert rep.excess == pytest.approx(1 / 1200, rel=1e-10)

    def test_at_optimum(self):
        t = make_target("cosine10pi")
        lam = d1.optimal_density_1d(t, TG)
        got = a1.test_error_integral_1d(lam, 30, t, TG).total
        assert got == pytest.approx(a1.optimal_error_1d(30, t, TG).total, rel=1e-6)

    def test_uniform_cosine(self):
        rep = a1.test_error_integral_1d(d1.uniform_density(), 50, make_target("cosine10pi"), UNIFORM, S2)
        assert rep.excess == pytest.approx(100 * np.pi ** 2 / 2 / 30000, rel=1e-9)

    def test_invalid_m(self):
        with pytest.raises(InvalidM):
            a1.test_error_integral_1d(d1.uniform_density(), 0, make_target("linear"), UNIFORM)


class TestOptimalError:
    def test_linear(self):
        rep = a1.optimal_error_1d(10, make_target("linear"), UNIFORM, S2)
        assert rep.excess == pytest.approx(1 / 1200, rel=1e-10)

    def test_constant(self):
        rep = a1.optimal_error_1d(10, make_target("constant"), UNIFORM, S2)
        assert 0 <= rep.excess < 1e-15

    def test_random_densities_never_beat_optimum(self):
        t = make_target("cosine10pi")
        best = a1.optimal_error_1d(40, t, TG).total
        rng = np.random.default_rng(5)
        for _ in range(20):
            lam = _random_density(rng)
            assert a1.test_error_integral_1d(lam, 40, t, TG).total > best

    @pytest.mark.parametrize("target,kind", [
        ("cosine10pi", "uniform"),
        ({"name": "custom-polynomial", "coeffs": [0, 1, 1]}, "optimal"),
    ])
    def test_formula_chain_converges(self, target, kind):
        # settings where the segment density stays bounded away from zero
        t = make_target(target)
        lam = d1.uniform_density() if kind == "uniform" else d1.optimal_density_1d(t, TG)
        gaps_sum, gaps_int = [], []
        for m in (50, 100, 200):
            seg = d1.segmentation_from_density(lam, m)
            exact = a1.test_error_exact_1d(a1.optimal_model_1d(seg, t, TG), t, TG).excess
            gaps_sum.append(abs(a1.test_error_sum_1d(seg, t, TG).excess - exact) / exact)
            gaps_int.append(abs(a1.test_error_integral_1d(lam, m, t, TG).excess - exact) / exact)
        assert gaps_sum[0] > gaps_sum[1] > gaps_sum[2]
        assert gaps_int[0] > gaps_int[1] > gaps_int[2]


class TestQuantizer:
    def test_uniform(self):
        assert a1.quantizer_error_optimal(10, UNIFORM) == pytest.approx(1 / 1200, rel=1e-10)

    def test_two_x(self):
        assert a1.quantizer_error_optimal(10, _two_x()) == pytest.approx(9 / 12800, rel=1e-6)

    @pytest.mark.parametrize("m", [4, 25])
    def test_reduction_linear(self, m):
        q = a1.quantizer_error_optimal(m, TG)
        e = a1.optimal_error_1d(m, make_target("linear"), TG).excess
        assert e == pytest.approx(q, rel=1e-10)


class TestEmpirical:
    def test_linear_within_mc_error(self):
        t = make_target("linear")
        model = a1.optimal_model_1d(d1.uniform_segmentation(10), t, UNIFORM, "midpoint")
        mean, se = a1.empirical_test_error(model, t, UNIFORM, NoiseModel(), 5000, RngStream(0, 10))
        assert abs(mean - 1 / 1200) < 3 * se

    def test_reproducible(self):
        t = make_target("cosine10pi")
        model = a1.optimal_model_1d(d1.uniform_segmentation(10), t, TG)
        nz = NoiseModel("uniform-range", -0.1, 0.1)
        a = a1.empirical_test_error(model, t, TG, nz, 100, RngStream(1, 2))
        b = a1.empirical_test_error(model, t, TG, nz, 100, RngStream(1, 2))
        assert a == b

    def test_exact_matches_direct_quadrature(self):
        # independent oracle: integrate (c_i - beta)^2 p region by region without the evaluator
        t = make_target("cosine10pi")
        seg = d1.uniform_segmentation(6)
        c = a1.optimal_constants_1d(seg, t, TG)
        a = seg.breakpoints
        direct = sum(integrate(lambda x, i=i: (c[i] - np.cos(10 * np.pi * x)) ** 2 * TG.pdf(x), a[i], a[i + 1])
                     for i in range(6))
        got = a1.test_error_exact_1d(a1.MoEModel1D(seg, c), t, TG).excess
        assert got == pytest.approx(direct, rel=1e-12)
