import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from moequant import approx1d as a1
from moequant import density1d as d1
from moequant import multidim as md
from moequant.errors import DegenerateRegion, DimensionMismatch, InvalidCounts, OutOfDomain
from moequant.model import NoiseModel, make_input_dist, make_target
from moequant.numerics import RngStream

S2 = 1.0 / 300.0
U2 = make_input_dist("uniform", 2)


def _hexagon_moment_mc(n, seed):
    """Normalized second moment of a regular unit hexagon by rejection sampling."""
    g = np.random.default_rng(seed)
    pts = g.uniform([-1.0, -np.sqrt(3) / 2], [1.0, np.sqrt(3) / 2], size=(n, 2))
    x, y = np.abs(pts[:, 0]), np.abs(pts[:, 1])
    inside = np.sqrt(3) * x + y <= np.sqrt(3)
    r2 = np.sum(pts[inside] ** 2, axis=1)
    area = 3 * np.sqrt(3) / 2
    # M = E|x|^2 * V / (d V^2) with d = 2
    return r2.mean() / (2 * area), r2.std(ddof=1) / np.sqrt(len(r2)) / (2 * area)


class TestRegionGeometry:
    def test_unit_square(self):
        r = md.RegionMD([0, 0], [1, 1])
        assert r.volume == 1.0
        assert r.normalized_moment == pytest.approx(1 / 12)

    def test_rectangle(self):
        r = md.RegionMD([0, 0], [1, 2])
        assert r.volume == 2.0
        assert r.normalized_moment == pytest.approx(5 / 48, rel=1e-14)

    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_unit_cube(self, d):
        assert md.RegionMD(np.zeros(d), np.ones(d)).normalized_moment == pytest.approx(1 / 12)

    def test_closed_form_matches_monte_carlo(self):
        r = md.RegionMD([0.1, 0.0], [0.4, 0.9])
        g = np.random.default_rng(2)
        u = r.lo + g.random((400_000, 2)) * r.sides
        r2 = np.sum((u - r.center) ** 2, axis=1)
        mc = r2.mean() * r.volume / (2 * r.volume ** 2)
        se = r2.std() / np.sqrt(len(r2)) * r.volume / (2 * r.volume ** 2)
        assert abs(mc - r.normalized_moment) < 4 * se

    def test_moment_k_two_is_closed_form(self):
        r = md.RegionMD([0, 0], [1, 3])
        assert r.moment_k(2) == r.normalized_moment

    def test_geometry_dict(self):
        g = md.region_geometry(md.RegionMD([0, 0], [1, 1]), RngStream(0), n_mc=10_000)
        assert set(g) == {"V", "center", "M", "M_k"}
        # k = 1 and k = 3 come from Monte Carlo
        assert g["M_k"][1] > 0 and g["M_k"][3] > 0

    def test_degenerate(self):
        with pytest.raises(DegenerateRegion):
            md.RegionMD([0, 0], [1, 0])

    @given(st.lists(st.floats(0.01, 1.0), min_size=1, max_size=4), st.sampled_from([0.5, 2.0]))
    @settings(max_examples=50, deadline=None)
    def test_scale_invariance(self, sides, s):
        lo = np.linspace(0.0, 0.3, len(sides))
        r = md.RegionMD(lo, lo + np.array(sides))
        assert r.scaled(s).normalized_moment == pytest.approx(r.normalized_moment, rel=1e-10)


class TestHexagonConstant:
    def test_monte_carlo_oracle(self):
        mc, se = _hexagon_moment_mc(2_000_000, 0)
        assert abs(mc - md.HEXAGON_M) < 4 * se
        assert md.HEXAGON_M == pytest.approx(0.0801875, abs=1e-7)

    def test_defaults(self):
        assert md.default_m_opt(1) == 1 / 12
        assert md.default_m_opt(2) == md.HEXAGON_M
        assert md.default_m_opt(5) == 1 / 12


class TestGridSegmentation:
    def test_quarters(self):
        seg = md.grid_segmentation(2, (2, 2))
        assert seg.m == 4
        np.testing.assert_allclose(seg.volumes, 0.25)
        np.testing.assert_allclose(seg.centers, [[0.25, 0.25], [0.25, 0.75], [0.75, 0.25], [0.75, 0.75]])

    def test_reduces_to_1d(self):
        seg = md.grid_segmentation(1, (7,))
        np.testing.assert_array_equal(seg.axes[0], d1.uniform_segmentation(7).breakpoints)

    def test_slabs(self):
        seg = md.grid_segmentation(2, (3, 1))
        np.testing.assert_allclose(seg.hi - seg.lo, [[1 / 3, 1]] * 3)

    def test_route(self):
        seg = md.grid_segmentation(2, (2, 2))
        np.testing.assert_array_equal(seg.route(np.array([[0.1, 0.1], [0.1, 0.9], [0.5, 0.5], [1.0, 1.0]])),
                                      [0, 1, 3, 3])

    def test_route_errors(self):
        seg = md.grid_segmentation(2, (2, 2))
        with pytest.raises(OutOfDomain):
            seg.route(np.array([[0.5, 1.5]]))
        with pytest.raises(DimensionMismatch):
            seg.route(np.array([[0.5, 0.5, 0.5]]))

    def test_bad_counts(self):
        with pytest.raises(InvalidCounts):
            md.grid_segmentation(2, (2,))
        with pytest.raises(InvalidCounts):
            md.grid_segmentation(2, (2, 0))

    def test_per_axis_density(self):
        lam = d1.density_from_function(lambda x: 2.0 * x)
        seg = md.grid_segmentation(2, (2, 2), [lam, None])
        assert seg.axes[0][1] == pytest.approx(np.sqrt(0.5), abs=1e-8)
        np.testing.assert_allclose(seg.axes[1], [0, 0.5, 1])

    def test_json(self):
        seg = md.grid_segmentation(2, (2, 3))
        doc = json.loads(seg.to_json())
        assert doc["counts"] == [2, 3] and doc["d"] == 2
        np.testing.assert_allclose(doc["breakpoints"][1], [0, 1 / 3, 2 / 3, 1])


class TestConstantsMD:
    def test_constant(self):
        seg = md.grid_segmentation(2, (3, 2))
        t = make_target({"name": "constant", "value": -0.4}, dim=2)
        np.testing.assert_allclose(md.optimal_constants_md(seg, t, U2), -0.4, rtol=1e-12)

    def test_single_region_sum(self):
        seg = md.grid_segmentation(2, (1, 1))
        t = make_target("sum-coords", dim=2)
        assert md.optimal_constants_md(seg, t, U2)[0] == pytest.approx(1.0, rel=1e-13)

    def test_center_mode(self):
        seg = md.GridSegmentationMD((np.array([0, 0.5, 1]), np.array([0, 0.5, 1])))
        c = md.optimal_constants_md(seg, make_target("sum-coords", dim=2), U2, "center")
        assert c[1] == pytest.approx(1.0)  # region centered at (0.25, 0.75)

    def test_monte_carlo_beyond_cap(self):
        d = 7
        seg = md.grid_segmentation(d, (2,) + (1,) * (d - 1))
        t = make_target("linear", dim=d)
        c = md.optimal_constants_md(seg, t, make_input_dist("uniform", d), rng=RngStream(0), n_mc=200_000)
        np.testing.assert_allclose(c, [0.25, 0.75], atol=5e-3)


class TestErrorsMD:
    def test_perfect_noiseless(self):
        seg = md.grid_segmentation(2, (2, 2))
        t = make_target({"name": "constant", "value": 1.0}, dim=2)
        est, _ = md.test_error_md_mc(seg, np.ones(4), t, U2, NoiseModel(), 1000, RngStream(0))
        assert est == 0.0

    def test_noise_floor(self):
        seg = md.grid_segmentation(2, (2, 2))
        t = make_target({"name": "constant", "value": 1.0}, dim=2)
        est, se = md.test_error_md_mc(seg, np.ones(4), t, U2, NoiseModel("uniform-range", -0.1, 0.1),
                                      1_000_000, RngStream(1))
        assert abs(est - S2) < 3 * se

    def test_linear_first_coordinate(self):
        seg = md.grid_segmentation(2, (4, 4))
        t = make_target("linear", dim=2)
        c = md.optimal_constants_md(seg, t, U2, "center")
        nz = NoiseModel("uniform-range", -0.1, 0.1)
        est, se = md.test_error_md_mc(seg, c, t, U2, nz, 400_000, RngStream(2))
        assert abs(est - (S2 + 1 / (12 * 16))) < 3 * se
        assert md.test_error_md_quad(seg, c, t, U2, S2) == pytest.approx(S2 + 1 / 192, rel=1e-12)

    def test_bound_sum_constant(self):
        seg = md.grid_segmentation(2, (3, 3))
        assert md.error_bound_sum_md(seg, make_target("constant", dim=2), U2, S2) == S2

    @pytest.mark.parametrize("k", [2, 4, 8])
    def test_bound_sum_closed_form(self, k):
        seg = md.grid_segmentation(2, (k, k))
        got = md.error_bound_sum_md(seg, make_target("sum-coords", dim=2), U2)
        assert got == pytest.approx(1 / 3 / k ** 2, rel=1e-9)

    @pytest.mark.parametrize("axes", [
        (np.linspace(0, 1, 3), np.linspace(0, 1, 5)),
        (np.array([0, 0.1, 0.5, 1.0]), np.array([0, 0.7, 1.0])),
        (np.array([0, 0.3, 1.0]), np.array([0, 0.2, 0.4, 0.6, 1.0])),
    ])
    def test_bound_holds_for_linear(self, axes):
        seg = md.GridSegmentationMD(axes)
        t = make_target("sum-coords", dim=2)
        c = md.optimal_constants_md(seg, t, U2)
        est, se = md.test_error_md_mc(seg, c, t, U2, NoiseModel(), 200_000, RngStream(3))
        assert est <= md.error_bound_sum_md(seg, t, U2) + 3 * se

    def test_rate(self):
        t = make_target("sum-coords", dim=2)
        ks = np.array([2, 4, 8, 16])
        b = [md.error_bound_sum_md(md.grid_segmentation(2, (k, k)), t, U2) for k in ks]
        slope = np.polyfit(np.log(ks ** 2), np.log(b), 1)[0]
        assert slope == pytest.approx(-1.0, abs=0.05)


class TestIntegralBound:
    def test_uniform_matches_sum(self):
        t = make_target("sum-coords", dim=2)
        lam = md.density_md_from_function(lambda x: np.ones(len(x)), 2)
        for k in (2, 4):
            m = k * k
            got = md.error_bound_integral_md(lam, 1 / 12, m, t, U2, S2)
            assert got == pytest.approx(S2 + 1 / 3 / m, rel=1e-10)
            assert got == pytest.approx(md.error_bound_sum_md(md.grid_segmentation(2, (k, k)), t, U2, S2),
                                        rel=1e-10)

    def test_constant(self):
        lam = md.density_md_from_function(lambda x: np.ones(len(x)), 2)
        got = md.error_bound_integral_md(lam, 1 / 12, 9, make_target("constant", dim=2), U2, S2)
        assert got == S2

    def test_reduces_to_1d(self):
        t = make_target("cosine10pi")
        p = make_input_dist("truncated-gaussian")
        lam = d1.optimal_density_1d(t, p)
        got = md.error_bound_integral_md(lam, 1 / 12, 25, t, p, S2)
        assert got == pytest.approx(a1.test_error_integral_1d(lam, 25, t, p, S2).total, rel=1e-8)

    def test_monte_carlo_above_three_dims(self):
        d = 4
        t = make_target("sum-coords", dim=d)
        lam = md.DensityMD(lambda x: np.ones(len(x)), d)
        got = md.error_bound_integral_md(lam, 1 / 12, 16, t, make_input_dist("uniform", d),
                                         rng=RngStream(0), n_mc=1000)
        # integrand is constant so Monte Carlo is exact
        assert got == pytest.approx(d / 16 ** 0.5 * d / 12, rel=1e-12)


class TestUbmDensity:
    def test_sum_coords_flat(self):
        lam = md.ubm_density_md(make_target("sum-coords", dim=2), U2)
        x = np.random.default_rng(0).random((20, 2))
        np.testing.assert_allclose(lam(x), 1.0, rtol=1e-10)

    def test_d1_matches_optimal_1d(self):
        t = make_target("cosine10pi")
        p = make_input_dist("truncated-gaussian")
        x = np.linspace(0, 1, 301)
        np.testing.assert_allclose(md.ubm_density_md(t, p, 1)(x), d1.optimal_density_1d(t, p)(x), rtol=1e-12)

    def test_quadratic(self):
        lam = md.ubm_density_md(make_target("quadratic", dim=2), U2)
        x = np.random.default_rng(1).random((20, 2))
        np.testing.assert_allclose(lam(x), 2.0 * x[:, 0], rtol=1e-8)

    def test_beats_random_densities(self):
        t = make_target("quadratic", dim=2)
        lam = md.ubm_density_md(t, U2)
        best = md.error_bound_integral_md(lam, 1 / 12, 64, t, U2)
        rng = np.random.default_rng(4)
        for _ in range(20):
            a, b, c = rng.uniform(0.2, 2.0, 3)
            alt = md.density_md_from_function(lambda x: a + b * x[:, 0] + c * x[:, 1] ** 2, 2)
            assert md.error_bound_integral_md(alt, 1 / 12, 64, t, U2) > best


class TestMinBound:
    def test_sum_coords(self):
        t = make_target("sum-coords", dim=2)
        assert md.min_bound_md(16, 2, 1 / 12, t, U2, S2) == pytest.approx(S2 + 1 / 48, rel=1e-10)

    def test_sum_coords_3d(self):
        t = make_target("sum-coords", dim=3)
        got = md.min_bound_md(8, 3, 1 / 12, t, make_input_dist("uniform", 3))
        assert got == pytest.approx(9 / (12 * 8 ** (2 / 3)), rel=1e-10)

    def test_constant(self):
        got = md.min_bound_md(16, 2, md.HEXAGON_M, make_target("constant", dim=2), U2, S2)
        assert got == pytest.approx(S2, abs=1e-15)

    def test_reduces_to_1d(self):
        t = make_target("cosine10pi")
        p = make_input_dist("truncated-gaussian")
        got = md.min_bound_md(40, 1, 1 / 12, t, p, S2)
        assert got == pytest.approx(a1.optimal_error_1d(40, t, p, S2).total, rel=1e-8)

    def test_equals_integral_bound_at_ubm(self):
        t = make_target("quadratic", dim=2)
        lam = md.ubm_density_md(t, U2)
        a = md.error_bound_integral_md(lam, md.HEXAGON_M, 36, t, U2)
        b = md.min_bound_md(36, 2, md.HEXAGON_M, t, U2)
        assert a == pytest.approx(b, rel=1e-6)


class TestOneDimConsistency:
    def setup_method(self):
        self.t = make_target("cosine10pi")
        self.p = make_input_dist("truncated-gaussian")
        self.seg1 = d1.segmentation_from_density(d1.optimal_density_1d(self.t, self.p), 17)
        self.segm = md.as_grid(self.seg1)

    def test_constants(self):
        np.testing.assert_allclose(md.optimal_constants_md(self.segm, self.t, self.p),
                                   a1.optimal_constants_1d(self.seg1, self.t, self.p), rtol=1e-8, atol=1e-12)

    def test_exact_error(self):
        c = a1.optimal_constants_1d(self.seg1, self.t, self.p)
        got = md.test_error_md_quad(self.segm, c, self.t, self.p, S2)
        ref = a1.test_error_exact_1d(a1.MoEModel1D(self.seg1, c), self.t, self.p, S2).total
        assert got == pytest.approx(ref, rel=1e-8)

    def test_bound_sum(self):
        got = md.error_bound_sum_md(self.segm, self.t, self.p, S2)
        assert got == pytest.approx(a1.test_error_sum_1d(self.seg1, self.t, self.p, S2).total, rel=1e-8)

    def test_moments_are_interval_value(self):
        np.testing.assert_allclose(self.segm.normalized_moments, 1 / 12, rtol=1e-12)
