import math

import numpy as np
import pytest

from polaron_lab import stats
from polaron_lab._numerics import batch_means, combined_se
from polaron_lab.errors import ValidationError
from polaron_lab.pekar import RadialGrid, pair_distance_cdf, solve_pekar
from polaron_lab.sampler import MixtureSpec, TimeGrid
from polaron_lab.stats import ChainParams

SHORT = ChainParams(T=2.0, step=1 / 16, sweeps=800, thin=1, seed=1)


@pytest.fixture(scope="module")
def chain1():
    return SHORT.run(1.0)


@pytest.fixture(scope="module")
def chain0():
    return SHORT.run(0.0)


class TestNumerics:
    def test_batch_means_constant(self):
        assert batch_means(np.full(100, 2.5)) == (2.5, 0.0)

    def test_batch_means_iid_error(self):
        x = np.random.default_rng(0).standard_normal(64_000)
        m, se = batch_means(x)
        assert se == pytest.approx(1 / math.sqrt(x.size), rel=0.4)

    def test_combined_se(self):
        assert combined_se(3.0, 4.0) == 5.0

    def test_split_half(self):
        m1, m2, z = stats.split_half(np.r_[np.zeros(100), np.ones(100)] + np.random.default_rng(1).normal(0, 0.01, 200))
        assert m1 == pytest.approx(0, abs=0.01) and m2 == pytest.approx(1, abs=0.01) and z > 3


class TestVarianceEstimators:
    def test_zero_coupling_is_three(self, chain0):
        m, se = stats.variance_estimator_path(chain0)
        assert abs(m - 3) <= 3 * se
        assert stats.variance_estimator_quadform(chain0) == (3.0, 0.0)

    def test_short_chain_rejected(self, chain1):
        with pytest.raises(ValidationError):
            stats.variance_estimator_path(chain1[:99])

    def test_duplicated_chain_identical(self):
        a = stats.variance_estimator_path(SHORT.run(1.0, seed=9))
        b = stats.variance_estimator_path(SHORT.run(1.0, seed=9))
        assert a == b

    def test_estimators_agree_and_per_coordinate_in_unit_interval(self, chain1):
        p = stats.variance_estimator_path(chain1)
        q = stats.variance_estimator_quadform(chain1)
        assert abs(p[0] - q[0]) <= 3 * combined_se(p[1], q[1])
        assert 0 < q[0] / 3 < 1
        assert np.all(stats.quadform_series(chain1) <= 3.0)


class TestIntervalStatistics:
    def test_zero_coupling_counts_zero(self, chain0):
        st = stats.interval_statistics(chain0, 0.0)
        assert st.n_per_unit_time == 0 and st.density_ratio == 0
        assert st.u_band_rate[(1.0, 2.0)] == 0
        assert st.length_ecdf == []

    def test_fields_consistent(self, chain1):
        st = stats.interval_statistics(chain1, 1.0, bands=((1.0, 2.0), (0.0, math.inf)))
        a = np.array([x for x, _ in st.length_ecdf])
        f = np.array([y for _, y in st.length_ecdf])
        assert np.all(np.diff(f) >= 0) and 0 <= f[0] and f[-1] == pytest.approx(1.0)
        assert a.max() <= st.length_cut + 1e-12
        assert 0 <= st.length_ks <= 1
        assert st.density_ratio == pytest.approx(st.n_per_unit_time)
        assert st.u_band_rate[(0.0, math.inf)] == pytest.approx(st.n_per_unit_time)
        assert st.n_per_unit_time_se > 0 and st.u_band_rate_se[(1.0, 2.0)] > 0

    def test_exposure_of_interior_pairs(self):
        g = TimeGrid.symmetric(2.0, 1 / 16)
        ex = stats.length_exposure(g)
        # separation m has n + 1 - m node pairs; the two end cells are half cells
        m = np.arange(1, 10)
        assert np.allclose(ex[m], g.n_cells + 1 - m - 1, atol=0.6)

    def test_bad_band_rejected(self, chain1):
        with pytest.raises(ValidationError):
            stats.interval_statistics(chain1, 1.0, bands=((2.0, 1.0),))


class TestIncrements:
    def test_zero_coupling_degenerates(self, chain0):
        e = stats.increment_distribution(chain0, 0.0, (-2.0, 0.0), (0.0, 2.0))
        assert e.cdf(0.0) == pytest.approx(1.0) and e.tail(0.0) == 0.0

    def test_ecdf_properties_and_wasserstein(self, chain1):
        e = stats.increment_distribution(chain1, 1.0, (-1.0, 0.0), (0.0, 1.0))
        x = np.linspace(0, 10, 200)
        F = e.cdf(x)
        assert np.all(np.diff(F) >= 0) and F.min() >= 0 and F.max() <= 1
        assert e.weights.sum() == pytest.approx(1.0)
        prof, _ = solve_pekar(RadialGrid(12.0, 400), tol=1e-7)
        w1 = e.wasserstein1(lambda r: pair_distance_cdf(prof, r), 30.0)
        assert math.isfinite(w1) and w1 >= 0

    def test_wasserstein_against_itself_is_zero(self):
        e = stats.WeightedECDF.build(np.array([0.5, 1.0, 2.0]), np.array([1.0, 1.0, 2.0]))
        assert e.wasserstein1(e.cdf, 5.0, points=200001) == pytest.approx(0.0, abs=1e-4)
        assert e.mean() == pytest.approx(1.375)

    def test_window_outside_rejected(self, chain1):
        with pytest.raises(ValidationError):
            stats.increment_distribution(chain1, 1.0, (-5.0, 0.0), (0.0, 1.0))


class TestDuality:
    def test_count_intensity_regions(self, chain1):
        spec = MixtureSpec.coulomb_spec(1.0)
        for kw in (dict(), dict(s_range=(-2.0, 0.0), t_range=(0.0, 2.0)), dict(u_range=(1.0, math.inf))):
            chk = stats.count_intensity_check(chain1, spec, **kw)
            assert chk.passed, (kw, chk)

    def test_laplace_trivial_cases(self, chain1, chain0):
        rows = stats.laplace_duality_check(chain1, 1.0, [((-1.0, 1.0), (-1.0, 1.0))], [0.0])
        assert rows[0].lhs == 1.0 and rows[0].rhs == 1.0
        rows = stats.laplace_duality_check(chain0, 0.0, [((-1.0, 1.0), (-1.0, 1.0))], [0.5])
        assert rows[0].lhs == 1.0 and rows[0].rhs == 1.0

    def test_laplace_short_chain(self, chain1):
        rows = stats.laplace_duality_check(chain1, 1.0, [((-1.0, 1.0), (-1.0, 1.0))], [0.5, 1.0])
        assert all(abs(r.z) <= 3 for r in rows)


class TestOrdering:
    def test_order_pairs_statuses(self):
        out = stats.order_pairs([1, 2, 3, 4], [(3.0, 0.1), (2.0, 0.1), (2.1, 0.1), (4.0, 0.1)])
        assert [p.status for p in out] == ["strict", "inconclusive", "violated"]

    def test_monotonicity_zero_vs_one(self):
        params = ChainParams(T=8.0, sweeps=2000, seed=3)
        rep = stats.monotonicity_experiment([0.0, 1.0], params)
        assert rep.sigma2[0][0] == pytest.approx(3.0, abs=3 * rep.sigma2[0][1] + 1e-12)
        assert rep.pairs[0].status == "strict"

    def test_single_coupling_trivially_ordered(self, chain1):
        rep = stats.monotonicity_experiment([1.0], SHORT, chains={1.0: chain1})
        assert rep.passed and rep.pairs == []

    def test_subadditivity_zero_coupling(self):
        rep = stats.subadditivity_experiment(1.0, 1.5, 0.0, ChainParams(sweeps=400))
        assert rep.gap == pytest.approx(0.0, abs=1e-9) and rep.gap_se == 0.0
        assert rep.passed

    def test_subadditivity_small_second_window(self):
        rep = stats.subadditivity_experiment(2.0, 1 / 16, 1.0, ChainParams(sweeps=600, seed=4))
        assert rep.passed
        assert rep.normalized_gap == pytest.approx(rep.sigma2[1 / 16][0], abs=0.2)
        assert rep.normalized_gap > 0

    def test_subadditivity_rejects_nonpositive(self):
        with pytest.raises(ValidationError):
            stats.subadditivity_experiment(0.0, 1.0, 1.0, SHORT)

    def test_fkg_rows(self):
        rows = stats.fkg_comparison(1.0, ChainParams(T=2.0, sweeps=600, seed=5))
        assert [r.name for r in rows] == ["count", "total_length", "count_u_le_cap", "end_to_end_sq"]
        assert all(r.status != "violated" for r in rows)


class TestScaling:
    def test_constant_inputs_slope_zero(self):
        assert stats.fit_loglog_slope([1, 2, 4], [(1.0, 0.0)] * 3) == (0.0, 0.0)

    def test_power_law_slope(self):
        al = [1.0, 2.0, 4.0, 8.0]
        slope, se = stats.fit_loglog_slope(al, [(a**-2, 0.01 * a**-2) for a in al])
        assert slope == pytest.approx(-2.0) and se > 0

    def test_needs_span(self):
        with pytest.raises(ValidationError):
            stats.scaling_experiment([1.0, 2.0, 3.0], SHORT)

    def test_report_label(self):
        assert "-4" in stats.SCALING_LABEL


def test_a_star_quadrature():
    rep = stats.a_star()
    assert rep.quadrature == pytest.approx(2 + math.exp(-3), abs=1e-10)
    assert rep.closed_form == pytest.approx(2.049787068367864)
    assert not rep.within_stated_bracket


@pytest.mark.slow
def test_grid_refinement_changes_sigma2_by_under_two_percent(long_chain):
    coarse = stats.variance_estimator_quadform(long_chain("coulomb", 1.0))
    fine = stats.variance_estimator_quadform(long_chain("fine_step", 1.0))
    assert abs(fine[0] / coarse[0] - 1) < 0.02
