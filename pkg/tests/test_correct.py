from __future__ import annotations

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm, truncnorm

from reportdelay.correct import (exclude, imputation_params, impute, offsets, rescale, truncnorm_draw,
                                 uncorrected)
from reportdelay.factors import FactorTable, fixed_factors
from reportdelay.glm import DesignMatrix, fit_glm
from reportdelay.rng import keyed_rng
from reportdelay.triangle import MissingCellError, ReportingTriangle, snapshot


PROFILE = [0.2, 0.6, 0.9, 1.0]


def truncnorm_moments(mean, sd, lower, upper):
    """Closed-form mean and variance of a truncated normal."""
    a, b = (lower - mean) / sd, (upper - mean) / sd
    Z = norm.cdf(b) - norm.cdf(a)
    pa, pb = norm.pdf(a), norm.pdf(b)
    a_pa = 0.0 if np.isinf(a) else a * pa
    b_pb = 0.0 if np.isinf(b) else b * pb
    m = mean + sd * (pa - pb) / Z
    v = sd**2 * (1 + (a_pa - b_pb) / Z - ((pa - pb) / Z) ** 2)
    return m, v


@pytest.fixture
def snap(flat_triangle):
    return snapshot(flat_triangle, (3, 6), tau=3)


def one_week_snapshot(n, tau=1):
    """Origin at week 2 of a one-season triangle whose week-2 lag-0 count is ``n``."""
    counts = np.array([[[5.0, 5.0], [n, n]]])
    tri = ReportingTriangle((1,), 2, 1, counts, np.array([[5.0, n]]))
    return snapshot(tri, (1, 2), tau=tau)


class TestRescale:
    def test_noise_free_recovers_validation(self, snap, flat_triangle):
        cs = rescale(snap, fixed_factors(PROFILE))
        np.testing.assert_allclose(cs.values, flat_triangle.flat_validation()[: len(cs)])

    def test_example_ten_over_half(self):
        assert rescale(one_week_snapshot(10), fixed_factors([0.5, 1.0])).values[-1] == 20

    @pytest.mark.parametrize("n,expected", [(1, 20), (2, 40)])
    def test_low_count_instability(self, n, expected):
        assert rescale(one_week_snapshot(n), fixed_factors([0.05, 1.0])).values[-1] == pytest.approx(expected)

    def test_unit_factors_are_identity(self, snap):
        cs = rescale(snap, fixed_factors([1.0, 1.0, 1.0, 1.0]))
        np.testing.assert_array_equal(cs.values, snap.values)
        np.testing.assert_array_equal(cs.values, uncorrected(snap).values)

    def test_finalized_weeks_pass_through(self, snap):
        cs = rescale(snap, fixed_factors(PROFILE))
        np.testing.assert_array_equal(cs.values[cs.finalized], snap.values[snap.finalized])

    def test_missing_factor_is_error(self, snap):
        empty = FactorTable(3, "lag", values={})
        with pytest.raises(MissingCellError):
            rescale(snap, empty)


class TestOffsets:
    def test_log_offset_value(self):
        cs = offsets(one_week_snapshot(10), fixed_factors([0.05, 1.0]))
        assert cs.log_offsets[-1] == pytest.approx(-2.995732, abs=1e-6)
        assert cs.values[-1] == 10

    def test_unit_factors_give_zero_offsets(self, snap):
        cs = offsets(snap, fixed_factors([1.0] * 4))
        np.testing.assert_array_equal(cs.log_offsets, 0.0)

    def test_finalized_offsets_zero(self, snap):
        cs = offsets(snap, fixed_factors(PROFILE))
        assert np.all(cs.log_offsets[cs.finalized] == 0)
        np.testing.assert_allclose(cs.log_offsets[~cs.finalized], np.log(PROFILE[::-1]))

    def test_cumulative_offset_matches_increment_chain(self):
        """On positive increments, the cumulative-count offset model and the increment-chain
        offset model give the same final-count estimate for every week."""
        rng = np.random.default_rng(3)
        final = rng.integers(20, 200, size=6).astype(float)
        prof = np.array([0.3, 0.55, 0.8, 1.0])
        y = np.diff(np.concatenate([[0.0], prof]))
        weeks = np.repeat(np.arange(6), 4)
        lags = np.tile(np.arange(4), 6)
        indicator = (weeks[:, None] == np.arange(6)[None, :]).astype(float)
        cum = fit_glm(DesignMatrix(indicator, [f"w{i}" for i in range(6)], np.log(prof[lags])),
                      final[weeks] * prof[lags])
        chain = fit_glm(DesignMatrix(indicator, [f"w{i}" for i in range(6)], np.log(y[lags])),
                        final[weeks] * y[lags])
        np.testing.assert_allclose(np.exp(cum.coef), final, rtol=1e-8)
        np.testing.assert_allclose(np.exp(chain.coef), np.exp(cum.coef), rtol=1e-8)


class TestTruncatedNormal:
    def test_imputation_parameters_example(self):
        mean, sd, lo, hi = imputation_params(10, 0.5)
        assert (mean, sd**2, lo, hi) == (20, pytest.approx(20), 10, np.inf)

    def test_over_reporting_bounds(self):
        mean, sd, lo, hi = imputation_params(10, 2.0)
        assert (mean, lo, hi) == (5, 0.0, 10)
        assert sd**2 == pytest.approx(2.5)

    def test_closed_form_moments_agree_with_scipy(self):
        for mean, sd, lo, hi in [(20, 4.47, 10, np.inf), (5, 1.6, 0, 10), (0, 1, 3, 5)]:
            m, v = truncnorm_moments(mean, sd, lo, hi)
            rm, rv = truncnorm.stats((lo - mean) / sd, (hi - mean) / sd, loc=mean, scale=sd, moments="mv")
            assert m == pytest.approx(rm, rel=1e-9)
            assert v == pytest.approx(rv, rel=1e-9)

    @pytest.mark.parametrize("n,pi", [(10, 0.5), (3, 0.05), (50, 0.9), (40, 1.6), (7, 1.1)])
    def test_draw_moments_match_closed_form(self, n, pi):
        mean, sd, lo, hi = imputation_params(n, pi)
        x = truncnorm_draw(keyed_rng(1, n, str(pi)), mean, sd, lo, hi, size=100_000)
        m, v = truncnorm_moments(mean, sd, lo, hi)
        assert x.mean() == pytest.approx(m, rel=0.02)
        assert x.var() == pytest.approx(v, rel=0.02)

    def test_far_tail_bounds_stay_finite(self):
        x = truncnorm_draw(keyed_rng(2), 0.0, 1.0, 30.0, np.inf, size=1000)
        assert np.all(np.isfinite(x)) and np.all(x >= 30)

    def test_expectation_error_shrinks_with_heavier_underreporting(self):
        n = 10
        errors = []
        for pi in (0.9, 0.5, 0.1):
            mean, sd, lo, hi = imputation_params(n, pi)
            x = truncnorm_draw(keyed_rng(5, str(pi)), mean, sd, lo, hi, size=1_000_000)
            errors.append(abs(x.mean() - mean) / mean)
        assert errors[0] > errors[1] > errors[2]


class TestImpute:
    def test_bounds_and_finalized_identity(self, snap):
        imp = impute(snap, fixed_factors(PROFILE), M=10, seed=1)
        stacked = np.vstack([cs.values for cs in imp.series])
        fin = snap.finalized
        assert np.all(stacked[:, fin] == snap.values[fin])
        assert np.all(stacked[:, ~fin] >= snap.values[~fin])

    def test_unit_factor_passes_through(self):
        imp = impute(one_week_snapshot(12), fixed_factors([1.0, 1.0]), M=3, seed=0)
        assert all(cs.values[-1] == 12 for cs in imp.series)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 500), st.floats(0.02, 3.0).filter(lambda p: abs(p - 1) > 1e-3), st.integers(0, 99))
    def test_draws_respect_bounds(self, n, pi, seed):
        imp = impute(one_week_snapshot(n), fixed_factors([pi, 1.0]), M=5, seed=seed)
        draws = np.array([cs.values[-1] for cs in imp.series])
        if pi < 1:
            assert np.all(draws >= n)
        else:
            assert np.all((draws >= 0) & (draws <= n))

    def test_zero_count_is_deterministic_with_warning(self):
        with pytest.warns(UserWarning, match="deterministically"):
            imp = impute(one_week_snapshot(0), fixed_factors([0.5, 1.0]), M=3, seed=0)
        assert all(cs.values[-1] == 0 for cs in imp.series)

    def test_reproducible_and_key_dependent(self, snap):
        f = fixed_factors(PROFILE)
        a = impute(snap, f, M=4, seed=9, keys=(1,)).to_frame()
        b = impute(snap, f, M=4, seed=9, keys=(1,)).to_frame()
        c = impute(snap, f, M=4, seed=9, keys=(2,)).to_frame()
        pd.testing.assert_frame_equal(a, b)
        assert not a["value"].equals(c["value"])

    def test_needs_two_imputations(self, snap):
        with pytest.raises(ValueError):
            impute(snap, fixed_factors(PROFILE), M=1)

    def test_csv_columns(self, snap, tmp_path):
        imp = impute(snap, fixed_factors(PROFILE), M=2, seed=0)
        imp.to_csv(tmp_path / "imp.csv")
        df = pd.read_csv(tmp_path / "imp.csv")
        assert list(df.columns) == ["imputation_id", "season", "week", "value", "finalized"]
        assert sorted(df["imputation_id"].unique()) == [0, 1]


class TestExclude:
    def test_removes_trailing_weeks(self, snap):
        ex = exclude(snap, 1)
        assert len(ex.values) == len(snap.values) - 1
        assert ex.lags[-1] == 1
        ex3 = exclude(snap, 3)
        assert ex3.lags[-1] == 3

    def test_origin_is_unchanged(self, snap):
        assert exclude(snap, 2).origin_index == snap.origin_index
        assert exclude(exclude(snap, 1), 1).excluded == 2

    def test_zero_depth_rejected(self, snap):
        with pytest.raises(ValueError, match="uncorrected"):
            exclude(snap, 0)

    def test_too_deep_rejected(self, flat_triangle):
        early = snapshot(flat_triangle, (1, 3))
        with pytest.raises(ValueError):
            exclude(early, 2)

    def test_exclusion_carried_into_series(self, snap):
        assert uncorrected(exclude(snap, 2)).excluded == 2
