from __future__ import annotations

import numpy as np
import pytest
import statsmodels.api as sm
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.interpolate import CubicSpline

from reportdelay.glm import (DesignMatrix, GlmError, NaturalSplineBasis, design_from_columns, fit_glm,
                             natural_spline_basis, predict_mean, score)


class TestNaturalSpline:
    def test_one_df_is_monotone_single_column(self):
        x = np.linspace(1, 52, 52)
        B = natural_spline_basis(x, 1)
        assert B.shape == (52, 1)
        assert np.all(np.diff(B[:, 0]) > 0) or np.all(np.diff(B[:, 0]) < 0)

    def test_linear_beyond_boundaries(self):
        basis = NaturalSplineBasis(np.arange(1, 53), 3)
        for xs in (np.array([-10.0, -5.0, 0.0, 1.0]), np.array([52.0, 55.0, 60.0, 80.0])):
            B = basis(xs)
            slopes = np.diff(B, axis=0) / np.diff(xs)[:, None]
            np.testing.assert_allclose(slopes, np.broadcast_to(slopes[0], slopes.shape), atol=1e-10)

    def test_zero_curvature_at_boundary_knots(self):
        basis = NaturalSplineBasis(np.arange(1, 53), 4)
        h = 1e-3
        for edge, sign in ((1.0, 1.0), (52.0, -1.0)):
            x = edge + sign * np.array([0.0, h, 2 * h])
            B = basis(x)
            second = (B[2] - 2 * B[1] + B[0]) / h**2
            np.testing.assert_allclose(second, 0.0, atol=1e-4)

    @pytest.mark.parametrize("df", [2, 3, 5])
    def test_reproduces_natural_cubic_spline_on_same_knots(self, df):
        x = np.linspace(1, 52, 200)
        basis = NaturalSplineBasis(x, df)
        knots = np.concatenate([[basis.boundary[0]], basis.interior, [basis.boundary[1]]])
        rng = np.random.default_rng(df)
        f = CubicSpline(knots, rng.normal(size=knots.size), bc_type="natural")(x)
        X = np.column_stack([np.ones_like(x), basis(x)])
        coef, *_ = np.linalg.lstsq(X, f, rcond=None)
        assert np.max(np.abs(X @ coef - f)) < 1e-8

    def test_needs_distinct_values(self):
        with pytest.raises(ValueError, match="distinct"):
            NaturalSplineBasis([1, 1, 2], 3)


class TestFitGlm:
    def test_intercept_only_mean(self):
        fit = fit_glm(DesignMatrix(np.ones((3, 1)), ["intercept"]), [2, 4, 6])
        assert fit.coef[0] == pytest.approx(np.log(4), abs=1e-10)

    def test_perfect_offset(self):
        y = np.array([3.0, 7.0, 11.0, 2.0])
        fit = fit_glm(DesignMatrix(np.ones((4, 1)), ["intercept"], np.log(y)), y)
        assert fit.coef[0] == pytest.approx(0.0, abs=1e-10)

    def test_recovers_simulated_coefficients(self):
        rng = np.random.default_rng(42)
        x = rng.normal(size=2000)
        y = rng.poisson(np.exp(1.0 - 0.5 * x))
        fit = fit_glm(design_from_columns({"intercept": np.ones(2000), "x": x}), y)
        np.testing.assert_allclose(fit.coef, [1.0, -0.5], atol=0.05)

    def test_matches_statsmodels_poisson(self):
        rng = np.random.default_rng(7)
        X = np.column_stack([np.ones(300), rng.normal(size=(300, 2))])
        off = rng.normal(0, 0.3, 300)
        y = rng.poisson(np.exp(X @ [0.5, 0.3, -0.2] + off))
        ours = fit_glm(DesignMatrix(X, ["a", "b", "c"], off), y)
        ref = sm.GLM(y, X, family=sm.families.Poisson(), offset=off).fit(tol=1e-12)
        np.testing.assert_allclose(ours.coef, ref.params, atol=1e-7)

    def test_matches_statsmodels_negbin_fixed_size(self):
        rng = np.random.default_rng(8)
        X = np.column_stack([np.ones(400), rng.normal(size=400)])
        mu = np.exp(X @ [2.0, 0.4])
        y = rng.negative_binomial(5, 5 / (5 + mu))
        ours = fit_glm(DesignMatrix(X, ["a", "b"]), y, family="negbin", dispersion=5.0)
        ref = sm.GLM(y, X, family=sm.families.NegativeBinomial(alpha=1 / 5)).fit(tol=1e-12)
        np.testing.assert_allclose(ours.coef, ref.params, atol=1e-7)

    def test_negbin_size_profiled(self):
        rng = np.random.default_rng(9)
        X = np.column_stack([np.ones(3000), rng.normal(size=3000)])
        mu = np.exp(X @ [2.5, 0.3])
        y = rng.negative_binomial(4, 4 / (4 + mu))
        fit = fit_glm(DesignMatrix(X, ["a", "b"]), y, family="negbin")
        assert 3.2 < fit.dispersion < 5.0
        np.testing.assert_allclose(fit.coef, [2.5, 0.3], atol=0.05)

    def test_negbin_large_size_reproduces_poisson(self):
        rng = np.random.default_rng(10)
        X = np.column_stack([np.ones(200), rng.normal(size=200)])
        y = rng.poisson(np.exp(X @ [1.5, 0.2]))
        pois = fit_glm(DesignMatrix(X, ["a", "b"]), y)
        nb = fit_glm(DesignMatrix(X, ["a", "b"]), y, family="negbin", dispersion=1e9)
        np.testing.assert_allclose(nb.coef, pois.coef, atol=1e-4)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000))
    def test_score_vanishes_at_solution(self, seed):
        rng = np.random.default_rng(seed)
        X = np.column_stack([np.ones(150), rng.normal(size=(150, 2))])
        y = rng.poisson(np.exp(X @ [1.0, 0.2, -0.3]))
        design = DesignMatrix(X, ["a", "b", "c"])
        fit = fit_glm(design, y)
        assert np.max(np.abs(score(fit, design, y))) < 1e-6

    def test_deviance_decreases_monotonically(self):
        rng = np.random.default_rng(12)
        X = np.column_stack([np.ones(500), rng.normal(size=(500, 3))])
        y = rng.poisson(np.exp(X @ [0.5, 0.8, -0.6, 0.3]))
        fit = fit_glm(DesignMatrix(X, list("abcd")), y)
        assert np.all(np.diff(fit.deviance_trace) <= 1e-9)

    def test_separation_is_error(self):
        x = np.array([0, 0, 0, 1, 1, 1], float)
        y = np.array([0, 0, 0, 5, 6, 7], float)
        with pytest.raises(GlmError, match="separation"):
            fit_glm(design_from_columns({"a": np.ones(6), "x": x}), y)

    def test_non_convergence_carries_trace(self):
        rng = np.random.default_rng(13)
        X = np.column_stack([np.ones(100), rng.normal(size=100)])
        y = rng.poisson(np.exp(X @ [3.0, 1.0]))
        with pytest.raises(GlmError) as info:
            fit_glm(DesignMatrix(X, ["a", "b"]), y, max_iter=1)
        assert len(info.value.trace) >= 1

    def test_aliased_column_dropped(self):
        rng = np.random.default_rng(14)
        x = rng.normal(size=50)
        fit = fit_glm(design_from_columns({"a": np.ones(50), "x": x, "x2": 2 * x}), rng.poisson(5, 50))
        assert len(fit.aliased) == 1
        assert fit.coefficients[fit.aliased[0]] == 0.0

    def test_rejects_negative_response(self):
        with pytest.raises(ValueError):
            fit_glm(DesignMatrix(np.ones((2, 1)), ["a"]), [1, -1])


class TestPredict:
    def test_offset_is_multiplicative(self):
        fit = fit_glm(DesignMatrix(np.ones((3, 1)), ["intercept"]), [2, 4, 6])
        assert predict_mean(fit, DesignMatrix(np.ones((1, 1)), ["intercept"]))[0] == pytest.approx(4)
        doubled = DesignMatrix(np.ones((1, 1)), ["intercept"], [np.log(2)])
        assert predict_mean(fit, doubled)[0] == pytest.approx(8)

    def test_unknown_column(self):
        fit = fit_glm(DesignMatrix(np.ones((3, 1)), ["intercept"]), [2, 4, 6])
        with pytest.raises(KeyError):
            predict_mean(fit, DesignMatrix(np.ones((1, 1)), ["other"]))
