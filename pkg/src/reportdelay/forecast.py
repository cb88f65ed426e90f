"""Forecasters producing predictive distributions for final counts.

Two log-link forecasters are provided: a Gaussian ARMA(p, q) on
``log(y + c) - offset`` fitted by exact maximum likelihood, and a
negative-binomial regression on a seasonal spline and lagged log counts
whose offsets enter the linear predictor directly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from . import _kalman
from .correct import CorrectedSeries
from .glm import DesignMatrix, GlmFit, NaturalSplineBasis, fit_glm

QUANTILE_LEVELS = (0.005, 0.025, 0.165, 0.25, 0.5, 0.75, 0.835, 0.975, 0.995)
# central interval levels and their tail mass rho
INTERVALS = {0.50: 0.50, 0.67: 0.33, 0.95: 0.05, 0.99: 0.01}


class ForecastError(RuntimeError):
    pass


@dataclass
class ForecastDistribution:
    """Predictive distribution for a target week's final count.

    ``quantiles`` maps each level in :data:`QUANTILE_LEVELS` to a value.
    ``loc``/``scale2`` hold the Gaussian log-scale mean and variance when the
    forecaster has one (used for multiple-imputation combining).
    """

    target: tuple[int, int] | None
    horizon: int
    method: str
    median: float
    mean: float
    quantiles: dict[float, float]
    draws: np.ndarray = field(repr=False)
    loc: float | None = None
    scale2: float | None = None

    @classmethod
    def from_draws(cls, draws, target=None, horizon=0, method="", loc=None, scale2=None):
        draws = np.asarray(draws, dtype=float)
        q = np.quantile(draws, QUANTILE_LEVELS)
        q = np.maximum.accumulate(q)
        quantiles = dict(zip(QUANTILE_LEVELS, q.tolist()))
        return cls(target, horizon, method, quantiles[0.5], float(draws.mean()), quantiles, draws, loc, scale2)

    @classmethod
    def point_mass(cls, value, n_draws=1, target=None, horizon=0, method=""):
        return cls.from_draws(np.full(max(n_draws, 1), float(value)), target, horizon, method)

    def interval(self, level: float) -> tuple[float, float]:
        rho = INTERVALS[level]
        return self.quantiles[round(rho / 2, 4)], self.quantiles[round(1 - rho / 2, 4)]


def _target(seasons, weeks, steps, weeks_per_season):
    g = (int(seasons[-1]) * weeks_per_season + int(weeks[-1]) - 1) + steps
    s, t = divmod(g, weeks_per_season)
    return s, t + 1


# -- ARMA ---------------------------------------------------------------------------

@dataclass
class ArmaModel:
    p: int
    q: int
    ar: np.ndarray
    ma: np.ndarray
    intercept: float
    sigma2: float
    c: float
    loglik: float
    n: int
    # filter state after the last observation, on the demeaned scale
    state: np.ndarray = field(repr=False)
    state_cov: np.ndarray = field(repr=False)
    last_z: float = 0.0
    last_offset: float = 0.0
    last_value: float = 0.0
    last_finalized: bool = True
    excluded: int = 0
    seasons: np.ndarray = field(default=None, repr=False)
    weeks: np.ndarray = field(default=None, repr=False)
    weeks_per_season: int = 52
    # one-step predictive for the last observation from the weeks before it
    nowcast_loc: float = float("nan")
    nowcast_var: float = float("nan")

    def roots_ok(self, margin: float = 1e-4) -> bool:
        for coef, sign in ((self.ar, -1.0), (self.ma, 1.0)):
            if coef.size and np.any(coef != 0):
                poly = np.r_[1.0, sign * coef][::-1]
                if np.any(np.abs(np.roots(poly)) <= 1 + margin):
                    return False
        return True

    def predict(self, steps: int) -> tuple[float, float]:
        """Log-scale mean and variance of ``z`` ``steps`` weeks after the last observation."""
        if steps < 1:
            raise ValueError("steps must be >= 1")
        m = self.state.size
        T, R = _kalman.transition(self.ar, self.ma, m)
        a = self.state.copy()
        P = self.state_cov.copy()
        for _ in range(steps - 1):
            a = T @ a
            P = T @ P @ T.T + np.outer(R, R)
        return self.intercept + a[0], self.sigma2 * P[0, 0]


def _hannan_rissanen(z, p, q):
    n = z.size
    x = z - z.mean()
    k = min(max(p + q + 3, 8), n // 4)
    if q == 0:
        k = p
    resid = np.zeros(n)
    if q > 0 and k > 0:
        Y = x[k:]
        X = np.column_stack([x[k - i:n - i] for i in range(1, k + 1)])
        b, *_ = np.linalg.lstsq(X, Y, rcond=None)
        resid[k:] = Y - X @ b
    start = max(p, q) + (k if q > 0 else 0)
    if n - start < p + q + 2 or p + q == 0:
        return np.zeros(p), np.zeros(q)
    Y = x[start:]
    cols = [x[start - i:n - i] for i in range(1, p + 1)] + [resid[start - j:n - j] for j in range(1, q + 1)]
    b, *_ = np.linalg.lstsq(np.column_stack(cols), Y, rcond=None)
    return b[:p], b[p:]


def _to_psi(ar, ma):
    psi = []
    for coef, sign in ((ar, 1.0), (ma, -1.0)):
        if coef.size == 0:
            continue
        r = _kalman.coef_to_pacf(sign * np.asarray(coef, dtype=float))
        if np.any(~np.isfinite(r)) or np.any(np.abs(r) >= 0.99):
            r = np.zeros(coef.size)
        psi.append(np.arctanh(r))
    return np.concatenate(psi) if psi else np.zeros(0)


def _series_z(series: CorrectedSeries, c: float):
    y = np.asarray(series.values, dtype=float)
    if np.any(y < 0) or not np.all(np.isfinite(y)):
        raise ForecastError("series values must be finite and non-negative")
    if c == 0 and np.any(y <= 0):
        raise ForecastError("continuity constant 0 needs a strictly positive series")
    if series.factors is not None:
        return np.log((y + c) / series.factors)
    return np.log(y + c) - series.log_offsets


def fit_arma(series: CorrectedSeries, p: int = 2, q: int = 2, c: float = 1.0,
             weeks_per_season: int = 52, max_history: int | None = None) -> ArmaModel:
    """Exact Gaussian ML fit of ARMA(p, q) with mean to ``log(y + c) - offset``.

    Stationarity and invertibility are enforced through a partial
    autocorrelation parameterisation. ``max_history`` keeps only the most
    recent weeks.
    """
    z = _series_z(series, c)
    seasons, weeks = series.seasons, series.weeks
    if max_history is not None and z.size > max_history:
        z = z[-max_history:]
    n = z.size
    if n < max(3 * (p + q), p + q + 2):
        raise ForecastError(f"series of length {n} too short for ARMA({p},{q})")
    z = np.ascontiguousarray(z)

    def objective(psi):
        return _kalman.neg_profile_loglik(psi, z, p, q)

    starts = [_to_psi(*_hannan_rissanen(z, p, q)), np.zeros(p + q)]
    best = None
    for x0 in starts:
        if p + q == 0:
            psi = np.zeros(0)
        else:
            res = optimize.minimize(objective, x0, method="L-BFGS-B",
                                    bounds=[(-6.0, 6.0)] * (p + q), options={"maxiter": 200})
            psi = res.x
        ar, ma = _kalman.unpack(psi, p, q)
        model = _build(z, ar, ma, p, q, c, series, weeks_per_season)
        if model.roots_ok():
            best = model
            break
    if best is None:
        raise ForecastError("ARMA optimum is non-stationary or non-invertible from every start")
    best.seasons, best.weeks = seasons, weeks
    return best


def _build(z, ar, ma, p, q, c, series, weeks_per_season):
    szz, sz1, s11, slf, a_z, a_1, P = _kalman.filter_stats(z, ar, ma)
    n = z.size
    mu = sz1 / s11
    sigma2 = max((szz - sz1 * sz1 / s11) / n, 1e-12)
    loglik = -0.5 * (n * (np.log(2 * np.pi * sigma2) + 1.0) + slf)
    _, _, _, _, b_z, b_1, Pb = _kalman.filter_stats(np.ascontiguousarray(z[:-1]), ar, ma)
    return ArmaModel(
        p, q, np.asarray(ar), np.asarray(ma), float(mu), float(sigma2), c, float(loglik), n,
        a_z - mu * a_1, P, float(z[-1]), float(series.log_offsets[-1]), float(series.values[-1]),
        bool(series.finalized[-1]), int(series.excluded), weeks_per_season=weeks_per_season,
        nowcast_loc=float(mu + b_z[0] - mu * b_1[0]), nowcast_var=float(sigma2 * Pb[0, 0]),
    )


def forecast_arma(model: ArmaModel, horizons=(0, 1, 4), n_draws: int = 2500,
                  rng: np.random.Generator | None = None, method: str = "arma") -> list[ForecastDistribution]:
    """Gaussian log-scale predictive per horizon, back-transformed through draws.

    Horizons count weeks past the origin; with ``excluded`` weeks dropped the
    forecast runs ``h + excluded`` steps past the last kept week. A zero-step
    request returns a point mass at the last value when that week is
    finalized, and otherwise the model's one-step predictive for it given
    the weeks before.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    # one row per horizon, drawn up front so a point-mass horizon does not shift the others
    eps = rng.standard_normal((len(horizons), n_draws))
    out = []
    for j, h in enumerate(horizons):
        steps = h + model.excluded
        target = _target(model.seasons, model.weeks, steps, model.weeks_per_season) if model.seasons is not None else None
        if steps == 0 and model.last_finalized:
            out.append(ForecastDistribution.point_mass(model.last_value, n_draws, target, h, method))
            continue
        loc, var = (model.nowcast_loc, model.nowcast_var) if steps == 0 else model.predict(steps)
        z = loc + np.sqrt(var) * eps[j]
        draws = np.maximum(np.exp(z) - model.c, 0.0)
        out.append(ForecastDistribution.from_draws(draws, target, h, method, loc, var))
    return out


# -- negative-binomial seasonal regression ------------------------------------------------

@dataclass
class NbSeasonalForecaster:
    """Log-link count regression on ``ns(week)`` and lagged ``log(y + 1)``.

    Lagged covariates use the offset-corrected counts ``y * exp(-offset)``.
    """

    fit: GlmFit
    spline: NaturalSplineBasis | None
    n_lags: int
    history: np.ndarray = field(repr=False)
    seasons: np.ndarray = field(repr=False)
    weeks: np.ndarray = field(repr=False)
    last_value: float = 0.0
    last_finalized: bool = True
    excluded: int = 0
    weeks_per_season: int = 52

    def _row(self, week, lagged):
        parts = [1.0]
        if self.spline is not None:
            parts.extend(self.spline(np.array([week], dtype=float))[0])
        parts.extend(np.log(np.asarray(lagged, dtype=float) + 1.0))
        return np.asarray(parts)

    def mean_at(self, week, lagged) -> float:
        return float(np.exp(self._row(week, lagged) @ self.fit.coef))

    def _draw(self, rng, mu):
        r = self.fit.dispersion
        if self.fit.family == "poisson" or not np.isfinite(r):
            return rng.poisson(mu).astype(float)
        return rng.negative_binomial(r, r / (r + mu)).astype(float)

    def forecast(self, horizons=(0, 1, 4), n_paths: int = 1000, rng=None,
                 method: str = "nb") -> list[ForecastDistribution]:
        rng = np.random.default_rng(0) if rng is None else rng
        steps = {h: h + self.excluded for h in horizons}
        max_steps = max(steps.values())
        L = self.n_lags
        hist = self.history
        paths = np.tile(hist[len(hist) - L:] if L else np.zeros(0), (n_paths, 1))
        sims = {}
        g_last = int(self.seasons[-1]) * self.weeks_per_season + int(self.weeks[-1]) - 1
        beta = self.fit.coef
        for k in range(1, max_steps + 1):
            week = (g_last + k) % self.weeks_per_season + 1
            base = self._row(week, np.zeros(L))
            eta = np.full(n_paths, base @ beta)
            if L:
                lagged = paths[:, ::-1][:, :L]
                eta = eta + np.log(lagged + 1.0) @ beta[len(base) - L:]
            mu = np.exp(eta)
            new = self._draw(rng, mu)
            if L:
                paths = np.column_stack([paths[:, 1:], new]) if L > 1 else new[:, None]
            sims[k] = new
        out = []
        for h in horizons:
            k = steps[h]
            target = _target(self.seasons, self.weeks, k, self.weeks_per_season)
            if k == 0:
                if self.last_finalized:
                    out.append(ForecastDistribution.point_mass(self.last_value, n_paths, target, h, method))
                    continue
                lagged = hist[len(hist) - 1 - L:len(hist) - 1][::-1] if L else []
                mu = self.mean_at(self.weeks[-1], lagged)
                out.append(ForecastDistribution.from_draws(self._draw(rng, np.full(n_paths, mu)), target, h, method))
                continue
            out.append(ForecastDistribution.from_draws(sims[k], target, h, method))
        return out


def fit_nb_seasonal(series: CorrectedSeries, spline_df: int = 3, n_lags: int = 2,
                    family: str = "negbin", weeks_per_season: int = 52,
                    max_history: int | None = None, dispersion: float | None = None) -> NbSeasonalForecaster:
    """Fit the count regression, consuming ``series.log_offsets`` as fixed offsets."""
    y = np.asarray(series.values, dtype=float)
    off = np.asarray(series.log_offsets, dtype=float)
    seasons, weeks = np.asarray(series.seasons), np.asarray(series.weeks)
    if max_history is not None and y.size > max_history:
        y, off, seasons, weeks = y[-max_history:], off[-max_history:], seasons[-max_history:], weeks[-max_history:]
    corrected = y * np.exp(-off)
    n = y.size
    if n - n_lags < spline_df + n_lags + 2:
        raise ForecastError(f"series of length {n} too short for the NB seasonal model")
    spline = NaturalSplineBasis(np.arange(1, weeks_per_season + 1), spline_df) if spline_df > 0 else None
    rows = np.arange(n_lags, n)
    cols = {"intercept": np.ones(rows.size)}
    if spline is not None:
        B = spline(weeks[rows].astype(float))
        for j in range(spline_df):
            cols[f"ns{j + 1}"] = B[:, j]
    for k in range(1, n_lags + 1):
        cols[f"loglag{k}"] = np.log(corrected[rows - k] + 1.0)
    names = list(cols)
    design = DesignMatrix(np.column_stack([cols[c] for c in names]), names, off[rows])
    fit = fit_glm(design, y[rows], family=family, dispersion=dispersion)
    return NbSeasonalForecaster(fit, spline, n_lags, corrected, seasons, weeks,
                                float(corrected[-1]), bool(series.finalized[-1]),
                                int(series.excluded), weeks_per_season)
