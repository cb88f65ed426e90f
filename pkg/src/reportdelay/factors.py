"""Estimators of inverse reporting factors ``pi_ts(d)``.

``pi_ts(d)`` is the expected fraction of a week's eventual count that has
been reported by lag ``d``; its reciprocal is the reporting factor. Five
estimators are provided:

* :func:`estimate_lag` - ratio of summed lag-``d`` counts to summed final
  counts over recent seasons, constant in week and season;
* :func:`estimate_model` - Poisson/NB regression of final counts with the
  provisional count as offset, varying with lag, season trend and week;
* :func:`estimate_local` - changes in the current season's own reports over
  the last ``K`` weeks;
* :func:`estimate_proxy` - shrinkage of provisional counts towards an
  external-data nowcast;
* :func:`fixed_factors` - an assumed profile, for sensitivity analyses.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import pandas as pd

from .glm import DesignMatrix, NaturalSplineBasis, fit_glm
from .triangle import MissingCellError, ReportingTriangle, Snapshot

METHODS = ("lag", "model", "local", "proxy", "fixed")

Cell = tuple[int, int, int]


class FactorEstimationError(ValueError):
    pass


@dataclass(frozen=True)
class FactorTable:
    """Inverse reporting factors keyed by ``(season, week, lag)``.

    Constant-in-time estimators fill ``profile`` (indexed by lag); the
    others fill per-cell ``values``. ``estimates`` optionally holds the
    estimator's own nowcast of the final count for a cell, used when the
    provisional count is zero and the factor is undefined. Lags beyond
    ``threshold`` always have factor 1.
    """

    tau: int
    method: str
    profile: np.ndarray | None = None
    values: Mapping[Cell, float] = field(default_factory=dict)
    estimates: Mapping[Cell, float] = field(default_factory=dict)
    threshold: int | None = None
    info: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown factor method {self.method!r}")
        thr = self.tau if self.threshold is None else int(self.threshold)
        object.__setattr__(self, "threshold", thr)
        if self.profile is not None:
            prof = np.array(self.profile, dtype=float)
            if prof.size < thr + 1:
                raise ValueError(f"profile has {prof.size} lags, threshold needs {thr + 1}")
            prof = prof[: thr + 1]
            if not np.all(np.isfinite(prof)) or np.any(prof <= 0):
                raise FactorEstimationError(f"inverse reporting factors must be positive: {prof}")
            prof.setflags(write=False)
            object.__setattr__(self, "profile", prof)
        bad = [c for c, v in self.values.items() if not (np.isfinite(v) and v > 0)]
        if bad:
            raise FactorEstimationError(f"non-positive inverse reporting factor at {bad[:5]}")

    def pi(self, season: int, week: int, lag: int) -> float:
        if lag > self.threshold:
            return 1.0
        v = self.values.get((season, week, lag))
        if v is not None:
            return v
        if self.profile is not None:
            return float(self.profile[lag])
        raise MissingCellError([(season, week, lag)])

    def has_pi(self, season: int, week: int, lag: int) -> bool:
        return lag > self.threshold or (season, week, lag) in self.values or self.profile is not None

    def estimate(self, season: int, week: int, lag: int) -> float | None:
        return self.estimates.get((season, week, lag))

    def to_frame(self, cells: Sequence[Cell] | None = None) -> pd.DataFrame:
        """Rows ``season, week, lag, pi_hat, method`` for ``cells`` (default: stored cells)."""
        if cells is None:
            cells = sorted(self.values)
        rows = [(s, t, d, self.pi(s, t, d), self.method) for s, t, d in cells if self.has_pi(s, t, d)]
        return pd.DataFrame(rows, columns=["season", "week", "lag", "pi_hat", "method"])

    def to_csv(self, path, cells: Sequence[Cell] | None = None) -> None:
        self.to_frame(cells).to_csv(path, index=False)


def read_factor_csv(path, tau: int | None = None) -> FactorTable:
    frame = pd.read_csv(path)
    methods = frame["method"].unique()
    if len(methods) != 1:
        raise ValueError(f"factor CSV mixes methods {list(methods)}")
    values = {(int(r.season), int(r.week), int(r.lag)): float(r.pi_hat) for r in frame.itertuples()}
    tau = int(frame["lag"].max()) if tau is None else tau
    return FactorTable(tau, str(methods[0]), values=values)


def grid_cells(seasons: Sequence[int], weeks_per_season: int, tau: int) -> list[Cell]:
    return [(s, t, d) for s in seasons for t in range(1, weeks_per_season + 1) for d in range(tau + 1)]


# -- lag-based ------------------------------------------------------------------

def _known_mask(tri: ReportingTriangle, tau: int, origin: tuple[int, int] | None):
    """Weeks whose final count is known at the origin (all weeks if no origin)."""
    known = ~np.isnan(tri.flat_validation())
    if origin is not None:
        g_star = tri.global_week(*origin)
        known &= (g_star - np.arange(tri.n_weeks)) > tau
    return known


def _lookback_weeks(tri: ReportingTriangle, lookback_seasons: int | None, origin) -> np.ndarray:
    seasons = np.repeat(np.asarray(tri.season_ids), tri.weeks_per_season)
    if origin is not None:
        prior = [s for s in tri.season_ids if s < origin[0]]
    else:
        prior = list(tri.season_ids)
    if lookback_seasons is not None:
        prior = prior[-lookback_seasons:] if lookback_seasons > 0 else []
    return np.isin(seasons, prior)


def estimate_lag(history: ReportingTriangle, tau: int, lookback_seasons: int | None = 2,
                 origin: tuple[int, int] | None = None) -> FactorTable:
    """Lag-only factors ``sum N(d) / sum N(inf)`` over past weeks.

    With ``origin`` given, only seasons before the origin season are used and
    only weeks whose final count was known at the origin.
    """
    if tau > history.max_lag:
        raise FactorEstimationError(f"tau={tau} exceeds stored max_lag={history.max_lag}")
    use = _known_mask(history, tau, origin) & _lookback_weeks(history, lookback_seasons, origin)
    flat = history.flat_counts()[use, : tau + 1]
    final = history.flat_validation()[use]
    profile = np.empty(tau + 1)
    for d in range(tau + 1):
        ok = ~np.isnan(flat[:, d])
        if not ok.any():
            raise FactorEstimationError(f"no weeks with both N({d}) and N(inf) observed")
        den = final[ok].sum()
        if den <= 0:
            raise FactorEstimationError(f"zero denominator for lag {d}")
        profile[d] = flat[ok, d].sum() / den
        if profile[d] <= 0:
            raise FactorEstimationError(f"estimated pi({d}) = 0; rescaling and offsets are undefined")
    return FactorTable(tau, "lag", profile=profile, info={"n_weeks": int(use.sum())})


# -- model-based -----------------------------------------------------------------

def _model_design(seasons, weeks, lags, tau, spline, season_center, covariates=None):
    cols = {"intercept": np.ones(len(lags))}
    for d in range(1, tau + 1):
        cols[f"lag{d}"] = (lags == d).astype(float)
    cols["season"] = seasons - season_center
    basis = spline(weeks)
    for j in range(basis.shape[1]):
        cols[f"ns{j + 1}"] = basis[:, j]
    if covariates is not None:
        for j in range(covariates.shape[1]):
            cols[f"x{j + 1}"] = covariates[:, j]
    names = list(cols)
    return np.column_stack([cols[c] for c in names]), names


def estimate_model(history: ReportingTriangle, tau: int, covariates: np.ndarray | None = None,
                   spline_df: int = 3, family: str = "poisson", lookback_seasons: int | None = None,
                   origin: tuple[int, int] | None = None,
                   predict_seasons: Sequence[int] | None = None) -> FactorTable:
    """Regression-based factors ``pi_ts(d) = N_ts(d) / f(N_ts(d); X)``.

    ``f`` is a log-link regression of ``N_ts(inf)`` on lag (categorical),
    season (numeric trend), a natural spline of week and optional covariates,
    with ``log N_ts(d)`` as offset. Because the offset enters linearly,
    ``pi_ts(d) = exp(-x_tsd' beta)`` and is defined for zero counts too.

    ``covariates``, if given, has shape ``(n_seasons, weeks_per_season, k)``.
    Factors are produced for ``predict_seasons`` (default: the origin season
    and the one before it, or every triangle season without an origin).
    """
    if tau > history.max_lag:
        raise FactorEstimationError(f"tau={tau} exceeds stored max_lag={history.max_lag}")
    W, S = history.weeks_per_season, history.n_seasons
    use_week = _known_mask(history, tau, origin) & _lookback_weeks(history, lookback_seasons, origin)
    g_idx, d_idx = np.meshgrid(np.arange(S * W), np.arange(tau + 1), indexing="ij")
    flat = history.flat_counts()[:, : tau + 1]
    final = history.flat_validation()
    rows = use_week[g_idx] & ~np.isnan(flat)
    zero = rows & (flat <= 0)
    n_dropped = int(zero.sum())
    if n_dropped:
        warnings.warn(f"estimate_model: dropped {n_dropped} rows with N(d)=0 (log offset undefined)",
                      stacklevel=2)
    rows &= ~zero
    g = g_idx[rows]
    d = d_idx[rows]
    if g.size == 0:
        raise FactorEstimationError("no usable rows for model-based factor estimation")
    seasons = history.season_ids[0] + g // W
    weeks = g % W + 1
    spline = NaturalSplineBasis(np.arange(1, W + 1), spline_df)
    center = float(np.mean(seasons))
    cov = None
    if covariates is not None:
        covariates = np.asarray(covariates, float).reshape(S * W, -1)
        cov = covariates[g]
    X, names = _model_design(seasons, weeks, d, tau, spline, center, cov)
    fit = fit_glm(DesignMatrix(X, names, np.log(flat[rows])), final[g], family=family)

    if predict_seasons is None:
        predict_seasons = ([s for s in (origin[0] - 1, origin[0]) if s in history.season_ids]
                           if origin is not None else history.season_ids)
    cells = grid_cells(predict_seasons, W, tau)
    ps = np.array([c[0] for c in cells])
    pw = np.array([c[1] for c in cells])
    pd_ = np.array([c[2] for c in cells])
    pcov = None
    if covariates is not None:
        pg = (ps - history.season_ids[0]) * W + pw - 1
        pcov = covariates[pg]
    Xp, _ = _model_design(ps, pw, pd_, tau, spline, center, pcov)
    pi_hat = np.exp(-(Xp @ fit.coef))
    values = dict(zip(cells, pi_hat.tolist()))
    estimates = {}
    for (s, t, lag), p in values.items():
        try:
            n_d = history.count(s, t, lag)
        except (MissingCellError, KeyError):
            continue
        estimates[(s, t, lag)] = n_d / p
    return FactorTable(tau, "model", values=values, estimates=estimates,
                       info={"fit": fit, "dropped_zero_rows": n_dropped})


# -- local ----------------------------------------------------------------------------

def estimate_local(snap: Snapshot, K: int, tau: int | None = None) -> FactorTable:
    """Conservative factors from the current season's last ``K`` weeks.

    ``pi(d) = sum_i N_i(d) / sum_i N_i(t - i)`` for ``i = t-K .. t-d-1``
    (weeks before 1 are skipped), where ``N_i(t - i)`` is the latest report.
    Lags beyond ``min(K, tau)`` get factor 1. A zero numerator is replaced
    by half a case so the factor stays positive.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    tau = snap.tau if tau is None else int(tau)
    s, t = snap.origin
    threshold = min(K, tau)
    profile = np.ones(threshold + 1)
    empty = []
    for d in range(threshold + 1):
        lo, hi = max(1, t - K), t - d - 1
        if hi < lo:
            # the window for lag K is always empty, so its factor is 1 by construction
            if d < K:
                empty.append(d)
            continue
        num = sum(snap.cell(s, i, d) for i in range(lo, hi + 1))
        den = sum(snap.latest(s, i) for i in range(lo, hi + 1))
        if den <= 0:
            raise FactorEstimationError(f"local factor for lag {d} at origin {snap.origin}: zero denominator")
        profile[d] = max(num, 0.5) / den
    if empty:
        warnings.warn(f"estimate_local: no eligible weeks for lags {empty} at origin {snap.origin}; using 1",
                      stacklevel=2)
    return FactorTable(tau, "local", profile=profile, threshold=threshold, info={"K": K, "empty_lags": empty})


# -- proxy shrinkage --------------------------------------------------------------

@dataclass(frozen=True)
class ProxyModel:
    """``g(p) = max(exp(a + b p) - 0.1, 0)``: log-linear nowcast of final counts."""

    intercept: float
    slope: float

    def __call__(self, p):
        p = np.asarray(p, dtype=float)
        return np.maximum(np.exp(self.intercept + self.slope * p) - 0.1, 0.0)


def fit_proxy_model(proxy, final) -> ProxyModel:
    """Regress ``log(N(inf) + 0.1)`` on the proxy by least squares."""
    p = np.asarray(proxy, dtype=float)
    y = np.asarray(final, dtype=float)
    ok = np.isfinite(p) & np.isfinite(y)
    p, y = p[ok], y[ok]
    if p.size < 10:
        raise FactorEstimationError(f"proxy model needs >= 10 historical pairs, got {p.size}")
    if np.ptp(p) == 0:
        raise FactorEstimationError("proxy is constant; cannot fit proxy model")
    slope, intercept = np.polyfit(p, np.log(y + 0.1), 1)
    return ProxyModel(float(intercept), float(slope))


def proxy_weights(tau: int, omega: float = 0.75, kind: str = "squared") -> np.ndarray:
    """Lag weights ``(omega/(d+1))**2`` (``kind='squared'``) or ``omega/(d+1)`` (``'linear'``)."""
    d = np.arange(tau + 1)
    if kind == "squared":
        w = (omega / (d + 1)) ** 2
    elif kind == "linear":
        w = omega / (d + 1)
    else:
        raise ValueError(f"unknown weight schedule {kind!r}")
    if np.any(w < 0) or np.any(w > 1):
        raise ValueError(f"weights must lie in [0, 1]: {w}")
    return w


def estimate_proxy(snap: Snapshot, proxy_model: Callable, weights, tau: int | None = None) -> FactorTable:
    """Proxy-shrinkage factors for the snapshot's provisional weeks.

    ``N_hat = w_d g(p) + (1 - w_d) N(d)`` and ``pi = N(d) / N_hat``. Weeks
    with ``N(d) = 0`` keep only the nowcast ``N_hat``.
    """
    tau = snap.tau if tau is None else int(tau)
    w = np.asarray(weights, dtype=float)
    if w.size < tau + 1:
        raise ValueError(f"need {tau + 1} weights, got {w.size}")
    if np.any(w < 0) or np.any(w > 1):
        raise ValueError("weights must lie in [0, 1]")
    if snap.proxy is None:
        raise FactorEstimationError("snapshot carries no proxy series")
    values, estimates = {}, {}
    for g in np.nonzero(snap.lags <= tau)[0]:
        s, t, d = int(snap.seasons[g]), int(snap.weeks[g]), int(snap.lags[g])
        p = snap.proxy[g]
        if not np.isfinite(p):
            raise FactorEstimationError(f"missing proxy for unfinalized week {(s, t)}")
        n_d = float(snap.values[g])
        n_hat = w[d] * float(proxy_model(p)) + (1 - w[d]) * n_d
        if n_hat <= 0:
            raise FactorEstimationError(f"proxy nowcast {n_hat} <= 0 at {(s, t, d)}")
        estimates[(s, t, d)] = n_hat
        if n_d > 0:
            values[(s, t, d)] = n_d / n_hat
    return FactorTable(tau, "proxy", values=values, estimates=estimates)


# -- fixed ----------------------------------------------------------------------------

def fixed_factors(profile: Sequence[float], tau: int | None = None) -> FactorTable:
    """Broadcast an assumed profile ``pi(0..tau)`` over every week."""
    prof = np.asarray(profile, dtype=float)
    if prof.ndim != 1 or prof.size == 0:
        raise ValueError("profile must be a non-empty vector")
    if np.any(prof <= 0) or not np.all(np.isfinite(prof)):
        raise FactorEstimationError(f"profile entries must be positive: {prof}")
    tau = prof.size - 1 if tau is None else int(tau)
    if prof.size < tau + 1:
        prof = np.concatenate([prof, np.ones(tau + 1 - prof.size)])
    return FactorTable(tau, "fixed", profile=prof[: tau + 1])
