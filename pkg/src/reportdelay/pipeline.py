"""Rolling-origin experiments.

At every forecast origin the as-of snapshot is built, each roster method
corrects it and forecasts, and every forecast whose target has a known
final count is scored. Randomness is keyed by (seed, replicate, origin),
so results do not depend on how work is split across processes, and all
methods at an origin share the same streams (common random numbers), so
methods fed identical series produce identical forecasts.
"""
from __future__ import annotations

import dataclasses
import multiprocessing
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .combine import ensemble_stack, rubin_combine
from .correct import CorrectedSeries, exclude, impute, imputation_params, offsets, rescale, truncnorm_draw, uncorrected
from .evaluate import METRIC_COLUMNS, evaluate_forecast, rank_best
from .factors import (METHODS as FACTOR_METHODS, FactorTable, estimate_lag, estimate_local, estimate_model,
                      estimate_proxy, fit_proxy_model, fixed_factors, proxy_weights)
from .forecast import QUANTILE_LEVELS, ForecastDistribution, fit_arma, fit_nb_seasonal, forecast_arma
from .rng import keyed_rng
from .simulate import ScenarioConfig, build_theta, profile_for, simulate_replicate
from .triangle import ReportingTriangle, Snapshot, snapshot

CORRECTIONS = ("rescale", "offset", "impute")
DEFAULT_ROSTER = (
    "uncorrected", "validation",
    "rescale:lag", "rescale:model", "rescale:local",
    "offset:lag", "offset:model", "offset:local",
    "impute:lag", "impute:model", "impute:local",
    "exclude:1", "exclude:2", "exclude:3",
    "ensemble",
)
QUANTILE_COLUMNS = [f"q{int(round(level * 1000)):03d}" for level in QUANTILE_LEVELS]
FORECAST_COLUMNS = ["season", "week", "horizon", "method", "median", "mean", *QUANTILE_COLUMNS,
                    "target_season", "target_week"]
FAILURE_COLUMNS = ["season", "week", "method", "stage", "error"]
MAX_ENSEMBLE_EXCLUSION = 3


@dataclass(frozen=True)
class MethodSpec:
    """One roster entry such as ``impute:lag``, ``exclude:2`` or ``rescale:fixed@0.35``.

    ``arg`` is the assumed ``a`` for fixed profiles or the proxy variance
    label for proxy shrinkage.
    """

    name: str
    kind: str
    factor: str | None = None
    arg: float | None = None
    depth: int = 0


def parse_method(text: str) -> MethodSpec:
    name = text.strip()
    if name in ("uncorrected", "validation", "ensemble"):
        return MethodSpec(name, name)
    kind, _, rest = name.partition(":")
    if kind == "exclude":
        depth = int(rest)
        if depth < 1:
            raise ValueError(f"exclusion depth must be >= 1 in {name!r}")
        return MethodSpec(name, "exclude", depth=depth)
    if kind in CORRECTIONS:
        factor, _, arg = rest.partition("@")
        if factor not in FACTOR_METHODS:
            raise ValueError(f"unknown factor estimator {factor!r} in {name!r}")
        return MethodSpec(name, kind, factor, float(arg) if arg else None)
    raise ValueError(f"unknown roster entry {name!r}")


@dataclass
class PipelineConfig:
    roster: tuple[str, ...] = DEFAULT_ROSTER
    forecaster: str = "arma"
    p: int = 2
    q: int = 2
    c: float = 1.0
    horizons: tuple[int, ...] = (0, 1, 4)
    M: int = 10
    n_draws: int = 2500
    seed: int = 0
    tau: int | None = None
    lookback_seasons: int = 2
    model_family: str = "poisson"
    spline_df: int = 3
    n_lags: int = 2
    K: int | None = None
    proxy_omega: float = 0.75
    proxy_weight_kind: str = "squared"
    proxy_stream: float | None = None
    fixed_profile: tuple[float, ...] | None = None
    max_history: int | None = None
    eval_seasons: tuple[int, ...] | None = None
    origin_weeks: tuple[int, ...] | None = None
    workers: int = 1
    out_dir: str | None = None
    allow_failures: bool = False

    def __post_init__(self):
        if not self.roster:
            raise ValueError("roster must not be empty")
        self.specs = tuple(parse_method(r) for r in self.roster)
        if self.forecaster not in ("arma", "nb"):
            raise ValueError("forecaster must be 'arma' or 'nb'")
        if any(h < 0 for h in self.horizons):
            raise ValueError("horizons must be non-negative")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass
class RollingResult:
    forecasts: pd.DataFrame
    metrics: pd.DataFrame
    failures: pd.DataFrame
    meta: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.failures.empty


# -- per-origin machinery ---------------------------------------------------------------

class _Factors:
    """Factor tables for one origin, computed on demand; failures are cached too."""

    def __init__(self, tri, snap, cfg, proxies, tau):
        self.tri, self.snap, self.cfg, self.proxies, self.tau = tri, snap, cfg, proxies, tau
        self._cache = {}

    def get(self, factor: str, arg: float | None) -> FactorTable:
        key = (factor, arg)
        if key not in self._cache:
            try:
                self._cache[key] = self._estimate(factor, arg)
            except Exception as exc:  # noqa: BLE001 - stored and re-raised per method
                self._cache[key] = exc
        out = self._cache[key]
        if isinstance(out, Exception):
            raise out
        return out

    def _estimate(self, factor, arg):
        cfg, tau, origin = self.cfg, self.tau, self.snap.origin
        if factor == "lag":
            return estimate_lag(self.tri, tau, cfg.lookback_seasons, origin=origin)
        if factor == "model":
            return estimate_model(self.tri, tau, spline_df=cfg.spline_df, family=cfg.model_family, origin=origin)
        if factor == "local":
            return estimate_local(self.snap, cfg.K if cfg.K is not None else tau, tau)
        if factor == "fixed":
            if arg is not None:
                return fixed_factors(profile_for(arg), tau)
            if cfg.fixed_profile is None:
                raise ValueError("fixed factors need fixed_profile or an assumed a (fixed@a)")
            return fixed_factors(cfg.fixed_profile, tau)
        if factor == "proxy":
            stream = self._proxy(arg)
            n = len(self.snap.values)
            fin = np.asarray(self.snap.finalized)
            model = fit_proxy_model(stream[:n][fin], np.asarray(self.snap.values)[fin])
            snap = dataclasses.replace(self.snap, proxy=stream[:self.tri.n_weeks])
            weights = proxy_weights(tau, cfg.proxy_omega, cfg.proxy_weight_kind)
            return estimate_proxy(snap, model, weights, tau)
        raise ValueError(f"unknown factor estimator {factor!r}")

    def _proxy(self, arg):
        if not self.proxies:
            raise ValueError("proxy shrinkage needs a proxy series")
        label = arg if arg is not None else self.cfg.proxy_stream
        if label is None:
            if len(self.proxies) != 1:
                raise ValueError(f"several proxy streams {sorted(self.proxies)}; name one with proxy@label")
            label = next(iter(self.proxies))
        if float(label) not in self.proxies:
            raise ValueError(f"no proxy stream {label}")
        return self.proxies[float(label)]


def _forecast(series: CorrectedSeries, cfg: PipelineConfig, W: int, horizons, rng, method):
    if cfg.forecaster == "arma":
        model = fit_arma(series, cfg.p, cfg.q, cfg.c, W, cfg.max_history)
        return forecast_arma(model, horizons, cfg.n_draws, rng, method)
    nb = fit_nb_seasonal(series, cfg.spline_df, cfg.n_lags, weeks_per_season=W, max_history=cfg.max_history)
    return nb.forecast(horizons, cfg.n_draws, rng, method)


def _validation_series(tri: ReportingTriangle, snap: Snapshot) -> CorrectedSeries:
    n = len(snap.values)
    values = tri.flat_validation()[:n].copy()
    if np.any(np.isnan(values)):
        raise ValueError("validation counts missing before the origin")
    return CorrectedSeries(np.asarray(snap.seasons), np.asarray(snap.weeks), values, np.zeros(n),
                           np.ones(n, dtype=bool), "validation")


def _impute_nowcast(snap: Snapshot, factors: FactorTable, n_draws: int, rng, target, method):
    """Truncated-normal predictive for the origin week's final count."""
    g = len(snap.values) - 1
    s, t, d = int(snap.seasons[g]), int(snap.weeks[g]), int(snap.lags[g])
    n = float(snap.values[g])
    if snap.finalized[g]:
        return ForecastDistribution.point_mass(n, n_draws, target, 0, method)
    if not factors.has_pi(s, t, d):
        return ForecastDistribution.point_mass(factors.estimate(s, t, d), n_draws, target, 0, method)
    pi = factors.pi(s, t, d)
    if pi == 1.0 or n <= 0:
        return ForecastDistribution.point_mass(n / pi, n_draws, target, 0, method)
    mean, sd, lo, hi = imputation_params(n, pi)
    return ForecastDistribution.from_draws(truncnorm_draw(rng, mean, sd, lo, hi, size=n_draws), target, 0, method)


def _rescale_nowcast(snap: Snapshot, factors: FactorTable, n_draws: int, rng, target, method):
    """Normal predictive ``(N/pi, |1 - pi| N / pi**2)`` for the origin week, floored at zero."""
    g = len(snap.values) - 1
    s, t, d = int(snap.seasons[g]), int(snap.weeks[g]), int(snap.lags[g])
    n = float(snap.values[g])
    if snap.finalized[g]:
        return ForecastDistribution.point_mass(n, n_draws, target, 0, method)
    if not factors.has_pi(s, t, d):
        return ForecastDistribution.point_mass(factors.estimate(s, t, d), n_draws, target, 0, method)
    mean, sd, _, _ = imputation_params(n, factors.pi(s, t, d))
    draws = np.maximum(mean + sd * rng.standard_normal(n_draws), 0.0)
    return ForecastDistribution.from_draws(draws, target, 0, method)


def _impute_forecasts(spec, snap, factors, cfg, W, horizons, keys):
    imp = impute(snap, factors, cfg.M, cfg.seed, keys=("impute", *keys))
    per = [_forecast(cs, cfg, W, horizons, keyed_rng(cfg.seed, "forecast", *keys, m), spec.name)
           for m, cs in enumerate(imp.series)]
    rng = keyed_rng(cfg.seed, "combine", *keys)
    out = []
    for j, h in enumerate(horizons):
        dists = [p[j] for p in per]
        target = dists[0].target
        if h == 0:
            out.append(_impute_nowcast(snap, factors, cfg.n_draws, rng, target, spec.name))
        elif all(d.loc is not None for d in dists):
            _, dist = rubin_combine([(d.loc, d.scale2) for d in dists], cfg.n_draws, rng, cfg.c,
                                    target, h, spec.name)
            out.append(dist)
        else:
            per_m = max(cfg.n_draws // len(dists), 1)
            out.append(ensemble_stack(dists, per_m, spec.name))
    return out


def _run_method(spec, tri, snap, fac, cfg, W, horizons, keys):
    if spec.kind == "uncorrected":
        # the observed count is its own nowcast, as rescaling with pi = 1
        out = _forecast(uncorrected(snap), cfg, W, horizons, keyed_rng(cfg.seed, "forecast", *keys), spec.name)
        return [ForecastDistribution.point_mass(snap.values[-1], cfg.n_draws, d.target, 0, spec.name)
                if d.horizon == 0 else d for d in out]
    if spec.kind == "validation":
        series = _validation_series(tri, snap)
    elif spec.kind == "exclude":
        series = uncorrected(exclude(snap, spec.depth))
    else:
        factors = fac.get(spec.factor, spec.arg)
        if spec.kind == "impute":
            return _impute_forecasts(spec, snap, factors, cfg, W, horizons, keys)
        if spec.kind == "rescale":
            out = _forecast(rescale(snap, factors), cfg, W, horizons, keyed_rng(cfg.seed, "forecast", *keys),
                            spec.name)
            rng = keyed_rng(cfg.seed, "nowcast", *keys)
            return [_rescale_nowcast(snap, factors, cfg.n_draws, rng, d.target, spec.name) if d.horizon == 0 else d
                    for d in out]
        series = offsets(snap, factors)
    rng = keyed_rng(cfg.seed, "forecast", *keys)
    return _forecast(series, cfg, W, horizons, rng, spec.name)


def _target_value(tri: ReportingTriangle, target) -> float | None:
    s, t = target
    if s not in tri.season_ids:
        return None
    y = tri.final(s, t)
    return None if np.isnan(y) else float(y)


def _ensemble_member(spec: MethodSpec) -> bool:
    if spec.kind in ("validation", "ensemble"):
        return False
    return not (spec.kind == "exclude" and spec.depth > MAX_ENSEMBLE_EXCLUSION)


def default_origins(tri: ReportingTriangle, cfg: PipelineConfig, eval_seasons=None) -> list[tuple[int, int]]:
    """Origins in each evaluation season; by default weeks 2..W-1 of every season after the first two."""
    seasons = eval_seasons or cfg.eval_seasons or tri.season_ids[2:]
    first = tri.season_ids[0]
    for s in seasons:
        if s not in tri.season_ids:
            raise ValueError(f"evaluation season {s} not in data")
        if s - first < 2:
            raise ValueError(f"origin season {s} lacks two complete prior seasons")
    weeks = cfg.origin_weeks or tuple(range(2, tri.weeks_per_season))
    return [(int(s), int(t)) for s in seasons for t in weeks]


def run_origins(tri: ReportingTriangle, cfg: PipelineConfig, origins: Sequence[tuple[int, int]],
                proxies: dict[float, np.ndarray] | None = None, replicate: int = 0):
    """Run the roster at each origin; returns (forecast rows, metric rows, failure rows)."""
    W = tri.weeks_per_season
    tau = tri.max_lag if cfg.tau is None else cfg.tau
    proxies = {float(k): np.asarray(v, dtype=float).reshape(-1) for k, v in (proxies or {}).items()}
    horizons = tuple(cfg.horizons)
    f_rows, m_rows, x_rows = [], [], []
    for origin in origins:
        origin = (int(origin[0]), int(origin[1]))
        g_star = tri.global_week(*origin)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            try:
                snap = snapshot(tri, origin, tau)
            except Exception as exc:  # noqa: BLE001
                x_rows.append([*origin, "*", "snapshot", f"{type(exc).__name__}: {exc}"])
                continue
            fac = _Factors(tri, snap, cfg, proxies, tau)
            results = {}
            for spec in cfg.specs:
                if spec.kind == "ensemble":
                    continue
                try:
                    results[spec.name] = _run_method(spec, tri, snap, fac, cfg, W, horizons,
                                                     (replicate, g_star))
                except Exception as exc:  # noqa: BLE001 - per-cell isolation
                    x_rows.append([*origin, spec.name, "method", f"{type(exc).__name__}: {exc}"])
            for spec in cfg.specs:
                if spec.kind != "ensemble":
                    continue
                members = [results[s.name] for s in cfg.specs if _ensemble_member(s) and s.name in results]
                if not members:
                    x_rows.append([*origin, spec.name, "method", "no ensemble members succeeded"])
                    continue
                results[spec.name] = [ensemble_stack([m[j] for m in members], method=spec.name)
                                      for j in range(len(horizons))]
        for spec in cfg.specs:
            for dist in results.get(spec.name, ()):
                f_rows.append([*origin, dist.horizon, spec.name, dist.median, dist.mean,
                               *(dist.quantiles[lv] for lv in QUANTILE_LEVELS), *dist.target])
                y = _target_value(tri, dist.target)
                if y is None:
                    continue
                rec = evaluate_forecast(dist, y, origin, spec.name)
                m_rows.append(list(dataclasses.astuple(rec)))
    return f_rows, m_rows, x_rows


def _frames(f_rows, m_rows, x_rows, replicate: int | None):
    frames = [pd.DataFrame(f_rows, columns=FORECAST_COLUMNS),
              pd.DataFrame(m_rows, columns=METRIC_COLUMNS),
              pd.DataFrame(x_rows, columns=FAILURE_COLUMNS)]
    if replicate is not None:
        for df in frames:
            df.insert(0, "replicate", replicate)
    return frames


# -- parallel units ------------------------------------------------------------------

def _data_unit(args):
    tri, cfg, origins, proxies = args
    return _frames(*run_origins(tri, cfg, origins, proxies), None)


def _sim_unit(args):
    scenario, cfg, theta, replicate, first_season, eval_seasons = args
    rep = simulate_replicate(scenario, theta, replicate, first_season)
    proxies = {k: v.reshape(-1) for k, v in rep.proxies.items()}
    seasons = eval_seasons or (rep.triangle.season_ids[-1],)
    origins = default_origins(rep.triangle, cfg, seasons)
    return _frames(*run_origins(rep.triangle, cfg, origins, proxies, replicate), replicate)


def _map(fn, units, workers: int):
    if workers == 1 or len(units) <= 1:
        return [fn(u) for u in units]
    ctx = multiprocessing.get_context("fork")
    with ProcessPoolExecutor(max_workers=min(workers, len(units)), mp_context=ctx) as pool:
        return list(pool.map(fn, units))


def _collect(parts, meta) -> RollingResult:
    f = pd.concat([p[0] for p in parts], ignore_index=True)
    m = pd.concat([p[1] for p in parts], ignore_index=True)
    x = pd.concat([p[2] for p in parts], ignore_index=True)
    return RollingResult(f, m, x, meta)


def run_rolling(tri: ReportingTriangle, cfg: PipelineConfig,
                proxies: dict[float, np.ndarray] | None = None) -> RollingResult:
    """Rolling-origin evaluation on one reporting triangle, split by evaluation season."""
    origins = default_origins(tri, cfg)
    by_season = {}
    for o in origins:
        by_season.setdefault(o[0], []).append(o)
    units = [(tri, cfg, chunk, proxies) for chunk in by_season.values()]
    result = _collect(_map(_data_unit, units, cfg.workers), {"origins": len(origins)})
    if cfg.out_dir:
        write_outputs(result, cfg.out_dir)
    return result


def run_simulation(scenario: ScenarioConfig, cfg: PipelineConfig, reference: np.ndarray | None = None,
                   first_season: int | None = None, eval_seasons: Sequence[int] | None = None,
                   replicates: Sequence[int] | None = None) -> RollingResult:
    """Simulate replicates from ``reference`` and run the roster on each (default: last season)."""
    if reference is None:
        from .data import reference_validation
        seasons, reference = reference_validation()
        first_season = seasons[0] if first_season is None else first_season
    reference = np.asarray(reference, dtype=float)
    if scenario.seasons is not None:
        reference = reference[-scenario.seasons:]
    if scenario.weeks is not None:
        reference = reference[:, : scenario.weeks]
    first_season = scenario.first_season or first_season or 1
    theta = build_theta(reference)
    reps = range(scenario.replicates) if replicates is None else replicates
    seasons = tuple(eval_seasons) if eval_seasons else cfg.eval_seasons
    units = [(scenario, cfg, theta, int(r), first_season, seasons) for r in reps]
    result = _collect(_map(_sim_unit, units, cfg.workers), {"replicates": len(units)})
    if cfg.out_dir:
        write_outputs(result, cfg.out_dir)
    return result


# -- aggregation and output ---------------------------------------------------------------

def summarize(metrics: pd.DataFrame) -> pd.DataFrame:
    """Mean absolute error, mean WIS and interval coverage by method and horizon."""
    cols = ["abs_error", "wis", "covered50", "covered67", "covered95", "covered99"]
    if metrics.empty:
        return pd.DataFrame(columns=["method", "horizon", "n", *cols])
    g = metrics.groupby(["method", "horizon"], sort=True)
    out = g[cols].mean().rename(columns={"abs_error": "mean_abs_error", "wis": "mean_wis",
                                          "covered50": "coverage50", "covered67": "coverage67",
                                          "covered95": "coverage95", "covered99": "coverage99"})
    out.insert(0, "n", g.size())
    return out.reset_index()


def rankings(metrics: pd.DataFrame, exclude_methods: Sequence[str] = ("validation",)) -> pd.DataFrame:
    """Share of origins each method scores best, per horizon, over origins where all methods succeeded."""
    rows = []
    data = metrics[~metrics["method"].isin(exclude_methods)]
    keys = [k for k in ("replicate", "season", "week") if k in data.columns]
    for h, sub in data.groupby("horizon", sort=True):
        methods = sub["method"].unique()
        complete = sub.groupby(keys)["method"].transform("nunique") == len(methods)
        sub = sub[complete]
        if sub.empty:
            continue
        for metric in ("wis", "abs_error"):
            share = rank_best(sub, metric, keys)
            for method, value in share.items():
                rows.append([method, h, metric, value, sub[keys].drop_duplicates().shape[0]])
    return pd.DataFrame(rows, columns=["method", "horizon", "metric", "share_best", "n_origins"])


def write_outputs(result: RollingResult, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "forecasts": out / "forecasts.csv",
        "metrics": out / "metrics.csv",
        "failures": out / "failures.csv",
        "summary": out / "summary.csv",
        "rankings": out / "rankings.csv",
    }
    result.forecasts.to_csv(paths["forecasts"], index=False)
    result.metrics.to_csv(paths["metrics"], index=False)
    result.failures.to_csv(paths["failures"], index=False)
    summarize(result.metrics).to_csv(paths["summary"], index=False)
    rankings(result.metrics).to_csv(paths["rankings"], index=False)
    return paths


# -- sensitivity -------------------------------------------------------------------------

def run_sensitivity(scenario: ScenarioConfig, cfg: PipelineConfig, true_a: Sequence[float],
                    assumed_a: Sequence[float], reference: np.ndarray | None = None,
                    first_season: int | None = None, eval_seasons: Sequence[int] | None = None,
                    correction: str = "rescale") -> pd.DataFrame:
    """Coverage of 1-week 95% intervals for every (true a, assumed a) pair.

    Data are simulated under constant reporting at each true ``a``; each
    assumed ``a`` corrects with the fixed profile ``profile_for(a)``.
    """
    if correction not in CORRECTIONS:
        raise ValueError(f"correction must be one of {CORRECTIONS}")
    roster = tuple(f"{correction}:fixed@{a:g}" for a in assumed_a)
    run_cfg = dataclasses.replace(cfg, roster=roster, horizons=(1,), out_dir=None)
    rows = []
    for ta in true_a:
        scn = dataclasses.replace(scenario, scenario="constant", a=float(ta))
        res = run_simulation(scn, run_cfg, reference, first_season, eval_seasons)
        met = res.metrics[res.metrics["horizon"] == 1]
        for a, name in zip(assumed_a, roster):
            sub = met[met["method"] == name]
            n_fail = int((res.failures["method"] == name).sum()) if not res.failures.empty else 0
            rows.append([float(ta), float(a), float(sub["covered95"].mean()) if len(sub) else np.nan,
                         float(sub["wis"].mean()) if len(sub) else np.nan, len(sub), n_fail])
    out = pd.DataFrame(rows, columns=["true_a", "assumed_a", "coverage95", "mean_wis", "n", "failures"])
    if cfg.out_dir:
        Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
        out.to_csv(Path(cfg.out_dir) / "sensitivity.csv", index=False)
    return out
