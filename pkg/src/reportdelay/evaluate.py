"""Absolute error, weighted interval score, coverage and best-method rankings."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
import pandas as pd

from .forecast import INTERVALS, ForecastDistribution

WIS_RHO = (0.5, 0.33, 0.05, 0.01)
METRIC_COLUMNS = ["method", "season", "week", "horizon", "abs_error", "wis",
                  "covered50", "covered67", "covered95", "covered99"]


@dataclass
class EvalRecord:
    method: str
    season: int
    week: int
    horizon: int
    abs_error: float
    wis: float
    covered50: bool
    covered67: bool
    covered95: bool
    covered99: bool


def _bounds(dist: ForecastDistribution, rho: float):
    lo_level, hi_level = round(rho / 2, 4), round(1 - rho / 2, 4)
    try:
        return dist.quantiles[lo_level], dist.quantiles[hi_level]
    except KeyError as exc:
        raise KeyError(f"forecast lacks quantile level {exc.args[0]} needed for rho={rho}") from None


def interval_score(lower: float, upper: float, y: float, rho: float) -> float:
    """Width plus ``2/rho`` times the distance by which ``y`` falls outside ``[lower, upper]``."""
    score = upper - lower
    if y < lower:
        score += 2.0 / rho * (lower - y)
    elif y > upper:
        score += 2.0 / rho * (y - upper)
    return score


def wis(dist: ForecastDistribution, y: float, rho: Sequence[float] = WIS_RHO) -> float:
    """Weighted interval score of ``dist`` at observation ``y``, using the median as point forecast."""
    total = 0.5 * abs(y - dist.median)
    for r in rho:
        lo, hi = _bounds(dist, r)
        total += r / 2 * interval_score(lo, hi, y, r)
    return total / (len(rho) + 0.5)


def covered(dist: ForecastDistribution, y: float, level: float) -> bool:
    lo, hi = dist.interval(level)
    return bool(lo <= y <= hi)


def coverage(dists: Sequence[ForecastDistribution], ys: Sequence[float], level: float = 0.95) -> float:
    """Fraction of observations inside the central ``level`` interval."""
    if len(dists) != len(ys):
        raise ValueError("forecasts and observations are not matched")
    if not dists:
        return float("nan")
    return float(np.mean([covered(d, y, level) for d, y in zip(dists, ys)]))


def evaluate_forecast(dist: ForecastDistribution, y: float, origin: tuple[int, int] | None = None,
                      method: str | None = None) -> EvalRecord:
    """Score ``dist`` against ``y``; rows are keyed by forecast origin (the target when omitted)."""
    season, week = dist.target if origin is None else origin
    return EvalRecord(
        method or dist.method, int(season), int(week), int(dist.horizon),
        abs(dist.median - y), wis(dist, y),
        *(covered(dist, y, level) for level in sorted(INTERVALS)),
    )


def records_frame(records: Sequence[EvalRecord]) -> pd.DataFrame:
    return pd.DataFrame([asdict(r) for r in records], columns=METRIC_COLUMNS)


def rank_best(records: pd.DataFrame, metric: str = "wis", by: Sequence[str] = ("season", "week")) -> pd.Series:
    """Share of origins at which each method attains the smallest ``metric``.

    Ties split the credit equally. Every method must be present at every origin.
    """
    by = list(by)
    methods = sorted(records["method"].unique())
    wide = records.pivot_table(index=by, columns="method", values=metric, aggfunc="first")
    wide = wide.reindex(columns=methods)
    if wide.isna().any().any():
        gaps = wide[wide.isna().any(axis=1)].index[:5].tolist()
        raise ValueError(f"missing method results at origins {gaps}")
    vals = wide.to_numpy()
    best = vals == vals.min(axis=1, keepdims=True)
    credit = best / best.sum(axis=1, keepdims=True)
    return pd.Series(credit.mean(axis=0), index=methods, name=f"share_best_{metric}")
