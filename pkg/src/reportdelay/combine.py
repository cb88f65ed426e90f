"""Combining forecasts across imputations and across methods."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .forecast import ForecastDistribution


@dataclass(frozen=True)
class RubinSummary:
    M: int
    q: np.ndarray
    W: np.ndarray
    qbar: float
    Wbar: float
    B: float
    T: float
    df: float


def rubin_summary(per_imputation: Sequence[tuple[float, float]]) -> RubinSummary:
    """Pool ``(estimate, within-variance)`` pairs with Rubin's rules.

    ``T = Wbar + (1 + 1/M) B``; degrees of freedom follow the large-sample
    formula ``(M - 1) (1 + Wbar / ((1 + 1/M) B))**2`` and are infinite when
    ``B = 0``.
    """
    arr = np.asarray(per_imputation, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("expected a sequence of (estimate, variance) pairs")
    M = arr.shape[0]
    if M < 2:
        raise ValueError("Rubin combining needs M >= 2 imputations")
    q, W = arr[:, 0], arr[:, 1]
    if np.any(W < 0):
        raise ValueError("within-imputation variances must be non-negative")
    qbar = float(q.mean())
    Wbar = float(W.mean())
    B = float(q.var(ddof=1))
    T = Wbar + (1 + 1 / M) * B
    if B > 0:
        # a vanishing between-variance sends df to infinity
        with np.errstate(over="ignore", divide="ignore"):
            df = (M - 1) * (1 + np.float64(Wbar) / ((1 + 1 / M) * B)) ** 2
    else:
        df = np.inf
    return RubinSummary(M, q, W, qbar, Wbar, B, T, float(df))


def rubin_combine(per_imputation: Sequence[tuple[float, float]], n_draws: int = 2500,
                  rng: np.random.Generator | None = None, c: float = 1.0, target=None,
                  horizon: int = 0, method: str = "impute") -> tuple[RubinSummary, ForecastDistribution]:
    """Rubin-pooled log-scale predictive, back-transformed via location-scale t draws."""
    summary = rubin_summary(per_imputation)
    rng = np.random.default_rng(0) if rng is None else rng
    if np.isfinite(summary.df):
        eps = rng.standard_t(summary.df, n_draws)
    else:
        eps = rng.standard_normal(n_draws)
    z = summary.qbar + np.sqrt(summary.T) * eps
    draws = np.maximum(np.exp(z) - c, 0.0)
    dist = ForecastDistribution.from_draws(draws, target, horizon, method, summary.qbar, summary.T)
    return summary, dist


def ensemble_stack(dists: Sequence[ForecastDistribution], draws_per_method: int | None = None,
                   method: str = "ensemble") -> ForecastDistribution:
    """Equal-weight mixture formed by pooling every member's draws."""
    if not dists:
        raise ValueError("no distributions to stack")
    targets = {(d.target, d.horizon) for d in dists}
    if len(targets) != 1:
        raise ValueError(f"cannot stack forecasts for different targets: {sorted(map(str, targets))}")
    sizes = {len(d.draws) for d in dists}
    if draws_per_method is None:
        if len(sizes) != 1:
            raise ValueError(f"members carry unequal draw counts {sorted(sizes)}")
        draws_per_method = sizes.pop()
    elif min(sizes) < draws_per_method:
        raise ValueError(f"a member has fewer than {draws_per_method} draws")
    pooled = np.concatenate([np.asarray(d.draws[:draws_per_method], dtype=float) for d in dists])
    first = dists[0]
    return ForecastDistribution.from_draws(pooled, first.target, first.horizon, method)
