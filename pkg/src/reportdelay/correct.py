"""Corrections that turn an as-of snapshot into forecaster input.

``rescale`` replaces provisional counts by ``N(d) / pi``; ``offsets`` keeps
the counts and attaches ``log pi`` for a log-link forecaster; ``impute``
draws final counts from a truncated normal centred on the rescaled count;
``exclude`` drops the most recent weeks.
"""
from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.special import ndtr, ndtri

from .factors import FactorTable
from .rng import keyed_rng
from .triangle import MissingCellError, Snapshot


@dataclass(frozen=True)
class CorrectedSeries:
    """Per-week estimates of final counts, in global week order up to the last kept week.

    ``log_offsets`` is zero except on the offset path, where it carries
    ``log pi`` for provisional weeks; ``factors`` then holds ``pi`` itself so
    forecasters can form ``(y + c) / pi`` without a round trip through
    ``log``. ``excluded`` is the number of trailing weeks removed before the
    origin.
    """

    seasons: np.ndarray
    weeks: np.ndarray
    values: np.ndarray
    log_offsets: np.ndarray
    finalized: np.ndarray
    method: str
    excluded: int = 0
    factors: np.ndarray | None = None

    def __len__(self):
        return len(self.values)


def _base(snap: Snapshot, method: str, values, pi=None) -> CorrectedSeries:
    n = len(snap.values)
    pi = None if pi is None else np.asarray(pi, dtype=float)
    return CorrectedSeries(
        np.asarray(snap.seasons), np.asarray(snap.weeks), np.asarray(values, dtype=float),
        np.zeros(n) if pi is None else np.log(pi),
        np.asarray(snap.finalized), method, snap.excluded, pi,
    )


def _cells(snap: Snapshot):
    for g in snap.unfinalized():
        yield g, int(snap.seasons[g]), int(snap.weeks[g]), int(snap.lags[g]), float(snap.values[g])


def uncorrected(snap: Snapshot) -> CorrectedSeries:
    return _base(snap, "uncorrected", snap.values)


def rescale(snap: Snapshot, factors: FactorTable) -> CorrectedSeries:
    """``N_hat = N(d) / pi(d)`` on provisional weeks; finalized weeks pass through."""
    values = np.array(snap.values, dtype=float)
    missing = []
    for g, s, t, d, n in _cells(snap):
        if factors.has_pi(s, t, d):
            values[g] = n / factors.pi(s, t, d)
        elif factors.estimate(s, t, d) is not None:
            values[g] = factors.estimate(s, t, d)
        else:
            missing.append((s, t, d))
    if missing:
        raise MissingCellError(missing)
    return _base(snap, "rescale", values)


def offsets(snap: Snapshot, factors: FactorTable) -> CorrectedSeries:
    """Keep observed counts and attach ``log pi(d)`` as a per-week offset.

    Cells whose factor is undefined (zero count under proxy shrinkage) carry
    the estimator's nowcast with a zero offset instead.
    """
    values = np.array(snap.values, dtype=float)
    pi = np.ones(len(values))
    missing = []
    for g, s, t, d, n in _cells(snap):
        if factors.has_pi(s, t, d):
            pi[g] = factors.pi(s, t, d)
        elif factors.estimate(s, t, d) is not None:
            values[g] = factors.estimate(s, t, d)
        else:
            missing.append((s, t, d))
    if missing:
        raise MissingCellError(missing)
    return _base(snap, "offset", values, pi)


# -- truncated normal ------------------------------------------------------------

def truncnorm_draw(rng: np.random.Generator, mean, sd, lower, upper, size=None) -> np.ndarray:
    """Inverse-CDF draws from ``Normal(mean, sd**2)`` truncated to ``[lower, upper]``.

    Bounds far in the upper tail are mirrored into the lower tail so the CDF
    differences keep their precision.
    """
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    a = (np.asarray(lower, dtype=float) - mean) / sd
    b = (np.asarray(upper, dtype=float) - mean) / sd
    flip = a > 0
    a2 = np.where(flip, -b, a)
    b2 = np.where(flip, -a, b)
    shape = np.broadcast(mean, sd, a, b).shape if size is None else size
    u = rng.random(shape)
    pa, pb = ndtr(a2), ndtr(b2)
    z = ndtri(pa + u * (pb - pa))
    z = np.clip(z, a2, b2)
    z = np.where(flip, -z, z)
    return mean + sd * z


def imputation_params(n: float, pi: float):
    """Mean, sd and bounds of the truncated normal for final counts given ``N(d) = n``."""
    mean = n / pi
    sd = np.sqrt(abs(1.0 - pi) * n) / pi
    if pi < 1:
        return mean, sd, n, np.inf
    return mean, sd, 0.0, n


@dataclass(frozen=True)
class ImputationSet:
    series: tuple[CorrectedSeries, ...]
    seed: int

    @property
    def M(self) -> int:
        return len(self.series)

    def to_frame(self) -> pd.DataFrame:
        frames = []
        for m, cs in enumerate(self.series):
            frames.append(pd.DataFrame({
                "imputation_id": m, "season": cs.seasons, "week": cs.weeks,
                "value": cs.values, "finalized": cs.finalized.astype(int),
            }))
        return pd.concat(frames, ignore_index=True)

    def to_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False)


def impute(snap: Snapshot, factors: FactorTable, M: int = 10, seed: int = 0, keys=()) -> ImputationSet:
    """Draw ``M`` completed series from the truncated-normal imputation model.

    Each provisional week is drawn from a normal with mean ``N(d)/pi`` and
    variance ``|1 - pi| N(d) / pi**2``, truncated to ``[N(d), inf)`` when
    ``pi < 1`` and ``[0, N(d)]`` when ``pi > 1``. ``pi = 1`` and ``N(d) = 0``
    are deterministic. ``keys`` extend the RNG key beyond ``seed``.
    """
    if M < 2:
        raise ValueError("multiple imputation needs M >= 2")
    rng = keyed_rng(seed, *keys)
    draws = np.tile(np.asarray(snap.values, dtype=float), (M, 1))
    zero_cells = []
    for g, s, t, d, n in _cells(snap):
        if not factors.has_pi(s, t, d):
            est = factors.estimate(s, t, d)
            if est is None:
                raise MissingCellError([(s, t, d)])
            draws[:, g] = est
            continue
        pi = factors.pi(s, t, d)
        if pi == 1.0:
            continue
        if n <= 0:
            draws[:, g] = n / pi
            if pi < 1:
                zero_cells.append((s, t, d))
            continue
        mean, sd, lo, hi = imputation_params(n, pi)
        x = truncnorm_draw(rng, mean, sd, lo, hi, size=M)
        if np.any(x < lo) or np.any(x > hi):
            raise AssertionError(f"imputed value outside [{lo}, {hi}] at {(s, t, d)}")
        draws[:, g] = x
    if zero_cells:
        warnings.warn(f"impute: N(d)=0 with pi<1 imputed deterministically at {len(zero_cells)} cells",
                      stacklevel=2)
    series = tuple(_base(snap, "impute", draws[m]) for m in range(M))
    return ImputationSet(series, seed)


def exclude(snap: Snapshot, m: int) -> Snapshot:
    """Drop the last ``m`` weeks; remaining weeks keep their as-of values and lags."""
    if m < 1:
        raise ValueError("exclusion depth m must be >= 1 (use the uncorrected path for m = 0)")
    keep = len(snap.values) - m
    if keep < 2:
        raise ValueError(f"excluding {m} weeks leaves {keep} < 2 weeks")
    trunc = {f: getattr(snap, f)[:keep] for f in ("seasons", "weeks", "values", "lags", "finalized")}
    return dataclasses.replace(snap, excluded=snap.excluded + m, **trunc)
