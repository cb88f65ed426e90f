"""Synthetic validation counts, delayed reports and proxies.

Final counts are negative binomial around a smoothed, seasonally rescaled
reference series. Provisional reports are produced by assigning every case
a reporting lag from the increments of a reporting profile, so cumulative
reports are monotone and reach the final count at the last lag. Profiles
are indexed by ``a``, the share of cases reported at lag 0.
"""
from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .rng import keyed_rng
from .triangle import ReportingTriangle

SCENARIOS = ("constant", "vary_by_week", "improve", "worsen", "all_combinations")

ANCHOR_A = (0.05, 0.50)
ANCHOR_PROFILES = (
    np.array([0.05, 0.55, 0.85, 0.95, 0.98, 1.0]),
    np.array([0.50, 0.84, 0.94, 0.97, 0.99, 1.0]),
)
DEFAULT_SIGMA2 = (0.01, 1.0, 4.0, 16.0)


# -- profiles ------------------------------------------------------------------------

def _logit(p):
    return np.log(p) - np.log1p(-p)


def profile_for(a: float) -> np.ndarray:
    """Reporting profile ``pi(0..5)`` with ``pi(0) = a``.

    Each lag is linear in ``logit(a)`` on the log-odds scale, passing through
    the two anchor profiles; ``a = 1`` gives all ones.
    """
    a = float(a)
    if not 0 < a <= 1:
        raise ValueError(f"a must lie in (0, 1], got {a}")
    if a == 1.0:
        return np.ones(ANCHOR_PROFILES[0].size)
    lo, hi = ANCHOR_PROFILES
    out = np.ones(lo.size)
    x0, x1 = _logit(ANCHOR_A[0]), _logit(ANCHOR_A[1])
    x = _logit(a)
    inner = lo < 1
    y0, y1 = _logit(lo[inner]), _logit(hi[inner])
    out[inner] = 1.0 / (1.0 + np.exp(-(y0 + (x - x0) * (y1 - y0) / (x1 - x0))))
    out = np.clip(np.maximum.accumulate(out), 1e-12, 1.0)
    out[-1] = 1.0
    return out


def check_profile(profile) -> np.ndarray:
    prof = np.asarray(profile, dtype=float)
    if np.any(prof <= 0) or np.any(np.diff(prof) < 0) or prof[-1] != 1.0:
        raise ValueError(f"profile must be positive, nondecreasing and end at 1: {prof}")
    return prof


# -- scenario configuration -------------------------------------------------------------

@dataclass
class ScenarioConfig:
    scenario: str = "constant"
    a: float = 0.05
    a_last: float | None = None
    r: float = 100.0
    replicates: int = 10
    proxy_sigma2: tuple[float, ...] = DEFAULT_SIGMA2
    seed: int = 1
    seasons: int | None = None
    weeks: int | None = None
    first_season: int | None = None
    a_grid: tuple[float, ...] = (0.05, 0.2, 0.35, 0.5, 0.65, 0.8, 1.0)
    stratum_size: int = 10
    overreport: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; choose from {SCENARIOS}")
        if not 0 < self.a <= 1:
            raise ValueError("a must lie in (0, 1]")
        if self.r <= 0:
            raise ValueError("NB size r must be positive")

    @classmethod
    def from_text(cls, text: str) -> "ScenarioConfig":
        """Parse flat ``key = value`` lines (``#`` starts a comment)."""
        kw = {}
        names = {f.name: f for f in dataclasses.fields(cls)}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in names:
                raise ValueError(f"line {lineno}: unknown key {key!r}")
            kw[key] = _parse_value(key, value)
        return cls(**kw)

    @classmethod
    def from_file(cls, path) -> "ScenarioConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    def a_for_replicate(self, replicate: int) -> float:
        if self.scenario == "all_combinations":
            idx = min(replicate // self.stratum_size, len(self.a_grid) - 1)
            return float(self.a_grid[idx])
        return self.a


_TUPLE_KEYS = {"proxy_sigma2", "a_grid", "overreport"}
_INT_KEYS = {"replicates", "seed", "seasons", "weeks", "first_season", "stratum_size"}
_FLOAT_KEYS = {"a", "a_last", "r"}


def _parse_value(key, value):
    if value.lower() in ("none", ""):
        return None
    if key in _TUPLE_KEYS:
        return tuple(float(v) for v in value.replace(";", ",").split(",") if v.strip())
    if key in _INT_KEYS:
        return int(value)
    if key in _FLOAT_KEYS:
        return float(value)
    return value


def a_schedule(config: ScenarioConfig, n_seasons: int, weeks_per_season: int,
               replicate: int = 0) -> np.ndarray:
    """Lag-0 reporting share ``a`` for every (season, week) of one replicate."""
    S, W = n_seasons, weeks_per_season
    sc = config.scenario
    if sc in ("constant", "all_combinations"):
        return np.full((S, W), config.a_for_replicate(replicate))
    if sc == "vary_by_week":
        t = np.arange(1, W + 1)
        peak = min(25, W)
        rise = 0.05 + 0.95 * (t - 1) / max(peak - 1, 1)
        fall = 1.0 - 0.95 * (t - peak) / max(W - peak, 1)
        a = np.where(t <= peak, rise, fall)
        return np.tile(np.clip(a, 0.05, 1.0), (S, 1))
    early, late = (0.05, 0.50) if sc == "improve" else (0.50, 0.05)
    if config.a_last is not None:
        late = config.a_last
    out = np.full((S, W), early)
    out[-1] = late
    return out


# -- generators --------------------------------------------------------------------

def build_theta(reference: np.ndarray) -> np.ndarray:
    """Mean grid ``theta_ts = beta_ts * seasonal_ratio_t`` from a reference ``(S, W)`` series.

    ``beta`` is a centred three-week moving average over the continuous
    series (two-point average at the ends) and ``seasonal_ratio_t`` the mean
    over seasons of ``N_ts / beta_ts``.
    """
    ref = np.asarray(reference, dtype=float)
    if ref.ndim == 1:
        ref = ref[None, :]
    if np.any(~np.isfinite(ref)):
        raise ValueError("reference series must be complete")
    S, W = ref.shape
    flat = ref.reshape(-1)
    padded = np.r_[np.nan, flat, np.nan]
    window = np.vstack([padded[:-2], padded[1:-1], padded[2:]])
    beta = np.nanmean(window, axis=0).reshape(S, W)
    zero = beta <= 0
    if zero.any():
        warnings.warn(f"build_theta: {int(zero.sum())} zero moving-average cells set to 0.5", stacklevel=2)
        beta = np.where(zero, 0.5, beta)
    ratio = np.mean(ref / beta, axis=0)
    return beta * ratio[None, :]


def draw_validation(theta: np.ndarray, r: float = 100.0, seed: int = 0, keys=()) -> np.ndarray:
    """Independent NB counts with mean ``theta`` and variance ``theta + theta**2 / r``."""
    theta = np.asarray(theta, dtype=float)
    if np.any(theta < 0):
        raise ValueError("theta must be non-negative")
    rng = keyed_rng(seed, "validation", *keys)
    p = r / (r + theta)
    return rng.negative_binomial(r, p).astype(float)


def thin_reports(validation: np.ndarray, profile=None, a_grid: np.ndarray | None = None,
                 seed: int = 0, keys=(), first_season: int = 1, overreport=None) -> ReportingTriangle:
    """Split each week's final count across reporting lags by multinomial thinning.

    Give either one ``profile`` for every week or an ``a_grid`` of lag-0
    shares (``profile_for`` is applied per week). With ``overreport``, a
    multiplier profile ``psi(d) >= 1`` ending at 1, spurious cases drawn as
    ``Poisson((psi(d) - 1) N(inf))`` are added to lag ``d`` and vanish by
    the last lag.
    """
    val = np.asarray(validation, dtype=float)
    S, W = val.shape
    if a_grid is not None:
        a_grid = np.asarray(a_grid, dtype=float)
        uniq = np.unique(a_grid)
        profiles = {float(u): check_profile(profile_for(u)) for u in uniq}
        L = len(next(iter(profiles.values())))
        pi = np.stack([profiles[float(u)] for u in a_grid.reshape(-1)]).reshape(S, W, L)
    else:
        pi = np.broadcast_to(check_profile(profile), (S, W, len(profile)))
        L = pi.shape[-1]
    probs = np.diff(pi, axis=-1, prepend=0.0)
    probs = np.clip(probs, 0.0, 1.0)
    probs = probs / probs.sum(axis=-1, keepdims=True)
    rng = keyed_rng(seed, "thin", *keys)
    inc = rng.multinomial(val.astype(np.int64), probs)
    cum = np.cumsum(inc, axis=-1).astype(float)
    if overreport is not None:
        psi = np.asarray(overreport, dtype=float)
        if psi.size != L or np.any(psi < 1) or psi[-1] != 1:
            raise ValueError("overreport multipliers must be >= 1, end at 1 and match the profile length")
        spur = rng.poisson((psi - 1.0)[None, None, :] * val[..., None]).astype(float)
        cum = cum + spur
    seasons = tuple(range(first_season, first_season + S))
    return ReportingTriangle(seasons, W, L - 1, cum, val, "integer")


def draw_proxies(validation: np.ndarray, sigma2: Sequence[float] = DEFAULT_SIGMA2, seed: int = 0,
                 keys=()) -> dict[float, np.ndarray]:
    """Proxy streams ``2 log(N(inf) + 0.1) + e`` with ``e ~ Normal(0, sigma2)``, one per variance."""
    val = np.asarray(validation, dtype=float)
    base = 2.0 * np.log(val + 0.1)
    out = {}
    for k, s2 in enumerate(sigma2):
        rng = keyed_rng(seed, "proxy", *keys, k)
        out[float(s2)] = base + np.sqrt(s2) * rng.standard_normal(val.shape)
    return out


@dataclass
class SimulatedReplicate:
    replicate: int
    triangle: ReportingTriangle
    proxies: dict[float, np.ndarray] = field(repr=False)
    a: np.ndarray = field(repr=False)


def simulate_replicate(config: ScenarioConfig, theta: np.ndarray, replicate: int,
                       first_season: int = 1) -> SimulatedReplicate:
    """One replicate: NB final counts, thinned reports under the scenario, and proxies."""
    S, W = theta.shape
    keys = (replicate,)
    val = draw_validation(theta, config.r, config.seed, keys)
    a = a_schedule(config, S, W, replicate)
    tri = thin_reports(val, a_grid=a, seed=config.seed, keys=keys, first_season=first_season,
                       overreport=config.overreport)
    proxies = draw_proxies(val, config.proxy_sigma2, config.seed, keys)
    return SimulatedReplicate(replicate, tri, proxies, a)
