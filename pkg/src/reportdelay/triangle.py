"""Reporting triangles, line-list rollup and as-of snapshots.

A reporting triangle stores, for every week ``t`` of season ``s``, the
cumulative count reported by lag ``d`` (``N_ts(d)``) together with the
final validation count ``N_ts(inf)``. Weeks are numbered ``1..W`` inside a
season and seasons are consecutive integers, so every week also has a
global index ``(season - first_season) * W + (week - 1)`` and reporting
lags can cross season boundaries.
"""
from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np
import pandas as pd


class MissingCellError(KeyError):
    """A required ``(season, week, lag)`` count is absent from the triangle."""

    def __init__(self, cells):
        self.cells = list(cells)
        shown = ", ".join(str(c) for c in self.cells[:10])
        more = "" if len(self.cells) <= 10 else f" (+{len(self.cells) - 10} more)"
        super().__init__(f"missing triangle cells (season, week, lag): {shown}{more}")


class LookaheadError(RuntimeError):
    """A snapshot was asked for a count reported after its origin."""


def _frozen(a, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ReportingTriangle:
    """Cumulative counts by (season, week, lag) plus validation counts.

    ``counts`` has shape ``(n_seasons, weeks_per_season, max_lag + 1)`` and
    ``validation`` has shape ``(n_seasons, weeks_per_season)``; unobserved
    cells are NaN. Both arrays are copied and made read-only.
    """

    season_ids: tuple[int, ...]
    weeks_per_season: int
    max_lag: int
    counts: np.ndarray
    validation: np.ndarray
    count_mode: str = "real"

    def __post_init__(self):
        seasons = tuple(int(s) for s in self.season_ids)
        if not seasons:
            raise ValueError("triangle needs at least one season")
        if any(b - a != 1 for a, b in zip(seasons, seasons[1:])):
            raise ValueError(f"season ids must be consecutive integers, got {seasons}")
        if self.weeks_per_season < 1 or self.max_lag < 0:
            raise ValueError("weeks_per_season must be >= 1 and max_lag >= 0")
        if self.count_mode not in ("real", "integer"):
            raise ValueError(f"count_mode must be 'real' or 'integer', got {self.count_mode!r}")
        counts = _frozen(self.counts)
        validation = _frozen(self.validation)
        shape = (len(seasons), self.weeks_per_season, self.max_lag + 1)
        if counts.shape != shape:
            raise ValueError(f"counts shape {counts.shape} != expected {shape}")
        if validation.shape != shape[:2]:
            raise ValueError(f"validation shape {validation.shape} != expected {shape[:2]}")

        observed = ~np.isnan(counts)
        if np.any(counts[observed] < 0) or np.any(validation[~np.isnan(validation)] < 0):
            raise ValueError("counts must be non-negative")
        # observed lags must form a prefix 0..d_max for every week
        gaps = observed[..., 1:] & ~observed[..., :-1]
        if gaps.any():
            s, t, d = np.argwhere(gaps)[0]
            raise MissingCellError([(seasons[s], int(t) + 1, int(d))])
        if self.count_mode == "integer":
            vals = np.concatenate([counts[observed], validation[~np.isnan(validation)]])
            if np.any(vals != np.round(vals)):
                raise ValueError("integer-mode triangle holds non-integer counts")

        object.__setattr__(self, "season_ids", seasons)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "validation", validation)

    # -- indexing -----------------------------------------------------------
    @property
    def n_seasons(self) -> int:
        return len(self.season_ids)

    @property
    def n_weeks(self) -> int:
        return self.n_seasons * self.weeks_per_season

    def season_index(self, season: int) -> int:
        idx = int(season) - self.season_ids[0]
        if not 0 <= idx < self.n_seasons:
            raise KeyError(f"season {season} not in triangle {self.season_ids[0]}..{self.season_ids[-1]}")
        return idx

    def global_week(self, season: int, week: int) -> int:
        if not 1 <= week <= self.weeks_per_season:
            raise KeyError(f"week {week} outside 1..{self.weeks_per_season}")
        return self.season_index(season) * self.weeks_per_season + week - 1

    def from_global(self, g: int) -> tuple[int, int]:
        s, t = divmod(int(g), self.weeks_per_season)
        return self.season_ids[0] + s, t + 1

    def flat_counts(self) -> np.ndarray:
        """Counts reshaped to ``(n_weeks, max_lag + 1)`` in global week order."""
        return self.counts.reshape(self.n_weeks, self.max_lag + 1)

    def flat_validation(self) -> np.ndarray:
        return self.validation.reshape(self.n_weeks)

    def count(self, season: int, week: int, lag: int) -> float:
        """``N_ts(d)``; lags past ``max_lag`` fall through to the validation count."""
        si = self.season_index(season)
        if lag > self.max_lag:
            return self.final(season, week)
        v = self.counts[si, week - 1, lag]
        if np.isnan(v):
            raise MissingCellError([(season, week, lag)])
        return float(v)

    def final(self, season: int, week: int) -> float:
        v = self.validation[self.season_index(season), week - 1]
        if np.isnan(v):
            raise MissingCellError([(season, week, "inf")])
        return float(v)

    def d_max(self, season: int, week: int) -> int:
        """Largest observed lag for the week, -1 when nothing is observed."""
        obs = ~np.isnan(self.counts[self.season_index(season), week - 1])
        return int(obs.sum()) - 1

    def select_seasons(self, seasons: Sequence[int]) -> "ReportingTriangle":
        idx = [self.season_index(s) for s in seasons]
        return ReportingTriangle(
            tuple(seasons), self.weeks_per_season, self.max_lag,
            self.counts[idx], self.validation[idx], self.count_mode,
        )

    # -- long form ------------------------------------------------------------
    def to_frames(self) -> tuple[pd.DataFrame, pd.DataFrame]:
        """Long-form ``(season, week, lag, count)`` and ``(season, week, validation)`` frames."""
        s_idx, t_idx, d_idx = np.nonzero(~np.isnan(self.counts))
        counts = pd.DataFrame({
            "season": np.asarray(self.season_ids)[s_idx],
            "week": t_idx + 1,
            "lag": d_idx,
            "count": self.counts[s_idx, t_idx, d_idx],
        })
        s_idx, t_idx = np.nonzero(~np.isnan(self.validation))
        validation = pd.DataFrame({
            "season": np.asarray(self.season_ids)[s_idx],
            "week": t_idx + 1,
            "validation": self.validation[s_idx, t_idx],
        })
        return counts, validation

    @classmethod
    def from_frames(cls, counts: pd.DataFrame, validation: pd.DataFrame,
                    weeks_per_season: int | None = None, max_lag: int | None = None,
                    count_mode: str = "real") -> "ReportingTriangle":
        seasons_seen = pd.concat([counts["season"], validation["season"]]).astype(int)
        first, last = int(seasons_seen.min()), int(seasons_seen.max())
        seasons = tuple(range(first, last + 1))
        W = int(weeks_per_season or max(counts["week"].max(), validation["week"].max()))
        L = int(max_lag if max_lag is not None else counts["lag"].max())
        arr = np.full((len(seasons), W, L + 1), np.nan)
        val = np.full((len(seasons), W), np.nan)
        c = counts[counts["lag"] <= L]
        arr[c["season"].to_numpy(int) - first, c["week"].to_numpy(int) - 1, c["lag"].to_numpy(int)] = c["count"].to_numpy(float)
        val[validation["season"].to_numpy(int) - first, validation["week"].to_numpy(int) - 1] = validation["validation"].to_numpy(float)
        return cls(seasons, W, L, arr, val, count_mode)


# -- CSV --------------------------------------------------------------------------

def write_triangle_csv(tri: ReportingTriangle, counts_path, validation_path) -> None:
    counts, validation = tri.to_frames()
    counts.to_csv(counts_path, index=False)
    validation.to_csv(validation_path, index=False)


def read_triangle_csv(counts_path, validation_path, weeks_per_season: int | None = None,
                      max_lag: int | None = None, count_mode: str = "real") -> ReportingTriangle:
    counts = pd.read_csv(counts_path)
    validation = pd.read_csv(validation_path)
    for frame, cols in ((counts, ["season", "week", "lag", "count"]),
                        (validation, ["season", "week", "validation"])):
        missing = set(cols) - set(frame.columns)
        if missing:
            raise ValueError(f"triangle CSV missing columns {sorted(missing)}")
    return ReportingTriangle.from_frames(counts, validation, weeks_per_season, max_lag, count_mode)


# -- line lists -----------------------------------------------------------------

class LineListRecord(NamedTuple):
    """Cases diagnosed in ``diagnosis_week`` and reported in ``report_week``.

    Both weeks are ``(season, week)`` pairs; ``count`` aggregates identical records.
    """

    diagnosis_week: tuple[int, int]
    report_week: tuple[int, int]
    count: float = 1


def rollup_linelist(records: Sequence[LineListRecord], max_lag: int,
                    weeks_per_season: int = 52, as_of: tuple[int, int] | None = None,
                    count_mode: str = "integer") -> ReportingTriangle:
    """Aggregate case records into a cumulative reporting triangle.

    ``N_ts(d)`` counts records diagnosed in ``(s, t)`` with report delay at
    most ``d`` weeks and ``N_ts(inf)`` counts all of them. Cells that would
    only be known after ``as_of`` (default: the latest report week) are NaN.
    """
    if len(records) == 0:
        raise ValueError("empty line list")
    W = weeks_per_season
    diag = np.array([r.diagnosis_week for r in records], dtype=int)
    rep = np.array([r.report_week for r in records], dtype=int)
    n = np.array([r.count for r in records], dtype=float)
    for name, arr in (("diagnosis", diag), ("report", rep)):
        bad = np.nonzero((arr[:, 1] < 1) | (arr[:, 1] > W))[0]
        if bad.size:
            raise ValueError(f"record {bad[0]}: {name} week {arr[bad[0], 1]} outside 1..{W}")
    first = int(diag[:, 0].min())
    g_diag = (diag[:, 0] - first) * W + diag[:, 1] - 1
    g_rep = (rep[:, 0] - first) * W + rep[:, 1] - 1
    delay = g_rep - g_diag
    bad = np.nonzero(delay < 0)[0]
    if bad.size:
        raise ValueError(f"record {bad[0]}: report week {tuple(rep[bad[0]])} precedes diagnosis week {tuple(diag[bad[0]])}")

    seasons = tuple(range(first, int(diag[:, 0].max()) + 1))
    n_weeks = len(seasons) * W
    inc = np.zeros((n_weeks, max_lag + 1))
    total = np.zeros(n_weeks)
    np.add.at(total, g_diag, n)
    within = delay <= max_lag
    np.add.at(inc, (g_diag[within], delay[within]), n[within])
    cum = np.cumsum(inc, axis=1)

    g_asof = int(g_rep.max()) if as_of is None else (as_of[0] - first) * W + as_of[1] - 1
    visible = (np.arange(n_weeks)[:, None] + np.arange(max_lag + 1)[None, :]) <= g_asof
    cum[~visible] = np.nan
    total[np.arange(n_weeks) > g_asof] = np.nan
    return ReportingTriangle(
        seasons, W, max_lag,
        cum.reshape(len(seasons), W, max_lag + 1), total.reshape(len(seasons), W), count_mode,
    )


def read_linelist_csv(path) -> list[LineListRecord]:
    """Read ``diagnosis_season,diagnosis_week,report_season,report_week,count`` rows."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.append(LineListRecord(
                (int(row["diagnosis_season"]), int(row["diagnosis_week"])),
                (int(row["report_season"]), int(row["report_week"])),
                float(row.get("count") or 1),
            ))
    return out


def date_to_season_week(date: dt.date, weeks_per_season: int = 52,
                        season_start: tuple[int, int] = (1, 1)) -> tuple[int, int]:
    """Map a date to ``(season, week)`` counting 7-day blocks from a fixed season start.

    ``season_start`` is a ``(month, day)`` offset; days past the last full
    week fold into week ``weeks_per_season``.
    """
    month, day = season_start
    start = dt.date(date.year, month, day)
    if date < start:
        start = dt.date(date.year - 1, month, day)
    week = min((date - start).days // 7 + 1, weeks_per_season)
    return start.year, week


def read_nobbs_csv(path, weeks_per_season: int = 52,
                   season_start: tuple[int, int] = (1, 1)) -> list[LineListRecord]:
    """Read a NobBS-style case list with ``onset_week`` and ``report_week`` date columns."""
    frame = pd.read_csv(path)
    for col in ("onset_week", "report_week"):
        if col not in frame.columns:
            raise ValueError(f"NobBS CSV needs column {col!r}")
    pairs = frame.groupby(["onset_week", "report_week"]).size()
    out = []
    for (onset, report), n in pairs.items():
        d0 = date_to_season_week(pd.Timestamp(onset).date(), weeks_per_season, season_start)
        d1 = date_to_season_week(pd.Timestamp(report).date(), weeks_per_season, season_start)
        out.append(LineListRecord(d0, d1, float(n)))
    return out


def write_linelist_csv(records: Iterable[LineListRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["diagnosis_season", "diagnosis_week", "report_season", "report_week", "count"])
        for r in records:
            w.writerow([*r.diagnosis_week, *r.report_week, int(r.count) if float(r.count).is_integer() else r.count])


def increments(tri: ReportingTriangle, season: int, week: int) -> np.ndarray:
    """Per-lag increments ``n_ts(d) = N_ts(d) - N_ts(d-1)`` over observed lags.

    Increments may be negative when cases are removed on revision.
    """
    row = tri.counts[tri.season_index(season), week - 1]
    obs = row[~np.isnan(row)]
    if obs.size == 0:
        raise MissingCellError([(season, week, 0)])
    return np.diff(obs, prepend=0.0)


# -- snapshots ----------------------------------------------------------------------

class SnapshotEntry(NamedTuple):
    season: int
    week: int
    count: float
    lag_used: int
    finalized: bool


@dataclass(frozen=True)
class Snapshot:
    """The data visible at a forecast origin.

    Arrays run over global weeks ``0..g*`` of the source triangle. Week ``g``
    carries its count at lag ``g* - g`` while that lag is at most ``tau``
    and its validation count afterwards. ``proxy`` and ``covariates``, when
    given, are aligned with the triangle's global weeks. ``excluded`` counts
    trailing weeks dropped after construction; lags keep referring to the
    original origin.
    """

    triangle: ReportingTriangle
    origin: tuple[int, int]
    tau: int
    seasons: np.ndarray
    weeks: np.ndarray
    values: np.ndarray
    lags: np.ndarray
    finalized: np.ndarray
    proxy: np.ndarray | None = field(default=None, repr=False)
    covariates: np.ndarray | None = field(default=None, repr=False)
    excluded: int = 0

    @property
    def origin_index(self) -> int:
        """Global index of the origin week (unchanged by exclusion)."""
        return len(self.values) - 1 + self.excluded

    def cell(self, season: int, week: int, lag: int) -> float:
        """``N_ts(d)`` if it had been reported by the origin."""
        g = self.triangle.global_week(season, week)
        if g + lag > self.origin_index:
            raise LookaheadError(f"cell {(season, week, lag)} is reported after origin {self.origin}")
        return self.triangle.count(season, week, lag)

    def latest(self, season: int, week: int) -> float:
        """Most recent count for a week as of the origin."""
        return float(self.values[self.triangle.global_week(season, week)])

    @property
    def current_season(self) -> list[SnapshotEntry]:
        s = self.origin[0]
        idx = np.nonzero(self.seasons == s)[0]
        return [SnapshotEntry(s, int(self.weeks[i]), float(self.values[i]), int(self.lags[i]),
                              bool(self.finalized[i])) for i in idx]

    @property
    def history(self) -> dict[int, np.ndarray]:
        """Validation series of every season before the origin season."""
        tri = self.triangle
        return {s: tri.validation[tri.season_index(s)].copy()
                for s in tri.season_ids if s < self.origin[0]}

    def unfinalized(self) -> np.ndarray:
        return np.nonzero(~self.finalized)[0]


def snapshot(tri: ReportingTriangle, origin: tuple[int, int], tau: int | None = None,
             proxy: np.ndarray | None = None, covariates: np.ndarray | None = None) -> Snapshot:
    """Build the as-of dataset at ``origin = (season, week)``.

    Every week up to the origin is included in global order, so weeks from the
    end of the previous season that are still within ``tau`` lags of the
    origin carry their provisional counts rather than validation values.
    """
    tau = tri.max_lag if tau is None else int(tau)
    if tau < 0:
        raise ValueError("tau must be non-negative")
    g_star = tri.global_week(*origin)
    g = np.arange(g_star + 1)
    lags = g_star - g
    finalized = lags > tau
    flat = tri.flat_counts()
    val = tri.flat_validation()
    values = np.empty(g_star + 1)
    values[finalized] = val[g[finalized]]
    provisional = ~finalized
    lag_cells = np.minimum(lags[provisional], tri.max_lag)
    # lags past the stored max_lag but within tau read the validation count
    past_store = lags[provisional] > tri.max_lag
    got = flat[g[provisional], lag_cells]
    got = np.where(past_store, val[g[provisional]], got)
    values[provisional] = got
    missing = np.nonzero(np.isnan(values))[0]
    if missing.size:
        cells = []
        for i in missing:
            s, t = tri.from_global(int(i))
            cells.append((s, t, "inf" if finalized[i] else int(lags[i])))
        raise MissingCellError(cells)
    seasons = tri.season_ids[0] + g // tri.weeks_per_season
    weeks = g % tri.weeks_per_season + 1
    if proxy is not None:
        proxy = _frozen(np.asarray(proxy, dtype=float).reshape(-1)[: tri.n_weeks])
    if covariates is not None:
        covariates = _frozen(np.asarray(covariates, dtype=float))
    return Snapshot(tri, (int(origin[0]), int(origin[1])), tau,
                    _frozen(seasons, int), _frozen(weeks, int), _frozen(values),
                    _frozen(lags, int), _frozen(finalized, bool), proxy, covariates)
