"""Fetch lag-indexed surveillance reports from the public Delphi epidata API.

One request is made per (epiweek, lag) in ``lag`` mode or per
(epiweek, issue) in ``issue`` mode. Responses are cached on disk under
``$REPORTDELAY_CACHE`` (default ``~/.cache/reportdelay``) keyed by the
request, so a rerun over the same range makes no network calls.
"""
from __future__ import annotations

import datetime as dt
import hashlib
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import pandas as pd
import requests

ENDPOINT = "https://api.delphi.cmu.edu/epidata/fluview/"
CACHE_ENV = "REPORTDELAY_CACHE"


class FetchError(RuntimeError):
    def __init__(self, params: dict, attempts: int, reason: str):
        super().__init__(f"request {params} failed after {attempts} attempts: {reason}")
        self.params = params
        self.attempts = attempts


@dataclass
class FetchSpec:
    region: str = "nat"
    epiweeks: Sequence[int] = ()
    lags: Sequence[int] = tuple(range(7))
    issues: Sequence[int] = ()
    mode: str = "lag"
    value_field: str = "num_ili"
    season_start_week: int = 40
    weeks_per_season: int = 52

    def __post_init__(self):
        if self.mode not in ("lag", "issue"):
            raise ValueError("mode must be 'lag' or 'issue'")


@dataclass
class FetchResult:
    counts: pd.DataFrame
    validation: pd.DataFrame
    errors: list[str] = field(default_factory=list)
    network_calls: int = 0

    @property
    def partial(self) -> bool:
        return bool(self.errors)


def cache_dir() -> Path:
    return Path(os.environ.get(CACHE_ENV, Path.home() / ".cache" / "reportdelay"))


def _cache_key(params: dict) -> str:
    blob = json.dumps({"endpoint": ENDPOINT, **params}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def epiweek_range(start: int, stop: int) -> list[int]:
    """Epiweeks ``YYYYWW`` from ``start`` to ``stop`` inclusive (weeks 1-53 where they exist)."""
    out = []
    year, week = divmod(start, 100)
    while year * 100 + week <= stop:
        out.append(year * 100 + week)
        week += 1
        last = 53 if _has_week53(year) else 52
        if week > last:
            year, week = year + 1, 1
    return out


def _has_week53(year: int) -> bool:
    return dt.date(year, 12, 28).isocalendar()[1] == 53


def epiweek_to_season_week(epiweek: int, start_week: int = 40, weeks_per_season: int = 52):
    """Map ``YYYYWW`` to ``(season, week)`` with seasons starting at ``start_week``; week 53 maps to None."""
    year, week = divmod(int(epiweek), 100)
    if week > weeks_per_season:
        return None
    season = year if week >= start_week else year - 1
    return season, (week - start_week) % weeks_per_season + 1


class EpidataClient:
    """Rate-limited, retrying, disk-cached GET client."""

    def __init__(self, get: Callable | None = None, retries: int = 3, backoff: float = 1.0,
                 min_interval: float = 0.2, cache: Path | None = None, sleep: Callable = time.sleep):
        self._get = get or (lambda url, params: requests.get(url, params=params, timeout=30))
        self.retries = retries
        self.backoff = backoff
        self.min_interval = min_interval
        self.cache = cache or cache_dir()
        self.sleep = sleep
        self.network_calls = 0
        self._last = 0.0

    def fetch(self, params: dict) -> dict:
        path = self.cache / f"{_cache_key(params)}.json"
        if path.exists():
            return json.loads(path.read_text(encoding="utf-8"))
        reason = ""
        for attempt in range(1, self.retries + 1):
            wait = self.min_interval - (time.monotonic() - self._last)
            if wait > 0:
                self.sleep(wait)
            self._last = time.monotonic()
            self.network_calls += 1
            try:
                resp = self._get(ENDPOINT, params)
                resp.raise_for_status()
                payload = resp.json()
                if payload.get("result") not in (1, -2):
                    raise ValueError(f"API result {payload.get('result')}: {payload.get('message')}")
                self.cache.mkdir(parents=True, exist_ok=True)
                path.write_text(json.dumps(payload), encoding="utf-8")
                return payload
            except (requests.RequestException, ValueError, KeyError) as exc:
                reason = f"{type(exc).__name__}: {exc}"
                if attempt < self.retries:
                    self.sleep(self.backoff * 2 ** (attempt - 1))
        raise FetchError(params, self.retries, reason)


def fetch_epidata(spec: FetchSpec, client: EpidataClient | None = None) -> FetchResult:
    """Assemble ``season,week,lag,count`` rows plus latest-issue validation counts."""
    client = client or EpidataClient()
    rows, vrows, errors = [], [], []
    for ew in spec.epiweeks:
        sw = epiweek_to_season_week(ew, spec.season_start_week, spec.weeks_per_season)
        if sw is None:
            errors.append(f"epiweek {ew}: week 53 has no slot in a {spec.weeks_per_season}-week season")
            continue
        keys = spec.lags if spec.mode == "lag" else spec.issues
        for k in keys:
            params = {"regions": spec.region, "epiweeks": str(ew), ("lag" if spec.mode == "lag" else "issues"): str(k)}
            try:
                payload = client.fetch(params)
            except FetchError as exc:
                errors.append(str(exc))
                continue
            for rec in payload.get("epidata") or []:
                if int(rec["epiweek"]) != ew:
                    continue
                lag = int(rec["lag"])
                rows.append([*sw, lag, float(rec[spec.value_field])])
        try:
            latest = client.fetch({"regions": spec.region, "epiweeks": str(ew)})
            for rec in latest.get("epidata") or []:
                vrows.append([*sw, float(rec[spec.value_field])])
        except FetchError as exc:
            errors.append(str(exc))
    counts = pd.DataFrame(rows, columns=["season", "week", "lag", "count"]).drop_duplicates(
        ["season", "week", "lag"], keep="last")
    validation = pd.DataFrame(vrows, columns=["season", "week", "validation"])
    return FetchResult(counts.reset_index(drop=True), validation, errors, client.network_calls)
