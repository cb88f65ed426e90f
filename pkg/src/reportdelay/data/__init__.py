"""Bundled synthetic dengue-like line list and helpers to load it.

The file is a synthetic stand-in for the Puerto Rico dengue line list
(1990-2009), generated by ``scripts/make_reference_data.py``. It has the
same layout as the real data after aggregation: one row per
(diagnosis week, report week) pair with a case count.
"""
from __future__ import annotations

from functools import lru_cache
from importlib import resources

import numpy as np

from ..triangle import LineListRecord, ReportingTriangle, read_linelist_csv, rollup_linelist

LINELIST_FILE = "dengue_synthetic_linelist.csv"
DENGUE_MAX_LAG = 6


def linelist_path():
    return resources.files(__name__).joinpath(LINELIST_FILE)


def load_dengue_linelist() -> list[LineListRecord]:
    with resources.as_file(linelist_path()) as path:
        return read_linelist_csv(path)


@lru_cache(maxsize=4)
def dengue_triangle(max_lag: int = DENGUE_MAX_LAG) -> ReportingTriangle:
    """Reporting triangle of the bundled line list (52-week seasons)."""
    return rollup_linelist(load_dengue_linelist(), max_lag)


def reference_validation() -> tuple[tuple[int, ...], np.ndarray]:
    """Season ids and the ``(S, 52)`` final counts used as the simulation reference."""
    tri = dengue_triangle()
    return tri.season_ids, np.array(tri.validation)
