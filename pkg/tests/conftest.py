from __future__ import annotations

import numpy as np
import pytest

from reportdelay.triangle import ReportingTriangle


def make_triangle(validation, profile, first_season=1, count_mode="real"):
    """Noise-free triangle with ``N(d) = profile[d] * N(inf)`` for every week."""
    val = np.asarray(validation, dtype=float)
    prof = np.asarray(profile, dtype=float)
    counts = val[..., None] * prof[None, None, :]
    S, W = val.shape
    return ReportingTriangle(tuple(range(first_season, first_season + S)), W, prof.size - 1,
                             counts, val, count_mode)


@pytest.fixture
def seasonal_validation():
    """Three 10-week seasons of positive, non-constant counts."""
    t = np.arange(10)
    base = 40 + 30 * np.sin(2 * np.pi * t / 10)
    return np.vstack([base, 1.5 * base, 0.8 * base]).round()


@pytest.fixture
def flat_triangle(seasonal_validation):
    return make_triangle(seasonal_validation, [0.2, 0.6, 0.9, 1.0])


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
