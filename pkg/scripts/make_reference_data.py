"""Regenerate the bundled synthetic dengue-like line list.

The real Puerto Rico line list (R package NobBS, ``denguedat``) cannot be
redistributed from here, so the package ships a synthetic stand-in with the
same shape: 20 seasons (1990-2009) of 52 weeks, about 53,000 cases, a
late-summer/autumn peak with three large epidemic years, and reporting
delays of up to six weeks with roughly 5% of cases reported in the
diagnosis week. Load the real data with ``reportdelay ingest --format nobbs``.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from reportdelay.rng import keyed_rng
from reportdelay.triangle import LineListRecord, write_linelist_csv

OUT = Path(__file__).resolve().parents[1] / "src" / "reportdelay" / "data" / "dengue_synthetic_linelist.csv"

SEASONS = range(1990, 2010)
W = 52
AMPLITUDE = [44, 88, 81, 56, 250, 112, 106, 44, 300, 81, 38, 50, 31, 25, 31, 100, 50, 219, 69, 50]
PEAK = [40, 38, 41, 39, 40, 42, 37, 40, 39, 41, 40, 38, 42, 40, 39, 41, 40, 39, 41, 40]
BASE = 20.5
WIDTH = 7.0
# share of cases reported 0..6 weeks after diagnosis
DELAY_PMF = np.array([0.05, 0.50, 0.30, 0.10, 0.03, 0.01, 0.01])


def main(seed: int = 20091231) -> None:
    rng = keyed_rng(seed, "reference")
    t = np.arange(1, W + 1)
    records = []
    for k, s in enumerate(SEASONS):
        dist = np.minimum(np.abs(t - PEAK[k]), W - np.abs(t - PEAK[k]))
        mean = BASE + AMPLITUDE[k] * np.exp(-0.5 * (dist / WIDTH) ** 2)
        cases = rng.negative_binomial(30, 30 / (30 + mean))
        delays = rng.multinomial(cases, DELAY_PMF)
        for week in range(W):
            for d, n in enumerate(delays[week]):
                if n == 0:
                    continue
                g = week + d
                rs, rw = s + g // W, g % W + 1
                records.append(LineListRecord((s, week + 1), (rs, rw), int(n)))
    write_linelist_csv(records, OUT)
    print(f"wrote {len(records)} rows, {sum(r.count for r in records)} cases to {OUT}")


if __name__ == "__main__":
    main()
