from __future__ import annotations

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reportdelay.data import dengue_triangle
from reportdelay.triangle import (LineListRecord, LookaheadError, MissingCellError, ReportingTriangle,
                                  increments, read_linelist_csv, read_nobbs_csv, read_triangle_csv,
                                  rollup_linelist, snapshot, write_linelist_csv, write_triangle_csv)

from conftest import make_triangle


class TestRollup:
    def test_counts_by_delay(self):
        recs = [LineListRecord((1, 1), (1, 1)), LineListRecord((1, 1), (1, 1)), LineListRecord((1, 1), (1, 3))]
        tri = rollup_linelist(recs, max_lag=2, weeks_per_season=10)
        np.testing.assert_array_equal(tri.counts[0, 0], [2, 2, 3])
        assert tri.final(1, 1) == 3

    def test_empty_bucket_carries_forward(self):
        recs = [LineListRecord((1, 1), (1, 2), 4), LineListRecord((1, 1), (1, 4), 1)]
        tri = rollup_linelist(recs, max_lag=3, weeks_per_season=10)
        assert tri.count(1, 1, 2) == tri.count(1, 1, 1) == 4

    def test_report_before_diagnosis_rejected_with_index(self):
        recs = [LineListRecord((1, 2), (1, 3)), LineListRecord((1, 5), (1, 4))]
        with pytest.raises(ValueError, match="record 1"):
            rollup_linelist(recs, max_lag=2, weeks_per_season=10)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            rollup_linelist([], max_lag=2)

    def test_delay_crosses_season_boundary(self):
        recs = [LineListRecord((1, 10), (2, 2), 3)]
        tri = rollup_linelist(recs, max_lag=3, weeks_per_season=10)
        # the lag-3 cell would be reported after the last record, so it is unobserved
        np.testing.assert_array_equal(tri.counts[0, 9], [0, 0, 3, np.nan])

    def test_as_of_hides_later_reports(self):
        recs = [LineListRecord((1, 1), (1, 1), 2), LineListRecord((1, 1), (1, 3), 5),
                LineListRecord((1, 3), (1, 3), 1)]
        tri = rollup_linelist(recs, max_lag=2, weeks_per_season=10, as_of=(1, 2))
        assert tri.d_max(1, 1) == 1
        assert np.isnan(tri.validation[0, 2])

    def test_delays_beyond_max_lag_count_in_final_only(self):
        recs = [LineListRecord((1, 1), (1, 1), 1), LineListRecord((1, 1), (1, 8), 2)]
        tri = rollup_linelist(recs, max_lag=2, weeks_per_season=10)
        assert tri.count(1, 1, 2) == 1
        assert tri.final(1, 1) == 3

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.tuples(st.integers(1, 10), st.integers(0, 3), st.integers(1, 5)), min_size=1, max_size=40))
    def test_increments_round_trip(self, pairs):
        recs = [LineListRecord((1, w), ((w - 1 + d) // 10 + 1, (w - 1 + d) % 10 + 1), n) for w, d, n in pairs]
        tri = rollup_linelist(recs, max_lag=3, weeks_per_season=10)
        expected = np.zeros((10, 4))
        for w, d, n in pairs:
            expected[w - 1, d] += n
        for w in range(1, 11):
            if tri.d_max(1, w) == 3:
                np.testing.assert_array_equal(increments(tri, 1, w), expected[w - 1])
                assert increments(tri, 1, w).sum() == tri.final(1, w)


class TestTriangleInvariants:
    def test_negative_counts_rejected(self):
        counts = np.ones((1, 2, 2))
        counts[0, 0, 1] = -1
        with pytest.raises(ValueError, match="non-negative"):
            ReportingTriangle((1,), 2, 1, counts, np.ones((1, 2)))

    def test_interior_gap_is_missing_cell(self):
        counts = np.ones((1, 2, 3))
        counts[0, 1, 1] = np.nan
        with pytest.raises(MissingCellError) as info:
            ReportingTriangle((1,), 2, 2, counts, np.ones((1, 2)))
        assert info.value.cells == [(1, 2, 1)]

    def test_integer_mode_rejects_fractions(self):
        with pytest.raises(ValueError, match="non-integer"):
            ReportingTriangle((1,), 1, 0, np.full((1, 1, 1), 1.5), np.full((1, 1), 2.0), "integer")

    def test_arrays_are_read_only(self, flat_triangle):
        with pytest.raises(ValueError):
            flat_triangle.counts[0, 0, 0] = 5

    def test_non_consecutive_seasons_rejected(self):
        with pytest.raises(ValueError):
            ReportingTriangle((1, 3), 1, 0, np.ones((2, 1, 1)), np.ones((2, 1)))

    def test_count_past_max_lag_is_final(self, flat_triangle):
        assert flat_triangle.count(1, 3, 10) == flat_triangle.final(1, 3)


class TestIncrements:
    def test_example(self):
        tri = ReportingTriangle((1,), 1, 3, np.array([[[5, 8, 8, 10]]], float), np.array([[10.0]]))
        np.testing.assert_array_equal(increments(tri, 1, 1), [5, 3, 0, 2])

    def test_over_reporting_gives_negative_increment(self):
        tri = ReportingTriangle((1,), 1, 1, np.array([[[10, 8]]], float), np.array([[8.0]]))
        np.testing.assert_array_equal(increments(tri, 1, 1), [10, -2])


class TestSnapshot:
    def test_lags_within_season(self, flat_triangle):
        snap = snapshot(flat_triangle, (3, 4), tau=3)
        cur = snap.current_season
        assert [e.lag_used for e in cur] == [3, 2, 1, 0]
        assert [e.week for e in cur] == [1, 2, 3, 4]

    def test_threshold_rule(self, flat_triangle):
        snap = snapshot(flat_triangle, (3, 6), tau=3)
        week2 = snap.current_season[1]
        assert week2.lag_used == 4 and week2.finalized
        assert week2.count == flat_triangle.final(3, 2)
        week3 = snap.current_season[2]
        assert week3.lag_used == 3 and not week3.finalized
        assert week3.count == flat_triangle.count(3, 3, 3)

    def test_history_is_prior_seasons(self, flat_triangle):
        snap = snapshot(flat_triangle, (3, 5))
        assert sorted(snap.history) == [1, 2]
        np.testing.assert_array_equal(snap.history[1], flat_triangle.validation[0])

    def test_previous_season_tail_is_provisional(self, flat_triangle):
        snap = snapshot(flat_triangle, (2, 1), tau=3)
        g_last = flat_triangle.global_week(1, 10)
        assert snap.lags[g_last] == 1 and not snap.finalized[g_last]
        assert snap.values[g_last] == flat_triangle.count(1, 10, 1)

    def test_cell_refuses_lookahead(self, flat_triangle):
        snap = snapshot(flat_triangle, (3, 4))
        assert snap.cell(3, 2, 2) == flat_triangle.count(3, 2, 2)
        with pytest.raises(LookaheadError):
            snap.cell(3, 2, 3)

    def test_missing_cell_lists_coordinates(self, seasonal_validation):
        tri = make_triangle(seasonal_validation, [0.5, 1.0])
        counts = np.array(tri.counts)
        counts[2, 3, :] = np.nan
        broken = ReportingTriangle(tri.season_ids, 10, 1, counts, tri.validation)
        with pytest.raises(MissingCellError) as info:
            snapshot(broken, (3, 4), tau=1)
        assert (3, 4, 0) in info.value.cells

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 29), st.integers(0, 3))
    def test_never_reads_future_cells(self, g_star, tau):
        """Perturbing any cell reported after the origin leaves the snapshot unchanged."""
        rng = np.random.default_rng(g_star * 7 + tau)
        val = rng.integers(20, 80, size=(3, 10)).astype(float)
        tri = make_triangle(val, [0.25, 0.5, 0.75, 1.0])
        origin = tri.from_global(g_star)
        snap = snapshot(tri, origin, tau)
        counts = np.array(tri.counts)
        valid = np.array(tri.validation)
        g = np.arange(30)[:, None] + np.arange(4)[None, :]
        future = (g > g_star).reshape(3, 10, 4)
        counts[future] += 1000
        # validation is visible only once lag tau has passed
        valid[(np.arange(30) + tau >= g_star).reshape(3, 10)] += 1000
        altered = ReportingTriangle(tri.season_ids, 10, 3, counts, valid)
        np.testing.assert_array_equal(snapshot(altered, origin, tau).values, snap.values)

    def test_lag0_share_of_bundled_line_list(self):
        tri = dengue_triangle()
        per_season = np.nansum(tri.counts[..., 0], axis=1) / np.nansum(tri.validation, axis=1)
        assert abs(per_season.mean() - 0.05) <= 0.02


class TestCsv:
    def test_triangle_round_trip(self, tmp_path, flat_triangle):
        write_triangle_csv(flat_triangle, tmp_path / "c.csv", tmp_path / "v.csv")
        assert list(pd.read_csv(tmp_path / "c.csv").columns) == ["season", "week", "lag", "count"]
        back = read_triangle_csv(tmp_path / "c.csv", tmp_path / "v.csv")
        np.testing.assert_allclose(back.counts, flat_triangle.counts, rtol=1e-14)
        np.testing.assert_allclose(back.validation, flat_triangle.validation, rtol=1e-14)
        assert back.season_ids == flat_triangle.season_ids

    def test_triangle_csv_missing_column(self, tmp_path):
        pd.DataFrame({"season": [1], "week": [1], "count": [1]}).to_csv(tmp_path / "c.csv", index=False)
        pd.DataFrame({"season": [1], "week": [1], "validation": [1]}).to_csv(tmp_path / "v.csv", index=False)
        with pytest.raises(ValueError, match="lag"):
            read_triangle_csv(tmp_path / "c.csv", tmp_path / "v.csv")

    def test_linelist_round_trip(self, tmp_path):
        recs = [LineListRecord((1990, 3), (1990, 5), 4), LineListRecord((1990, 52), (1991, 1), 1)]
        write_linelist_csv(recs, tmp_path / "ll.csv")
        header = (tmp_path / "ll.csv").read_text().splitlines()[0]
        assert header == "diagnosis_season,diagnosis_week,report_season,report_week,count"
        assert read_linelist_csv(tmp_path / "ll.csv") == recs

    def test_nobbs_dates(self, tmp_path):
        pd.DataFrame({"onset_week": ["1990-01-01", "1990-01-01", "1990-01-08"],
                      "report_week": ["1990-01-01", "1990-01-15", "1990-01-08"]}).to_csv(tmp_path / "n.csv")
        recs = read_nobbs_csv(tmp_path / "n.csv")
        tri = rollup_linelist(recs, max_lag=2)
        np.testing.assert_array_equal(tri.counts[0, 0], [1, 1, 2])
        assert tri.final(1990, 2) == 1
