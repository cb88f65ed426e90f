from __future__ import annotations

import pandas as pd
import pytest

from reportdelay.cli import EXIT_FAILED_CELLS, EXIT_OK, EXIT_USAGE, main
from reportdelay.triangle import read_triangle_csv

FAST = ["--p", "1", "--q", "0", "--draws", "100", "--M", "2"]


@pytest.fixture
def tiny_triangle(tmp_path):
    """Triangle CSVs from the bundled line list, limited to four seasons."""
    main(["ingest", "--out-counts", str(tmp_path / "c.csv"), "--out-validation", str(tmp_path / "v.csv")])
    c = pd.read_csv(tmp_path / "c.csv")
    v = pd.read_csv(tmp_path / "v.csv")
    keep = sorted(v["season"].unique())[-4:]
    c[c["season"].isin(keep)].to_csv(tmp_path / "c4.csv", index=False)
    v[v["season"].isin(keep)].to_csv(tmp_path / "v4.csv", index=False)
    return tmp_path / "c4.csv", tmp_path / "v4.csv", keep


class TestCli:
    def test_ingest_reports_lag0_share(self, tmp_path, capsys):
        code = main(["ingest", "--out-counts", str(tmp_path / "c.csv"), "--out-validation", str(tmp_path / "v.csv")])
        assert code == EXIT_OK
        assert "share reported at lag 0" in capsys.readouterr().out
        tri = read_triangle_csv(tmp_path / "c.csv", tmp_path / "v.csv")
        assert tri.season_ids[0] == 1990 and tri.season_ids[-1] == 2009

    def test_factors_lag(self, tiny_triangle, tmp_path):
        c, v, keep = tiny_triangle
        out = tmp_path / "f.csv"
        code = main(["factors", "--counts", str(c), "--validation", str(v), "--method", "lag",
                     "--origin", f"{keep[-1]}:10", "--out", str(out)])
        assert code == EXIT_OK
        df = pd.read_csv(out)
        assert {"season", "week", "lag", "pi_hat"} <= set(df.columns)
        assert df["pi_hat"].between(0, 1.5).all()

    def test_run_and_report(self, tiny_triangle, tmp_path):
        c, v, keep = tiny_triangle
        out = tmp_path / "run"
        code = main(["run", "--counts", str(c), "--validation", str(v), "--methods", "uncorrected,rescale:lag",
                     "--origin-weeks", "10,11", "--horizons", "0,1", "--out-dir", str(out), *FAST])
        assert code == EXIT_OK
        assert (out / "metrics.csv").exists() and (out / "summary.csv").exists()
        assert main(["report", "--metrics", str(out / "metrics.csv"), "--out-dir", str(tmp_path / "rep")]) == EXIT_OK
        assert (tmp_path / "rep" / "rankings.csv").exists()

    def test_failed_cells_exit_one_unless_allowed(self, tiny_triangle, tmp_path):
        c, v, _ = tiny_triangle
        args = ["run", "--counts", str(c), "--validation", str(v), "--methods", "uncorrected,rescale:proxy",
                "--origin-weeks", "10", "--horizons", "1", *FAST]
        assert main(args) == EXIT_FAILED_CELLS
        assert main([*args, "--allow-failures"]) == EXIT_OK

    def test_simulate_writes_replicates(self, tmp_path):
        cfg = tmp_path / "s.cfg"
        cfg.write_text("scenario = improve\nreplicates = 2\nseasons = 3\nseed = 4\n")
        assert main(["simulate", "--config", str(cfg), "--out-dir", str(tmp_path / "sim")]) == EXIT_OK
        names = sorted(p.name for p in (tmp_path / "sim").iterdir())
        assert names == ["counts_000.csv", "counts_001.csv", "proxies_000.csv", "proxies_001.csv",
                         "validation_000.csv", "validation_001.csv"]
        prox = pd.read_csv(tmp_path / "sim" / "proxies_000.csv")
        assert [c for c in prox.columns if c.startswith("proxy_")] == ["proxy_0.01", "proxy_1", "proxy_4", "proxy_16"]

    @pytest.mark.parametrize("argv", [
        ["run", "--methods", "rescale:nonsense"],
        ["factors", "--method", "local", "--out", "x.csv"],
        ["run", "--counts", "missing.csv", "--validation", "missing.csv"],
    ])
    def test_usage_errors_exit_two(self, argv, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        assert main(argv) == EXIT_USAGE

    def test_argparse_errors_exit_two(self):
        with pytest.raises(SystemExit) as info:
            main(["run", "--forecaster", "gp"])
        assert info.value.code == EXIT_USAGE
