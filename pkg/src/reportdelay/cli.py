"""Command-line interface: ``reportdelay <subcommand>``.

Exit status is 0 when every requested cell succeeded (or failures were
allowed with ``--allow-failures``), 1 when some cells failed, and 2 for
usage or input errors.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .data import DENGUE_MAX_LAG, dengue_triangle, load_dengue_linelist, reference_validation
from .factors import estimate_lag, estimate_local, estimate_model, fixed_factors, grid_cells
from .pipeline import DEFAULT_ROSTER, PipelineConfig, rankings, run_rolling, run_sensitivity, run_simulation, summarize
from .simulate import ScenarioConfig, build_theta, simulate_replicate
from .triangle import read_linelist_csv, read_nobbs_csv, read_triangle_csv, rollup_linelist, snapshot, write_triangle_csv

EXIT_OK, EXIT_FAILED_CELLS, EXIT_USAGE = 0, 1, 2


def _ints(text: str) -> tuple[int, ...]:
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return tuple(out)


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x.strip())


def _origin(text: str) -> tuple[int, int]:
    s, _, w = text.partition(":")
    return int(s), int(w)


def _load_triangle(args):
    if getattr(args, "counts", None):
        if not args.validation:
            raise ValueError("--counts needs --validation")
        return read_triangle_csv(args.counts, args.validation)
    return dengue_triangle()


# -- subcommands ---------------------------------------------------------------------------

def cmd_ingest(args) -> int:
    if args.linelist is None:
        records = load_dengue_linelist()
    elif args.format == "nobbs":
        records = read_nobbs_csv(args.linelist, args.weeks)
    else:
        records = read_linelist_csv(args.linelist)
    tri = rollup_linelist(records, args.max_lag, args.weeks, _origin(args.as_of) if args.as_of else None)
    write_triangle_csv(tri, args.out_counts, args.out_validation)
    total = np.nansum(tri.validation)
    lag0 = np.nansum(tri.counts[..., 0]) / total if total else float("nan")
    print(f"{len(tri.season_ids)} seasons x {tri.weeks_per_season} weeks, {total:.0f} cases; "
          f"share reported at lag 0: {lag0:.3f}")
    return EXIT_OK


def cmd_fetch(args) -> int:
    from .epidata import FetchSpec, epiweek_range, fetch_epidata
    spec = FetchSpec(args.region, epiweek_range(args.start, args.stop), _ints(args.lags),
                     _ints(args.issues) if args.issues else (), args.mode, args.field,
                     args.season_start_week)
    res = fetch_epidata(spec)
    res.counts.to_csv(args.out_counts, index=False)
    res.validation.to_csv(args.out_validation, index=False)
    print(f"{len(res.counts)} rows, {res.network_calls} network calls")
    for err in res.errors:
        print(f"error: {err}", file=sys.stderr)
    if res.partial:
        print("partial triangle: some requests failed", file=sys.stderr)
        return EXIT_OK if args.allow_failures else EXIT_FAILED_CELLS
    return EXIT_OK


def _scenario(args) -> ScenarioConfig:
    scn = ScenarioConfig.from_file(args.config) if args.config else ScenarioConfig()
    overrides = {k: getattr(args, k) for k in ("scenario", "a", "replicates", "seed", "r")
                 if getattr(args, k, None) is not None}
    return dataclasses.replace(scn, **overrides) if overrides else scn


def cmd_simulate(args) -> int:
    scn = _scenario(args)
    seasons, ref = reference_validation()
    if args.reference:
        ref_tri = read_triangle_csv(*args.reference)
        seasons, ref = ref_tri.season_ids, np.asarray(ref_tri.validation)
    theta = build_theta(ref)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for r in range(scn.replicates):
        rep = simulate_replicate(scn, theta, r, scn.first_season or seasons[0])
        write_triangle_csv(rep.triangle, out / f"counts_{r:03d}.csv", out / f"validation_{r:03d}.csv")
        tri = rep.triangle
        frame = pd.DataFrame({"season": np.repeat(tri.season_ids, tri.weeks_per_season),
                              "week": np.tile(np.arange(1, tri.weeks_per_season + 1), tri.n_seasons)})
        for s2, p in rep.proxies.items():
            frame[f"proxy_{s2:g}"] = p.reshape(-1)
        frame.to_csv(out / f"proxies_{r:03d}.csv", index=False)
    print(f"wrote {scn.replicates} replicates to {out}")
    return EXIT_OK


def cmd_factors(args) -> int:
    tri = _load_triangle(args)
    tau = tri.max_lag if args.tau is None else args.tau
    origin = _origin(args.origin) if args.origin else None
    if args.method == "lag":
        table = estimate_lag(tri, tau, args.lookback, origin=origin)
    elif args.method == "model":
        table = estimate_model(tri, tau, family=args.family, origin=origin)
    elif args.method == "local":
        if origin is None:
            raise ValueError("local factors need --origin")
        table = estimate_local(snapshot(tri, origin, tau), args.K or tau, tau)
    else:
        table = fixed_factors(_floats(args.profile), tau)
    seasons = [origin[0]] if origin else list(tri.season_ids)
    table.to_csv(args.out, grid_cells(seasons, tri.weeks_per_season, tau))
    print(f"wrote {args.method} factors to {args.out}")
    return EXIT_OK


def _pipeline_config(args, roster=None) -> PipelineConfig:
    return PipelineConfig(
        roster=tuple(roster or (args.methods.split(",") if args.methods else DEFAULT_ROSTER)),
        forecaster=args.forecaster, p=args.p, q=args.q, c=args.c, horizons=_ints(args.horizons),
        M=args.M, n_draws=args.draws, seed=0 if args.seed is None else args.seed, tau=args.tau, K=args.K,
        proxy_omega=args.proxy_omega, proxy_weight_kind=args.proxy_weights,
        fixed_profile=_floats(args.profile) if args.profile else None,
        max_history=args.max_history,
        eval_seasons=_ints(args.eval_seasons) if args.eval_seasons else None,
        origin_weeks=_ints(args.origin_weeks) if args.origin_weeks else None,
        workers=args.workers, out_dir=args.out_dir, allow_failures=args.allow_failures,
    )


def _finish(result, cfg) -> int:
    print(summarize(result.metrics).to_string(index=False))
    n_fail = len(result.failures)
    if n_fail:
        print(f"{n_fail} failed cells (see failures.csv)", file=sys.stderr)
        return EXIT_OK if cfg.allow_failures else EXIT_FAILED_CELLS
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _pipeline_config(args)
    if args.simulate:
        result = run_simulation(_scenario(args), cfg)
    else:
        proxies = None
        if args.proxy:
            frame = pd.read_csv(args.proxy)
            proxies = {float(c.split("_", 1)[1]): frame[c].to_numpy(float)
                       for c in frame.columns if c.startswith("proxy_")}
        result = run_rolling(_load_triangle(args), cfg, proxies)
    return _finish(result, cfg)


def cmd_sensitivity(args) -> int:
    cfg = _pipeline_config(args, roster=("uncorrected",))
    table = run_sensitivity(_scenario(args), cfg, _floats(args.true_a), _floats(args.assumed_a),
                            eval_seasons=_ints(args.eval_seasons) if args.eval_seasons else None,
                            correction=args.correction)
    print(table.pivot(index="true_a", columns="assumed_a", values="coverage95").round(3).to_string())
    failed = int(table["failures"].sum())
    if failed and not args.allow_failures:
        return EXIT_FAILED_CELLS
    return EXIT_OK


def cmd_report(args) -> int:
    metrics = pd.read_csv(args.metrics)
    out = Path(args.out_dir or Path(args.metrics).parent)
    out.mkdir(parents=True, exist_ok=True)
    summary = summarize(metrics)
    ranks = rankings(metrics)
    summary.to_csv(out / "summary.csv", index=False)
    ranks.to_csv(out / "rankings.csv", index=False)
    print(summary.to_string(index=False))
    print()
    print(ranks[ranks["metric"] == "wis"].to_string(index=False))
    return EXIT_OK


# -- parser -------------------------------------------------------------------------

def _add_pipeline_flags(p):
    p.add_argument("--methods", help="comma-separated roster, e.g. uncorrected,rescale:lag,impute:local,exclude:2")
    p.add_argument("--forecaster", choices=("arma", "nb"), default="arma")
    p.add_argument("--p", type=int, default=2)
    p.add_argument("--q", type=int, default=2)
    p.add_argument("--c", type=float, default=1.0, help="continuity constant in log(y + c)")
    p.add_argument("--horizons", default="0,1,4")
    p.add_argument("--M", type=int, default=10, help="number of imputations")
    p.add_argument("--draws", type=int, default=2500)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--tau", type=int, default=None)
    p.add_argument("--K", type=int, default=None, help="local window (default tau)")
    p.add_argument("--proxy-omega", type=float, default=0.75)
    p.add_argument("--proxy-weights", choices=("squared", "linear"), default="squared")
    p.add_argument("--profile", help="fixed profile pi(0..tau), comma-separated")
    p.add_argument("--max-history", type=int, default=None)
    p.add_argument("--eval-seasons")
    p.add_argument("--origin-weeks")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out-dir")
    p.add_argument("--allow-failures", action="store_true")


def _add_scenario_flags(p):
    p.add_argument("--config", help="flat key = value scenario file")
    p.add_argument("--scenario", choices=("constant", "vary_by_week", "improve", "worsen", "all_combinations"))
    p.add_argument("--a", type=float)
    p.add_argument("--r", type=float)
    p.add_argument("--replicates", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="reportdelay", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="roll a line list up into triangle CSVs")
    p.add_argument("--linelist", help="line list CSV (default: bundled synthetic dengue data)")
    p.add_argument("--format", choices=("csv", "nobbs"), default="csv")
    p.add_argument("--max-lag", type=int, default=DENGUE_MAX_LAG)
    p.add_argument("--weeks", type=int, default=52)
    p.add_argument("--as-of", help="SEASON:WEEK; reports after it are dropped")
    p.add_argument("--out-counts", required=True)
    p.add_argument("--out-validation", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("fetch", help="fetch lag-indexed ILI reports from the Delphi epidata API")
    p.add_argument("--region", default="nat")
    p.add_argument("--start", type=int, required=True, help="first epiweek YYYYWW")
    p.add_argument("--stop", type=int, required=True, help="last epiweek YYYYWW")
    p.add_argument("--lags", default="0-6")
    p.add_argument("--issues")
    p.add_argument("--mode", choices=("lag", "issue"), default="lag")
    p.add_argument("--field", default="num_ili")
    p.add_argument("--season-start-week", type=int, default=40)
    p.add_argument("--out-counts", required=True)
    p.add_argument("--out-validation", required=True)
    p.add_argument("--allow-failures", action="store_true")
    p.set_defaults(func=cmd_fetch)

    p = sub.add_parser("simulate", help="write simulated triangles and proxies")
    _add_scenario_flags(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--reference", nargs=2, metavar=("COUNTS", "VALIDATION"),
                   help="triangle CSVs whose final counts seed the simulation")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("factors", help="estimate inverse reporting factors")
    p.add_argument("--counts")
    p.add_argument("--validation")
    p.add_argument("--method", choices=("lag", "model", "local", "fixed"), default="lag")
    p.add_argument("--tau", type=int)
    p.add_argument("--origin", help="SEASON:WEEK")
    p.add_argument("--lookback", type=int, default=2)
    p.add_argument("--family", choices=("poisson", "negbin"), default="poisson")
    p.add_argument("--K", type=int)
    p.add_argument("--profile", help="profile for --method fixed")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_factors)

    p = sub.add_parser("run", help="rolling-origin evaluation on data or simulations")
    p.add_argument("--counts")
    p.add_argument("--validation")
    p.add_argument("--proxy", help="CSV with proxy_<label> columns aligned to the triangle weeks")
    p.add_argument("--simulate", action="store_true", help="run on simulated replicates")
    _add_scenario_flags(p)
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sensitivity", help="coverage over true x assumed reporting profiles")
    _add_scenario_flags(p)
    _add_pipeline_flags(p)
    p.add_argument("--true-a", default="0.1,0.5,1.0")
    p.add_argument("--assumed-a", default="0.05,0.1,0.2,0.35,0.5,0.65,0.8,1.0")
    p.add_argument("--correction", choices=("rescale", "offset", "impute"), default="rescale")
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser("report", help="aggregate a metrics CSV into summary and ranking tables")
    p.add_argument("--metrics", required=True)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
