"""Command-line interface: ``penll {fit,select,simulate,analyze,decompose}``.

Every subcommand writes CSV tables plus a JSON run manifest (inputs,
versions, seeds, timings).  Failures print a JSON error record on stderr and
exit with a nonzero status.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .analysis import AnalysisOptions, analyze
from .core import BandwidthSpec, FitConfig, Grid, PenllError, as_penalty, penalty_to_float
from .dataio import ingest_csv, decompose_surface, load_config, write_json, write_surface
from .estimator import fit
from .selection import KINDS, SearchLattice, format_float, select
from .simulation import ScenarioSpec, run_scenario, summarize, write_records, write_summary

EXIT_USAGE = 2
EXIT_FAILURE = 1

# option defaults; a JSON config file may override them and explicit flags override both
DEFAULTS = {
    "log_response": False,
    "exclude_rows": None,
    "grid": "30",
    "R": "0",
    "h": "0.1",
    "boundary": "renorm",
    "solver": "direct",
    "criterion": "aicc",
    "search_R": "0.01",
    "search_h": None,
    "df": 4.0,
    "seed": 0,
    "reps": 50,
    "truth": "nonadditive",
    "design": "uniform",
    "n": 200,
    "sigma": 5.0,
    "column": "intercept",
}
COMMAND_DEFAULTS = {"analyze": {"grid": "15"}}


class UsageError(Exception):
    pass


def _floats(text, name):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--{name}: expected comma-separated numbers, got {text!r}") from None


def parse_grid(text, d: int) -> Grid:
    sizes = [int(v) for v in _floats(text, "grid")]
    if len(sizes) == 1:
        sizes = sizes * d
    if len(sizes) != d:
        raise UsageError(f"--grid: need 1 or {d} sizes, got {len(sizes)}")
    return Grid(tuple(sizes))


def parse_search_R(text) -> tuple:
    """A single number is the step of the regular R/(1+R) lattice; a comma
    list (a trailing comma marks a one-element list) gives explicit values."""
    text = str(text)
    vals = _floats(text, "search-R")
    if "," not in text and len(vals) == 1:
        return SearchLattice.regular(r_step=vals[0]).r_fracs
    return tuple(vals)


def parse_search_h(text, default=(math.log10(0.05), math.log10(0.5), 0.005)) -> tuple:
    """``LO:HI:STEP`` in log10 units, or a comma list of log10 values."""
    if text is None:
        lo, hi, step = default
    elif ":" in str(text):
        try:
            lo, hi, step = (float(v) for v in str(text).split(":"))
        except ValueError:
            raise UsageError(f"--search-h: expected LO:HI:STEP, got {text!r}") from None
    else:
        return tuple(_floats(text, "search-h"))
    if not step > 0 or hi < lo:
        raise UsageError("--search-h: need LO <= HI and STEP > 0")
    return SearchLattice.regular(h_range=(lo, hi), h_step=step).log10_h


def _solver(name):
    return {"direct": "direct", "iter": "iterative", "iterative": "iterative"}[name]


def _load_data(args):
    if not args.data or not args.response or not args.predictors:
        raise UsageError("--data, --response and --predictors are required")
    excl = [int(v) for v in _floats(args.exclude_rows, "exclude-rows")] if args.exclude_rows else None
    preds = [p for p in str(args.predictors).split(",") if p.strip()]
    return ingest_csv(args.data, args.response, preds, log_response=bool(args.log_response),
                      exclude_rows=excl)


def _penalty_json(R):
    v = penalty_to_float(R)
    return "inf" if math.isinf(v) else v


def _manifest(args, started, outputs, **extra):
    inputs = {k: v for k, v in vars(args).items() if k not in ("func",)}
    return {
        "command": args.command,
        "inputs": inputs,
        "versions": {"penll": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "seed": getattr(args, "seed", None),
        "timings": {"seconds": round(time.perf_counter() - started, 6)},
        "outputs": [str(p) for p in outputs],
        **extra,
    }


def _out_paths(args, default_stem):
    out = Path(args.out or f"{default_stem}.csv")
    manifest = Path(args.manifest) if args.manifest else out.with_suffix(".manifest.json")
    return out, manifest


def cmd_fit(args, started):
    data, scaling, report = _load_data(args)
    grid = parse_grid(args.grid, data.d)
    h = _floats(args.h, "h")
    bw = BandwidthSpec(tuple(h * data.d if len(h) == 1 else h), boundary=args.boundary)
    cfg = FitConfig(as_penalty(args.R), bw, solver=_solver(args.solver))
    res = fit(data, grid, cfg)
    out, man = _out_paths(args, "surface")
    write_surface(res, out, scaling)
    write_json(_manifest(args, started, [out], scaling=scaling.to_dict(), ingest=vars(report),
                         residual=res.residual, iterations=res.iterations,
                         R=_penalty_json(res.R)), man)
    return {"surface": str(out), "manifest": str(man)}


def cmd_select(args, started):
    data, scaling, report = _load_data(args)
    grid = parse_grid(args.grid, data.d)
    lattice = SearchLattice(parse_search_R(args.search_R), parse_search_h(args.search_h),
                            boundary=args.boundary)
    surf, (R, bw) = select(data, grid, lattice, kind=args.criterion,
                           cfg=FitConfig(0.0, BandwidthSpec.isotropic(1.0, data.d),
                                         solver=_solver(args.solver)))
    out, man = _out_paths(args, "selection")
    surf.to_csv(out, args.criterion)
    chosen = {"R": _penalty_json(R), "h": list(bw.h_per_axis), "criterion": args.criterion}
    write_json(_manifest(args, started, [out], scaling=scaling.to_dict(), ingest=vars(report),
                         selected=chosen), man)
    return {"selected": chosen, "surface": str(out), "manifest": str(man)}


def cmd_simulate(args, started):
    grid = parse_grid(args.grid, 2)
    lattice = SearchLattice(parse_search_R(args.search_R), parse_search_h(args.search_h),
                            boundary=args.boundary)
    spec = ScenarioSpec(truth=args.truth, design=args.design, n=int(args.n), sigma=float(args.sigma),
                        grid=grid, lattice=lattice, seed=int(args.seed),
                        replications=int(args.reps), criterion=args.criterion)
    records = run_scenario(spec)
    out, man = _out_paths(args, "records")
    summary_path = out.with_name(out.stem + "_summary.csv")
    write_records(records, out)
    outputs = [out]
    failures = sum(1 for r in records if r["error"])
    if failures < len(records):
        write_summary(summarize(records), summary_path)
        outputs.append(summary_path)
    write_json(_manifest(args, started, outputs, failures=failures), man)
    return {"records": str(out), "failures": failures, "manifest": str(man)}


def cmd_analyze(args, started):
    data, scaling, ingest = _load_data(args)
    grid_sizes = [int(v) for v in _floats(args.grid, "grid")]
    opts = AnalysisOptions(
        df=float(args.df), grid_size=grid_sizes[0], r_fracs=parse_search_R(args.search_R),
        log10_c=parse_search_h(args.search_h, default=(-0.5, 0.5, 0.025)),
        criterion=args.criterion, boundary=args.boundary)
    report = analyze(data, opts, names=list(scaling.predictors))
    out, man = _out_paths(args, "analysis")
    out = out.with_suffix(".json")
    fits_csv = out.with_name(out.stem + "_fits.csv")
    anova_csv = out.with_name(out.stem + "_anova.csv")
    report["scaling"] = scaling.to_dict()
    report["ingest"] = vars(ingest)
    clean = json.loads(json.dumps(report, default=str).replace("Infinity", '"inf"'))
    write_json(clean, out)
    with open(fits_csv, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "R", "c", "trace", "rss", "adj_r2"])
        for name, f in report["fits"].items():
            w.writerow([name] + [format_float(f[k]) for k in ("R", "c", "trace", "rss", "adj_r2")])
    with open(anova_csv, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "term", "mean_square"])
        for name, rows in report["anova"].items():
            for r in rows:
                w.writerow([name, r["term"], format_float(r["mean_square"])])
    write_json(_manifest(args, started, [out, fits_csv, anova_csv]), man)
    return {"report": str(out), "selected": clean["selected"],
            "adj_r2": {k: v["adj_r2"] for k, v in report["fits"].items()}}


def cmd_decompose(args, started):
    if not args.surface:
        raise UsageError("--surface is required")
    dec = decompose_surface(args.surface, args.column)
    rows = dec.table()
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["term", "mean_square"])
            for label, v in rows:
                w.writerow([label, format_float(v)])
    return {"anova": {label: float(v) for label, v in rows}}


COMMANDS = {"fit": cmd_fit, "select": cmd_select, "simulate": cmd_simulate,
            "analyze": cmd_analyze, "decompose": cmd_decompose}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="penll", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"penll {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True):
        sp.add_argument("--config", help="JSON file with option defaults")
        sp.add_argument("--out", help="main output file")
        sp.add_argument("--manifest", help="JSON run manifest (default: next to --out)")
        if data:
            sp.add_argument("--data", help="input CSV with a header row")
            sp.add_argument("--response", help="response column")
            sp.add_argument("--predictors", help="comma-separated predictor columns")
            sp.add_argument("--log-response", action="store_true", default=None)
            sp.add_argument("--exclude-rows", help="comma-separated 1-based data rows to drop")
        sp.add_argument("--grid", help="grid points per axis: N or N1,N2,...")
        sp.add_argument("--boundary", choices=("renorm", "inflate"))
        sp.add_argument("--solver", choices=("direct", "iter"))

    def search(sp):
        sp.add_argument("--search-R", help="R/(1+R) step, or comma list of R/(1+R) values")
        sp.add_argument("--search-h", help="log10 h as LO:HI:STEP or comma list")
        sp.add_argument("--criterion", choices=KINDS)

    sp = sub.add_parser("fit", help="fit one (R, h) and write the grid surface")
    common(sp)
    sp.add_argument("--R", help="penalty; 'inf' for the additive fit")
    sp.add_argument("--h", help="bandwidth, or comma list per axis")

    sp = sub.add_parser("select", help="choose (R, h) by a selection criterion")
    common(sp)
    search(sp)

    sp = sub.add_parser("simulate", help="Monte Carlo comparison of optimal and selected fits")
    common(sp, data=False)
    search(sp)
    sp.add_argument("--truth", choices=("nonadditive", "additive"))
    sp.add_argument("--design", choices=("uniform", "f1", "f2"))
    sp.add_argument("--n", type=int)
    sp.add_argument("--sigma", type=float)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--reps", type=int)

    sp = sub.add_parser("analyze", help="df-calibrated (R, c) search, adjusted R^2 and ANOVA")
    common(sp)
    search(sp)
    sp.add_argument("--df", type=float, help="univariate degrees of freedom per predictor")

    sp = sub.add_parser("decompose", help="ANOVA mean squares of a surface CSV")
    sp.add_argument("--config", help="JSON file with option defaults")
    sp.add_argument("--surface", help="surface CSV written by 'fit'")
    sp.add_argument("--column", help="value column (default intercept)")
    sp.add_argument("--out", help="CSV output (default: JSON on stdout only)")
    return p


def _resolve(args):
    cfg = load_config(args.config) if getattr(args, "config", None) else {}
    defaults = {**DEFAULTS, **COMMAND_DEFAULTS.get(args.command, {})}
    for key, value in vars(args).items():
        if value is None:
            alt = cfg.get(key, cfg.get(key.replace("_", "-"), defaults.get(key)))
            setattr(args, key, alt)
    return args


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    started = time.perf_counter()
    try:
        args = _resolve(args)
        result = COMMANDS[args.command](args, started)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(json.dumps({"error": "UsageError", "message": str(exc)}), file=sys.stderr)
        return EXIT_USAGE
    except (PenllError, ValueError, OSError, KeyError, np.linalg.LinAlgError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc),
                          "command": args.command}), file=sys.stderr)
        return EXIT_FAILURE
    print(json.dumps(result, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
