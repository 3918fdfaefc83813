import csv
import json
import math

import numpy as np
import pytest

from penll.additive import anova_decompose
from penll.analysis import (
    AnalysisOptions,
    adjusted_r2,
    analyze,
    calibrate_bandwidth_by_df,
    univariate_df,
    univariate_hat,
)
from penll.cli import main, parse_search_R, parse_search_h
from penll.core import BandwidthSpec, CalibrationError, Dataset, FitConfig, Grid
from penll.dataio import IngestError, decompose_surface, ingest_csv, read_surface, write_surface
from penll.estimator import fit
from penll.simulation import truth_additive

from conftest import scalar_kernel_weight


def _write(path, text):
    path.write_text(text)
    return path


# ---------------------------------------------------------------- ingestion

def test_ingest_scales_to_unit_interval(tmp_path):
    p = _write(tmp_path / "toy.csv", "y,a\n1,2\n2,4\n3,6\n")
    ds, rec, rep = ingest_csv(p, "y", ["a"])
    assert ds.X[:, 0].tolist() == [0.0, 0.5, 1.0]
    assert rec.minima == (2.0,) and rec.maxima == (6.0,)
    assert rep.rows_used == 3 and rep.rows_dropped_missing == 0


def test_ingest_row_exclusion(tmp_path):
    p = _write(tmp_path / "toy.csv", "y,a\n1,2\n2,4\n3,6\n")
    ds, rec, rep = ingest_csv(p, "y", ["a"], exclude_rows=[2])
    assert ds.n == 2 and rep.rows_excluded == 1
    assert ds.Y.tolist() == [1.0, 3.0]


def test_ingest_drops_missing_and_reports(tmp_path):
    rows = ["y,a,b,unused"] + [f"{i},{i * 2},{i % 3},x" for i in range(1, 11)]
    rows[4] = "4,,1,x"
    p = _write(tmp_path / "oz.csv", "\n".join(rows) + "\n")
    ds, rec, rep = ingest_csv(p, "y", ["a", "b"], log_response=True)
    assert ds.n == 9 and rep.rows_dropped_missing == 1
    assert np.allclose(np.exp(ds.Y), [1, 2, 3, 5, 6, 7, 8, 9, 10])
    assert np.allclose(rec.response_inverse(ds.Y), [1, 2, 3, 5, 6, 7, 8, 9, 10])


@pytest.mark.parametrize("text, kw", [
    ("y,a\n1,2\n", {"predictors": ["b"]}),
    ("", {}),
    ("y,a\n", {}),
    ("y,a\n1,3\n2,3\n", {}),
    ("y,a\n-1,2\n2,3\n", {"log_response": True}),
    ("y,a\n1,abc\n2,3\n", {}),
])
def test_ingest_errors(tmp_path, text, kw):
    p = _write(tmp_path / "bad.csv", text)
    kw = {"predictors": ["a"], **kw}
    with pytest.raises(IngestError):
        ingest_csv(p, "y", **kw)


def test_scaling_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    raw = rng.normal(size=(50, 3)) * [1, 100, 1e-3] + [5, -20, 0.1]
    y = rng.normal(size=50)
    path = tmp_path / "r.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["y", "p", "q", "r"])
        for yy, row in zip(y, raw):
            w.writerow([repr(float(yy))] + [repr(float(v)) for v in row])
    ds, rec, _ = ingest_csv(path, "y", ["p", "q", "r"])
    assert np.abs(rec.unscale(ds.X) - raw).max() <= 1e-12 * np.abs(raw).max()
    assert ds.X.min() == 0.0 and ds.X.max() == 1.0


# ---------------------------------------------------------------- calibration

def _dense_univariate_hat(x, h):
    """Weighted least squares at each design point, weights by scalar loops."""
    n = len(x)
    M = np.zeros((n, n))
    for i in range(n):
        w = np.array([scalar_kernel_weight([x[j]], [x[i]], [h]) for j in range(n)])
        D = np.column_stack([np.ones(n), x - x[i]])
        G = D.T @ (w[:, None] * D)
        M[i] = np.linalg.solve(G, D.T * w)[0]
    return M


def test_calibration_against_dense_hat_oracle():
    x = np.linspace(0, 1, 100)
    h = calibrate_bandwidth_by_df(x, 4.0)
    M = _dense_univariate_hat(x, h)
    assert abs(np.trace(M) - 4.0) <= 0.05
    assert np.allclose(univariate_hat(x, h), M, atol=1e-6)
    assert np.allclose(M.sum(axis=1), 1.0)


def test_calibration_monotone_in_df():
    x = np.random.default_rng(1).uniform(size=80)
    h2 = calibrate_bandwidth_by_df(x, 2.5)
    h4 = calibrate_bandwidth_by_df(x, 4.0)
    assert h2 > h4
    assert univariate_df(x, h4) == pytest.approx(4.0, abs=1e-2)


def test_calibration_interpolation_limit_is_flagged():
    x = np.linspace(0, 1, 20)
    with pytest.warns(UserWarning, match="interpolation"):
        h = calibrate_bandwidth_by_df(x, 20.0)
    assert h == pytest.approx(0.5 / 19)
    assert univariate_df(x, h) == pytest.approx(20.0)


@pytest.mark.parametrize("df", [1.0, 0.5, 20.5, 25.0])
def test_calibration_rejects_df_outside_range(df):
    with pytest.raises(CalibrationError):
        calibrate_bandwidth_by_df(np.linspace(0, 1, 20), df)


def test_calibration_unreachable_df():
    # the trace never falls below 2 (a global line), so df = 1.5 exhausts the bracket
    with pytest.raises(CalibrationError):
        calibrate_bandwidth_by_df(np.linspace(0, 1, 20), 1.5, h_max=50.0)


# ---------------------------------------------------------------- analysis

def test_adjusted_r2_formula():
    assert adjusted_r2(10.0, 100.0, 51, 6.0) == pytest.approx(1 - (10 / 45) / (100 / 50))
    assert math.isnan(adjusted_r2(1.0, 2.0, 10, 10.0))


_SMALL = dict(grid_size=8, r_fracs=(0.2, 0.5, 0.8, 0.9999), log10_c=(-0.3, -0.15, 0.0, 0.15))


def test_analyze_noiseless_additive_response():
    rng = np.random.default_rng(3)
    X = rng.uniform(size=(150, 2))
    Y = np.exp(X[:, 0]) + np.sin(2 * X[:, 1])
    rep = analyze(Dataset(X, Y), AnalysisOptions(**_SMALL))
    fits = rep["fits"]
    assert fits["additive"]["adj_r2"] > 0.99 and fits["penalized"]["adj_r2"] > 0.99
    assert fits["penalized"]["adj_r2"] >= fits["additive"]["adj_r2"] - 0.01
    assert [r["term"] for r in rep["anova"]["penalized"]] == ["r_0", "r_1", "r_2", "r_12"]


def test_analyze_pure_noise():
    rng = np.random.default_rng(4)
    X = rng.uniform(size=(200, 2))
    rep = analyze(Dataset(X, rng.standard_normal(200)), AnalysisOptions(**_SMALL))
    for f in rep["fits"].values():
        assert abs(f["adj_r2"]) < 0.1


# ---------------------------------------------------------------- surfaces

def test_surface_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    ds = Dataset(rng.uniform(size=(60, 2)), rng.normal(size=60))
    g = Grid((6, 5))
    res = fit(ds, g, FitConfig(0.4, BandwidthSpec((0.4, 0.4))))
    path = tmp_path / "s.csv"
    write_surface(res, path)
    grid, vals = read_surface(path)
    assert grid == g and np.array_equal(vals, res.intercept)
    got = decompose_surface(path).mean_squares
    ref = anova_decompose(res.intercept, g).mean_squares
    for u in ref:
        assert got[u] == pytest.approx(ref[u], rel=1e-9, abs=1e-15)


def test_read_surface_rejects_shuffled_rows(tmp_path):
    g = Grid((3, 3))
    path = tmp_path / "s.csv"
    rows = np.column_stack([g.coords(), np.arange(9.0)])[::-1]
    np.savetxt(path, rows, delimiter=",", header="x1,x2,intercept", comments="")
    with pytest.raises(IngestError):
        read_surface(path)


# ---------------------------------------------------------------- command line

@pytest.fixture
def toy_csv(tmp_path):
    rng = np.random.default_rng(0)
    X = rng.uniform(size=(120, 2)) * [4, 10] + [2, 0]
    y = np.sin(X[:, 0]) + 0.1 * X[:, 1] + 0.1 * rng.standard_normal(120)
    path = tmp_path / "toy.csv"
    np.savetxt(path, np.column_stack([y, X]), delimiter=",", header="y,a,b", comments="")
    return path


def _run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_cli_fit_writes_documented_columns(tmp_path, toy_csv, capsys):
    out = tmp_path / "s.csv"
    code, stdout, _ = _run(["fit", "--data", toy_csv, "--response", "y", "--predictors", "a,b",
                            "--R", "0.5", "--h", "0.3", "--grid", "7", "--out", out], capsys)
    assert code == 0
    header = out.read_text().splitlines()[0]
    assert header == "x1,x2,intercept,slope1,slope2,additive_intercept,nonadditive_intercept"
    man = json.loads((tmp_path / "s.manifest.json").read_text())
    assert man["command"] == "fit" and man["scaling"]["minima"][0] >= 2.0
    assert {"numpy", "scipy", "penll"} <= set(man["versions"])
    grid, vals = read_surface(out)
    assert grid.shape == (7, 7) and len(vals) == 49


def test_cli_fit_R0_vs_tiny_R(tmp_path, toy_csv, capsys):
    surfaces = []
    for R in ("0", "1e-8"):
        out = tmp_path / f"s{R}.csv"
        code, _, _ = _run(["fit", "--data", toy_csv, "--response", "y", "--predictors", "a,b",
                           "--R", R, "--h", "0.35", "--grid", "6", "--out", out], capsys)
        assert code == 0
        surfaces.append(read_surface(out)[1])
    assert np.abs(surfaces[0] - surfaces[1]).max() <= 1e-5


def test_cli_fit_then_decompose_round_trip(tmp_path, toy_csv, capsys):
    out = tmp_path / "s.csv"
    _run(["fit", "--data", toy_csv, "--response", "y", "--predictors", "a,b", "--R", "inf",
          "--h", "0.3", "--grid", "6", "--solver", "direct", "--out", out], capsys)
    code, stdout, _ = _run(["decompose", "--surface", out, "--out", tmp_path / "a.csv"], capsys)
    assert code == 0
    ms = json.loads(stdout)["anova"]
    assert ms["r_12"] <= 1e-20 * max(1.0, ms["r_1"])
    assert (tmp_path / "a.csv").read_text().splitlines()[0] == "term,mean_square"


def test_cli_decompose_additive_truth(tmp_path, capsys):
    g = Grid((20, 20))
    path = tmp_path / "t.csv"
    np.savetxt(path, np.column_stack([g.coords(), truth_additive(g.coords())]), delimiter=",",
               header="x1,x2,intercept", comments="", fmt="%.17g")
    code, stdout, _ = _run(["decompose", "--surface", path], capsys)
    assert code == 0 and abs(json.loads(stdout)["anova"]["r_12"]) <= 1e-12


def test_cli_select_and_config_file(tmp_path, toy_csv, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"response": "y", "predictors": "a,b", "grid": "6",
                               "search_R": "0.25", "search_h": "-0.7:-0.3:0.2"}))
    out = tmp_path / "sel.csv"
    code, stdout, _ = _run(["select", "--config", cfg, "--data", toy_csv, "--criterion", "gcv",
                            "--out", out], capsys)
    assert code == 0
    sel = json.loads(stdout)["selected"]
    assert sel["criterion"] == "gcv"
    rows = list(csv.reader(open(out)))
    assert rows[0] == ["R", "h", "criterion", "sigma2", "trace"]
    assert len(rows) == 1 + 5 * 3


def test_cli_simulate_is_deterministic(tmp_path, capsys):
    outs = []
    for k in range(2):
        out = tmp_path / f"rec{k}.csv"
        code, _, _ = _run(["simulate", "--grid", "8", "--reps", "1", "--n", "60", "--seed", "7",
                           "--search-R", "0.5", "--search-h=-0.7,-0.5", "--out", out], capsys)
        assert code == 0
        outs.append(out)
    assert outs[0].read_bytes() == outs[1].read_bytes()
    assert (tmp_path / "rec0_summary.csv").read_bytes() == (tmp_path / "rec1_summary.csv").read_bytes()
    assert outs[0].read_text().splitlines()[0].startswith("rep,ise_opt,R_opt,h_opt")


def test_cli_analyze(tmp_path, toy_csv, capsys):
    code, stdout, _ = _run(["analyze", "--data", toy_csv, "--response", "y", "--predictors", "a,b",
                            "--grid", "6", "--search-R", "0.3,0.6,", "--search-h=-0.2:0.2:0.2",
                            "--out", tmp_path / "an"], capsys)
    assert code == 0
    report = json.loads((tmp_path / "an.json").read_text())
    assert report["fits"]["additive"]["R"] == "inf"
    assert set(json.loads(stdout)["adj_r2"]) == {"local_linear", "penalized", "additive"}
    assert (tmp_path / "an_fits.csv").read_text().splitlines()[0] == "model,R,c,trace,rss,adj_r2"
    assert (tmp_path / "an_anova.csv").read_text().splitlines()[0] == "model,term,mean_square"


def test_cli_error_record(tmp_path, capsys):
    code, _, err = _run(["fit", "--data", tmp_path / "missing.csv", "--response", "y",
                         "--predictors", "a"], capsys)
    assert code != 0
    rec = json.loads(err.strip().splitlines()[-1])
    assert rec["error"] == "FileNotFoundError" and rec["command"] == "fit"
    code, _, err = _run(["fit", "--response", "y"], capsys)
    assert code != 0 and json.loads(err.strip().splitlines()[-1])["error"] == "UsageError"


def test_cli_usage_errors_exit_nonzero(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code != 0
    with pytest.raises(SystemExit) as exc:
        main(["fit", "--criterion", "aic"])
    assert exc.value.code != 0


def test_search_parsers():
    assert parse_search_R("0.25") == (1e-4, 0.25, 0.5, 0.75, 0.9999)
    assert parse_search_R("0.5,") == (0.5,)
    assert parse_search_h("-1:-0.5:0.25") == (-1.0, -0.75, -0.5)
    assert parse_search_h("-1,-0.5") == (-1.0, -0.5)
