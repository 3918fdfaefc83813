"""Monte Carlo experiments: test functions, random designs and the per-seed
comparison of optimal and AICc-selected penalized fits."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .core import Dataset, Grid, PenllError, penalty_to_float
from .selection import SearchLattice, evaluate_lattice, format_float, ise

__all__ = [
    "truth_nonadditive", "truth_additive", "sample_design", "design_density", "ScenarioSpec",
    "replication_rng", "simulate_data", "run_replication", "run_scenario", "summarize",
    "RECORD_FIELDS", "RATIOS", "write_records", "write_summary", "ise",
]


def _points(x):
    x = np.asarray(x, dtype=float)
    return x.reshape(1, -1) if x.ndim == 1 else x, x.ndim == 1


def truth_nonadditive(x):
    """Sum of three Gaussian bumps centred on the diagonal of the unit square."""
    p, single = _points(x)
    c = np.full(2, 0.25), np.full(2, 0.75), np.full(2, 0.5)
    r = (15.0 * np.exp(-32.0 * np.sum((p - c[0]) ** 2, axis=1))
         + 35.0 * np.exp(-128.0 * np.sum((p - c[1]) ** 2, axis=1))
         + 25.0 * np.exp(-2.0 * np.sum((p - c[2]) ** 2, axis=1)))
    return float(r[0]) if single else r


def truth_additive(x):
    """Additive counterpart: the same bumps applied to each coordinate, halved."""
    p, single = _points(x)
    r = (7.5 * np.exp(-32.0 * (p - 0.25) ** 2) + 17.5 * np.exp(-128.0 * (p - 0.75) ** 2)
         + 12.5 * np.exp(-2.0 * (p - 0.5) ** 2)).sum(axis=1)
    return float(r[0]) if single else r


TRUTHS = {"nonadditive": truth_nonadditive, "additive": truth_additive}

ENVELOPE = 1.5


def design_density(name: str, x) -> np.ndarray:
    """Density of the named design on [0, 1]^2."""
    p, _ = _points(x)
    s = p.sum(axis=1)
    if name == "uniform":
        return np.ones(len(p))
    if name == "f1":
        return 0.5 + 0.5 * s
    if name == "f2":
        return 1.5 - 0.5 * s
    raise ValueError(f"unknown design density {name!r}")


def sample_design(density: str, n: int, rng: np.random.Generator) -> np.ndarray:
    """n i.i.d. points in [0, 1]^2; non-uniform densities by rejection under 1.5."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if density == "uniform":
        return rng.uniform(size=(n, 2))
    design_density(density, np.zeros(2))  # validates the name
    out = []
    have = 0
    while have < n:
        k = max(2 * (n - have), 16)
        cand = rng.uniform(size=(k, 2))
        u = rng.uniform(size=k)
        acc = cand[u * ENVELOPE <= design_density(density, cand)]
        out.append(acc)
        have += len(acc)
    return np.concatenate(out)[:n]


@dataclass(frozen=True)
class ScenarioSpec:
    """One Monte Carlo experiment.

    ``truth`` is "nonadditive", "additive" or a callable on (p, 2) arrays.
    """

    truth: Union[str, Callable] = "nonadditive"
    design: str = "uniform"
    n: int = 200
    sigma: float = 5.0
    grid: Grid = field(default_factory=lambda: Grid((50, 50)))
    lattice: SearchLattice = field(default_factory=SearchLattice.regular)
    seed: int = 0
    replications: int = 50
    criterion: str = "aicc"

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError("sigma must be >= 0")
        if int(self.replications) < 1:
            raise ValueError("replications must be >= 1")
        if int(self.n) < 1:
            raise ValueError("n must be >= 1")
        if isinstance(self.truth, str) and self.truth not in TRUTHS:
            raise ValueError(f"unknown truth {self.truth!r}")
        design_density(self.design, np.zeros(2))

    @property
    def truth_fn(self) -> Callable:
        return TRUTHS[self.truth] if isinstance(self.truth, str) else self.truth


def replication_rng(seed: int, rep: int) -> np.random.Generator:
    """Counter-based generator with an independent substream per (seed, replication)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(rep)])))


def simulate_data(spec: ScenarioSpec, rep: int) -> Dataset:
    rng = replication_rng(spec.seed, rep)
    X = sample_design(spec.design, spec.n, rng)
    Y = spec.truth_fn(X) + spec.sigma * rng.standard_normal(spec.n)
    return Dataset(X, Y)


RECORD_FIELDS = (
    "rep", "ise_opt", "R_opt", "h_opt", "ise_opt_Rmin", "ise_opt_Rmax",
    "ise_aic", "R_aic", "h_aic", "ise_aic_Rmin", "ise_aic_Rmax", "error",
)


def run_replication(spec: ScenarioSpec, rep: int) -> dict:
    data = simulate_data(spec, rep)
    T = spec.truth_fn(spec.grid.coords())
    surf = evaluate_lattice(data, spec.grid, spec.lattice, truth=T)
    last = len(spec.lattice.r_fracs) - 1
    io, jo = surf.best_ise()
    ia, ja = surf.best(spec.criterion)
    rec = {
        "rep": rep,
        "ise_opt": surf.ise[io, jo],
        "R_opt": penalty_to_float(surf.R[io]),
        "h_opt": surf.h[jo],
        "ise_opt_Rmin": surf.ise[surf.best_ise(r_index=0)],
        "ise_opt_Rmax": surf.ise[surf.best_ise(r_index=last)],
        "ise_aic": surf.ise[ia, ja],
        "R_aic": penalty_to_float(surf.R[ia]),
        "h_aic": surf.h[ja],
        "ise_aic_Rmin": surf.ise[surf.best(spec.criterion, r_index=0)],
        "ise_aic_Rmax": surf.ise[surf.best(spec.criterion, r_index=last)],
        "error": "",
    }
    return {k: (float(v) if isinstance(v, (np.floating, float)) else v) for k, v in rec.items()}


def run_scenario(spec: ScenarioSpec, progress: Callable | None = None) -> list:
    """One record per replication; failures are recorded with NaNs and the error text."""
    records = []
    for rep in range(int(spec.replications)):
        try:
            rec = run_replication(spec, rep)
        except (PenllError, np.linalg.LinAlgError, ValueError) as exc:
            rec = {k: math.nan for k in RECORD_FIELDS}
            rec.update(rep=rep, error=f"{type(exc).__name__}: {exc}")
        records.append(rec)
        if progress is not None:
            progress(rec)
    return records


RATIOS = {
    "a": lambda r: (r["ise_opt_Rmin"] - r["ise_opt"]) / r["ise_opt"],
    "b": lambda r: (r["ise_aic"] - r["ise_opt"]) / r["ise_opt"],
    "c": lambda r: (r["ise_aic_Rmin"] - r["ise_aic"]) / r["ise_opt"],
    "d": lambda r: (r["ise_opt_Rmin"] - r["ise_aic"]) / r["ise_opt"],
    "e": lambda r: r["R_opt"],
}

QUANTILES = (("min", 0.0), ("q10", 0.1), ("med", 0.5), ("q90", 0.9), ("max", 1.0))


def type1_quantiles(values) -> dict:
    """Order-statistic quantiles: the smallest value whose empirical CDF reaches p."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("no values to summarise")
    return {name: float(np.quantile(v, p, method="inverted_cdf")) for name, p in QUANTILES}


def summarize(records) -> dict:
    """Quantiles of the ratios (a)-(e) over the successful records."""
    ok = [r for r in records if not r.get("error")]
    if not ok:
        raise ValueError("summarize needs at least one successful record")
    return {key: type1_quantiles([fn(r) for r in ok]) for key, fn in RATIOS.items()}


def write_records(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RECORD_FIELDS)
        for r in records:
            w.writerow([r[k] if k in ("rep", "error") else format_float(r[k]) for k in RECORD_FIELDS])


def write_summary(summary: dict, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["ratio"] + [name for name, _ in QUANTILES])
        for key, q in summary.items():
            w.writerow([key] + [format_float(q[name]) for name, _ in QUANTILES])
