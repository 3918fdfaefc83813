"""Simultaneous choice of the penalty R and bandwidth h by AIC, GCV or AICc.

Every cell of a lattice in (R/(1+R), log10 h) is fitted, the fitted values
at the design points give sigma^2 = |Y - M Y|^2 / n and tr(M) gives the
degrees of freedom.  Kernel moments are computed once per bandwidth and
reused for every R in that column.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import (
    BandwidthSpec,
    Dataset,
    DegenerateFitError,
    FitConfig,
    Grid,
    R_INF,
    SelectionError,
    UndefinedCriterionError,
    is_infinite,
    penalty_to_float,
)
from .estimator import Smoother

KINDS = ("aic", "gcv", "aicc")


def _kind(kind: str) -> str:
    k = str(kind).lower().replace("_", "")
    if k not in KINDS:
        raise ValueError(f"unknown criterion {kind!r}; expected one of {KINDS}")
    return k


def criterion(sigma2: float, trace: float, n: int, kind: str) -> float:
    """AIC = log s2 + 2 tr/n, GCV = s2 / (1 - tr/n)^2,
    AICc = log s2 + (1 + tr/n) / (1 - (tr + 2)/n)."""
    kind = _kind(kind)
    if not sigma2 > 0:
        raise UndefinedCriterionError(f"sigma2 must be positive, got {sigma2}")
    if not 0 <= trace < n:
        raise UndefinedCriterionError(f"trace {trace} outside [0, n={n})")
    t = trace / n
    if kind == "aic":
        return math.log(sigma2) + 2.0 * t
    if kind == "gcv":
        return sigma2 / (1.0 - t) ** 2
    den = 1.0 - (trace + 2.0) / n
    if not den > 0:
        raise UndefinedCriterionError(f"AICc undefined: trace + 2 = {trace + 2} >= n = {n}")
    return math.log(sigma2) + (1.0 + t) / den


def criterion_array(sigma2, trace, n: int, kind: str) -> np.ndarray:
    """Vectorised :func:`criterion`; undefined cells become NaN."""
    kind = _kind(kind)
    s2 = np.asarray(sigma2, dtype=float)
    tr = np.asarray(trace, dtype=float)
    t = tr / n
    ok = (s2 > 0) & (tr >= 0) & (tr < n)
    with np.errstate(divide="ignore", invalid="ignore"):
        if kind == "aic":
            out = np.log(s2) + 2.0 * t
        elif kind == "gcv":
            out = s2 / (1.0 - t) ** 2
        else:
            den = 1.0 - (tr + 2.0) / n
            ok &= den > 0
            out = np.log(s2) + (1.0 + t) / den
    return np.where(ok, out, np.nan)


def ise(surface_hat, surface_true) -> float:
    """Integrated squared error over the unit cube by a uniform grid average."""
    a = np.asarray(surface_hat, dtype=float).reshape(-1)
    b = np.asarray(surface_true, dtype=float).reshape(-1)
    if a.shape != b.shape:
        raise ValueError(f"surface sizes differ: {a.size} vs {b.size}")
    return float(np.mean((a - b) ** 2))


def _q_to_R(q):
    if q >= 1.0:
        return R_INF
    return q / (1.0 - q)


@dataclass(frozen=True)
class SearchLattice:
    """Cells are (R/(1+R), log10 h) pairs.

    With ``base`` set, the second axis is log10 of a common scale factor c and
    the bandwidths of a cell are ``c * base.h_per_axis``.
    """

    r_fracs: tuple
    log10_h: tuple
    base: Optional[BandwidthSpec] = None
    boundary: str = "renorm"

    def __post_init__(self):
        q = tuple(float(v) for v in np.atleast_1d(self.r_fracs))
        v = tuple(float(x) for x in np.atleast_1d(self.log10_h))
        if not q or not v:
            raise ValueError("search lattice must be nonempty")
        if any(not 0.0 <= x <= 1.0 for x in q):
            raise ValueError("R/(1+R) values must lie in [0, 1]")
        object.__setattr__(self, "r_fracs", q)
        object.__setattr__(self, "log10_h", v)

    @classmethod
    def regular(cls, r_step=0.01, h_range=(math.log10(0.05), math.log10(0.5)), h_step=0.005,
                r_min=1e-4, r_max=0.9999, **kw) -> "SearchLattice":
        """Equidistant lattice with the two extreme R values replaced by r_min and r_max."""
        k = int(round(1.0 / r_step))
        inner = [i * r_step for i in range(1, k)]
        q = [r_min] + [x for x in inner if r_min < x < r_max] + [r_max]
        lo, hi = h_range
        nh = int(math.floor((hi - lo) / h_step + 1e-9)) + 1
        v = [round(lo + i * h_step, 12) for i in range(nh)]
        return cls(tuple(q), tuple(v), **kw)

    @property
    def R_values(self) -> list:
        return [_q_to_R(q) for q in self.r_fracs]

    def bandwidths(self, v: float, d: int) -> BandwidthSpec:
        if self.base is not None:
            return self.base.scaled(10.0 ** v)
        return BandwidthSpec.isotropic(10.0 ** v, d, boundary=self.boundary)

    @property
    def shape(self) -> tuple:
        return (len(self.r_fracs), len(self.log10_h))


@dataclass
class SelectionSurface:
    """Per-cell sigma^2, tr(M), criteria and (optionally) ISE on a lattice.

    Arrays have shape (number of R values, number of h values).
    """

    lattice: SearchLattice
    n: int
    h: np.ndarray
    sigma2: np.ndarray
    trace: np.ndarray
    ise: Optional[np.ndarray] = None
    valid: Optional[np.ndarray] = None
    surfaces: Optional[dict] = field(default=None, repr=False)

    def __post_init__(self):
        if self.valid is None:
            self.valid = np.isfinite(self.sigma2) & np.isfinite(self.trace)

    @property
    def R(self) -> list:
        return self.lattice.R_values

    def criterion(self, kind: str) -> np.ndarray:
        out = criterion_array(self.sigma2, self.trace, self.n, kind)
        return np.where(self.valid, out, np.nan)

    def argmin(self, values, r_index=None) -> tuple:
        """Cell of the minimum of ``values``; ties go to larger R, then larger h.

        ``r_index`` restricts the search to one R row.
        """
        vals = np.where(self.valid, np.asarray(values, dtype=float), np.nan)
        if r_index is not None:
            mask = np.full(vals.shape, False)
            mask[r_index] = True
            vals = np.where(mask, vals, np.nan)
        if not np.any(np.isfinite(vals)):
            raise SelectionError("no valid cell in the search lattice")
        best = np.nanmin(vals)
        tol = 1e-12 * max(1.0, abs(best))
        cand = np.argwhere(vals <= best + tol)
        i, j = max(map(tuple, cand))
        return int(i), int(j)

    def best(self, kind: str, r_index=None) -> tuple:
        return self.argmin(self.criterion(kind), r_index)

    def best_ise(self, r_index=None) -> tuple:
        if self.ise is None:
            raise SelectionError("surface carries no ISE values")
        return self.argmin(self.ise, r_index)

    def cell(self, i: int, j: int) -> dict:
        return {"R": self.R[i], "h": float(self.h[j]), "log10_h": self.lattice.log10_h[j],
                "sigma2": float(self.sigma2[i, j]), "trace": float(self.trace[i, j]),
                "ise": None if self.ise is None else float(self.ise[i, j])}

    def rows(self, kind: str):
        crit = self.criterion(kind)
        for i, R in enumerate(self.R):
            for j in range(len(self.h)):
                yield (penalty_to_float(R), float(self.h[j]), crit[i, j], self.sigma2[i, j],
                       self.trace[i, j], None if self.ise is None else self.ise[i, j])

    def to_csv(self, path, kind: str = "aicc"):
        """Columns R, h, criterion, sigma2, trace[, ise]; 17 significant digits."""
        header = ["R", "h", "criterion", "sigma2", "trace"] + (["ise"] if self.ise is not None else [])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in self.rows(kind):
                vals = row if self.ise is not None else row[:5]
                w.writerow([format_float(v) for v in vals])


def format_float(v) -> str:
    if v is None:
        return ""
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.17g}"


def evaluate_lattice(data: Dataset, grid: Grid, lattice: SearchLattice, truth=None,
                     cfg: Optional[FitConfig] = None, r_floor: Optional[Callable] = None,
                     keep_surfaces: bool = False) -> SelectionSurface:
    """Fit every cell of the lattice.

    ``truth`` (grid values of the true function, length m) adds an ISE column.
    ``r_floor(h)``, if given, marks cells with R below it as invalid.
    """
    nR, nh = lattice.shape
    sigma2 = np.full((nR, nh), np.nan)
    trace = np.full((nR, nh), np.nan)
    ise_arr = np.full((nR, nh), np.nan) if truth is not None else None
    valid = np.zeros((nR, nh), dtype=bool)
    hs = np.empty(nh)
    surfaces = {} if keep_surfaces else None
    T = None if truth is None else np.asarray(truth, dtype=float).reshape(-1)
    Rs = lattice.R_values
    for j, v in enumerate(lattice.log10_h):
        bw = lattice.bandwidths(v, data.d)
        hs[j] = bw.h_geo
        sm = Smoother(data, grid, bw, cfg)
        for i, R in enumerate(Rs):
            if r_floor is not None and penalty_to_float(R) < r_floor(bw.h_geo):
                continue
            try:
                ev = sm.evaluate(R)
            except (DegenerateFitError, np.linalg.LinAlgError):
                continue
            res = data.Y - ev.fitted
            sigma2[i, j] = float(res @ res) / data.n
            trace[i, j] = ev.trace
            valid[i, j] = bool(np.isfinite(sigma2[i, j]) and np.isfinite(ev.trace))
            if T is not None:
                ise_arr[i, j] = ise(ev.surface, T)
            if keep_surfaces:
                surfaces[(i, j)] = ev.surface
    return SelectionSurface(lattice, data.n, hs, sigma2, trace, ise_arr, valid, surfaces)


def select(data: Dataset, grid: Grid, lattice: SearchLattice, kind: str = "aicc",
           cfg: Optional[FitConfig] = None, r_floor: Optional[Callable] = None, truth=None):
    """Criterion-minimising (R, h) over the lattice.

    Returns ``(surface, (R, bandwidths))``.  Raises SelectionError when no
    cell has a defined criterion.
    """
    surf = evaluate_lattice(data, grid, lattice, truth=truth, cfg=cfg, r_floor=r_floor)
    i, j = surf.best(kind)
    return surf, (surf.R[i], lattice.bandwidths(lattice.log10_h[j], data.d))


def oracle_select(data: Dataset, truth, grid: Grid, lattice: SearchLattice,
                  cfg: Optional[FitConfig] = None):
    """ISE-minimising (R, h); ``truth`` is a callable on (m, d) points or grid values."""
    T = truth(grid.coords()) if callable(truth) else truth
    surf = evaluate_lattice(data, grid, lattice, truth=T, cfg=cfg)
    i, j = surf.best_ise()
    return surf, (surf.R[i], lattice.bandwidths(lattice.log10_h[j], data.d))
