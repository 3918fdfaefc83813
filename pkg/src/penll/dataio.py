"""CSV ingestion with predictor scaling, surface tables and JSON config files."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .additive import anova_decompose
from .core import Dataset, Grid, PenllError
from .selection import format_float

MISSING = {"", "na", "nan", "null", "none", "?", "."}


class IngestError(PenllError, ValueError):
    pass


@dataclass(frozen=True)
class ScalingRecord:
    """Affine maps taking each predictor onto [0, 1] plus the response transform."""

    predictors: tuple
    minima: tuple
    maxima: tuple
    response: str
    log_response: bool = False

    def scale(self, raw) -> np.ndarray:
        raw = np.asarray(raw, dtype=float)
        lo, hi = np.asarray(self.minima), np.asarray(self.maxima)
        return (raw - lo) / (hi - lo)

    def unscale(self, scaled) -> np.ndarray:
        scaled = np.asarray(scaled, dtype=float)
        lo, hi = np.asarray(self.minima), np.asarray(self.maxima)
        return lo + scaled * (hi - lo)

    def response_inverse(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return np.exp(y) if self.log_response else y

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class IngestReport:
    rows_read: int
    rows_excluded: int
    rows_dropped_missing: int
    rows_used: int


def _parse(cell: str) -> float:
    s = cell.strip()
    if s.lower() in MISSING:
        return math.nan
    return float(s)


def ingest_csv(path, response: str, predictors: Sequence[str], log_response: bool = False,
               exclude_rows: Optional[Sequence[int]] = None):
    """Read ``path`` and return ``(Dataset, ScalingRecord, IngestReport)``.

    ``exclude_rows`` holds 1-based data-row numbers (the header is not
    counted); they are removed before incomplete rows are dropped and before
    the predictors are scaled to [0, 1] by their min/max.
    """
    predictors = [p.strip() for p in predictors]
    if not predictors:
        raise IngestError("at least one predictor column is required")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestError(f"{path}: file is empty") from None
        rows = [r for r in reader if r and any(c.strip() for c in r)]
    cols = [response] + predictors
    missing = [c for c in cols if c not in header]
    if missing:
        raise IngestError(f"{path}: missing column(s) {missing}; available: {header}")
    idx = [header.index(c) for c in cols]
    excl = {int(i) for i in (exclude_rows or ())}
    kept = [r for k, r in enumerate(rows, start=1) if k not in excl]
    n_excl = len(rows) - len(kept)
    try:
        table = np.array([[_parse(r[i]) if i < len(r) else math.nan for i in idx] for r in kept],
                         dtype=float).reshape(len(kept), len(cols))
    except ValueError as exc:
        raise IngestError(f"{path}: non-numeric value ({exc})") from None
    complete = np.all(np.isfinite(table), axis=1)
    table = table[complete]
    if table.shape[0] == 0:
        raise IngestError(f"{path}: no complete rows in columns {cols}")
    y, raw = table[:, 0], table[:, 1:]
    if log_response:
        if np.any(y <= 0):
            raise IngestError("log response requested but the response has values <= 0")
        y = np.log(y)
    lo, hi = raw.min(axis=0), raw.max(axis=0)
    const = [p for p, a, b in zip(predictors, lo, hi) if not b > a]
    if const:
        raise IngestError(f"constant predictor(s) {const}: cannot scale a zero range")
    rec = ScalingRecord(tuple(predictors), tuple(float(v) for v in lo), tuple(float(v) for v in hi),
                        response, bool(log_response))
    X = np.clip(rec.scale(raw), 0.0, 1.0)
    report = IngestReport(len(rows), n_excl, int(np.sum(~complete)), int(table.shape[0]))
    return Dataset(X, y), rec, report


def surface_header(d: int) -> list:
    return ([f"x{k + 1}" for k in range(d)] + ["intercept"] + [f"slope{k + 1}" for k in range(d)]
            + ["additive_intercept", "nonadditive_intercept"])


def write_surface(result, path, scaling: Optional[ScalingRecord] = None):
    """Grid surface of a fit: coordinates, intercept, slopes, additive and
    non-additive intercept.  Coordinates are in the scaled unit cube unless a
    scaling record is given, in which case original units are written."""
    grid = result.grid
    coords = grid.coords()
    if scaling is not None:
        coords = scaling.unscale(coords)
    cols = np.column_stack([coords, result.beta, result.additive_part[:, 0],
                            result.nonadditive_part[:, 0]])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(surface_header(grid.d))
        for row in cols:
            w.writerow([format_float(v) for v in row])


def read_surface(path, column: str = "intercept"):
    """Read a surface table back as ``(Grid, values)``.

    The grid shape is inferred from the distinct coordinate values; rows must
    be in the flat node order used by :class:`Grid`.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = np.array([[float(c) for c in r] for r in reader if r], dtype=float)
    coord_cols = [i for i, h in enumerate(header) if h.startswith("x") and h[1:].isdigit()]
    if not coord_cols or column not in header:
        raise IngestError(f"{path}: not a surface table (need x1.. and {column!r} columns)")
    shape = tuple(len(np.unique(data[:, i])) for i in coord_cols)
    grid = Grid(shape)
    if int(np.prod(shape)) != data.shape[0]:
        raise IngestError(f"{path}: {data.shape[0]} rows do not form a {shape} grid")
    ref = grid.coords()
    got = data[:, coord_cols]
    lo, hi = got.min(axis=0), got.max(axis=0)
    if not np.allclose((got - lo) / (hi - lo), ref, atol=1e-9):
        raise IngestError(f"{path}: rows are not in grid order")
    return grid, data[:, header.index(column)]


def decompose_surface(path, column: str = "intercept"):
    grid, values = read_surface(path, column)
    return anova_decompose(values, grid)


def load_config(path) -> dict:
    """JSON key/value configuration; keys mirror the command-line options."""
    with open(path) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise IngestError(f"{path}: configuration must be a JSON object")
    return cfg


def write_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)
