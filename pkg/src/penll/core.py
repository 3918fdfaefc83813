"""Domain types shared by the estimator: data, output grid, bandwidths and fit options."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np

MAX_DIM = 4


class PenllError(Exception):
    """Base class for errors raised by this package."""


class DegenerateFitError(PenllError):
    """The reduced system is indefinite beyond the pseudo-inverse cutoff."""

    def __init__(self, message, eigenvalue=None):
        super().__init__(message)
        self.eigenvalue = eigenvalue


class ConvergenceError(PenllError):
    """Fixed-point iteration exceeded ``max_iterations``."""

    def __init__(self, message, last_increment=None):
        super().__init__(message)
        self.last_increment = last_increment


class SelectionError(PenllError):
    pass


class CalibrationError(PenllError):
    pass


class UndefinedCriterionError(PenllError):
    pass


class _InfinitePenalty:
    """Singleton standing for R = infinity (the purely additive fit)."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "R_INF"

    def __str__(self):
        return "inf"

    def __reduce__(self):
        return "R_INF"


R_INF = _InfinitePenalty()


def is_infinite(R) -> bool:
    return R is R_INF


def as_penalty(R):
    """Normalise a user supplied penalty to a float >= 0 or ``R_INF``."""
    if R is R_INF:
        return R
    if isinstance(R, str):
        if R.strip().lower() in ("inf", "infinity", "oo", "additive"):
            return R_INF
        R = float(R)
    R = float(R)
    if math.isinf(R) and R > 0:
        return R_INF
    if not R >= 0:
        raise ValueError(f"penalty R must be >= 0, got {R}")
    return R


def penalty_to_float(R) -> float:
    return math.inf if R is R_INF else float(R)


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Design points ``X`` (n x d, scaled to the unit cube) and responses ``Y``."""

    X: np.ndarray
    Y: np.ndarray
    allow_high_dim: bool = False

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        if X.ndim != 2:
            raise ValueError("X must be a 2-d array")
        Y = np.asarray(self.Y, dtype=float).reshape(-1)
        n, d = X.shape
        if n < 1:
            raise ValueError("empty dataset")
        if Y.shape[0] != n:
            raise ValueError(f"X has {n} rows but Y has {Y.shape[0]} entries")
        if d < 1 or (d > MAX_DIM and not self.allow_high_dim):
            raise ValueError(f"dimension d={d} outside 1..{MAX_DIM} (set allow_high_dim to override)")
        if not np.all(np.isfinite(X)) or not np.all(np.isfinite(Y)):
            raise ValueError("non-finite values in data")
        if X.min() < 0.0 or X.max() > 1.0:
            raise ValueError("design points must lie in [0, 1]^d")
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "Y", _frozen(Y))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def with_response(self, Y) -> "Dataset":
        return Dataset(self.X, Y, self.allow_high_dim)


@dataclass(frozen=True)
class Grid:
    """Equidistant product grid on [0, 1]^d.

    Nodes are enumerated row-major with axis 1 varying slowest, i.e. the flat
    index of ``(i_1, ..., i_d)`` follows numpy's C order for ``shape``.
    """

    m_per_axis: tuple

    def __post_init__(self):
        m = tuple(int(v) for v in self.m_per_axis)
        if not m or any(v < 2 for v in m):
            raise ValueError("every axis needs at least 2 grid points")
        object.__setattr__(self, "m_per_axis", m)

    @classmethod
    def regular(cls, size: int, d: int) -> "Grid":
        return cls((size,) * d)

    @property
    def d(self) -> int:
        return len(self.m_per_axis)

    @property
    def shape(self) -> tuple:
        return self.m_per_axis

    @cached_property
    def m(self) -> int:
        return int(np.prod(self.m_per_axis))

    @cached_property
    def m_star(self) -> int:
        return int(sum(self.m_per_axis))

    @property
    def nodes_per_axis(self) -> list:
        return [np.arange(mk) / (mk - 1) for mk in self.m_per_axis]

    def coords(self) -> np.ndarray:
        """All nodes as an (m, d) array in flat order."""
        mesh = np.meshgrid(*self.nodes_per_axis, indexing="ij")
        return np.stack([g.reshape(-1) for g in mesh], axis=1)


def grid_index(grid: Grid, multi_index: Sequence[int]) -> int:
    if len(multi_index) != grid.d:
        raise IndexError(f"expected {grid.d} axis indices, got {len(multi_index)}")
    for i, mk in zip(multi_index, grid.m_per_axis):
        if not 0 <= int(i) < mk:
            raise IndexError(f"axis index {i} out of range [0, {mk})")
    return int(np.ravel_multi_index(tuple(int(i) for i in multi_index), grid.shape))


def grid_multi_index(grid: Grid, j: int) -> tuple:
    if not 0 <= int(j) < grid.m:
        raise IndexError(f"flat index {j} out of range [0, {grid.m})")
    return tuple(int(i) for i in np.unravel_index(int(j), grid.shape))


BOUNDARY_POLICIES = ("renorm", "inflate")


def default_inflation(t: np.ndarray, h: float, factor: float = 0.174 / 0.117) -> np.ndarray:
    """Local bandwidth growing linearly from ``h`` (distance >= h from the
    boundary) to ``factor * h`` at the boundary itself."""
    t = np.asarray(t, dtype=float)
    dist = np.minimum(t, 1.0 - t)
    ramp = np.clip(1.0 - dist / h, 0.0, 1.0)
    return h * (1.0 + (factor - 1.0) * ramp)


@dataclass(frozen=True)
class BandwidthSpec:
    """Per-axis bandwidths plus the boundary policy of the kernel weights.

    ``boundary="renorm"`` rescales each observation's kernel so that it
    integrates to one over the unit cube; ``"inflate"`` instead widens the
    window near the boundary through ``inflation(t, h_k) -> local h``.
    """

    h_per_axis: tuple
    boundary: str = "renorm"
    inflation: Optional[Callable] = field(default=None, compare=False)

    def __post_init__(self):
        h = tuple(float(v) for v in np.atleast_1d(self.h_per_axis))
        if not h or any(not (v > 0 and math.isfinite(v)) for v in h):
            raise ValueError("bandwidths must be positive and finite")
        if self.boundary not in BOUNDARY_POLICIES:
            raise ValueError(f"unknown boundary policy {self.boundary!r}")
        object.__setattr__(self, "h_per_axis", h)

    @classmethod
    def isotropic(cls, h: float, d: int, **kw) -> "BandwidthSpec":
        return cls((float(h),) * d, **kw)

    @property
    def d(self) -> int:
        return len(self.h_per_axis)

    @property
    def h_geo(self) -> float:
        return float(np.exp(np.mean(np.log(self.h_per_axis))))

    def scaled(self, c: float) -> "BandwidthSpec":
        return BandwidthSpec(tuple(c * h for h in self.h_per_axis), self.boundary, self.inflation)

    def local_h(self, k: int, t: np.ndarray) -> np.ndarray:
        """Bandwidth of axis ``k`` used at output coordinates ``t``."""
        hk = self.h_per_axis[k]
        t = np.asarray(t, dtype=float)
        if self.boundary == "renorm":
            return np.full(t.shape, hk)
        fn = self.inflation or default_inflation
        return np.asarray(fn(t, hk), dtype=float)


SOLVERS = ("direct", "iterative")


@dataclass(frozen=True)
class FitConfig:
    R: object
    bandwidths: BandwidthSpec
    solver: str = "direct"
    iteration_tolerance: float = 1e-10
    max_iterations: int = 500
    large_R_threshold: float = 1.0
    pinv_cutoff: float = 1e-10

    def __post_init__(self):
        object.__setattr__(self, "R", as_penalty(self.R))
        if self.solver not in SOLVERS:
            raise ValueError(f"solver must be one of {SOLVERS}")
        if not self.iteration_tolerance > 0:
            raise ValueError("iteration_tolerance must be positive")
        if int(self.max_iterations) < 1:
            raise ValueError("max_iterations must be positive")
        if not self.large_R_threshold > 0:
            raise ValueError("large_R_threshold must be positive")
        if not 0 < self.pinv_cutoff < 1:
            raise ValueError("pinv_cutoff must lie in (0, 1)")

    def with_R(self, R) -> "FitConfig":
        return FitConfig(R, self.bandwidths, self.solver, self.iteration_tolerance,
                         self.max_iterations, self.large_R_threshold, self.pinv_cutoff)

    def with_bandwidths(self, bw: BandwidthSpec) -> "FitConfig":
        return FitConfig(self.R, bw, self.solver, self.iteration_tolerance,
                         self.max_iterations, self.large_R_threshold, self.pinv_cutoff)
