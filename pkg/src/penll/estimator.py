"""Penalized local-linear fit on a grid, prediction at arbitrary points and hat matrices."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .additive import apply_Z, apply_Zt, interpolation_matrix
from .core import BandwidthSpec, Dataset, FitConfig, Grid, R_INF, is_infinite
from .kernels import MomentField, assemble_moments, grid_weights, moments_at_points, _moment_matrix
from .solver import (
    _bmv,
    blockwise_pinv,
    build_A,
    residual_norm,
    gamma_operator,
    solve_direct,
    solve_gamma,
    solve_iterative,
)


@dataclass(frozen=True)
class FitResult:
    """Parameter field of one fit and its split into additive and non-additive parts.

    ``beta`` has shape (m, d+1): intercept then slopes at every grid node.
    ``gamma`` is Z beta; ``solver_gamma`` is the additive coordinate vector
    produced by the solver itself (reduced system or fixed-point iteration).
    """

    grid: Grid
    config: FitConfig
    beta: np.ndarray
    additive_part: np.ndarray
    nonadditive_part: np.ndarray
    gamma: np.ndarray
    solver_gamma: np.ndarray
    residual: float
    iterations: int = 0
    increments: list = field(default_factory=list)

    @property
    def R(self):
        return self.config.R

    @property
    def intercept(self) -> np.ndarray:
        return self.beta[:, 0]

    def surface(self) -> np.ndarray:
        """Intercept values reshaped to the grid."""
        return self.intercept.reshape(self.grid.shape)


def _local_linear(moments: MomentField, cutoff: float) -> np.ndarray:
    return _bmv(blockwise_pinv(moments.S, cutoff), moments.L)


def fit_moments(moments: MomentField, cfg: FitConfig) -> FitResult:
    grid, R = moments.grid, cfg.R
    increments, iterations = [], 0
    if not is_infinite(R) and R == 0:
        beta = _local_linear(moments, cfg.pinv_cutoff)
        solver_gamma = apply_Z(beta, grid)
        resid = float(np.linalg.norm(_bmv(moments.S, beta) - moments.L)) / max(1.0, float(np.linalg.norm(moments.L)))
    else:
        if cfg.solver == "iterative":
            beta, trace = solve_iterative(moments, R, cfg)
            solver_gamma = trace.gamma
            increments, iterations = trace.increments, trace.iterations
        else:
            beta = solve_direct(moments, R, cfg)
            solver_gamma = solve_gamma(moments, R, cfg)
        resid = residual_norm(moments, R, beta)
    gamma = apply_Z(beta, grid)
    additive = apply_Zt(gamma, grid)
    return FitResult(grid, cfg, beta, additive, beta - additive, gamma, solver_gamma,
                     resid, iterations, increments)


def fit(data: Dataset, grid: Grid, cfg: FitConfig) -> FitResult:
    """Fit the penalized estimator; R = 0 gives local linear, R = inf the additive fit."""
    if data.n < 1:
        raise ValueError("empty data")
    moments = assemble_moments(data, grid, cfg.bandwidths)
    return fit_moments(moments, cfg)


def pointwise_compromise_check(result: FitResult, moments: MomentField) -> float:
    """Max over nodes of |beta_j - (S_j + R I)^{-1} (R (P_add beta)_j + L_j)|."""
    R = result.R
    if is_infinite(R) or not R > 0:
        raise ValueError("compromise check needs a finite R > 0")
    blk = build_A(moments.S, R)
    target = _bmv(blk.A, result.additive_part + moments.L / R)
    return float(np.abs(result.beta - target).max())


def _point_operators(S_pts: np.ndarray, R, cutoff: float):
    """Rows g, h (p, d+1) with fitted(x) = g . L(x) + h . (additive field at x)."""
    p = S_pts.shape[-1]
    if is_infinite(R):
        g = np.zeros(S_pts.shape[:2])
        h = np.zeros_like(g)
        h[:, 0] = 1.0
        return g, h
    if R == 0:
        return blockwise_pinv(S_pts, cutoff)[:, 0, :], np.zeros(S_pts.shape[:2])
    if R >= 1.0:
        A = np.linalg.inv(np.eye(p) + S_pts / R)
        return A[:, 0, :] / R, A[:, 0, :]
    B = np.linalg.inv(S_pts + R * np.eye(p))
    return B[:, 0, :], R * B[:, 0, :]


def predict(result: FitResult, data: Dataset, points, R=None, bw: BandwidthSpec | None = None) -> np.ndarray:
    """Fitted intercept at arbitrary points of [0, 1]^d.

    beta(x) = (S(x) + R I)^{-1} {L(x) + R a(x)} with a(x) the additive part
    of the grid fit interpolated piecewise linearly along each axis.
    """
    R = result.R if R is None else R
    bw = result.config.bandwidths if bw is None else bw
    points = np.atleast_2d(np.asarray(points, dtype=float))
    S_pts, W_pts = moments_at_points(data, points, bw)
    g, h = _point_operators(S_pts, R, result.config.pinv_cutoff)
    L_pts = W_pts @ data.Y
    add = interpolation_matrix(result.grid, points) @ result.gamma
    return np.einsum("pl,pl->p", g, L_pts) + np.einsum("pl,pl->p", h, add)


def predict_at(result: FitResult, data: Dataset, x, R=None, bw: BandwidthSpec | None = None) -> float:
    return float(predict(result, data, np.atleast_2d(x), R, bw)[0])


@dataclass(frozen=True)
class HatMatrix:
    matrix: np.ndarray

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix))


@dataclass(frozen=True)
class Evaluation:
    """What selection needs from one (R, h) cell for a single response."""

    fitted: np.ndarray
    trace: float
    surface: np.ndarray


class Smoother:
    """The fit-then-predict pipeline for fixed design, grid and bandwidths.

    Kernel weights at grid nodes and at design points are computed once;
    each call for a penalty R then costs a handful of block operations and
    one reduced solve.  All outputs are linear maps of Y.
    """

    def __init__(self, data: Dataset, grid: Grid, bw: BandwidthSpec, cfg: FitConfig | None = None):
        self.data, self.grid, self.bw = data, grid, bw
        self.cfg = cfg.with_bandwidths(bw) if cfg is not None else FitConfig(0.0, bw)
        W, U = grid_weights(data, grid, bw)
        self.W = W
        self.S = _moment_matrix(W, U)
        self.L = W @ data.Y
        self.S_pts, self.W_pts = moments_at_points(data, data.X, bw)
        self.L_pts = self.W_pts @ data.Y
        idx = np.arange(data.n)
        self.W_diag = self.W_pts[idx, :, idx]
        self.Q = interpolation_matrix(grid, data.X)

    def _gamma_map(self, R):
        """(Gamma, B): gamma = Gamma Y for the additive coordinates, B the shrinkage blocks."""
        F, B = gamma_operator(self.S, R, self.grid, self.cfg)
        WB = self.W if is_infinite(R) else _bmv(B, self.W)
        return F @ apply_Z(WB, self.grid), B

    def _surface(self, R, gamma_y, B):
        if is_infinite(R):
            return apply_Zt(gamma_y, self.grid)[:, 0]
        return np.einsum("jl,jl->j", B[:, 0, :], apply_Zt(gamma_y, self.grid) + self.L / R)

    def evaluate(self, R) -> Evaluation:
        """Fitted values at the design points, tr(M_R) and the grid intercept surface."""
        cutoff = self.cfg.pinv_cutoff
        g, h = _point_operators(self.S_pts, R, cutoff)
        fitted = np.einsum("il,il->i", g, self.L_pts)
        trace = float(np.sum(g * self.W_diag))
        if not is_infinite(R) and R == 0:
            surface = _local_linear(MomentField(self.grid, self.S, self.L), cutoff)[:, 0]
            return Evaluation(fitted, trace, surface)
        Gamma, B = self._gamma_map(R)
        Hq = np.einsum("il,ilc->ic", h, self.Q)
        gamma_y = Gamma @ self.data.Y
        fitted = fitted + Hq @ gamma_y
        trace += float(np.einsum("ic,ci->", Hq, Gamma))
        return Evaluation(fitted, trace, self._surface(R, gamma_y, B))

    def hat(self, R) -> np.ndarray:
        """Full n x n hat matrix (columns are pipeline runs on unit responses)."""
        g, h = _point_operators(self.S_pts, R, self.cfg.pinv_cutoff)
        M = np.einsum("il,ilk->ik", g, self.W_pts)
        if is_infinite(R) or R > 0:
            Gamma, _ = self._gamma_map(R)
            M += np.einsum("il,ilc->ic", h, self.Q) @ Gamma
        return M


def hat_matrix(data: Dataset, grid: Grid, cfg: FitConfig) -> HatMatrix:
    """Hat matrix M_R with column i the fitted values for the i-th unit response."""
    return HatMatrix(Smoother(data, grid, cfg.bandwidths, cfg).hat(cfg.R))
