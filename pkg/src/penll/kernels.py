"""Product Epanechnikov kernel weights and local-linear design moments.

For an output point x the local-linear normal equations are S(x) beta = L(x)
with

    S_{l,l'}(x) = 1/n sum_i K_h(X_i, x) z_l z_l',   L_l(x) = 1/n sum_i K_h(X_i, x) z_l Y_i,

where z_0 = 1 and z_k = (X_ik - x_k) / h_k.  Everything here is linear in Y,
so the per-observation weights ``z_l K_h / n`` are exposed as a tensor that
can be contracted with a single response vector or with the identity (hat
matrix construction).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import BandwidthSpec, Dataset, Grid


def epanechnikov(u):
    """K(u) = 0.75 (1 - u^2) on [-1, 1], zero outside."""
    u = np.asarray(u, dtype=float)
    return np.where(np.abs(u) <= 1.0, 0.75 * (1.0 - u * u), 0.0)


def _epanechnikov_cdf(u):
    u = np.clip(u, -1.0, 1.0)
    return 0.5 + 0.75 * (u - u ** 3 / 3.0)


def boundary_mass(Xk, h):
    """c(X) = int_0^1 K((X - s)/h)/h ds, the kernel mass left inside [0, 1]."""
    Xk = np.asarray(Xk, dtype=float)
    return _epanechnikov_cdf(Xk / h) - _epanechnikov_cdf((Xk - 1.0) / h)


def boundary_weight(X_i, x, bw: BandwidthSpec) -> float:
    """Kernel weight K_h(X_i, x) of one observation for one output point."""
    X_i = np.atleast_1d(np.asarray(X_i, dtype=float))
    x = np.atleast_1d(np.asarray(x, dtype=float))
    w = 1.0
    for k in range(bw.d):
        hk = float(bw.local_h(k, x[k]))
        w *= float(epanechnikov((X_i[k] - x[k]) / hk)) / hk
        if bw.boundary == "renorm":
            w /= float(boundary_mass(X_i[k], hk))
    return w


def _axis_factors(Xk, tk, bw: BandwidthSpec, k: int):
    """Kernel factor and scaled offset of axis k: arrays of shape (len(tk), n)."""
    tk = np.asarray(tk, dtype=float)
    hloc = bw.local_h(k, tk)[:, None]
    u = (Xk[None, :] - tk[:, None]) / hloc
    w = epanechnikov(u) / hloc
    if bw.boundary == "renorm":
        w = w / boundary_mass(Xk, bw.h_per_axis[k])[None, :]
    return w, u


def _weight_tensor(w, offsets):
    """Stack (w, w u_1, ..., w u_d) into shape (p, d+1, n), divided by n."""
    n = w.shape[-1]
    W = np.empty((w.shape[0], len(offsets) + 1, n))
    W[:, 0, :] = w
    for k, u in enumerate(offsets):
        W[:, k + 1, :] = w * u
    W /= n
    return W


def _check_dims(data: Dataset, bw: BandwidthSpec, d: int):
    if data.d != d or bw.d != d:
        raise ValueError(f"dimension mismatch: data d={data.d}, bandwidths d={bw.d}, points d={d}")


def grid_weights(data: Dataset, grid: Grid, bw: BandwidthSpec):
    """Weight tensor W (m, d+1, n) and offset tensor U (m, d+1, n) at grid nodes.

    ``U[:, 0] = 1`` and ``U[:, k] = (X_ik - t_k)/h_k`` so that S = W U^T.
    The product kernel is assembled from per-axis factors, which keeps the
    cost at one multiply per (node, observation).
    """
    _check_dims(data, bw, grid.d)
    d = grid.d
    w = None
    offsets = []
    for k, tk in enumerate(grid.nodes_per_axis):
        wk, uk = _axis_factors(data.X[:, k], tk, bw, k)
        shape = [1] * d + [data.n]
        shape[k] = len(tk)
        w = wk.reshape(shape) if w is None else w * wk.reshape(shape)
        offsets.append(uk.reshape(shape))
    full = grid.shape + (data.n,)
    w = np.broadcast_to(w, full).reshape(grid.m, data.n)
    offsets = [np.broadcast_to(u, full).reshape(grid.m, data.n) for u in offsets]
    return _weight_tensor(w, offsets), _offset_tensor(offsets, grid.m, data.n)


def point_weights(data: Dataset, points, bw: BandwidthSpec):
    """Same as :func:`grid_weights` for an arbitrary (p, d) array of points."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    _check_dims(data, bw, points.shape[1])
    w = np.ones((points.shape[0], data.n))
    offsets = []
    for k in range(points.shape[1]):
        hloc = bw.local_h(k, points[:, k])[:, None]
        u = (data.X[None, :, k] - points[:, k, None]) / hloc
        wk = epanechnikov(u) / hloc
        if bw.boundary == "renorm":
            wk = wk / boundary_mass(data.X[:, k], bw.h_per_axis[k])[None, :]
        w *= wk
        offsets.append(u)
    return _weight_tensor(w, offsets), _offset_tensor(offsets, points.shape[0], data.n)


def _offset_tensor(offsets, p, n):
    U = np.empty((p, len(offsets) + 1, n))
    U[:, 0, :] = 1.0
    for k, u in enumerate(offsets):
        U[:, k + 1, :] = u
    return U


def _moment_matrix(W, U):
    S = np.einsum("pai,pbi->pab", W, U)
    return 0.5 * (S + np.swapaxes(S, 1, 2))


@dataclass(frozen=True)
class MomentField:
    """Per-node moment matrices S (m, d+1, d+1) and vectors L (m, d+1[, batch]).

    ``weights`` (m, d+1, n) is kept when requested so that L can be recomputed
    for other responses without touching the kernel again.
    """

    grid: Grid
    S: np.ndarray
    L: np.ndarray
    weights: Optional[np.ndarray] = None

    def with_response(self, Y) -> "MomentField":
        if self.weights is None:
            raise ValueError("moment field was built without weights")
        return MomentField(self.grid, self.S, self.weights @ np.asarray(Y, dtype=float), self.weights)


def assemble_moments(data: Dataset, grid: Grid, bw: BandwidthSpec, keep_weights: bool = False) -> MomentField:
    W, U = grid_weights(data, grid, bw)
    S = _moment_matrix(W, U)
    L = W @ data.Y
    return MomentField(grid, S, L, W if keep_weights else None)


def moments_at_point(data: Dataset, x, bw: BandwidthSpec):
    """(S(x), L(x)) at a single point."""
    W, U = point_weights(data, np.atleast_2d(x), bw)
    return _moment_matrix(W, U)[0], (W @ data.Y)[0]


def moments_at_points(data: Dataset, points, bw: BandwidthSpec):
    """Moment matrices (p, d+1, d+1) and weight tensor (p, d+1, n) at many points."""
    W, U = point_weights(data, points, bw)
    return _moment_matrix(W, U), W
