"""The additive subspace of grid parameter fields.

A parameter field beta has shape (m, d+1, *batch): per node an intercept and
d slopes.  It is additive when the intercept is a sum of univariate functions
and slope k depends on coordinate k only.  The orthogonal projection onto
that subspace factors as P_add = Z^T Z with Z mapping a field to 2 m* axis
sums (m* = m_1 + ... + m_d):

    gamma = (Z_01 b_0, Z_2 b_0, ..., Z_d b_0, Z_01 b_1, ..., Z_0d b_d)

where Z_0k sums over all axes but k and scales by sqrt(m_k/m), and Z_k is
Z_0k followed by mean removal.  Z has rank 2m* + 1 - d and is applied
matrix-free.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations

import numpy as np

from .core import Grid


@lru_cache(maxsize=64)
def _layout(grid: Grid):
    """Block offsets into gamma and the per-axis scales sqrt(m_k / m)."""
    sizes = list(grid.m_per_axis) * 2
    off = tuple(int(v) for v in np.concatenate([[0], np.cumsum(sizes)]))
    scale = tuple(float(np.sqrt(mk / grid.m)) for mk in grid.m_per_axis)
    return off, scale


def _block_offsets(grid: Grid):
    return np.asarray(_layout(grid)[0])


def apply_Z(beta, grid: Grid) -> np.ndarray:
    """gamma = Z beta, shape (2 m*, *batch)."""
    beta = np.asarray(beta, dtype=float)
    d = grid.d
    _, scale = _layout(grid)
    batch = beta.shape[2:]
    b = beta.reshape(grid.shape + (d + 1,) + batch)
    # one marginal sum per axis, shape (m_k, d+1, *batch)
    marg = []
    for k in range(d):
        others = tuple(a for a in range(d) if a != k)
        s = b.sum(axis=others) if others else b
        marg.append(s * scale[k])
    blocks = []
    for k in range(d):
        s = marg[k][:, 0]
        blocks.append(s - s.mean(axis=0) if k > 0 else s)
    blocks.extend(marg[k][:, k + 1] for k in range(d))
    return np.concatenate(blocks, axis=0)


def apply_Zt(gamma, grid: Grid) -> np.ndarray:
    """beta = Z^T gamma, shape (m, d+1, *batch)."""
    gamma = np.asarray(gamma, dtype=float)
    d, m = grid.d, grid.m
    off, scale = _layout(grid)
    batch = gamma.shape[1:]
    out = np.empty(grid.shape + (d + 1,) + batch)
    tail = (slice(None),) * len(batch)
    inter = None
    for blk in range(2 * d):
        k = blk % d
        g = gamma[off[blk]:off[blk + 1]] * scale[k]
        if blk < d and k > 0:
            g = g - g.mean(axis=0)
        shape = [1] * d + list(batch)
        shape[k] = grid.m_per_axis[k]
        g = g.reshape(shape)
        if blk < d:
            inter = g if inter is None else inter + g
        else:
            out[(Ellipsis, k + 1) + tail] = g
    out[(Ellipsis, 0) + tail] = inter
    return out.reshape((m, d + 1) + batch)


def project_additive(beta, grid: Grid) -> np.ndarray:
    """P_add beta = Z^T Z beta."""
    return apply_Zt(apply_Z(beta, grid), grid)


@lru_cache(maxsize=32)
def _zzt(grid: Grid) -> np.ndarray:
    n = 2 * grid.m_star
    ZZt = apply_Z(apply_Zt(np.eye(n), grid), grid)
    ZZt = 0.5 * (ZZt + ZZt.T)
    ZZt.setflags(write=False)
    return ZZt


def zzt(grid: Grid) -> np.ndarray:
    """Dense Z Z^T (2m* x 2m*), the orthogonal projection onto range(Z)."""
    return _zzt(grid)


@lru_cache(maxsize=32)
def _zt_identity(grid: Grid) -> np.ndarray:
    E = apply_Zt(np.eye(2 * grid.m_star), grid)
    E.setflags(write=False)
    return E


def zt_basis(grid: Grid) -> np.ndarray:
    """Z^T applied to the identity: shape (m, d+1, 2m*)."""
    return _zt_identity(grid)


def additive_components(gamma, grid: Grid):
    """Node values of the univariate pieces encoded in ``gamma``.

    Returns ``(intercepts, slopes)``: lists of d arrays of length m_k such
    that the additive field has intercept ``sum_k intercepts[k][t_k]`` and
    k-th slope ``slopes[k][t_k]``.  Intercept pieces k >= 2 have zero mean.
    """
    gamma = np.asarray(gamma, dtype=float)
    d, m = grid.d, grid.m
    off = _block_offsets(grid)
    intercepts, slopes = [], []
    for blk in range(2 * d):
        k = blk % d
        g = gamma[off[blk]:off[blk + 1]] * np.sqrt(grid.m_per_axis[k] / m)
        if blk < d:
            intercepts.append(g - g.mean(axis=0) if k > 0 else g)
        else:
            slopes.append(g)
    return intercepts, slopes


def interpolation_matrix(grid: Grid, points) -> np.ndarray:
    """Linear map Q (p, d+1, 2m*) from gamma to the additive field at points.

    Each univariate piece is interpolated piecewise linearly on its axis, so
    the map is exact at grid nodes.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    d, m = grid.d, grid.m
    p = points.shape[0]
    off = _block_offsets(grid)
    Q = np.zeros((p, d + 1, 2 * grid.m_star))
    for k in range(d):
        mk = grid.m_per_axis[k]
        T = _hat_weights(points[:, k], mk) * np.sqrt(mk / m)
        Ti = T - T.mean(axis=1, keepdims=True) if k > 0 else T
        Q[:, 0, off[k]:off[k + 1]] = Ti
        Q[:, k + 1, off[d + k]:off[d + k + 1]] = T
    return Q


def _hat_weights(x, mk):
    pos = np.clip(np.asarray(x, dtype=float), 0.0, 1.0) * (mk - 1)
    lo = np.minimum(np.floor(pos).astype(int), mk - 2)
    frac = pos - lo
    T = np.zeros((len(pos), mk))
    rows = np.arange(len(pos))
    T[rows, lo] = 1.0 - frac
    T[rows, lo + 1] += frac
    return T


@dataclass(frozen=True)
class AnovaDecomposition:
    """Grid ANOVA: ``components[u]`` is the effect of the axis subset ``u``
    (0-based tuple, ``()`` the constant) as a full-grid array."""

    grid: Grid
    components: dict
    mean_squares: dict

    @property
    def constant(self) -> float:
        return float(self.components[()].reshape(-1)[0])

    def main_effect(self, k: int) -> np.ndarray:
        return self.components[(k,)]

    def interaction(self, k: int, l: int) -> np.ndarray:
        return self.components[tuple(sorted((k, l)))]

    @property
    def remainder(self) -> np.ndarray:
        out = np.zeros(self.grid.shape)
        for u, c in self.components.items():
            if len(u) >= 3:
                out = out + c
        return out

    def table(self) -> list:
        """Rows (label, mean square) ordered by interaction order."""
        rows = []
        for u in sorted(self.components, key=lambda u: (len(u), u)):
            label = "r_0" if not u else "r_" + "".join(str(k + 1) for k in u)
            rows.append((label, self.mean_squares[u]))
        return rows


def anova_decompose(values, grid: Grid) -> AnovaDecomposition:
    """Orthogonal decomposition of grid values by successive marginal averages.

    The effect of a subset u of axes is the inclusion-exclusion sum over
    v subset of u of the average over all axes outside v.
    """
    f = np.asarray(values, dtype=float).reshape(grid.shape)
    d = grid.d
    means = {}
    for r in range(d + 1):
        for v in combinations(range(d), r):
            others = tuple(a for a in range(d) if a not in v)
            means[v] = f.mean(axis=others, keepdims=True) if others else f
    components, ms = {}, {}
    for r in range(d + 1):
        for u in combinations(range(d), r):
            c = np.zeros([1] * d)
            for s in range(r + 1):
                for v in combinations(u, s):
                    c = c + (-1) ** (r - s) * means[v]
            c = np.broadcast_to(c, grid.shape).copy()
            components[u] = c
            ms[u] = float(np.mean(c * c))
    return AnovaDecomposition(grid, components, ms)
