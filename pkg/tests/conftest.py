"""Independent reference implementations used as test oracles.

Everything here is written with explicit loops over nodes and observations
so that it shares no code path with the vectorised package.
"""

import functools
import itertools

import numpy as np
import pytest

from penll.core import BandwidthSpec, Dataset, Grid


def dense_Z(grid: Grid) -> np.ndarray:
    """Explicit Z matrix (2m* x m(d+1)) built node by node."""
    d, m = grid.d, grid.m
    p = d + 1
    sizes = list(grid.m_per_axis)
    offs = np.concatenate([[0], np.cumsum(sizes * 2)])
    Z = np.zeros((offs[-1], m * p))
    nodes = list(itertools.product(*[range(mk) for mk in sizes]))
    for j, idx in enumerate(nodes):
        for k in range(d):
            w = np.sqrt(sizes[k] / m)
            # intercept block for axis k (centred for k >= 1)
            row0 = offs[k]
            if k == 0:
                Z[row0 + idx[k], j * p] += w
            else:
                for t in range(sizes[k]):
                    Z[row0 + t, j * p] += w * ((1.0 if t == idx[k] else 0.0) - 1.0 / sizes[k])
            # slope block for axis k
            Z[offs[d + k] + idx[k], j * p + k + 1] += w
    return Z


@functools.lru_cache(maxsize=None)
def _quadrature_mass(Xi, h):
    """Mass of K((Xi - s)/h)/h over s in [0, 1], by fine trapezoidal quadrature."""
    lo, hi = max(0.0, Xi - h), min(1.0, Xi + h)
    s = np.linspace(lo, hi, 20001)
    v = (Xi - s) / h
    return float(np.trapezoid(0.75 * (1 - v * v) / h, s))


def scalar_kernel_weight(Xi, x, h):
    """Product Epanechnikov weight with boundary renormalisation, scalar loops."""
    w = 1.0
    for k in range(len(x)):
        u = (Xi[k] - x[k]) / h[k]
        kern = 0.75 * (1 - u * u) if abs(u) <= 1 else 0.0
        w *= kern / h[k] / _quadrature_mass(float(Xi[k]), float(h[k]))
    return w


def loop_moments(X, Y, x, h):
    """S(x), L(x) by summation over observations."""
    n, d = X.shape
    S = np.zeros((d + 1, d + 1))
    L = np.zeros(d + 1)
    for i in range(n):
        w = scalar_kernel_weight(X[i], x, h)
        z = np.concatenate([[1.0], (X[i] - x) / np.asarray(h)])
        S += w * np.outer(z, z) / n
        L += w * z * Y[i] / n
    return S, L


def dense_penalized_solve(S_blocks, L, grid, R):
    """Solve (S + R (I - Z^T Z)) beta = L as one dense m(d+1) system."""
    m, p = L.shape
    S = np.zeros((m * p, m * p))
    for j in range(m):
        S[j * p:(j + 1) * p, j * p:(j + 1) * p] = S_blocks[j]
    Z = dense_Z(grid)
    H = S + R * (np.eye(m * p) - Z.T @ Z)
    return np.linalg.solve(H, L.reshape(-1)).reshape(m, p)


def make_instance(seed, n=20, shape=(4, 4), h=0.5, fn=None):
    rng = np.random.default_rng(seed)
    d = len(shape)
    X = rng.uniform(size=(n, d))
    if fn is None:
        Y = np.sin(2 * X[:, 0]) + X[:, -1] ** 2 + X[:, 0] * X[:, -1] + 0.1 * rng.standard_normal(n)
    else:
        Y = fn(X)
    return Dataset(X, Y), Grid(shape), BandwidthSpec.isotropic(h, d)


@pytest.fixture
def small_instance():
    return make_instance(0)
