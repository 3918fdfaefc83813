"""Solvers for the penalized normal equations (S + R (I - P_add)) beta = L.

S is block diagonal with one (d+1)x(d+1) block per grid node and P_add = Z^T Z
has low rank, so both solvers work in the 2m*-dimensional range of Z:

* direct:   beta = (I + A Z^T {I - Z A Z^T}^- Z) (S + R I)^{-1} L
* iterative: gamma <- Z A Z^T gamma + Z (S + R I)^{-1} L,
             beta = A Z^T gamma + (S + R I)^{-1} L

with A = R (S + R I)^{-1}.  For R at or above ``large_R_threshold`` both are
rewritten in terms of A S = R (I - A), which stays well scaled as R grows and
has a finite limit at R = infinity.

L may carry trailing batch axes (m, d+1, *batch); every map here is linear in
L, which is how hat matrices are built.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .additive import apply_Z, apply_Zt, zt_basis, zzt
from .core import ConvergenceError, DegenerateFitError, FitConfig, Grid, R_INF, is_infinite
from .kernels import MomentField

_NEG_EIG_FACTOR = 100.0


def _bmv(B, X):
    """Blockwise product: B (m, p, p) times X (m, p, *batch)."""
    if X.ndim == 2:
        return np.einsum("jab,jb->ja", B, X)
    shape = X.shape
    out = B @ X.reshape(shape[0], shape[1], -1)
    return out.reshape(shape)


def _sym(B):
    return 0.5 * (B + np.swapaxes(B, -1, -2))


@dataclass(frozen=True)
class BlockDiagonalA:
    """Per-node shrinkage blocks A = R (S + R I)^{-1} and companions.

    ``I_minus_A = (S + R I)^{-1} S`` and ``R_I_minus_A = (I + S/R)^{-1} S``.
    """

    R: float
    A: np.ndarray
    I_minus_A: np.ndarray
    R_I_minus_A: np.ndarray


def build_A(moments: MomentField | np.ndarray, R: float) -> BlockDiagonalA:
    S = moments.S if isinstance(moments, MomentField) else np.asarray(moments, dtype=float)
    if is_infinite(R) or not R > 0 or not np.isfinite(R):
        raise ValueError(f"build_A needs a finite R > 0, got {R}")
    p = S.shape[-1]
    eye = np.eye(p)
    if R >= 1.0:
        A = np.linalg.inv(eye + S / R)
        RIA = A @ S
        IA = RIA / R
    else:
        Binv = np.linalg.inv(S + R * eye)
        A = R * Binv
        IA = Binv @ S
        RIA = R * IA
    return BlockDiagonalA(float(R), _sym(A), _sym(IA), _sym(RIA))


def symmetric_pinv(M: np.ndarray, cutoff: float):
    """Pseudo-inverse of a symmetric PSD matrix.

    Eigenvalues below ``cutoff * lambda_max`` are treated as zero.  Raises
    DegenerateFitError when an eigenvalue is clearly negative.  Returns
    ``(pinv, eigenvalues)``; eigenvalues is None when a Cholesky factorisation
    already proves every eigenvalue is above the cutoff, in which case the
    pseudo-inverse is the plain inverse.
    """
    M = 0.5 * (M + M.T)
    try:
        c = cho_factor(M, check_finite=False)
    except np.linalg.LinAlgError:
        c = None
    if c is not None:
        inv = cho_solve(c, np.eye(M.shape[0]), check_finite=False)
        # lambda_min >= 1/||M^-1||_F and lambda_max <= max row sum
        if 1.0 / np.linalg.norm(inv) > cutoff * np.abs(M).sum(axis=1).max():
            return 0.5 * (inv + inv.T), None
    lam, V = np.linalg.eigh(M)
    lmax = max(float(np.abs(lam).max()), np.finfo(float).tiny)
    if lam[0] < -_NEG_EIG_FACTOR * cutoff * lmax:
        raise DegenerateFitError(
            f"reduced system is indefinite: eigenvalue {lam[0]:.3e} (lambda_max {lmax:.3e})",
            eigenvalue=float(lam[0]),
        )
    keep = lam > cutoff * lmax
    inv = np.zeros_like(lam)
    inv[keep] = 1.0 / lam[keep]
    return (V * inv) @ V.T, lam


def blockwise_pinv(S: np.ndarray, cutoff: float) -> np.ndarray:
    """Per-node pseudo-inverse of PSD blocks with a relative eigenvalue cutoff."""
    lam, V = np.linalg.eigh(_sym(S))
    lmax = np.abs(lam).max(axis=-1, keepdims=True)
    keep = lam > cutoff * np.maximum(lmax, np.finfo(float).tiny)
    inv = np.where(keep, 1.0 / np.where(keep, lam, 1.0), 0.0)
    return np.einsum("jak,jk,jbk->jab", V, inv, V)


def _coord_blocks(grid: Grid):
    """(parameter index ell, axis k, centred?) for each of the 2d blocks of gamma."""
    d = grid.d
    return [(0, k, k > 0) for k in range(d)] + [(k + 1, k, False) for k in range(d)]


def reduced_matrix(blocks: np.ndarray, grid: Grid) -> np.ndarray:
    """Z B Z^T for a block-diagonal B, as a dense 2m* x 2m* matrix.

    Each sub-block pairs two univariate blocks of gamma.  On the same axis it
    is diagonal (marginal sums of one entry of B); across axes k != l it is
    the (m_k x m_l) table of marginal sums; intercept blocks k >= 2 are then
    centred on their side.
    """
    d, m = grid.d, grid.m
    p = blocks.shape[-1]
    Bg = np.asarray(blocks).reshape(grid.shape + (p, p))
    coords = _coord_blocks(grid)
    off = np.concatenate([[0], np.cumsum([grid.m_per_axis[k] for _, k, _ in coords])])
    out = np.empty((off[-1], off[-1]))
    for a, (la, ka, ca) in enumerate(coords):
        for b in range(a, len(coords)):
            lb, kb, cb = coords[b]
            T = Bg[..., la, lb]
            scale = np.sqrt(grid.m_per_axis[ka] * grid.m_per_axis[kb]) / m
            if ka == kb:
                others = tuple(i for i in range(d) if i != ka)
                blk = np.diag(T.sum(axis=others) * scale)
            else:
                others = tuple(i for i in range(d) if i not in (ka, kb))
                blk = T.sum(axis=others) * scale if others else T * scale
                if ka > kb:
                    blk = blk.T
            if ca:
                blk = blk - blk.mean(axis=0, keepdims=True)
            if cb:
                blk = blk - blk.mean(axis=1, keepdims=True)
            out[off[a]:off[a + 1], off[b]:off[b + 1]] = blk
            if b != a:
                out[off[b]:off[b + 1], off[a]:off[a + 1]] = blk.T
    return out


def _reduced_matrix_dense(blocks: np.ndarray, grid: Grid) -> np.ndarray:
    E = zt_basis(grid)
    M = apply_Z(_bmv(blocks, E), grid)
    return 0.5 * (M + M.T)


@dataclass(frozen=True)
class ReducedSystem:
    """Lambda (small-R form I - Z A Z^T, or the large-R form
    (I - Z Z^T) + Z A S Z^T) with its pseudo-inverse."""

    matrix: np.ndarray
    pinv: np.ndarray
    eigenvalues: np.ndarray | None
    large_R: bool


def reduced_system(S: np.ndarray, R, grid: Grid, cfg: FitConfig, large: bool | None = None,
                   blocks: BlockDiagonalA | None = None) -> ReducedSystem:
    if is_infinite(R):
        large, B = True, S
    else:
        large = R >= cfg.large_R_threshold if large is None else large
        blocks = blocks if blocks is not None else build_A(S, R)
        B = blocks.R_I_minus_A if large else blocks.A
    if large:
        Lam = np.eye(2 * grid.m_star) - zzt(grid) + reduced_matrix(B, grid)
    else:
        Lam = np.eye(2 * grid.m_star) - reduced_matrix(B, grid)
    pinv, lam = symmetric_pinv(Lam, cfg.pinv_cutoff)
    return ReducedSystem(Lam, pinv, lam, large)


def _check(moments: MomentField, R):
    if not is_infinite(R) and not (R > 0 and np.isfinite(R)):
        raise ValueError(f"solver needs R > 0, got {R}")
    if moments.S.shape[0] != moments.grid.m:
        raise ValueError("moment field does not match its grid")


def solve_direct(moments: MomentField, R, cfg: FitConfig, path: str | None = None) -> np.ndarray:
    """Closed-form solution of the penalized normal equations.

    ``path`` forces the ``"small"`` or ``"large"`` R formula; by default the
    switch happens at ``cfg.large_R_threshold``.  R may be ``R_INF``.
    """
    _check(moments, R)
    grid, S, L = moments.grid, moments.S, moments.L
    large = None if path is None else path == "large"
    if is_infinite(R):
        red = reduced_system(S, R, grid, cfg)
        return apply_Zt(red.pinv @ apply_Z(L, grid), grid)
    blk = build_A(S, R)
    red = reduced_system(S, R, grid, cfg, large=large, blocks=blk)
    if red.large_R:
        AL = _bmv(blk.A, L)
        v = red.pinv @ apply_Z(AL, grid)
        return AL / R + _bmv(blk.A, apply_Zt(v, grid))
    b = _bmv(blk.A, L) / R
    v = red.pinv @ apply_Z(b, grid)
    return b + _bmv(blk.A, apply_Zt(v, grid))


@dataclass
class IterationTrace:
    """Squared gamma increments per step and the final additive coordinates."""

    increments: list = field(default_factory=list)
    gamma: np.ndarray | None = None
    large_R: bool = False
    alpha: float | None = None

    @property
    def iterations(self) -> int:
        return len(self.increments)


def _converged(increments, gamma, tol) -> bool:
    # distance to the fixed point is about rho/(1-rho) times the last step
    scale = tol * max(1.0, float(np.sqrt(np.sum(gamma ** 2))))
    step = np.sqrt(increments[-1])
    if step == 0.0:
        return True
    if len(increments) < 2 or increments[-2] == 0.0:
        return False
    rho = np.sqrt(increments[-1] / increments[-2])
    if rho >= 1.0:
        return False
    return step * max(1.0, rho / (1.0 - rho)) <= scale


def solve_iterative(moments: MomentField, R, cfg: FitConfig, path: str | None = None,
                    gamma0=None):
    """Fixed-point iteration on gamma = Z beta; returns (beta, IterationTrace).

    Stops once the last step, inflated by rho/(1 - rho) with rho the observed
    contraction of successive steps, is below tol * max(1, ||gamma||).
    The large-R variant iterates gamma <- Z (I - alpha A S) Z^T gamma + alpha Z A L
    with alpha = 0.9 / max_j lambda_max(S_j).
    """
    _check(moments, R)
    grid, S, L = moments.grid, moments.S, moments.L
    if is_infinite(R):
        large = True
    elif path is None:
        large = R >= cfg.large_R_threshold
    else:
        large = path == "large"
    if is_infinite(R):
        A = None
        AS = S
        data = L
    else:
        blk = build_A(S, R)
        A = blk.A
        AS = blk.R_I_minus_A
        data = _bmv(A, L) if large else _bmv(A, L) / R
    trace = IterationTrace(large_R=large)
    batch = L.shape[2:]
    gamma = np.zeros((2 * grid.m_star,) + batch) if gamma0 is None else np.array(gamma0, dtype=float)
    if large:
        smax = float(np.linalg.eigvalsh(S).max())
        alpha = 0.9 / smax if smax > 0 else 1.0
        trace.alpha = alpha
        c = alpha * apply_Z(data, grid)
        def step(g):
            f = apply_Zt(g, grid)
            return apply_Z(f - alpha * _bmv(AS, f), grid) + c
    else:
        c = apply_Z(data, grid)
        def step(g):
            return apply_Z(_bmv(A, apply_Zt(g, grid)), grid) + c
    tol = cfg.iteration_tolerance
    for _ in range(int(cfg.max_iterations)):
        new = step(gamma)
        inc = float(np.sum((new - gamma) ** 2))
        trace.increments.append(inc)
        gamma = new
        if _converged(trace.increments, gamma, tol):
            break
    else:
        raise ConvergenceError(
            f"no convergence after {cfg.max_iterations} iterations (last squared increment {trace.increments[-1]:.3e})",
            last_increment=trace.increments[-1],
        )
    trace.gamma = gamma
    if is_infinite(R):
        beta = apply_Zt(gamma, grid)
    elif large:
        beta = _bmv(A, apply_Zt(gamma, grid)) + data / R
    else:
        beta = _bmv(A, apply_Zt(gamma, grid)) + data
    return beta, trace


def residual_norm(moments: MomentField, R, beta) -> float:
    """||(S + R (I - P_add)) beta - L|| / max(1, ||L||).

    For R = infinity the additive normal equations are checked instead:
    beta must lie in the additive subspace and P_add (S beta - L) must vanish.
    """
    grid, S, L = moments.grid, moments.S, moments.L
    beta = np.asarray(beta, dtype=float)
    Sb = _bmv(S, beta)
    scale = max(1.0, float(np.linalg.norm(L)))
    Pb = apply_Zt(apply_Z(beta, grid), grid)
    if is_infinite(R):
        r1 = np.linalg.norm(beta - Pb)
        r2 = np.linalg.norm(apply_Zt(apply_Z(Sb - L, grid), grid))
        return float(np.hypot(r1 * max(1.0, float(np.abs(S).max())), r2)) / scale
    return float(np.linalg.norm(Sb + R * (beta - Pb) - L)) / scale


def gamma_operator(S: np.ndarray, R, grid: Grid, cfg: FitConfig,
                   blocks: BlockDiagonalA | None = None, path: str | None = None):
    """Dense F (2m* x 2m*) and blocks B with gamma = Z beta_R = F Z (B L).

    B is A = R (S + R I)^{-1}, or the identity when R is infinite.  Everything
    that depends on the response sits in Z (B L), so one F serves any number
    of right-hand sides.
    """
    n2 = 2 * grid.m_star
    if is_infinite(R):
        red = reduced_system(S, R, grid, cfg)
        p = S.shape[-1]
        return zzt(grid) @ red.pinv, np.broadcast_to(np.eye(p), S.shape)
    blk = blocks if blocks is not None else build_A(S, R)
    large = None if path is None else path == "large"
    red = reduced_system(S, R, grid, cfg, large=large, blocks=blk)
    LP = red.matrix @ red.pinv
    if red.large_R:
        PLp = zzt(grid) @ red.pinv
        F = np.eye(n2) / R + PLp - (LP - red.pinv + PLp) / R
    else:
        # small-R form: Zb + v - Lambda v with v = Lambda^- Zb and Zb = Z A L / R
        F = (np.eye(n2) + red.pinv - LP) / R
    return F, blk.A


def solve_gamma(moments: MomentField, R, cfg: FitConfig, blocks: BlockDiagonalA | None = None,
                path: str | None = None) -> np.ndarray:
    """gamma = Z beta_R without forming beta (shape (2m*, *batch))."""
    _check(moments, R)
    grid, S, L = moments.grid, moments.S, moments.L
    F, B = gamma_operator(S, R, grid, cfg, blocks=blocks, path=path)
    ZBL = apply_Z(L if is_infinite(R) else _bmv(B, L), grid)
    return np.tensordot(F, ZBL, axes=(1, 0))


def beta_from_gamma(moments: MomentField, R, gamma, blocks: BlockDiagonalA | None = None) -> np.ndarray:
    """beta_R = A Z^T gamma + (S + R I)^{-1} L  (Z^T gamma when R is infinite)."""
    grid = moments.grid
    if is_infinite(R):
        return apply_Zt(gamma, grid)
    blk = blocks if blocks is not None else build_A(moments.S, R)
    return _bmv(blk.A, apply_Zt(gamma, grid) + moments.L / R)
