"""GNSS position and moving-baseline factors, vectorized over many epochs."""
from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

from ..core import batch_skew
from .types import Calibration, NavState


def sqrt_info_from_cov(cov: np.ndarray) -> np.ndarray:
    """Whitening matrices L^-1 for (K, n, n) covariances C = L L^T."""
    cov = np.asarray(cov, dtype=float)
    single = cov.ndim == 2
    cov = cov.reshape(-1, cov.shape[-1], cov.shape[-1])
    n = cov.shape[-1]
    out = np.stack([solve_triangular(np.linalg.cholesky(c), np.eye(n), lower=True) for c in cov]) \
        if len(cov) else np.zeros((0, n, n))
    return out[0] if single else out


def position_eval(R, r, r_BP, z, L, jacobians: bool = True):
    """h = r + R r_BP; Jacobian blocks wrt (r, phi) and r_BP, already whitened."""
    Rl = np.einsum("kij,j->ki", R, r_BP)
    res = np.einsum("kij,kj->ki", L, r + Rl - z)
    if not jacobians:
        return res, None
    K = len(R)
    Jx = np.zeros((K, 3, 9))
    Jx[:, :, 0:3] = L
    Jx[:, :, 6:9] = -L @ R @ batch_skew(np.broadcast_to(r_BP, (K, 3)))
    Jl = np.zeros((K, 3, 6))
    Jl[:, :, 0:3] = L @ R
    return res, (Jx, Jl)


def baseline_eval(R, r_BP, r_BM, z, L, jacobians: bool = True):
    """h = R (r_BM - r_BP); Jacobian blocks wrt phi (inside the 9-state) and lever arms."""
    b = r_BM - r_BP
    res = np.einsum("kij,kj->ki", L, np.einsum("kij,j->ki", R, b) - z)
    if not jacobians:
        return res, None
    K = len(R)
    Jx = np.zeros((K, 3, 9))
    Jx[:, :, 6:9] = L @ R @ batch_skew(np.broadcast_to(r_BP - r_BM, (K, 3)))
    Jl = np.zeros((K, 3, 6))
    LR = L @ R
    Jl[:, :, 0:3] = -LR
    Jl[:, :, 3:6] = LR
    return res, (Jx, Jl)


def position_residual(x: NavState, c: Calibration, z, cov=None):
    """Whitened position residual and Jacobians {'r', 'R', 'r_BP'}."""
    L = np.eye(3) if cov is None else sqrt_info_from_cov(cov)
    res, (Jx, Jl) = position_eval(x.R_IB.matrix[None], x.r_IB[None], c.r_BP,
                                  np.asarray(z, float)[None], L[None])
    return res[0], {"r": Jx[0, :, 0:3], "R": Jx[0, :, 6:9], "r_BP": Jl[0, :, 0:3]}


def moving_baseline_residual(x: NavState, c: Calibration, z, cov=None):
    """Whitened baseline residual and Jacobians {'R', 'r_BP', 'r_BM'}."""
    L = np.eye(3) if cov is None else sqrt_info_from_cov(cov)
    res, (Jx, Jl) = baseline_eval(x.R_IB.matrix[None], c.r_BP, c.r_BM,
                                  np.asarray(z, float)[None], L[None])
    return res[0], {"R": Jx[0, :, 6:9], "r_BP": Jl[0, :, 0:3], "r_BM": Jl[0, :, 3:6]}
