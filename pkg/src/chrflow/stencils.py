"""Sparse difference matrices on a Grid.

The central object is the stiffness matrix K_Lam with u^T K_Lam v the discrete
Dirichlet form.  Its diagonal part uses edge differences (the classical
5-point stencil once divided by the trapezoidal weights), the mixed part uses
cell-centred differences, which keeps K symmetric and positive semidefinite
with constants as its kernel.  The discrete Laplacian is -W^{-1} K, which is
exactly the centred stencil with ghost-node reflection at the boundary.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from numpy.typing import NDArray

from chrflow.mesh import Grid


def lambda_matrix(lam, dim: int) -> NDArray[np.float64]:
    """Validate a constant SPD diffusion tensor; scalars mean lam * I."""
    arr = np.asarray(lam if lam is not None else 1.0, dtype=float)
    if arr.ndim == 0:
        arr = float(arr) * np.eye(dim)
    elif arr.ndim == 1:
        if arr.shape[0] != dim:
            raise ValueError(f"diagonal Lambda needs {dim} entries")
        arr = np.diag(arr)
    if arr.shape != (dim, dim):
        raise ValueError(f"Lambda must be {dim}x{dim}, got {arr.shape}")
    if not np.all(np.isfinite(arr)) or not np.allclose(arr, arr.T, rtol=0, atol=1e-14 * np.abs(arr).max()):
        raise ValueError("Lambda must be symmetric")
    if np.linalg.eigvalsh(arr).min() <= 0:
        raise ValueError("Lambda must be positive definite")
    return arr


def lambda_key(lam, dim: int) -> tuple[float, ...]:
    return tuple(lambda_matrix(lam, dim).ravel().tolist())


def _stiffness_1d(n: int, h: float) -> sp.csr_matrix:
    main = np.full(n, 2.0)
    main[0] = main[-1] = 1.0
    off = -np.ones(n - 1)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr") / h


def _forward_1d(n: int, h: float) -> sp.csr_matrix:
    return sp.diags([-np.ones(n - 1), np.ones(n - 1)], [0, 1], shape=(n - 1, n), format="csr") / h


def _average_1d(n: int) -> sp.csr_matrix:
    return sp.diags([np.full(n - 1, 0.5), np.full(n - 1, 0.5)], [0, 1], shape=(n - 1, n), format="csr")


def _gradient_1d(n: int, h: float) -> sp.csr_matrix:
    g = sp.lil_matrix((n, n))
    g[0, 0:3] = np.array([-3.0, 4.0, -1.0])
    g[n - 1, n - 3 : n] = np.array([1.0, -4.0, 3.0])
    for i in range(1, n - 1):
        g[i, i - 1] = -1.0
        g[i, i + 1] = 1.0
    return (g.tocsr() / (2.0 * h)).tocsr()


@lru_cache(maxsize=128)
def _stiffness_cached(grid: Grid, key: tuple[float, ...]) -> sp.csr_matrix:
    if grid.dim == 1:
        (n,), (h,) = grid.counts, grid.spacing
        return (key[0] * _stiffness_1d(n, h)).tocsr()
    (nx, ny), (hx, hy) = grid.counts, grid.spacing
    wx, wy = grid.axis_weights
    lxx, lxy, _, lyy = key
    K = lxx * sp.kron(_stiffness_1d(nx, hx), sp.diags(wy)) + lyy * sp.kron(sp.diags(wx), _stiffness_1d(ny, hy))
    if lxy != 0.0:
        dx_c = sp.kron(_forward_1d(nx, hx), _average_1d(ny))
        dy_c = sp.kron(_average_1d(nx), _forward_1d(ny, hy))
        mixed = hx * hy * (dx_c.T @ dy_c)
        K = K + lxy * (mixed + mixed.T)
    return K.tocsr()


def stiffness(grid: Grid, lam=None) -> sp.csr_matrix:
    """Symmetric matrix of the form (u, v) -> int Lam grad u . grad v."""
    return _stiffness_cached(grid, lambda_key(lam, grid.dim))


def mass(grid: Grid) -> sp.dia_matrix:
    return sp.diags(grid.quad_weights)


@lru_cache(maxsize=128)
def _laplacian_cached(grid: Grid, key: tuple[float, ...]) -> sp.csr_matrix:
    return (-sp.diags(1.0 / grid.quad_weights) @ _stiffness_cached(grid, key)).tocsr()


def laplacian_matrix(grid: Grid, lam=None) -> sp.csr_matrix:
    """Centred div(Lam grad .) with ghost reflection on every face."""
    return _laplacian_cached(grid, lambda_key(lam, grid.dim))


@lru_cache(maxsize=128)
def gradient_matrices(grid: Grid) -> tuple[sp.csr_matrix, ...]:
    """Nodal partial derivatives: centred inside, second-order one-sided on faces."""
    if grid.dim == 1:
        return (_gradient_1d(grid.counts[0], grid.spacing[0]),)
    (nx, ny), (hx, hy) = grid.counts, grid.spacing
    gx = sp.kron(_gradient_1d(nx, hx), sp.identity(ny), format="csr")
    gy = sp.kron(sp.identity(nx), _gradient_1d(ny, hy), format="csr")
    return gx, gy


@lru_cache(maxsize=64)
def strain_matrices(grid: Grid) -> tuple[sp.csr_matrix, sp.csr_matrix, sp.csr_matrix]:
    """Voigt strain rows (e_xx, e_yy, gamma_xy) acting on stacked (u_x, u_y)."""
    if grid.dim != 2:
        raise ValueError("strain operators need a 2D grid")
    gx, gy = gradient_matrices(grid)
    zero = sp.csr_matrix(gx.shape)
    exx = sp.hstack([gx, zero], format="csr")
    eyy = sp.hstack([zero, gy], format="csr")
    gam = sp.hstack([gy, gx], format="csr")
    return exx, eyy, gam
