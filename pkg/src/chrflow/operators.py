"""Discrete differential operators and the elliptic sub-solvers.

Everything is phrased in weak form against nodal hat functions: with W the
trapezoidal mass matrix, K the stiffness matrix and B the boundary quadrature,
the Robin problem -Lap mu = v*, d_nu mu = R(c, mu) reads

    K mu - B R(c, mu) = W v*.

Residuals reported by the solvers are infinity norms of these weak-form
vectors.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numpy.typing import NDArray

from chrflow import stencils
from chrflow.errors import ConvergenceError, MonotonicityError, RateRangeError
from chrflow.mesh import Field, Grid
from chrflow.physics import ElasticParams, ReactionRate, voigt_strain

log = logging.getLogger("chrflow.solver")


@dataclass(frozen=True)
class NewtonConfig:
    abs_tol: float = 1e-10
    rel_tol: float = 1e-10
    max_iter: int = 50
    backtrack: float = 0.5
    armijo: float = 1e-4
    max_backtracks: int = 40

    def __post_init__(self) -> None:
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtrack factor must lie in (0, 1)")
        if not 0 < self.armijo < 0.5:
            raise ValueError("Armijo constant must lie in (0, 1/2)")


def log_iteration(name: str, k: int, residual: float) -> None:
    log.debug("solver=%s iter=%d residual=%.6e", name, k, residual)


class LinearSystem:
    """Sparse symmetric system with a declared kernel, factorised once.

    ``kernel`` is "none", "constants" (bordered with the mean constraint) or
    "rigid" (constraint rows supplied by the caller and already bordered).
    """

    def __init__(self, matrix: sp.spmatrix, kernel: str = "none", name: str = "linear"):
        if kernel not in ("none", "constants", "rigid"):
            raise ValueError(f"unknown kernel {kernel!r}")
        self.matrix = sp.csc_matrix(matrix)
        self.kernel = kernel
        self.name = name
        try:
            self._lu = spla.splu(self.matrix)
        except RuntimeError as exc:
            raise ConvergenceError(f"{name}: singular system ({exc})") from exc

    def solve(self, rhs: NDArray[np.float64], check_tol: Optional[float] = None) -> NDArray[np.float64]:
        x = self._lu.solve(np.asarray(rhs, dtype=float))
        if not np.all(np.isfinite(x)):
            raise ConvergenceError(f"{self.name}: non-finite solution")
        if check_tol is not None:
            res = float(np.max(np.abs(self.matrix @ x - rhs), initial=0.0))
            scale = max(float(np.max(np.abs(rhs), initial=0.0)), 1e-300)
            if res > check_tol * scale:
                raise ConvergenceError(f"{self.name}: residual {res:.3e} above tolerance", residual=res)
        return x


# --------------------------------------------------------------------------
# linear operators


def laplacian(f: Field, lam=None, flux=None) -> Field:
    """div(Lam grad f) with co-normal data ``flux`` (default zero) on the faces.

    Without ``flux`` this is the centred stencil with ghost reflection.  With
    ``flux`` the data enters as a boundary source, so that
    integrate(laplacian(f, flux=g)) == boundary_integrate(g) exactly.
    """
    g = f.grid
    vals = stencils.laplacian_matrix(g, lam) @ f.values
    if flux is not None:
        vals = vals + g.boundary_source(flux) / g.quad_weights
    return Field(g, vals)


def normal_derivative(f: Field) -> NDArray[np.float64]:
    """One-sided second-order outward derivative, one value per boundary entry."""
    return f.grid.normal_derivative(f.values)


@lru_cache(maxsize=64)
def _poisson_system(grid: Grid, key: tuple[float, ...]) -> LinearSystem:
    K = stencils.stiffness(grid, np.reshape(key, (grid.dim, grid.dim)))
    w = grid.quad_weights[:, None]
    A = sp.bmat([[K, sp.csr_matrix(w)], [sp.csr_matrix(w.T), None]])
    return LinearSystem(A, kernel="constants", name="neumann_poisson")


def solve_neumann_poisson(g: Field, lam=None) -> Field:
    """Mean-zero v with -div(Lam grad v) = g and zero co-normal flux."""
    grid = g.grid
    vals = g.values
    scale = grid.integrate(np.abs(vals))
    mean = grid.integrate(vals)
    if abs(mean) > 1e-10 * max(scale, 1e-300) and scale > 0:
        raise ValueError(f"right-hand side has non-zero integral {mean:.3e}")
    sys = _poisson_system(grid, stencils.lambda_key(lam, grid.dim))
    rhs = np.concatenate([grid.quad_weights * (vals - mean / grid.volume), [0.0]])
    v = sys.solve(rhs)[:-1]
    lap = stencils.laplacian_matrix(grid, lam) @ v
    res = float(np.max(np.abs(-lap - vals), initial=0.0))
    gmax = float(np.max(np.abs(vals), initial=0.0))
    if res > 1e-8 * max(gmax, 1e-300) and gmax > 0:
        raise ConvergenceError(f"neumann_poisson residual {res:.3e}", residual=res)
    return Field(grid, v)


@lru_cache(maxsize=64)
def _shifted_system(grid: Grid) -> LinearSystem:
    return LinearSystem(stencils.stiffness(grid) + stencils.mass(grid), name="dual_h1")


def h1_norm(f: Field) -> float:
    K = stencils.stiffness(f.grid)
    v = f.values
    return float(np.sqrt(v @ (K @ v) + f.grid.integrate(v * v)))


def dual_h1_riesz(g: Field) -> Field:
    """z with (-Lap_h + I) z = g; the Riesz representative of g in H^1."""
    grid = g.grid
    return Field(grid, _shifted_system(grid).solve(grid.quad_weights * g.values, check_tol=1e-10))


def dual_h1_norm(g: Field) -> float:
    z = dual_h1_riesz(g)
    return float(np.sqrt(max(g.grid.integrate(g.values * z.values), 0.0)))


# --------------------------------------------------------------------------
# nonlinear Robin problem


def robin_operator(grid: Grid, c: NDArray[np.float64], v: NDArray[np.float64], rate: ReactionRate) -> NDArray[np.float64]:
    """Weak-form vector of B_c(v): K v - B R(c, v)."""
    bn = grid.boundary_nodes
    src = np.zeros(grid.n_nodes)
    src[bn] = grid.bquad_weights[bn] * rate.rate(c[bn], v[bn])
    return stencils.stiffness(grid) @ v - src


def _robin_jacobian(grid: Grid, c, v, rate: ReactionRate) -> sp.csc_matrix:
    bn = grid.boundary_nodes
    dr = rate.dw(c[bn], v[bn])
    if np.any(dr >= 0):
        k = int(bn[np.flatnonzero(dr >= 0)[0]])
        raise MonotonicityError(f"boundary Jacobian entry dR/dw = {float(np.max(dr)):.3e} >= 0 at node {k}")
    diag = np.zeros(grid.n_nodes)
    diag[bn] = -grid.bquad_weights[bn] * dr
    return sp.csc_matrix(stencils.stiffness(grid) + sp.diags(diag))


@dataclass
class SolveInfo:
    iterations: int
    residual: float
    used_fallback: bool = False


def bbar_array(
    grid: Grid,
    c: NDArray[np.float64],
    vstar: NDArray[np.float64],
    rate: ReactionRate,
    cfg: NewtonConfig = NewtonConfig(),
    mu0: Optional[NDArray[np.float64]] = None,
) -> tuple[NDArray[np.float64], SolveInfo]:
    if rate.is_degenerate:
        raise MonotonicityError("zero reaction rate: the Robin problem is not uniquely solvable")
    rhs = grid.quad_weights * vstar
    mu = np.zeros(grid.n_nodes) if mu0 is None else np.array(mu0, dtype=float)

    def resid(m):
        return robin_operator(grid, c, m, rate) - rhs

    F = resid(mu)
    res0 = float(np.max(np.abs(F), initial=0.0))
    res = res0
    total = 0
    for k in range(cfg.max_iter + 1):
        log_iteration("bbar", k, res)
        if res <= cfg.abs_tol:
            return mu, SolveInfo(k, res)
        if k == cfg.max_iter:
            break
        J = _robin_jacobian(grid, c, mu, rate)
        d = spla.spsolve(J, -F)
        phi = float(F @ F)
        step, accepted = 1.0, False
        for _ in range(cfg.max_backtracks):
            trial = mu + step * d
            try:
                Ft = resid(trial)
            except RateRangeError:
                step *= cfg.backtrack
                continue
            if float(Ft @ Ft) <= (1.0 - 2.0 * cfg.armijo * step) * phi:
                accepted = True
                break
            step *= cfg.backtrack
        total = k + 1
        if not accepted:
            mu, F = _robin_picard(grid, c, rhs, rate, mu, cfg)
            res = float(np.max(np.abs(F), initial=0.0))
            if res <= cfg.abs_tol:
                return mu, SolveInfo(total, res, used_fallback=True)
            continue
        mu, F = trial, Ft
        res = float(np.max(np.abs(F), initial=0.0))
        if np.max(np.abs(step * d), initial=0.0) <= cfg.rel_tol * max(1.0, float(np.max(np.abs(mu)))) and res <= 100 * cfg.abs_tol:
            return mu, SolveInfo(total, res)
    raise ConvergenceError(f"bbar did not converge, residual {res:.3e}", residual=res)


def _robin_picard(grid, c, rhs, rate, mu, cfg, sweeps: int = 200):
    """Monotone fixed-point iteration on the Robin term, used when line search stalls."""
    bn = grid.boundary_nodes
    wb = grid.bquad_weights[bn]
    K = stencils.stiffness(grid)
    F = robin_operator(grid, c, mu, rate) - rhs
    for k in range(sweeps):
        lip = 2.0 * float(np.max(np.abs(rate.dw(c[bn], mu[bn]))))
        diag = np.zeros(grid.n_nodes)
        diag[bn] = lip * wb
        src = np.zeros(grid.n_nodes)
        src[bn] = wb * (rate.rate(c[bn], mu[bn]) + lip * mu[bn])
        mu = spla.spsolve(sp.csc_matrix(K + sp.diags(diag)), rhs + src)
        F = robin_operator(grid, c, mu, rate) - rhs
        res = float(np.max(np.abs(F), initial=0.0))
        log_iteration("bbar_picard", k, res)
        if res <= cfg.abs_tol:
            break
    return mu, F


def bbar(c: Field, vstar: Field, rate: ReactionRate, newton: NewtonConfig = NewtonConfig()) -> Field:
    """Solve -Lap mu = v* in the domain, d_nu mu = R(c, mu) on the boundary.

    Only the boundary values of ``c`` enter.
    """
    mu, _ = bbar_array(c.grid, c.values, vstar.values, rate, newton)
    return Field(c.grid, mu)


# --------------------------------------------------------------------------
# plane-strain elasticity


@lru_cache(maxsize=32)
def elasticity_blocks(grid: Grid, ep: ElasticParams):
    """Stiffness A (2N x 2N), coupling matrix M (2N x N) with A u = M c, constraints C (3 x 2N)."""
    if grid.dim != 2:
        raise ValueError("elasticity requires a 2D grid")
    S = stencils.strain_matrices(grid)
    W = stencils.mass(grid)
    D = ep.voigt_stiffness
    sig0 = ep.stress_e0
    A = sum(D[a, b] * (S[a].T @ W @ S[b]) for a in range(3) for b in range(3) if D[a, b] != 0.0)
    M = sum(sig0[a] * (S[a].T @ W) for a in range(3) if sig0[a] != 0.0)
    if isinstance(M, int):
        M = sp.csr_matrix((2 * grid.n_nodes, grid.n_nodes))
    w = grid.quad_weights
    gx, gy = stencils.gradient_matrices(grid)
    n = grid.n_nodes
    C = sp.vstack(
        [
            sp.hstack([sp.csr_matrix(w[None, :]), sp.csr_matrix((1, n))]),
            sp.hstack([sp.csr_matrix((1, n)), sp.csr_matrix(w[None, :])]),
            sp.hstack([sp.csr_matrix(-(w @ gy)[None, :]), sp.csr_matrix((w @ gx)[None, :])]),
        ]
    ).tocsr()
    return sp.csr_matrix(A), sp.csr_matrix(M), C


@lru_cache(maxsize=32)
def _elasticity_system(grid: Grid, ep: ElasticParams) -> LinearSystem:
    A, _, C = elasticity_blocks(grid, ep)
    return LinearSystem(sp.bmat([[A, C.T], [C, None]]), kernel="rigid", name="elasticity")


def solve_elasticity_array(grid: Grid, c: NDArray[np.float64], ep: ElasticParams) -> NDArray[np.float64]:
    """Stacked displacement (ux, uy) of length 2N."""
    A, M, C = elasticity_blocks(grid, ep)
    rhs = np.concatenate([M @ c, np.zeros(3)])
    x = _elasticity_system(grid, ep).solve(rhs)
    u = x[: 2 * grid.n_nodes]
    scale = float(np.max(np.abs(rhs), initial=0.0))
    res = float(np.max(np.abs(A @ u - rhs[:-3]), initial=0.0))
    if scale > 0 and res > 1e-8 * scale:
        raise ConvergenceError(f"elasticity residual {res:.3e}", residual=res)
    return u


def solve_elasticity(c: Field, ep: ElasticParams) -> Field:
    """Displacement with zero weak stress residual, rigid motions removed."""
    u = solve_elasticity_array(c.grid, c.values, ep)
    n = c.grid.n_nodes
    return Field(c.grid, np.column_stack([u[:n], u[n:]]))


def stress(grid: Grid, c: NDArray[np.float64], u: NDArray[np.float64], ep: ElasticParams) -> NDArray[np.float64]:
    """Nodal Voigt stress C(e(u) - c e0), shape (3, N)."""
    eps = voigt_strain(grid, u) - np.outer(ep.voigt_e0, c)
    return ep.voigt_stiffness @ eps
