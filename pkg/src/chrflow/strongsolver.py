"""Strong formulation: truncation, the biharmonic stepper and Picard iteration.

The truncated model is

    c_t + rho Lap^2 c = f'''(c) |Psi(grad c)|^2 + f''(c) psi(Lap c)
    d_nu c = 0,   rho d_nu Lap c = -R(c, -rho Lap c + f'(c))

Each outer Picard sweep freezes the right-hand side and the boundary datum on
the previous iterate v and solves the resulting linear fourth-order problem by
implicit Euler.  The linear step is written in mixed form with w = -div(L grad c):

    W w = K c - B alpha
    W (c - c_prev)/tau + K w + B beta = W g

and w is eliminated, leaving the SPD system
(W/tau + K W^-1 K) c = W c_prev/tau + W g - B beta + K W^-1 B alpha.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional, Union

import numpy as np
import scipy.sparse as sp
from numpy.typing import NDArray

from chrflow import sobolev, stencils
from chrflow.errors import ConvergenceError, DomainError, RateRangeError
from chrflow.gradientflow import State, StepReport, TimeGrid, Trajectory, anchor_array, conjugate_array
from chrflow.mesh import Field, Grid
from chrflow.operators import LinearSystem, NewtonConfig, log_iteration
from chrflow.physics import FreeEnergy, ModelParams, ReactionRate, energy_array

log = logging.getLogger("chrflow.strongsolver")


# --------------------------------------------------------------------------
# truncation


@dataclass(frozen=True)
class Truncation:
    """psi_alpha: identity on [-alpha, alpha], C^2 ramp of width 1, then constant."""

    alpha: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.alpha) and self.alpha > 0):
            raise ValueError("truncation level must be positive")

    @property
    def plateau(self) -> float:
        return self.alpha + 0.5


def _smoothstep(t):
    return t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)


def psi_eval(tr: Truncation, x, order: int = 0):
    """psi_alpha and its first two derivatives.

    On the ramp, psi' = 1 - S(|x| - alpha) with the quintic smoothstep S.
    """
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    xa = np.asarray(x, dtype=float)
    a = tr.alpha
    ax = np.abs(xa)
    t = np.clip(ax - a, 0.0, 1.0)
    inside = ax <= a
    if order == 0:
        ramp = a + t - t**4 * (2.5 - 3.0 * t + t * t)
        out = np.where(inside, xa, np.sign(xa) * ramp)
    elif order == 1:
        out = np.where(inside, 1.0, 1.0 - _smoothstep(t))
    else:
        out = np.where(inside, 0.0, -np.sign(xa) * 30.0 * t * t * (1.0 - t) ** 2)
    return out if out.ndim else float(out)


def _nodal_derivatives(grid: Grid, c: NDArray[np.float64]):
    G = stencils.gradient_matrices(grid)
    grads = [g @ c for g in G]
    lap = stencils.laplacian_matrix(grid) @ c
    return grads, lap


def bulk_term(grid: Grid, c: NDArray[np.float64], fe: FreeEnergy, alpha: Optional[float]) -> NDArray[np.float64]:
    """f'''(c) |Psi(grad c)|^2 + f''(c) psi(Lap c); untruncated when alpha is None."""
    grads, lap = _nodal_derivatives(grid, c)
    if alpha is not None:
        tr = Truncation(alpha)
        grads = [psi_eval(tr, g) for g in grads]
        lap = psi_eval(tr, lap)
    sq = grads[0] * grads[0]
    for g in grads[1:]:
        sq = sq + g * g
    return fe.evaluate(c, 3) * sq + fe.evaluate(c, 2) * lap


def truncated_laplacian_fprime(c: Field, fe: FreeEnergy, tr: Optional[Truncation]) -> Field:
    return Field(c.grid, bulk_term(c.grid, c.values, fe, None if tr is None else tr.alpha))


def script_R(r: ReactionRate, fe: FreeEnergy, s, w):
    """-R(s, -w + f'(s)), the boundary value of d_nu Lap c for rho = 1."""
    s = np.asarray(s, dtype=float)
    return -r.rate(s, -np.asarray(w, dtype=float) + fe.evaluate(s, 1))


def boundary_flux_datum(grid: Grid, c: NDArray[np.float64], p: ModelParams) -> NDArray[np.float64]:
    """Nodal beta = rho d_nu Lap c = -R(c, -rho Lap c + f'(c)), meaningful on boundary nodes."""
    lap = stencils.laplacian_matrix(grid) @ c
    return -p.rate.rate(c, -p.rho * lap + p.free_energy.evaluate(c, 1))


# --------------------------------------------------------------------------
# linear biharmonic step

BoundaryData = Union[None, float, NDArray[np.float64], Callable]


@dataclass(frozen=True, eq=False)
class BiharmonicData:
    """Data of c_t + div(L grad div(L grad c)) = g.

    ``g``, ``alpha_bc`` and ``beta_bc`` may be constants, arrays (nodal, or
    per boundary entry for the boundary data) or callables of time returning
    such.  ``alpha_bc`` prescribes (L grad c).nu and ``beta_bc`` prescribes
    (L grad div(L grad c)).nu.
    """

    g: object = 0.0
    alpha_bc: object = 0.0
    beta_bc: object = 0.0
    lam: object = None

    def at(self, t: float):
        def ev(x):
            return x(t) if callable(x) else x

        return ev(self.g), ev(self.alpha_bc), ev(self.beta_bc)


class BiharmonicStepper:
    """Factorized implicit-Euler step for a fixed grid, tau and L."""

    def __init__(self, grid: Grid, tau: float, lam=None):
        if not tau > 0:
            raise ValueError("tau must be positive")
        self.grid, self.tau = grid, tau
        self.K = stencils.stiffness(grid, lam)
        self.w = grid.quad_weights
        self.system = _step_system(grid, float(tau), stencils.lambda_key(lam, grid.dim))

    def rhs(self, c_prev, g, alpha_bc, beta_bc) -> NDArray[np.float64]:
        grid, w = self.grid, self.w
        gv = np.broadcast_to(np.asarray(g, dtype=float), (grid.n_nodes,))
        b = w * c_prev / self.tau + w * gv - grid.boundary_source(beta_bc)
        if not (np.ndim(alpha_bc) == 0 and float(alpha_bc) == 0.0):
            b = b + self.K @ (grid.boundary_source(alpha_bc) / w)
        return b

    def step(self, c_prev, g=0.0, alpha_bc=0.0, beta_bc=0.0) -> NDArray[np.float64]:
        b = self.rhs(np.asarray(c_prev, dtype=float), g, alpha_bc, beta_bc)
        return self.system.solve(b, check_tol=1e-8)


@lru_cache(maxsize=32)
def _step_system(grid: Grid, tau: float, key: tuple[float, ...]) -> LinearSystem:
    K = stencils.stiffness(grid, np.reshape(key, (grid.dim, grid.dim)))
    winv = sp.diags(1.0 / grid.quad_weights)
    A = sp.diags(grid.quad_weights / tau) + K @ winv @ K
    return LinearSystem(A.tocsc(), name="biharmonic")


def biharmonic_step(c_prev: Field, data: BiharmonicData, tau: float, t: Optional[float] = None) -> Field:
    """One implicit-Euler step; callables in ``data`` are evaluated at ``t`` (the new time)."""
    g, a, b = data.at(tau if t is None else t)
    stepper = BiharmonicStepper(c_prev.grid, tau, data.lam)
    return Field(c_prev.grid, stepper.step(c_prev.values, g, a, b))


# --------------------------------------------------------------------------
# Picard iteration


def spacetime_h2(grid: Grid, tau: float, E: NDArray[np.float64]) -> float:
    """sqrt(tau sum_i (|e_i|^2 + |grad e_i|^2 + |Lap e_i|^2)) over the rows of E."""
    K = stencils.stiffness(grid)
    w = grid.quad_weights
    KE = (K @ E.T).T
    lap = KE / w
    total = (E * E) @ w + np.einsum("ij,ij->i", E, KE) + (lap * lap) @ w
    return float(np.sqrt(tau * np.sum(total)))


def strong_residual(grid: Grid, c_prev, c, tau: float, p: ModelParams, alpha: Optional[float]) -> float:
    """Defect of one implicit Euler step, max |c - c_prev - tau F(c)| over nodes.

    F(c) = -rho Lap^2 c + rhs(c) with the boundary datum built in.  Measured in
    increment form because the nodal value of Lap^2 c carries an eps/h^4
    roundoff floor.
    """
    K = stencils.stiffness(grid)
    w = grid.quad_weights
    beta = boundary_flux_datum(grid, c, p)
    # K kills constants; removing the mean first keeps the roundoff proportional to the variation
    dev = c - grid.integrate(c) / grid.volume
    flux = (p.rho * (K @ ((K @ dev) / w)) + grid.boundary_source(beta)) / w
    r = (c - c_prev) + tau * (flux - bulk_term(grid, c, p.free_energy, alpha))
    return float(np.max(np.abs(r)))


def _derivative_sup(grid: Grid, c: NDArray[np.float64]) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    grads, lap = _nodal_derivatives(grid, c)
    gnorm = np.sqrt(np.sum([g * g for g in grads], axis=0))
    return gnorm, np.abs(lap)


def _contraction_ratio(history: list[float], floor: float) -> float:
    ratios = [history[k] / history[k - 1] for k in range(1, len(history)) if history[k - 1] > floor]
    return max(ratios) if ratios else 0.0


def picard_solve(
    c0: Field,
    p: ModelParams,
    tg: TimeGrid,
    tol: float = 1e-9,
    max_outer: int = 100,
    compat_level: int = 1,
    allow_untruncated: bool = False,
) -> Trajectory:
    """Whole-trajectory Picard iteration for the (truncated) strong model.

    Stops once the space-time H^2 change drops below ``tol`` and every step's
    nonlinear residual is at most 10 tol.  Raises ConvergenceError carrying the
    history of changes when ``max_outer`` sweeps are not enough.
    """
    grid = c0.grid
    if p.elasticity is not None:
        raise ValueError("the strong pathway has no elasticity coupling")
    if p.truncation is None and not allow_untruncated:
        raise ValueError("strong solves need a truncation level (or allow_untruncated=True)")
    if tg.steps < 1:
        raise ValueError("picard_solve needs at least one time step")
    if compat_level > 0:
        report = compatibility_check(c0, p, compat_level)
        if not report.ok:
            raise ValueError(f"initial data fails compatibility level {compat_level}: {report.summary()}")
    alpha = p.truncation
    tau, n = tg.tau, tg.steps
    stepper = BiharmonicStepper(grid, tau, math.sqrt(p.rho))
    c_init = np.array(c0.values, dtype=float)
    # starting trajectory: one sweep with the data lagged by a step
    V = np.empty((n + 1, grid.n_nodes))
    V[0] = c_init
    try:
        for i in range(1, n + 1):
            V[i] = stepper.step(V[i - 1], bulk_term(grid, V[i - 1], p.free_energy, alpha), 0.0, boundary_flux_datum(grid, V[i - 1], p))
    except (DomainError, RateRangeError) as exc:
        if i == 1:
            raise
        raise ConvergenceError(f"starting sweep left the admissible range at step {i}: {exc}", residual=math.inf) from exc
    history: list[float] = []
    residuals = np.zeros(n)
    scale = max(spacetime_h2(grid, tau, V[1:]), 1.0)
    converged = False
    for k in range(1, max_outer + 1):
        C = np.empty_like(V)
        C[0] = c_init
        try:
            for i in range(1, n + 1):
                g = bulk_term(grid, V[i], p.free_energy, alpha)
                beta = boundary_flux_datum(grid, V[i], p)
                C[i] = stepper.step(C[i - 1], g, 0.0, beta)
        except (DomainError, RateRangeError) as exc:
            if k == 1:
                raise
            raise ConvergenceError(f"Picard iterate {k - 1} left the admissible range: {exc}", residual=math.inf, history=history) from exc
        if not np.all(np.isfinite(C)):
            raise ConvergenceError(f"Picard iterate {k} is not finite", residual=math.inf, history=history)
        d = spacetime_h2(grid, tau, C[1:] - V[1:])
        history.append(d)
        log_iteration("picard", k, d)
        V = C
        if d > 1e12 * scale:
            raise ConvergenceError(f"Picard iteration diverged (change {d:.3e})", residual=d, history=history)
        if d < tol:
            residuals = np.array([strong_residual(grid, V[i - 1], V[i], tau, p, alpha) for i in range(1, n + 1)])
            if residuals.max() <= 10.0 * tol:
                converged = True
                break
    if not converged:
        raise ConvergenceError(
            f"Picard did not converge in {max_outer} sweeps (last change {history[-1]:.3e})",
            residual=history[-1],
            history=history,
        )
    ratio = _contraction_ratio(history, 100.0 * tol)
    return _strong_trajectory(grid, V, tg, p, alpha, history, ratio, residuals)


def _strong_trajectory(grid, V, tg, p, alpha, history, ratio, residuals) -> Trajectory:
    tau = tg.tau
    newton = NewtonConfig()
    mus = [-p.rho * (stencils.laplacian_matrix(grid) @ c) + p.free_energy.evaluate(c, 1) for c in V]
    e0 = energy_array(grid, V[0], None, p)
    states = [State(grid, V[0].copy(), mus[0], None, 0.0, 0)]
    reports = [StepReport(i=0, t=0.0, energy=e0, mass=grid.integrate(V[0]), outer_iter=len(history), contraction_ratio=ratio)]
    gn, lp = _derivative_sup(grid, V[0])
    reports[0].detrunc_ok = alpha is None or bool(max(gn.max(), lp.max()) < alpha)
    bn = grid.boundary_nodes
    for i in range(1, len(V)):
        c, cp = V[i], V[i - 1]
        try:
            astar, _, _ = conjugate_array(grid, cp, -(c - cp) / tau, p.rate, newton, mus[i])
            aanchor, _ = anchor_array(grid, cp, p.rate, newton, mus[i - 1])
        except Exception as exc:  # diagnostic columns only
            log.debug("dual functional unavailable at step %d: %s", i, exc)
            astar = aanchor = math.nan
        gn, lp = _derivative_sup(grid, c)
        ok = alpha is None or bool(max(gn.max(), lp.max()) < alpha)
        rep = StepReport(
            i=i,
            t=i * tau,
            energy=energy_array(grid, c, None, p),
            astar=astar,
            aanchor=aanchor,
            mass=grid.integrate(c),
            flux=float(grid.bquad_weights[bn] @ p.rate.rate(c[bn], mus[i][bn])),
            newton_iters=0,
            max_residual=float(residuals[i - 1]),
            outer_iter=len(history),
            contraction_ratio=ratio,
            detrunc_ok=ok,
        )
        if ok and alpha is not None:
            rep.residual_untruncated = strong_residual(grid, cp, c, tau, p, None)
        reports.append(rep)
        states.append(State(grid, c.copy(), mus[i], None, i * tau, i))
    meta = {"params": p.digest(), "T": tg.T, "steps": tg.steps, "tau": tau, "initial_energy": e0, "alpha": alpha}
    return Trajectory(grid, states, reports, meta=meta, kind="strong", history=list(history))


# --------------------------------------------------------------------------
# a posteriori checks


def detruncate_check(traj: Trajectory, tr: Truncation) -> tuple[bool, Optional[tuple[int, int]]]:
    """True when |grad_h c| and |Lap_h c| stay strictly below alpha at every step and node."""
    for k, st in enumerate(traj.states):
        gn, lp = _derivative_sup(traj.grid, st.c)
        bad = np.flatnonzero((gn >= tr.alpha) | (lp >= tr.alpha))
        if bad.size:
            return False, (k, int(bad[0]))
    return True, None


@dataclass
class CompatibilityReport:
    level: int
    ok: bool
    tolerance: dict[int, float]
    face_residuals: dict[int, list[float]] = field(default_factory=dict)

    def __bool__(self) -> bool:
        return self.ok

    def summary(self) -> str:
        parts = []
        for lvl, res in self.face_residuals.items():
            parts.append(f"level {lvl}: max face residual {max(res):.3e} (tol {self.tolerance[lvl]:.3e})")
        return "; ".join(parts)


def _face_max(grid: Grid, entries: NDArray[np.float64]) -> list[float]:
    return [float(np.max(np.abs(entries[grid.bface == f]))) for f in range(len(grid.faces))]


def compatibility_check(c0: Field, p: ModelParams, level: int = 1) -> CompatibilityReport:
    """Boundary compatibility of the initial data.

    Level 0 checks d_nu c0 = 0; level 1 also checks rho d_nu Lap c0 against
    -R(c0, -rho Lap c0 + f'(c0)).  Tolerances are 1e-8 plus h^2 times the
    interior size of the next derivative, the truncation error of the
    one-sided boundary stencils.
    """
    if level not in (0, 1):
        raise ValueError("compatibility level must be 0 or 1")
    grid, c = c0.grid, np.asarray(c0.values, dtype=float)
    L = stencils.laplacian_matrix(grid)
    h2 = grid.h**2
    inner = grid.interior_mask
    lap = L @ c
    tol = {0: 1e-8 + h2 * float(np.max(np.abs(lap[inner])))}
    res = {0: _face_max(grid, grid.normal_derivative(c))}
    if level >= 1:
        lap2 = L @ lap
        tol[1] = 1e-8 + h2 * p.rho * float(np.max(np.abs(lap2[inner])))
        beta = boundary_flux_datum(grid, c, p)
        mismatch = p.rho * grid.normal_derivative(lap) - grid.entry_values(beta)
        res[1] = _face_max(grid, mismatch)
    ok = all(max(res[lvl]) <= tol[lvl] for lvl in res)
    return CompatibilityReport(level, ok, tol, res)


# --------------------------------------------------------------------------
# smallness measures


def h41_norm(traj: Trajectory) -> float:
    """Discrete sqrt(int ||c||_{H^4}^2 dt + int ||c_t||^2 dt) over the steps."""
    C = traj.concentrations()
    tau = traj.meta["tau"]
    space = sobolev.spatial_derivative_sq(traj.grid, C[1:], 4)
    dt = (C[1:] - C[:-1]) / tau
    w = traj.grid.quad_weights
    return float(np.sqrt(tau * (np.sum(space) + np.sum((dt * dt) @ w))))


def hessian_sup(traj: Trajectory) -> float:
    """max over time of ||grad^2 c||_{L^2}."""
    sq = sobolev.derivative_sq_by_order(traj.grid, traj.concentrations(), 2)[2]
    return float(np.sqrt(np.max(sq)))


def smallness_measure(traj: Trajectory) -> float:
    return h41_norm(traj) + hessian_sup(traj)
