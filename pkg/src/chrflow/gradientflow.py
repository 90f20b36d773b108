"""Minimizing-movements time stepping for the weak formulation.

One step minimizes  I[c] + tau * A*_{c_prev}(-(c - c_prev)/tau).  Its optimality
system, with mu the Robin inverse of the discrete velocity, is solved by
Newton on the stacked unknowns (c, mu[, u, multipliers]):

    W (c - c_prev)/tau + K mu - B R(c_prev, mu) = 0
    W mu - rho K c - W f'(c) - W el(c, u)       = 0
    A u - M c + C^T lam = 0,   C u = 0            (elasticity only)

Each accepted step is certified against the competitor c = c_prev, which
gives  I[c_i] + tau (A*_i + A(Bbar(c_prev, 0))) <= I[c_prev].
"""

from __future__ import annotations

import csv
import io
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numpy.typing import NDArray

from chrflow import stencils
from chrflow.errors import ConvergenceError, DomainError, MonotonicityError, RateRangeError
from chrflow.mesh import Field, Grid, write_field_csv
from chrflow.operators import (
    NewtonConfig,
    bbar_array,
    elasticity_blocks,
    log_iteration,
    solve_elasticity_array,
    solve_neumann_poisson,
)
from chrflow.physics import ModelParams, ReactionRate, energy_array, potential_array

log = logging.getLogger("chrflow.gradientflow")

STEP_FAILURES = (ConvergenceError, DomainError, MonotonicityError, RateRangeError)

WEAK_COLUMNS = ["i", "t", "energy", "Astar", "Aanchor", "mass", "flux", "newton_iters", "max_residual"]
STRONG_COLUMNS = WEAK_COLUMNS + ["outer_iter", "contraction_ratio", "detrunc_ok"]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time grid on [0, T] with ``steps`` intervals (0 means no stepping)."""

    T: float
    steps: int

    def __post_init__(self) -> None:
        if not (math.isfinite(self.T) and self.T > 0):
            raise ValueError("horizon T must be positive")
        if int(self.steps) != self.steps or self.steps < 0:
            raise ValueError("steps must be a non-negative integer")

    @property
    def tau(self) -> float:
        return self.T / self.steps if self.steps else self.T

    def times(self) -> NDArray[np.float64]:
        return np.array([i * self.tau for i in range(self.steps + 1)]) if self.steps else np.zeros(1)


@dataclass(frozen=True, eq=False)
class State:
    grid: Grid
    c: NDArray[np.float64]
    mu: Optional[NDArray[np.float64]] = None
    u: Optional[NDArray[np.float64]] = None  # stacked (ux, uy)
    t: float = 0.0
    step: int = 0

    @property
    def c_field(self) -> Field:
        return Field(self.grid, self.c)

    @property
    def mu_field(self) -> Optional[Field]:
        return None if self.mu is None else Field(self.grid, self.mu)

    @property
    def u_field(self) -> Optional[Field]:
        if self.u is None:
            return None
        n = self.grid.n_nodes
        return Field(self.grid, np.column_stack([self.u[:n], self.u[n:]]))


@dataclass
class StepReport:
    i: int
    t: float
    energy: float
    astar: float = 0.0
    aanchor: float = 0.0
    mass: float = 0.0
    flux: float = 0.0
    newton_iters: int = 0
    max_residual: float = 0.0
    objective_slack: float = 0.0
    energy_ok: bool = True
    telescoped_slack: float = 0.0
    telescoped_ok: bool = True
    used_fallback: bool = False
    stress_residual: float = 0.0
    outer_iter: Optional[int] = None
    contraction_ratio: Optional[float] = None
    detrunc_ok: Optional[bool] = None
    residual_untruncated: Optional[float] = None

    def row(self, strong: bool = False) -> list[str]:
        vals = [
            str(self.i),
            repr(float(self.t)),
            repr(float(self.energy)),
            repr(float(self.astar)),
            repr(float(self.aanchor)),
            repr(float(self.mass)),
            repr(float(self.flux)),
            str(int(self.newton_iters)),
            repr(float(self.max_residual)),
        ]
        if strong:
            ratio = "" if self.contraction_ratio is None else repr(float(self.contraction_ratio))
            ok = "" if self.detrunc_ok is None else str(bool(self.detrunc_ok)).lower()
            vals += ["" if self.outer_iter is None else str(self.outer_iter), ratio, ok]
        return vals


@dataclass
class Trajectory:
    grid: Grid
    states: list[State]
    reports: list[StepReport]
    meta: dict = field(default_factory=dict)
    error: Optional[BaseException] = None
    kind: str = "weak"
    history: list[float] = field(default_factory=list)

    @property
    def final(self) -> State:
        return self.states[-1]

    @property
    def times(self) -> NDArray[np.float64]:
        return np.array([s.t for s in self.states])

    def concentrations(self) -> NDArray[np.float64]:
        return np.vstack([s.c for s in self.states])

    @property
    def ok(self) -> bool:
        return self.error is None

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        strong = self.kind == "strong"
        w.writerow(STRONG_COLUMNS if strong else WEAK_COLUMNS)
        for r in self.reports:
            w.writerow(r.row(strong))
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text

    def write_snapshots(self, directory, stride: int) -> list[str]:
        paths = []
        if stride <= 0:
            return paths
        for k, st in enumerate(self.states):
            if k % stride == 0 or k == len(self.states) - 1:
                p = os.path.join(directory, f"c_{k:06d}.csv")
                write_field_csv(st.c_field, p)
                paths.append(p)
        return paths


# --------------------------------------------------------------------------
# the A / A* pair


def functional_A_array(grid: Grid, c: NDArray[np.float64], v: NDArray[np.float64], rate: ReactionRate) -> float:
    K = stencils.stiffness(grid)
    bn = grid.boundary_nodes
    g = rate.antiderivative(c[bn], v[bn])
    return 0.5 * float(v @ (K @ v)) - float(grid.bquad_weights[bn] @ g)


def functional_A(c_boundary: Field, v: Field, rate: ReactionRate) -> float:
    """1/2 int |grad v|^2 - int_boundary G(c, v)."""
    return functional_A_array(v.grid, c_boundary.values, v.values, rate)


def conjugate_array(
    grid: Grid,
    c: NDArray[np.float64],
    vstar: NDArray[np.float64],
    rate: ReactionRate,
    cfg: NewtonConfig = NewtonConfig(),
    mu0: Optional[NDArray[np.float64]] = None,
) -> tuple[float, NDArray[np.float64], int]:
    """Value of A*_c at v* together with its maximizer mu = Bbar(c, v*)."""
    if rate.is_degenerate:
        # A = 1/2 |grad v|^2: finite only on mean-zero v*, where it is half the H^-1 norm squared
        w = grid.quad_weights
        mean = float(w @ vstar)
        if abs(mean) > 1e-10 * max(float(w @ np.abs(vstar)), 1e-300):
            return math.inf, np.zeros(grid.n_nodes), 0
        mu = solve_neumann_poisson(Field(grid, vstar - mean / grid.volume)).values
        return 0.5 * float(w @ (vstar * mu)), mu, 0
    mu, info = bbar_array(grid, c, vstar, rate, cfg, mu0)
    value = grid.integrate(vstar * mu) - functional_A_array(grid, c, mu, rate)
    return value, mu, info.iterations


def conjugate_Astar(c_boundary: Field, vstar: Field, rate: ReactionRate, newton: NewtonConfig = NewtonConfig()) -> tuple[float, Field]:
    value, mu, _ = conjugate_array(vstar.grid, c_boundary.values, vstar.values, rate, newton)
    return value, Field(vstar.grid, mu)


def anchor_array(grid: Grid, c: NDArray[np.float64], rate: ReactionRate, cfg: NewtonConfig, mu0=None) -> tuple[float, NDArray[np.float64]]:
    """A_c(Bbar(c, 0)), the minimum of A_c (zero for the degenerate rate)."""
    if rate.is_degenerate:
        return 0.0, np.zeros(grid.n_nodes)
    mu, _ = bbar_array(grid, c, np.zeros(grid.n_nodes), rate, cfg, mu0)
    return functional_A_array(grid, c, mu, rate), mu


# --------------------------------------------------------------------------
# one implicit step


class _StepSystem:
    """Residual and Jacobian of the stacked optimality system of one step."""

    def __init__(self, grid: Grid, p: ModelParams, tau: float, c_prev: NDArray[np.float64]):
        self.grid, self.p, self.tau, self.cp = grid, p, tau, c_prev
        self.n = grid.n_nodes
        self.K = stencils.stiffness(grid)
        self.w = grid.quad_weights
        self.bn = grid.boundary_nodes
        self.wb = grid.bquad_weights[self.bn]
        self.ep = p.elasticity
        if self.ep is not None:
            self.A, self.M, self.C = elasticity_blocks(grid, self.ep)
            self.S = stencils.strain_matrices(grid)
        self.size = 2 * self.n + (2 * self.n + 3 if self.ep is not None else 0)

    def split(self, x):
        n = self.n
        c, mu = x[:n], x[n : 2 * n]
        if self.ep is None:
            return c, mu, None, None
        return c, mu, x[2 * n : 4 * n], x[4 * n :]

    def pack(self, c, mu, u=None, lam=None):
        parts = [c, mu]
        if self.ep is not None:
            parts += [u, np.zeros(3) if lam is None else lam]
        return np.concatenate(parts)

    def boundary_rate(self, mu):
        src = np.zeros(self.n)
        src[self.bn] = self.wb * self.p.rate.rate(self.cp[self.bn], mu[self.bn])
        return src

    def residual(self, x):
        c, mu, u, lam = self.split(x)
        fe, rho, w = self.p.free_energy, self.p.rho, self.w
        F1 = w * (c - self.cp) / self.tau + self.K @ mu - self.boundary_rate(mu)
        F2 = w * mu - rho * (self.K @ c) - w * fe.evaluate(c, 1)
        if self.ep is None:
            return np.concatenate([F1, F2])
        F2 = F2 + self.M.T @ u - w * self.ep.k0 * c
        F3 = self.A @ u - self.M @ c + self.C.T @ lam
        F4 = self.C @ u
        return np.concatenate([F1, F2, F3, F4])

    def jacobian(self, x):
        c, mu, _, _ = self.split(x)
        fe, rho, w = self.p.free_energy, self.p.rho, self.w
        dr = self.p.rate.dw(self.cp[self.bn], mu[self.bn])
        if np.any(dr > 0):
            raise MonotonicityError("reaction rate increases in mu on the boundary")
        bdiag = np.zeros(self.n)
        bdiag[self.bn] = -self.wb * dr
        J11 = sp.diags(w / self.tau)
        J12 = self.K + sp.diags(bdiag)
        d21 = w * fe.evaluate(c, 2)
        if self.ep is not None:
            d21 = d21 + self.ep.k0 * w
        J21 = -rho * self.K - sp.diags(d21)
        J22 = sp.diags(w)
        if self.ep is None:
            return sp.bmat([[J11, J12], [J21, J22]], format="csc")
        return sp.bmat(
            [
                [J11, J12, None, None],
                [J21, J22, self.M.T, None],
                [-self.M, None, self.A, self.C.T],
                [None, None, self.C, None],
            ],
            format="csc",
        )

    def stress_rows(self, x) -> tuple[float, float]:
        if self.ep is None:
            return 0.0, 0.0
        c, _, u, lam = self.split(x)
        r = self.A @ u - self.M @ c + self.C.T @ lam
        return float(np.max(np.abs(r))), float(np.max(np.abs(self.M @ c), initial=0.0))


def _newton(system: _StepSystem, x0: NDArray[np.float64], cfg: NewtonConfig) -> tuple[NDArray[np.float64], int, float]:
    x = x0.copy()
    F = system.residual(x)
    res = float(np.max(np.abs(F)))
    for k in range(cfg.max_iter + 1):
        log_iteration("mm_step", k, res)
        if res <= cfg.abs_tol:
            return x, k, res
        if k == cfg.max_iter:
            break
        d = spla.spsolve(system.jacobian(x), -F)
        if not np.all(np.isfinite(d)):
            break
        phi = float(F @ F)
        step, accepted = 1.0, False
        for _ in range(cfg.max_backtracks):
            trial = x + step * d
            try:
                Ft = system.residual(trial)
            except (DomainError, RateRangeError):
                step *= cfg.backtrack
                continue
            if float(Ft @ Ft) <= (1.0 - 2.0 * cfg.armijo * step) * phi:
                accepted = True
                break
            step *= cfg.backtrack
        if not accepted:
            raise ConvergenceError(f"mm_step line search stalled at residual {res:.3e}", residual=res)
        x, F = trial, Ft
        res = float(np.max(np.abs(F)))
        small_step = np.max(np.abs(step * d)) <= cfg.rel_tol * max(1.0, float(np.max(np.abs(x))))
        if small_step and res <= 100 * cfg.abs_tol:
            return x, k + 1, res
    raise ConvergenceError(f"mm_step Newton did not converge, residual {res:.3e}", residual=res)


def _descend_objective(system: _StepSystem, c: NDArray[np.float64], mu: NDArray[np.float64], cfg: NewtonConfig, iters: int = 200):
    """Preconditioned gradient descent with Armijo on the step objective."""
    grid, p, tau, cp = system.grid, system.p, system.tau, system.cp
    ep = p.elasticity

    def objective(cc, mu_guess):
        u = solve_elasticity_array(grid, cc, ep) if ep is not None else None
        val, mu_a, _ = conjugate_array(grid, cp, -(cc - cp) / tau, p.rate, cfg, mu_guess)
        total = energy_array(grid, cc, u, p) + tau * val
        grad = system.w * (potential_array(grid, cc, u, p) - mu_a)
        return total, grad, mu_a, u

    f2max = float(np.max(np.abs(p.free_energy.evaluate(c, 2))))
    P = sp.csc_matrix(p.rho * system.K + sp.diags(system.w * (1.0 + f2max + 1.0 / tau)))
    solveP = spla.factorized(P)
    J, grad, mu, u = objective(c, mu)
    for k in range(iters):
        d = -solveP(grad)
        slope = float(grad @ d)
        log_iteration("mm_descent", k, float(np.max(np.abs(grad))))
        if -slope <= 1e-28:
            break
        step, moved = 1.0, False
        for _ in range(cfg.max_backtracks):
            trial = c + step * d
            try:
                Jt, gt, mt, ut = objective(trial, mu)
            except (DomainError, RateRangeError, ConvergenceError):
                step *= cfg.backtrack
                continue
            if Jt <= J + cfg.armijo * step * slope:
                c, J, grad, mu, u = trial, Jt, gt, mt, ut
                moved = True
                break
            step *= cfg.backtrack
        if not moved:
            break
    return c, mu, u


def mm_step(prev: State, tg: TimeGrid, p: ModelParams, newton: NewtonConfig = NewtonConfig()) -> tuple[State, StepReport]:
    """Advance one minimizing-movement step and certify the energy inequality."""
    grid, tau, cp = prev.grid, tg.tau, prev.c
    ep = p.elasticity
    system = _StepSystem(grid, p, tau, cp)
    up = prev.u
    if ep is not None and up is None:
        up = solve_elasticity_array(grid, cp, ep)
    mu_guess = prev.mu if prev.mu is not None else potential_array(grid, cp, up, p)
    x0 = system.pack(cp.copy(), mu_guess, up)
    fallback = False
    try:
        x, iters, res = _newton(system, x0, newton)
    except ConvergenceError as first:
        log.warning("step %d: Newton stalled (%s), descending the step objective", prev.step + 1, first)
        fallback = True
        c1, mu1, u1 = _descend_objective(system, cp.copy(), mu_guess, newton)
        try:
            x, iters, res = _newton(system, system.pack(c1, mu1, u1), newton)
        except ConvergenceError as second:
            raise ConvergenceError(
                f"step {prev.step + 1}: no convergence after objective descent ({second})",
                residual=second.residual,
                history=[first.residual, second.residual],
            ) from second
    c, mu, u, _ = system.split(x)
    # surface a domain exit of the accepted iterate with the node index
    p.free_energy.evaluate(c, 0)

    vstar = -(c - cp) / tau
    astar, _, _ = conjugate_array(grid, cp, vstar, p.rate, newton, mu)
    aanchor, _ = anchor_array(grid, cp, p.rate, newton, prev.mu)
    e_prev = energy_array(grid, cp, up, p)
    e_new = energy_array(grid, c, u, p)
    slack = e_prev - (e_new + tau * (astar + aanchor))
    scale = max(abs(e_prev), tau * abs(astar), tau * abs(aanchor), 1e-300)
    bn = grid.boundary_nodes
    flux = float(grid.bquad_weights[bn] @ p.rate.rate(cp[bn], mu[bn]))
    sres, sscale = system.stress_rows(x)
    report = StepReport(
        i=prev.step + 1,
        t=prev.t + tau,
        energy=e_new,
        astar=astar,
        aanchor=aanchor,
        mass=grid.integrate(c),
        flux=flux,
        newton_iters=iters,
        max_residual=res,
        objective_slack=slack,
        energy_ok=bool(slack >= -1e-8 * scale),
        used_fallback=fallback,
        stress_residual=sres / max(sscale, 1e-300) if sscale > 0 else sres,
    )
    new = State(grid, c.copy(), mu.copy(), None if u is None else u.copy(), prev.t + tau, prev.step + 1)
    return new, report


def initial_state(c0: Field, p: ModelParams, u0: Optional[Field] = None) -> State:
    grid = c0.grid
    u = None
    if p.elasticity is not None:
        if grid.dim != 2:
            raise ValueError("elasticity requires a 2D grid")
        u = u0.values.T.ravel().copy() if u0 is not None else solve_elasticity_array(grid, c0.values, p.elasticity)
    mu = potential_array(grid, c0.values, u, p)
    return State(grid, np.array(c0.values, dtype=float), mu, u, 0.0, 0)


def run_weak(c0: Field, tg: TimeGrid, p: ModelParams, newton: NewtonConfig = NewtonConfig(), u0: Optional[Field] = None) -> Trajectory:
    """Sequential minimizing-movement steps from c0.

    A failing step stops the run; the partial trajectory is returned with the
    exception in ``error``.
    """
    grid = c0.grid
    state = initial_state(c0, p, u0)
    e0 = energy_array(grid, state.c, state.u, p)
    traj = Trajectory(
        grid,
        [state],
        [StepReport(i=0, t=0.0, energy=e0, mass=grid.integrate(state.c))],
        meta={"params": p.digest(), "T": tg.T, "steps": tg.steps, "tau": tg.tau, "initial_energy": e0},
        kind="weak",
    )
    scale = max(abs(e0), 1e-300)
    dissipated = 0.0
    for k in range(1, tg.steps + 1):
        try:
            state, rep = mm_step(state, tg, p, newton)
        except STEP_FAILURES as exc:
            log.error("step %d failed: %s", k, exc)
            traj.error = exc
            break
        dissipated += tg.tau * (rep.astar + rep.aanchor)
        rep.telescoped_slack = e0 - (rep.energy + dissipated)
        rep.telescoped_ok = bool(rep.telescoped_slack >= -1e-6 * k * scale)
        traj.states.append(state)
        traj.reports.append(rep)
    return traj
