"""Manufactured solutions for the linear fourth-order stepper.

Given an exact c(x[, y], t) as a sympy expression, the forcing and both
co-normal boundary data are derived symbolically and lambdified.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import sympy
from numpy.typing import NDArray

from chrflow import stencils
from chrflow.mesh import Grid, build_grid
from chrflow.strongsolver import BiharmonicData, BiharmonicStepper

DEFAULT_SOLUTION = "exp(-t)*cos(pi*x)"


def _broadcast(fn, n):
    def ev(*args):
        return np.broadcast_to(np.asarray(fn(*args), dtype=float), (n,)).copy()

    return ev


class Manufactured:
    """Exact solution of c_t + div(L grad div(L grad c)) = g with its data."""

    def __init__(self, expr: str = DEFAULT_SOLUTION, dim: int = 1, lam=None):
        self.dim = dim
        self.lam = stencils.lambda_matrix(lam, dim)
        t = sympy.Symbol("t")
        xs = sympy.symbols("x y")[:dim]
        c = sympy.sympify(expr, locals={"t": t, **{str(s): s for s in xs}})
        L = sympy.Matrix(self.lam.tolist())

        def flux(u):
            grad = sympy.Matrix([sympy.diff(u, s) for s in xs])
            return L * grad

        def div(v):
            return sum(sympy.diff(v[k], xs[k]) for k in range(dim))

        q = div(flux(c))
        g = sympy.diff(c, t) + div(flux(q))
        self.expr = c
        args = (*xs, t)
        self._c = sympy.lambdify(args, c, "numpy")
        self._g = sympy.lambdify(args, sympy.simplify(g), "numpy")
        self._fa = [sympy.lambdify(args, e, "numpy") for e in flux(c)]
        self._fb = [sympy.lambdify(args, e, "numpy") for e in flux(q)]

    def _eval(self, fn, pts: NDArray[np.float64], t: float) -> NDArray[np.float64]:
        return _broadcast(fn, pts.shape[0])(*[pts[:, k] for k in range(self.dim)], t)

    def exact(self, grid: Grid, t: float) -> NDArray[np.float64]:
        return self._eval(self._c, grid.coords, t)

    def forcing(self, grid: Grid, t: float) -> NDArray[np.float64]:
        return self._eval(self._g, grid.coords, t)

    def _conormal(self, fns, grid: Grid, t: float) -> NDArray[np.float64]:
        pts = grid.coords[grid.bnode]
        comps = np.column_stack([self._eval(f, pts, t) for f in fns])
        return np.sum(comps * grid.bnormal, axis=1)

    def alpha_bc(self, grid: Grid, t: float) -> NDArray[np.float64]:
        """(L grad c).nu per boundary entry."""
        return self._conormal(self._fa, grid, t)

    def beta_bc(self, grid: Grid, t: float) -> NDArray[np.float64]:
        """(L grad div(L grad c)).nu per boundary entry."""
        return self._conormal(self._fb, grid, t)

    def data(self, grid: Grid) -> BiharmonicData:
        return BiharmonicData(
            g=lambda t: self.forcing(grid, t),
            alpha_bc=lambda t: self.alpha_bc(grid, t),
            beta_bc=lambda t: self.beta_bc(grid, t),
            lam=self.lam,
        )


@dataclass(frozen=True)
class MMSResult:
    grid: Grid
    tau: float
    T: float
    c: NDArray[np.float64]
    exact: NDArray[np.float64]

    @property
    def l2_error(self) -> float:
        d = self.c - self.exact
        return float(np.sqrt(self.grid.integrate(d * d)))


def run_manufactured(m: Manufactured, n: int, tau: float, T: float, extents=1.0) -> MMSResult:
    """Integrate the manufactured problem to T with implicit Euler on an n-node grid per axis."""
    grid = build_grid(m.dim, extents, n)
    steps = int(round(T / tau))
    if steps < 1 or abs(steps * tau - T) > 1e-9 * T:
        raise ValueError("T must be a whole number of steps")
    stepper = BiharmonicStepper(grid, tau, m.lam)
    c = m.exact(grid, 0.0)
    for i in range(1, steps + 1):
        t = i * tau
        c = stepper.step(c, m.forcing(grid, t), m.alpha_bc(grid, t), m.beta_bc(grid, t))
    return MMSResult(grid, tau, T, c, m.exact(grid, T))


def observed_order(e_coarse: float, e_mid: float, e_fine: float | None = None, ratio: float = 2.0) -> float:
    """Order from two errors, or from a Richardson triple of solution differences."""
    if e_fine is None:
        return float(np.log(e_coarse / e_mid) / np.log(ratio))
    return float(np.log(abs(e_coarse - e_mid) / abs(e_mid - e_fine)) / np.log(ratio))


def richardson_difference(a: MMSResult, b: MMSResult) -> float:
    """L2 distance of two solutions on the coarser grid's nodes (grids nested by 2)."""
    if a.grid.n_nodes > b.grid.n_nodes:
        a, b = b, a
    if a.grid.n_nodes == b.grid.n_nodes:
        d = a.c - b.c
    else:
        step = (b.grid.counts[0] - 1) // (a.grid.counts[0] - 1)
        fine = b.c.reshape(b.grid.shape)
        sl = tuple(slice(None, None, step) for _ in range(b.grid.dim))
        d = a.c - fine[sl].ravel()
    return float(np.sqrt(a.grid.integrate(d * d)))
