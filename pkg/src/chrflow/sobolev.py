"""Fractional Sobolev norms in time and the anisotropic space-time norm.

The Gagliardo double integral is evaluated with the product trapezoidal rule
on all off-diagonal sample pairs.  The diagonal, where the integrand behaves
like |u'(t)|^2 |t - y|^(1-2s), is handled by the generalized Euler-Maclaurin
(Navot) correction: for each sample and each side with room to integrate, the
missing contribution is -zeta(2s-1) h^(2-2s) |u'(t)|^2.  This removes the
leading O(h^(2-2s)) error of the plain rule; u' is the second-order finite
difference of the samples.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb
from typing import Callable, Optional

import numpy as np
from numpy.typing import NDArray
from scipy.special import zeta

from chrflow import _kernels, stencils
from chrflow.mesh import Grid


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """Uniform samples on [t0, t0 + T]; values of shape (m,) or (m, n_nodes)."""

    values: NDArray[np.float64]
    T: float
    t0: float = 0.0
    grid: Optional[Grid] = None

    def __post_init__(self) -> None:
        vals = np.array(self.values, dtype=float)
        if vals.shape[0] < 3:
            raise ValueError("a time series needs at least 3 samples")
        if not self.T > 0:
            raise ValueError("T must be positive")
        if not np.all(np.isfinite(vals)):
            raise ValueError("non-finite samples")
        if self.grid is not None and (vals.ndim != 2 or vals.shape[1] != self.grid.n_nodes):
            raise ValueError("field samples must have shape (m, n_nodes)")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def sample(cls, fn: Callable[[NDArray[np.float64]], NDArray[np.float64]], T: float, m: int, t0: float = 0.0) -> "TimeSeries":
        t = t0 + np.linspace(0.0, T, m)
        return cls(np.asarray(fn(t), dtype=float), T, t0)

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def h(self) -> float:
        return self.T / (self.m - 1)

    @property
    def times(self) -> NDArray[np.float64]:
        return self.t0 + np.linspace(0.0, self.T, self.m)

    @property
    def weights(self) -> NDArray[np.float64]:
        w = np.full(self.m, self.h)
        w[0] = w[-1] = 0.5 * self.h
        return w

    def columns(self) -> NDArray[np.float64]:
        return self.values if self.values.ndim == 2 else self.values[:, None]


def _check_s(s: float) -> None:
    if not 0.0 < s < 1.0:
        raise ValueError(f"s must lie in (0, 1), got {s}")


def _seminorm_sq_columns(cols: NDArray[np.float64], h: float, weights: NDArray[np.float64], s: float) -> NDArray[np.float64]:
    """Squared Gagliardo seminorm of every column of ``cols`` (shape (m, k))."""
    m = cols.shape[0]
    pairs = _kernels.pair_sum(cols, weights, h, s)
    du = np.gradient(cols, h, axis=0, edge_order=2)
    sides = np.full(m, 2.0)
    sides[0] = sides[-1] = 1.0
    band = -zeta(2.0 * s - 1.0) * h ** (2.0 - 2.0 * s)
    diag = band * ((weights * sides) @ (du * du))
    return pairs + diag


def gagliardo_seminorm(u: TimeSeries, s: float) -> float:
    """|u|_{H^s} = (int int |u(x) - u(y)|^2 / |x - y|^(1+2s) dx dy)^(1/2)."""
    _check_s(s)
    if u.values.ndim != 1:
        raise ValueError("scalar time series expected; use aniso_norm for fields")
    sq = _seminorm_sq_columns(u.columns(), u.h, u.weights, s)
    return float(np.sqrt(max(sq[0], 0.0)))


def l2_norm(u: TimeSeries) -> float:
    return float(np.sqrt(u.weights @ (u.values * u.values)))


def derivative_l2(u: TimeSeries) -> float:
    du = np.gradient(u.values, u.h, edge_order=2)
    return float(np.sqrt(u.weights @ (du * du)))


def hs_norm(u: TimeSeries, s: float) -> float:
    """||u||_{L^2} + |u|_{H^s}; plain L^2 when s = 0."""
    if s == 0:
        return l2_norm(u)
    return l2_norm(u) + gagliardo_seminorm(u, s)


def besov_constant(s: float) -> float:
    """Constant of |u|_{H^s(0,T)} <= C(s) T^(1-s) ||u'||_{L^2(0,T)}."""
    return 1.0 / (s * np.sqrt(2.0 * (1.0 - s)))


# --------------------------------------------------------------------------
# space-time norms


def derivative_sq_by_order(grid: Grid, values: NDArray[np.float64], r: int) -> list[NDArray[np.float64]]:
    """[||grad^k u||^2 for k = 0..r], each per row of ``values`` (shape (m, n_nodes)).

    Derivatives are repeated nodal difference stencils; in 2D each mixed
    partial of order k is counted with its multiplicity binom(k, a).
    """
    vals = np.atleast_2d(values)
    G = stencils.gradient_matrices(grid)
    w = grid.quad_weights
    out = [(vals * vals) @ w]
    if grid.dim == 1:
        cur = vals.T
        for _ in range(r):
            cur = G[0] @ cur
            out.append(w @ (cur * cur))
        return out
    for k in range(1, r + 1):
        total = np.zeros(vals.shape[0])
        for a in range(k + 1):
            d = vals.T
            for _ in range(a):
                d = G[0] @ d
            for _ in range(k - a):
                d = G[1] @ d
            total = total + comb(k, a) * (w @ (d * d))
        out.append(total)
    return out


def spatial_derivative_sq(grid: Grid, values: NDArray[np.float64], r: int) -> NDArray[np.float64]:
    """sum_{k<=r} ||grad^k u||^2 per row of ``values``."""
    return np.sum(derivative_sq_by_order(grid, values, r), axis=0)


def aniso_norm(u: TimeSeries, r: int, s: float) -> float:
    """sqrt(int_0^T ||u(t)||^2_{H^r} dt + int_Omega ||u(x, .)||^2_{H^s(0,T)} dx)."""
    if u.grid is None:
        raise ValueError("aniso_norm needs a field-valued time series")
    if int(r) != r or not 0 <= r <= 3:
        raise ValueError("spatial order r must be an integer in 0..3")
    if not 0.0 <= s < 1.0:
        raise ValueError("s must lie in [0, 1)")
    grid = u.grid
    space = float(u.weights @ spatial_derivative_sq(grid, u.values, int(r)))
    l2_t = np.sqrt(u.weights @ (u.values * u.values))
    if s > 0:
        semi = np.sqrt(np.maximum(_seminorm_sq_columns(u.values, u.h, u.weights, s), 0.0))
        per_node = (l2_t + semi) ** 2
    else:
        per_node = l2_t**2
    time = float(grid.quad_weights @ per_node)
    return float(np.sqrt(space + time))


# --------------------------------------------------------------------------
# extension by reflection


def reflect_extend(u: TimeSeries, T_target: float) -> TimeSeries:
    """Even reflection about t0 + T, repeated as needed, restricted to [t0, t0 + T_target].

    The spacing is kept, so T_target is rounded down to a whole number of steps.
    """
    if T_target < u.T * (1 - 1e-12):
        raise ValueError("T_target must be at least T")
    h = u.h
    m_new = int(np.floor(T_target / h + 1e-9)) + 1
    k = np.arange(m_new)
    period = 2 * (u.m - 1)
    pos = k % period
    idx = np.where(pos < u.m, pos, period - pos)
    return TimeSeries(u.values[idx], (m_new - 1) * h, u.t0, u.grid)


def extension_constant(T: float, T_target: float, s: float) -> float:
    """Constant C in ||Eu||_{H^s(0,T_target)} <= C((1 + T^-s)||u||_{L^2} + |u|_{H^s}).

    One reflection (T_target <= 2T) gives C = 2; with k copies the off-diagonal
    blocks are bounded through the distance between non-adjacent copies.
    """
    k = int(np.ceil(T_target / T - 1e-12))
    if k <= 2:
        return 2.0
    return float(max(np.sqrt(3.0 * k), np.sqrt(8.0 * k * zeta(1.0 + 2.0 * s))))


@dataclass(frozen=True)
class BoundCheck:
    check: str
    s: float
    T: float
    lhs: float
    rhs: float
    allowance: float = 0.0

    @property
    def margin(self) -> float:
        return self.rhs * (1.0 + self.allowance) - self.lhs

    @property
    def passed(self) -> bool:
        return bool(self.margin >= 0.0)


def besov_check(u: TimeSeries, s: float, allowance: float = 1e-4) -> BoundCheck:
    lhs = gagliardo_seminorm(u, s)
    rhs = besov_constant(s) * u.T ** (1.0 - s) * derivative_l2(u)
    return BoundCheck("besov_bound", s, u.T, lhs, rhs, allowance)


def stretch_check(fn: Callable[[NDArray[np.float64]], NDArray[np.float64]], s: float, T: float, m: int, reference: float) -> BoundCheck:
    """Compare |u|_{H^s(0,T)} from m samples against T^((1-2s)/2) |u_T|_{H^s(0,1)}.

    ``reference`` is an independently computed |u_T|_{H^s(0,1)}, with
    u_T(x) = u(T x).  The identity error is |lhs - rhs| / rhs.
    """
    lhs = gagliardo_seminorm(TimeSeries.sample(fn, T, m), s)
    rhs = T ** ((1.0 - 2.0 * s) / 2.0) * reference
    return BoundCheck("stretch_identity", s, T, lhs, rhs)


def extension_check(u: TimeSeries, T_target: float, s: float, allowance: float = 1e-4) -> BoundCheck:
    ext = reflect_extend(u, T_target)
    lhs = hs_norm(ext, s)
    rhs = extension_constant(u.T, T_target, s) * ((1.0 + u.T ** (-s)) * l2_norm(u) + gagliardo_seminorm(u, s))
    return BoundCheck("extension_bound", s, u.T, lhs, rhs, allowance)


def random_smooth_series(rng: np.random.Generator, T: float, m: int, modes: int = 6) -> TimeSeries:
    """Random trigonometric polynomial on [0, T] with decaying coefficients."""
    t = np.linspace(0.0, T, m)
    k = np.arange(modes + 1)
    a = rng.normal(size=modes + 1) / (1.0 + k) ** 2
    b = rng.normal(size=modes + 1) / (1.0 + k) ** 2
    arg = np.pi * np.outer(t / T, k)
    return TimeSeries(np.cos(arg) @ a + np.sin(arg) @ b, T)
