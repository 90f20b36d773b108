"""Free energies, reaction rates, elastic moduli and the total energy.

All evaluators are vectorised over numpy arrays and return arrays of the same
shape (Python floats in, 0-d arrays out; wrap with ``float`` if needed).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from numpy.typing import ArrayLike, NDArray

from chrflow import stencils
from chrflow.errors import DomainError, RateRangeError
from chrflow.mesh import Field, Grid

EXP_LIMIT = 700.0

FREE_ENERGY_KINDS = ("regular_solution", "double_well", "quadratic")
RATE_KINDS = ("butler_volmer", "linear", "truncated_bv")


# --------------------------------------------------------------------------
# free energy densities


@dataclass(frozen=True)
class FreeEnergy:
    """Homogeneous free-energy density f(s).

    ``regular_solution``: omega*s*(1-s) + kt*(s log s + (1-s) log(1-s)) on
    [eps_dom, 1-eps_dom].  ``double_well``: (s^2-1)^2.  ``quadratic``: s^2/2.
    For the polynomial kinds an optional interval [s_lo, s_hi] switches on the
    clamped variant, continued outside by its second-order Taylor polynomial
    so that f'' and f''' are globally bounded.
    """

    kind: str = "regular_solution"
    omega: float = 3.0
    kt: float = 1.0
    eps_dom: float = 1e-9
    s_lo: Optional[float] = None
    s_hi: Optional[float] = None

    def __post_init__(self) -> None:
        if self.kind not in FREE_ENERGY_KINDS:
            raise ValueError(f"unknown free energy kind {self.kind!r}")
        if self.kind == "regular_solution":
            if not self.kt > 0:
                raise ValueError("kt must be positive")
            if not 0 < self.eps_dom < 0.5:
                raise ValueError("eps_dom must lie in (0, 1/2)")
        if (self.s_lo is None) != (self.s_hi is None):
            raise ValueError("s_lo and s_hi must be given together")
        if self.s_lo is not None:
            if self.kind == "regular_solution":
                raise ValueError("clamping applies to polynomial kinds only")
            if not self.s_lo < self.s_hi:
                raise ValueError("need s_lo < s_hi")

    @property
    def clamped(self) -> bool:
        return self.s_lo is not None

    def _raw(self, s: NDArray[np.float64], order: int) -> NDArray[np.float64]:
        if self.kind == "quadratic":
            return (0.5 * s * s, s, np.ones_like(s), np.zeros_like(s))[order]
        if self.kind == "double_well":
            return ((s * s - 1.0) ** 2, 4.0 * s**3 - 4.0 * s, 12.0 * s * s - 4.0, 24.0 * s)[order]
        om, kt = self.omega, self.kt
        if order == 0:
            return om * s * (1.0 - s) + kt * (s * np.log(s) + (1.0 - s) * np.log1p(-s))
        if order == 1:
            return om * (1.0 - 2.0 * s) + kt * (np.log(s) - np.log1p(-s))
        if order == 2:
            return -2.0 * om + kt * (1.0 / s + 1.0 / (1.0 - s))
        return kt * (-1.0 / s**2 + 1.0 / (1.0 - s) ** 2)

    def evaluate(self, s: ArrayLike, order: int = 0) -> NDArray[np.float64]:
        if order not in (0, 1, 2, 3):
            raise ValueError("order must be 0, 1, 2 or 3")
        s = np.asarray(s, dtype=float)
        if self.kind == "regular_solution":
            lo, hi = self.eps_dom, 1.0 - self.eps_dom
            bad = ~((s >= lo) & (s <= hi))
            if np.any(bad):
                idx = int(np.flatnonzero(bad.ravel())[0])
                val = float(s.ravel()[idx])
                raise DomainError(
                    f"concentration {val!r} at node {idx} outside [{lo}, {hi}]", node=idx, value=val
                )
            return self._raw(s, order)
        if not self.clamped:
            return self._raw(s, order)
        out = self._raw(s, order)
        for b, mask in ((self.s_lo, s < self.s_lo), (self.s_hi, s > self.s_hi)):
            if not np.any(mask):
                continue
            d = s[mask] - b
            bb = np.array(b)
            f0, f1, f2 = (float(self._raw(bb, k)) for k in range(3))
            ext = (f0 + f1 * d + 0.5 * f2 * d * d, f1 + f2 * d, np.full_like(d, f2), np.zeros_like(d))[order]
            out = np.array(out, copy=True)
            out[mask] = ext
        return out


def f_eval(fe: FreeEnergy, s: ArrayLike, order: int = 0) -> NDArray[np.float64]:
    """f, f', f'' or f''' of the density at ``s``."""
    return fe.evaluate(s, order)


# --------------------------------------------------------------------------
# reaction rates


def _exp_checked(z: NDArray[np.float64]) -> None:
    if np.any(np.abs(z) > EXP_LIMIT):
        worst = float(np.max(np.abs(z)))
        raise RateRangeError(f"|beta (w - mu_e)| = {worst:.6g} exceeds {EXP_LIMIT}")


@dataclass(frozen=True)
class ReactionRate:
    """Boundary reaction rate R(s, w), decreasing in the chemical potential w.

    ``butler_volmer``: k_ins exp(beta(mu_e - w)) - k_ext s exp(beta(w - mu_e)).
    ``linear``: -kappa w.
    ``truncated_bv``: Butler-Volmer with both exponentials replaced by their
    tangent lines once |w - mu_e| exceeds w_max, giving linear growth.
    """

    kind: str = "butler_volmer"
    k_ins: float = 1.0
    k_ext: float = 1.0
    beta: float = 1.0
    mu_e: float = 0.0
    kappa: float = 1.0
    w_max: float = 5.0

    def __post_init__(self) -> None:
        if self.kind not in RATE_KINDS:
            raise ValueError(f"unknown rate kind {self.kind!r}")
        if self.kind == "linear":
            if self.kappa < 0:
                raise ValueError("kappa must be non-negative")
        else:
            if not (self.k_ins > 0 and self.k_ext >= 0 and self.beta > 0):
                raise ValueError("need k_ins > 0, k_ext >= 0, beta > 0")
            if self.kind == "truncated_bv" and not self.w_max > 0:
                raise ValueError("w_max must be positive")

    @property
    def is_degenerate(self) -> bool:
        """True for the zero rate, whose Robin problem has no unique solution."""
        return self.kind == "linear" and self.kappa == 0.0

    # pieces of the (possibly truncated) exponentials, as functions of z = beta (w - mu_e)

    def _pieces(self, z: NDArray[np.float64]):
        if self.kind == "butler_volmer":
            _exp_checked(z)
            e1, e2 = np.exp(-z), np.exp(z)
            return e1, e2, -e1, e2
        a = self.beta * self.w_max
        ea, ema = np.exp(a), np.exp(-a)
        zc = np.clip(z, -a, a)
        e1c, e2c = np.exp(-zc), np.exp(zc)
        hi, lo = z > a, z < -a
        e1 = np.where(hi, ema * (1.0 - (z - a)), np.where(lo, ea * (1.0 - (z + a)), e1c))
        e2 = np.where(hi, ea * (1.0 + (z - a)), np.where(lo, ema * (1.0 + (z + a)), e2c))
        d1 = np.where(hi, -ema, np.where(lo, -ea, -e1c))
        d2 = np.where(hi, ea, np.where(lo, ema, e2c))
        return e1, e2, d1, d2

    def _primitives(self, z: NDArray[np.float64]):
        # Q1' = e1, Q2' = e2 with the truncated pieces glued continuously
        a = self.beta * self.w_max
        ea, ema = np.exp(a), np.exp(-a)
        zc = np.clip(z, -a, a)
        hi, lo = z > a, z < -a
        dh, dl = z - a, z + a
        q1 = np.where(hi, -ema + ema * (dh - 0.5 * dh * dh), np.where(lo, -ea + ea * (dl - 0.5 * dl * dl), -np.exp(-zc)))
        q2 = np.where(hi, ea + ea * (dh + 0.5 * dh * dh), np.where(lo, ema + ema * (dl + 0.5 * dl * dl), np.exp(zc)))
        return q1, q2

    def rate(self, s: ArrayLike, w: ArrayLike) -> NDArray[np.float64]:
        s, w = np.asarray(s, dtype=float), np.asarray(w, dtype=float)
        if self.kind == "linear":
            return -self.kappa * w + 0.0 * s
        e1, e2, _, _ = self._pieces(self.beta * (w - self.mu_e))
        return self.k_ins * e1 - self.k_ext * s * e2

    def dw(self, s: ArrayLike, w: ArrayLike) -> NDArray[np.float64]:
        """Partial derivative of R in w."""
        s, w = np.asarray(s, dtype=float), np.asarray(w, dtype=float)
        if self.kind == "linear":
            return np.full(np.broadcast(s, w).shape, -self.kappa)
        _, _, d1, d2 = self._pieces(self.beta * (w - self.mu_e))
        return self.beta * (self.k_ins * d1 - self.k_ext * s * d2)

    def antiderivative(self, s: ArrayLike, w: ArrayLike) -> NDArray[np.float64]:
        """G(s, w) = int_0^w R(s, r) dr."""
        s, w = np.asarray(s, dtype=float), np.asarray(w, dtype=float)
        if self.kind == "linear":
            return -0.5 * self.kappa * w * w + 0.0 * s
        b = self.beta
        z = b * (w - self.mu_e)
        z0 = np.full_like(z, -b * self.mu_e)
        if self.kind == "butler_volmer":
            _exp_checked(z)
            _exp_checked(z0)
            # expm1 keeps G accurate for small w
            d1 = -np.exp(-z0) * np.expm1(-(z - z0))
            d2 = np.exp(z0) * np.expm1(z - z0)
        else:
            q1, q2 = self._primitives(z)
            p1, p2 = self._primitives(z0)
            d1, d2 = q1 - p1, q2 - p2
        return (self.k_ins * d1 - self.k_ext * s * d2) / b

    def monotonicity_constant(self, s_min: float = 0.0) -> float:
        """C with (R(s,w2)-R(s,w1))(w2-w1) <= -C|w2-w1|^2 for all s >= s_min."""
        if self.kind == "linear":
            return self.kappa
        if self.kind == "truncated_bv":
            return self.beta * self.k_ins * float(np.exp(-self.beta * self.w_max))
        # Butler-Volmer: AM-GM on the two exponentials, valid while |z| <= EXP_LIMIT
        floor = self.beta * self.k_ins * float(np.exp(-EXP_LIMIT))
        return max(2.0 * self.beta * np.sqrt(self.k_ins * self.k_ext * max(s_min, 0.0)), floor)

    def coercivity_constant(self) -> float:
        """C with -w R(s,w) >= |w|^2/C - C for s in [0, 1]."""
        if self.kind == "linear":
            if self.kappa == 0:
                return float("inf")
            return 1.0 / self.kappa
        cm = self.monotonicity_constant(0.0)
        r_hi = float(self.rate(0.0, 0.0))
        r_lo = float(self.rate(1.0, 0.0))
        r0 = max(abs(r_hi), abs(r_lo))
        return max(2.0 / cm, r0 * r0 / (2.0 * cm))


def rate_eval(r: ReactionRate, s: ArrayLike, w: ArrayLike) -> NDArray[np.float64]:
    return r.rate(s, w)


def g_eval(r: ReactionRate, s: ArrayLike, w: ArrayLike) -> NDArray[np.float64]:
    return r.antiderivative(s, w)


def rate_root(r: ReactionRate, s: float, lo: float = -50.0, hi: float = 50.0, tol: float = 1e-15) -> float:
    """The w with R(s, w) = 0, by bisection (R decreases in w)."""
    flo, fhi = float(r.rate(s, lo)), float(r.rate(s, hi))
    if flo < 0 or fhi > 0:
        raise ValueError("bracket does not enclose a root")
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if float(r.rate(s, mid)) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * max(1.0, abs(mid)):
            break
    return 0.5 * (lo + hi)


# --------------------------------------------------------------------------
# elasticity


@dataclass(frozen=True)
class ElasticParams:
    """Isotropic plane-strain moduli and the lattice misfit e0 (symmetric 2x2)."""

    lame_lambda: float = 1.0
    lame_mu: float = 1.0
    e0: tuple[tuple[float, float], tuple[float, float]] = ((0.0, 0.0), (0.0, 0.0))

    def __post_init__(self) -> None:
        e0 = tuple(tuple(float(v) for v in row) for row in self.e0)
        if len(e0) != 2 or any(len(row) != 2 for row in e0):
            raise ValueError("e0 must be 2x2")
        if abs(e0[0][1] - e0[1][0]) > 1e-14 * (1 + abs(e0[0][1])):
            raise ValueError("e0 must be symmetric")
        object.__setattr__(self, "e0", e0)
        if not (self.lame_mu > 0 and self.lame_lambda + self.lame_mu > 0):
            raise ValueError("need lame_mu > 0 and lame_lambda + lame_mu > 0")

    @property
    def voigt_stiffness(self) -> NDArray[np.float64]:
        lam, mu = self.lame_lambda, self.lame_mu
        return np.array([[lam + 2 * mu, lam, 0.0], [lam, lam + 2 * mu, 0.0], [0.0, 0.0, mu]])

    @property
    def voigt_e0(self) -> NDArray[np.float64]:
        e = self.e0
        return np.array([e[0][0], e[1][1], 2.0 * e[0][1]])

    @property
    def stress_e0(self) -> NDArray[np.float64]:
        """C e0 in Voigt layout."""
        return self.voigt_stiffness @ self.voigt_e0

    @property
    def k0(self) -> float:
        """C e0 : e0."""
        return float(self.voigt_e0 @ self.stress_e0)


@dataclass(frozen=True)
class ModelParams:
    free_energy: FreeEnergy = field(default_factory=FreeEnergy)
    rate: ReactionRate = field(default_factory=ReactionRate)
    rho: float = 1.0
    elasticity: Optional[ElasticParams] = None
    truncation: Optional[float] = None

    def __post_init__(self) -> None:
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if self.truncation is not None and not self.truncation > 0:
            raise ValueError("truncation level must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=float)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


# --------------------------------------------------------------------------
# energies on raw arrays (used by the solvers) and Field wrappers


def voigt_strain(grid: Grid, u: NDArray[np.float64]) -> NDArray[np.float64]:
    """Nodal strain (e_xx, e_yy, gamma_xy), shape (3, n_nodes); u stacked (ux, uy)."""
    flat = np.asarray(u, dtype=float)
    if flat.ndim == 2:
        flat = flat.T.ravel()
    return np.vstack([S @ flat for S in stencils.strain_matrices(grid)])


def elastic_energy(grid: Grid, c: NDArray[np.float64], u: NDArray[np.float64], ep: ElasticParams) -> float:
    eps = voigt_strain(grid, u) - np.outer(ep.voigt_e0, c)
    dens = np.einsum("an,ab,bn->n", eps, ep.voigt_stiffness, eps)
    return 0.5 * grid.integrate(dens)


def elastic_potential(grid: Grid, c: NDArray[np.float64], u: NDArray[np.float64], ep: ElasticParams) -> NDArray[np.float64]:
    """Nodal C(c e0 - e(u)) : e0."""
    return ep.k0 * c - ep.stress_e0 @ voigt_strain(grid, u)


def energy_array(grid: Grid, c: NDArray[np.float64], u: Optional[NDArray[np.float64]], p: ModelParams) -> float:
    K = stencils.stiffness(grid)
    val = grid.integrate(p.free_energy.evaluate(c, 0)) + 0.5 * p.rho * float(c @ (K @ c))
    if p.elasticity is not None:
        if u is None:
            raise ValueError("displacement required when elasticity is on")
        val += elastic_energy(grid, c, u, p.elasticity)
    return val


def potential_array(grid: Grid, c: NDArray[np.float64], u: Optional[NDArray[np.float64]], p: ModelParams) -> NDArray[np.float64]:
    mu = -p.rho * (stencils.laplacian_matrix(grid) @ c) + p.free_energy.evaluate(c, 1)
    if p.elasticity is not None:
        if u is None:
            raise ValueError("displacement required when elasticity is on")
        mu = mu + elastic_potential(grid, c, u, p.elasticity)
    return mu


def _check_u(u: Optional[Field], p: ModelParams) -> Optional[NDArray[np.float64]]:
    if (u is None) != (p.elasticity is None):
        raise ValueError("displacement must be given exactly when elasticity is on")
    return None if u is None else u.values


def total_energy(c: Field, u: Optional[Field], p: ModelParams) -> float:
    """int f(c) + rho/2 |grad c|^2 (+ elastic energy).

    The gradient term is the discrete Dirichlet form c^T K c, i.e. squared
    edge differences, so that the chemical potential below is its exact
    variational derivative.
    """
    return energy_array(c.grid, c.values, _check_u(u, p), p)


def chemical_potential(c: Field, u: Optional[Field], p: ModelParams) -> Field:
    """mu = -rho Lap_h c + f'(c) + C(c e0 - e(u)) : e0 at every node."""
    return Field(c.grid, potential_array(c.grid, c.values, _check_u(u, p), p))
