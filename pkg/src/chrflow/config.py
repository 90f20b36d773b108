"""JSON run configuration.

Every section is optional; missing entries take the defaults below and the
filled-in configuration is echoed back by ``RunConfig.to_dict``.  Unknown keys
and inconsistent combinations are rejected with the dotted key path.
"""

from __future__ import annotations

import copy
import json
import math
import os
import re
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np

from chrflow.errors import ConfigError
from chrflow.gradientflow import TimeGrid
from chrflow.manufactured import DEFAULT_SOLUTION, Manufactured
from chrflow.mesh import Field, Grid, build_grid, read_field_csv
from chrflow.operators import NewtonConfig
from chrflow.physics import ElasticParams, FreeEnergy, ModelParams, ReactionRate

DEFAULTS: dict[str, Any] = {
    "grid": {"dim": 1, "extents": 1.0, "counts": 65},
    "free_energy": {"kind": "regular_solution", "omega": 3.0, "kt": 1.0, "eps_dom": 1e-9, "s_lo": None, "s_hi": None},
    "rate": {"kind": "butler_volmer", "k_ins": 1.0, "k_ext": 1.0, "beta": 1.0, "mu_e": 0.0, "kappa": 1.0, "w_max": 5.0},
    "rho": 1.0,
    "elasticity": None,
    "truncation": None,
    "time": {"T": 0.05, "steps": 50},
    "solver": {
        "kind": "weak",
        "abs_tol": 1e-10,
        "rel_tol": 1e-10,
        "max_iter": 50,
        "picard_tol": 1e-9,
        "max_outer": 100,
        "compat_level": 1,
        "waive_detruncation": False,
    },
    "initial": {"kind": "constant", "value": 0.5},
    "output": {"dir": "chrflow_out", "snapshot_stride": 0},
    "seed": 0,
    "verify": {"energy": True, "mass_flux": True, "detruncation": True},
    "manufactured": None,
}

ELASTICITY_DEFAULTS = {"lame_lambda": 1.0, "lame_mu": 1.0, "e0": [[0.0, 0.0], [0.0, 0.0]]}
MANUFACTURED_DEFAULTS = {"expr": DEFAULT_SOLUTION, "lam": None}

INITIAL_KEYS = {
    "constant": {"kind", "value"},
    "random_cosine": {"kind", "mean", "amplitude", "modes"},
    "expression": {"kind", "expr"},
    "equilibrium": {"kind", "bracket"},
    "file": {"kind", "path"},
}


def _line_of(text: Optional[str], key: str) -> Optional[int]:
    if not text:
        return None
    m = re.search(r'"%s"\s*:' % re.escape(key.split(".")[-1]), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


@dataclass(frozen=True)
class RunConfig:
    grid: Grid
    params: ModelParams
    time: TimeGrid
    solver_kind: str
    newton: NewtonConfig
    picard_tol: float
    max_outer: int
    compat_level: int
    waive_detruncation: bool
    initial: dict
    output_dir: str
    snapshot_stride: int
    seed: int
    verify: dict
    raw: dict
    base_dir: str = "."
    manufactured: Optional[Manufactured] = None

    def to_dict(self) -> dict:
        out = copy.deepcopy(self.raw)
        out["time"]["tau"] = self.time.tau
        return out

    def echo(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def initial_field(self) -> Field:
        return build_initial(self.grid, self.params, self.initial, self.seed, self.base_dir)


def _merge(user: dict, defaults: dict, path: str, text: Optional[str]) -> dict:
    out = copy.deepcopy(defaults)
    for key, val in user.items():
        kp = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(f"unknown key {kp!r}", key=kp, line=_line_of(text, key))
        if kp == "initial":
            # per-kind keys, checked later
            if not isinstance(val, dict):
                raise ConfigError("initial must be an object", key=kp, line=_line_of(text, key))
            out[key] = dict(val)
        elif isinstance(defaults[key], dict) and val is not None:
            if not isinstance(val, dict):
                raise ConfigError(f"{kp} must be an object", key=kp, line=_line_of(text, key))
            out[key] = _merge(val, defaults[key], kp, text)
        else:
            out[key] = val
    return out


def _number(d: dict, key: str, path: str, text, positive=False, integer=False, allow_none=False):
    v = d.get(key)
    kp = f"{path}.{key}" if path else key
    if v is None and allow_none:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(f"{kp} must be a finite number", key=kp, line=_line_of(text, key))
    if integer and int(v) != v:
        raise ConfigError(f"{kp} must be an integer", key=kp, line=_line_of(text, key))
    if positive and v <= 0:
        raise ConfigError(f"{kp} must be positive", key=kp, line=_line_of(text, key))
    return int(v) if integer else float(v)


def _wrap(kp: str, text, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{kp}: {exc}", key=kp, line=_line_of(text, kp)) from exc


def parse_config(data: dict, text: Optional[str] = None, base_dir: str = ".") -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    raw = _merge(data, DEFAULTS, "", text)
    if raw["elasticity"] is not None:
        if not isinstance(raw["elasticity"], dict):
            raise ConfigError("elasticity must be an object or null", key="elasticity", line=_line_of(text, "elasticity"))
        raw["elasticity"] = _merge(raw["elasticity"], ELASTICITY_DEFAULTS, "elasticity", text)
    if raw["manufactured"] is not None:
        if not isinstance(raw["manufactured"], dict):
            raise ConfigError("manufactured must be an object or null", key="manufactured", line=_line_of(text, "manufactured"))
        raw["manufactured"] = _merge(raw["manufactured"], MANUFACTURED_DEFAULTS, "manufactured", text)

    g = raw["grid"]
    dim = _number(g, "dim", "grid", text, integer=True)
    if dim not in (1, 2):
        raise ConfigError("grid.dim must be 1 or 2", key="grid.dim", line=_line_of(text, "dim"))
    grid = _wrap("grid", text, build_grid, dim, g["extents"], g["counts"])

    fe = _wrap("free_energy", text, FreeEnergy, **raw["free_energy"])
    rate = _wrap("rate", text, ReactionRate, **raw["rate"])
    rho = _number(raw, "rho", "", text, positive=True)
    trunc = _number(raw, "truncation", "", text, positive=True, allow_none=True)
    ep = None
    if raw["elasticity"] is not None:
        if dim != 2:
            raise ConfigError("elasticity requires a 2D grid", key="elasticity", line=_line_of(text, "elasticity"))
        e = raw["elasticity"]
        ep = _wrap("elasticity", text, ElasticParams, e["lame_lambda"], e["lame_mu"], tuple(tuple(r) for r in e["e0"]))
    params = ModelParams(fe, rate, rho, ep, trunc)
    mms = None
    if raw["manufactured"] is not None:
        mm = raw["manufactured"]
        mms = _wrap("manufactured", text, Manufactured, str(mm["expr"]), dim, mm["lam"])

    t = raw["time"]
    steps = _number(t, "steps", "time", text, integer=True)
    if steps < 0:
        raise ConfigError("time.steps must be non-negative", key="time.steps", line=_line_of(text, "steps"))
    tg = TimeGrid(_number(t, "T", "time", text, positive=True), steps)

    s = raw["solver"]
    kind = s["kind"]
    if kind not in ("weak", "strong"):
        raise ConfigError("solver.kind must be 'weak' or 'strong'", key="solver.kind", line=_line_of(text, "kind"))
    newton = _wrap(
        "solver",
        text,
        NewtonConfig,
        abs_tol=_number(s, "abs_tol", "solver", text, positive=True),
        rel_tol=_number(s, "rel_tol", "solver", text, positive=True),
        max_iter=_number(s, "max_iter", "solver", text, positive=True, integer=True),
    )
    compat = _number(s, "compat_level", "solver", text, integer=True)
    if compat not in (0, 1):
        raise ConfigError("solver.compat_level must be 0 or 1", key="solver.compat_level", line=_line_of(text, "compat_level"))
    if kind == "strong":
        if ep is not None:
            raise ConfigError("the strong solver has no elasticity coupling", key="elasticity", line=_line_of(text, "elasticity"))
        if trunc is None and not s["waive_detruncation"]:
            raise ConfigError(
                "strong solver needs a truncation level unless solver.waive_detruncation is set",
                key="truncation",
                line=_line_of(text, "truncation"),
            )
        if tg.steps < 1:
            raise ConfigError("strong solver needs time.steps >= 1", key="time.steps", line=_line_of(text, "steps"))

    init = raw["initial"]
    ikind = init.get("kind") if isinstance(init, dict) else None
    if ikind not in INITIAL_KEYS:
        raise ConfigError(f"initial.kind must be one of {sorted(INITIAL_KEYS)}", key="initial.kind", line=_line_of(text, "initial"))
    extra = set(init) - INITIAL_KEYS[ikind]
    if extra:
        k = sorted(extra)[0]
        raise ConfigError(f"unknown key 'initial.{k}' for kind {ikind!r}", key=f"initial.{k}", line=_line_of(text, k))
    init = _fill_initial(init, text)
    raw["initial"] = init

    out = raw["output"]
    stride = _number(out, "snapshot_stride", "output", text, integer=True)
    if stride < 0:
        raise ConfigError("output.snapshot_stride must be >= 0", key="output.snapshot_stride", line=_line_of(text, "snapshot_stride"))
    seed = _number(raw, "seed", "", text, integer=True)
    for k, v in raw["verify"].items():
        if not isinstance(v, bool):
            raise ConfigError(f"verify.{k} must be true or false", key=f"verify.{k}", line=_line_of(text, k))

    cfg = RunConfig(
        grid=grid,
        params=params,
        time=tg,
        solver_kind=kind,
        newton=newton,
        picard_tol=_number(s, "picard_tol", "solver", text, positive=True),
        max_outer=_number(s, "max_outer", "solver", text, positive=True, integer=True),
        compat_level=compat,
        waive_detruncation=bool(s["waive_detruncation"]),
        initial=init,
        output_dir=str(out["dir"]),
        snapshot_stride=stride,
        seed=seed,
        verify=dict(raw["verify"]),
        raw=raw,
        base_dir=base_dir,
        manufactured=mms,
    )
    # surface bad initial data (domain, file) before any solve
    try:
        cfg.initial_field()
    except ConfigError:
        raise
    except (ValueError, OSError) as exc:
        raise ConfigError(f"initial: {exc}", key="initial", line=_line_of(text, "initial")) from exc
    return cfg


def _fill_initial(init: dict, text) -> dict:
    kind = init["kind"]
    out = dict(init)
    if kind == "constant":
        out["value"] = _number(init, "value", "initial", text)
    elif kind == "random_cosine":
        out.setdefault("mean", 0.5)
        out.setdefault("amplitude", 0.05)
        out.setdefault("modes", 4)
        _number(out, "mean", "initial", text)
        _number(out, "amplitude", "initial", text)
        _number(out, "modes", "initial", text, positive=True, integer=True)
    elif kind == "expression":
        if not isinstance(init.get("expr"), str):
            raise ConfigError("initial.expr must be a string", key="initial.expr", line=_line_of(text, "expr"))
    elif kind == "equilibrium":
        out.setdefault("bracket", [1e-6, 1 - 1e-6])
    elif kind == "file":
        if not isinstance(init.get("path"), str):
            raise ConfigError("initial.path must be a string", key="initial.path", line=_line_of(text, "path"))
    return out


def random_cosine(grid: Grid, rng: np.random.Generator, mean: float, amplitude: float, modes: int) -> np.ndarray:
    """mean + amplitude * (normalized random cosine series); satisfies d_nu c = 0 on every face."""
    pert = np.zeros(grid.n_nodes)
    for axis in range(grid.dim):
        a = rng.uniform(-1.0, 1.0, modes)
        x = grid.coords[:, axis] / grid.extents[axis]
        for k in range(modes):
            pert += a[k] * np.cos((k + 1) * np.pi * x) / (k + 1) ** 2
    peak = np.max(np.abs(pert))
    return mean + amplitude * pert / peak if peak > 0 else np.full(grid.n_nodes, mean)


def build_initial(grid: Grid, p: ModelParams, init: dict, seed: int = 0, base_dir: str = ".") -> Field:
    kind = init["kind"]
    if kind == "constant":
        vals = np.full(grid.n_nodes, float(init["value"]))
    elif kind == "random_cosine":
        rng = np.random.default_rng(seed)
        vals = random_cosine(grid, rng, init["mean"], init["amplitude"], int(init["modes"]))
    elif kind == "expression":
        import sympy

        syms = sympy.symbols("x y")[: grid.dim]
        fn = sympy.lambdify(syms, sympy.sympify(init["expr"], locals={str(s): s for s in syms}), "numpy")
        vals = grid.sample(fn)
    elif kind == "equilibrium":
        vals = np.full(grid.n_nodes, equilibrium_concentration(p, *init["bracket"]))
    else:
        path = init["path"] if os.path.isabs(init["path"]) else os.path.join(base_dir, init["path"])
        f = read_field_csv(path)
        if f.grid != grid:
            raise ValueError("initial field grid does not match the configured grid")
        vals = f.values
    p.free_energy.evaluate(vals, 0)
    return Field(grid, vals)


def equilibrium_concentration(p: ModelParams, lo: float = 1e-6, hi: float = 1 - 1e-6) -> float:
    """Root of s -> R(s, f'(s)) by bisection: constant states with zero boundary flux."""

    def F(s):
        return float(p.rate.rate(s, p.free_energy.evaluate(s, 1)))

    flo, fhi = F(lo), F(hi)
    if flo * fhi > 0:
        raise ValueError(f"R(s, f'(s)) does not change sign on [{lo}, {hi}]")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = F(mid)
        if fm == 0 or hi - lo < 1e-16:
            return mid
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def load_config(path: str | os.PathLike) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"parse error at line {exc.lineno} column {exc.colno}: {exc.msg}", line=exc.lineno) from exc
    return parse_config(data, text, os.path.dirname(os.path.abspath(path)))

