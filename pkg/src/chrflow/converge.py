"""Refinement studies behind ``chrflow converge``.

``space``  manufactured fourth-order problem, grids n0, 2n0-1, ...; error vs exact.
``time``   steps doubled per level; difference to the next finer level, using the
           manufactured problem when the configuration has one (the spatial
           error then cancels) and the configured solver otherwise.
``picard`` self-convergence in tau of the strong pathway on the configured model.

Levels run concurrently on up to CHRFLOW_THREADS worker threads.
"""

from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from chrflow.config import RunConfig, build_initial
from chrflow.gradientflow import TimeGrid, run_weak
from chrflow.manufactured import run_manufactured
from chrflow.strongsolver import picard_solve

KINDS = ("space", "time", "picard")


@dataclass
class Level:
    level: int
    n: int
    steps: int
    h: float
    tau: float
    error: float = float("nan")
    order: Optional[float] = None


@dataclass
class ConvergenceStudy:
    kind: str
    levels: list[Level]
    fitted_order: float
    monotone: bool

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["level", "n", "steps", "h", "tau", "error", "order"])
        for lv in self.levels:
            w.writerow([lv.level, lv.n, lv.steps, repr(lv.h), repr(lv.tau), repr(lv.error), "" if lv.order is None else repr(lv.order)])
        w.writerow(["fit", "", "", "", "", "", repr(self.fitted_order)])
        return buf.getvalue()


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("CHRFLOW_THREADS", "1")))
    except ValueError:
        return 1


def _map(fn, items):
    workers = min(thread_count(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _finish(kind: str, levels: list[Level], ratio: float = 2.0) -> ConvergenceStudy:
    errs = np.array([lv.error for lv in levels])
    for k in range(1, len(levels)):
        if errs[k] > 0 and errs[k - 1] > 0:
            levels[k].order = float(np.log(errs[k - 1] / errs[k]) / np.log(ratio))
    good = errs > 0
    if good.sum() >= 2:
        x = np.log(ratio) * np.arange(len(levels))[good]
        slope = np.polyfit(x, np.log(errs[good]), 1)[0]
        fitted = float(-slope)
    else:
        fitted = float("nan")
    monotone = bool(np.all(np.diff(errs) < 0))
    return ConvergenceStudy(kind, levels, fitted, monotone)


def study(cfg: RunConfig, kind: str, levels: int) -> ConvergenceStudy:
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    if levels < 3:
        raise ValueError("a convergence study needs at least 3 levels")
    grid, tg = cfg.grid, cfg.time
    if tg.steps < 1:
        raise ValueError("convergence studies need time.steps >= 1")
    if kind == "space":
        if cfg.manufactured is None:
            raise ValueError("space convergence needs a 'manufactured' section")
        n0 = grid.counts[0]
        counts = [(n0 - 1) * 2**k + 1 for k in range(levels)]

        def run(k):
            res = run_manufactured(cfg.manufactured, counts[k], tg.tau, tg.T, grid.extents)
            return Level(k, counts[k], tg.steps, res.grid.h, tg.tau, res.l2_error)

        return _finish(kind, _map(run, list(range(levels))))

    # one extra level so every reported level has a finer partner
    steps = [tg.steps * 2**k for k in range(levels + 1)]
    mms = kind == "time" and cfg.manufactured is not None
    strong = kind == "picard" or cfg.solver_kind == "strong"
    c0 = None if mms else build_initial(grid, cfg.params, cfg.initial, cfg.seed, cfg.base_dir)

    def final(k):
        if mms:
            return run_manufactured(cfg.manufactured, grid.counts[0], tg.T / steps[k], tg.T, grid.extents).c
        t = TimeGrid(tg.T, steps[k])
        if strong:
            traj = picard_solve(c0, cfg.params, t, cfg.picard_tol, cfg.max_outer, cfg.compat_level, cfg.waive_detruncation)
        else:
            traj = run_weak(c0, t, cfg.params, cfg.newton)
            if traj.error is not None:
                raise traj.error
        return traj.final.c

    finals = _map(final, list(range(levels + 1)))
    out = []
    for k in range(levels):
        d = finals[k] - finals[k + 1]
        out.append(Level(k, grid.counts[0], steps[k], grid.h, tg.T / steps[k], float(np.sqrt(grid.integrate(d * d)))))
    return _finish(kind, out)

