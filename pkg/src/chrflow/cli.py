"""Command line entry point: ``chrflow run | verify | converge``.

Exit codes: 0 success, 1 solver failure or failed check, 2 invalid configuration
or usage.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

from chrflow.config import RunConfig, load_config
from chrflow.converge import KINDS, study
from chrflow.errors import ConfigError, ConvergenceError, DomainError, MonotonicityError, RateRangeError
from chrflow.gradientflow import run_weak
from chrflow.strongsolver import Truncation, detruncate_check, picard_solve
from chrflow.verify import SUITES, run_suite

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2

log = logging.getLogger("chrflow.cli")


def _load(path: str) -> RunConfig:
    try:
        return load_config(path)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc


def _config_error(exc: ConfigError) -> int:
    where = []
    if exc.key:
        where.append(f"key={exc.key}")
    if exc.line:
        where.append(f"line={exc.line}")
    print(f"config error: {exc}" + (f" ({', '.join(where)})" if where else ""), file=sys.stderr)
    return EXIT_CONFIG


def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def cmd_run(args) -> int:
    try:
        cfg = _load(args.config)
    except ConfigError as exc:
        return _config_error(exc)
    out = args.out or cfg.output_dir
    os.makedirs(out, exist_ok=True)
    _write(os.path.join(out, "config.json"), cfg.echo() + "\n")
    c0 = cfg.initial_field()
    status = EXIT_OK
    if cfg.solver_kind == "weak":
        traj = run_weak(c0, cfg.time, cfg.params, cfg.newton)
        if traj.error is not None:
            print(f"run failed at step {len(traj.states)}: {type(traj.error).__name__}: {traj.error}", file=sys.stderr)
            status = EXIT_FAIL
        reps = traj.reports[1:]
        if cfg.verify.get("energy", True) and not all(r.energy_ok and r.telescoped_ok for r in reps):
            print("energy inequality violated", file=sys.stderr)
            status = EXIT_FAIL
        if cfg.verify.get("mass_flux", True):
            tau = cfg.time.tau
            bad = [
                r.i
                for prev, r in zip(traj.reports, traj.reports[1:])
                if abs(r.mass - prev.mass - tau * r.flux) > 1e-10 * (1 + abs(r.mass))
            ]
            if bad:
                print(f"mass-flux identity violated at steps {bad[:5]}", file=sys.stderr)
                status = EXIT_FAIL
    else:
        try:
            traj = picard_solve(c0, cfg.params, cfg.time, cfg.picard_tol, cfg.max_outer, cfg.compat_level, cfg.waive_detruncation)
        except ConvergenceError as exc:
            print(f"picard failed: {exc}", file=sys.stderr)
            with open(os.path.join(out, "picard_history.csv"), "w", encoding="utf-8", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["outer_iter", "change", "ratio"])
                for k, d in enumerate(exc.history, 1):
                    ratio = "" if k == 1 or exc.history[k - 2] == 0 else repr(d / exc.history[k - 2])
                    w.writerow([k, repr(d), ratio])
            return EXIT_FAIL
        except (ValueError, DomainError, RateRangeError, MonotonicityError) as exc:
            print(f"picard failed: {type(exc).__name__}: {exc}", file=sys.stderr)
            return EXIT_FAIL
        if cfg.params.truncation is not None and cfg.verify.get("detruncation", True):
            ok, where = detruncate_check(traj, Truncation(cfg.params.truncation))
            if not ok:
                print(f"note: truncation active at step {where[0]}, node {where[1]}; detrunc_ok=false", file=sys.stderr)
    traj.to_csv(os.path.join(out, "trajectory.csv"))
    traj.write_snapshots(out, cfg.snapshot_stride)
    summary = {
        "status": "ok" if status == EXIT_OK else "failed",
        "steps_completed": len(traj.states) - 1,
        "final_energy": traj.reports[-1].energy,
        "error": None if traj.error is None else str(traj.error),
    }
    _write(os.path.join(out, "summary.json"), json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"wrote {os.path.join(out, 'trajectory.csv')}")
    return status


def cmd_verify(args) -> int:
    report = run_suite(args.suite, args.seed)
    text = report.to_text()
    sys.stdout.write(text)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write(os.path.join(args.out, f"verify_{args.suite}.csv"), report.to_csv())
        _write(os.path.join(args.out, f"verify_{args.suite}.txt"), text)
    return EXIT_OK if report.ok else EXIT_FAIL


def cmd_converge(args) -> int:
    try:
        cfg = _load(args.config)
    except ConfigError as exc:
        return _config_error(exc)
    try:
        res = study(cfg, args.kind, args.levels)
    except ValueError as exc:
        print(f"converge: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, DomainError, RateRangeError, MonotonicityError) as exc:
        print(f"converge failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    text = res.to_csv()
    sys.stdout.write(text)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write(os.path.join(args.out, f"converge_{args.kind}.csv"), text)
    if not res.monotone and not args.allow_preasymptotic:
        print("error sequence is not monotone (use --allow-preasymptotic to accept)", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="chrflow", description="Cahn-Hilliard reaction solvers and checks")
    ap.add_argument("-v", "--verbose", action="store_true", help="log solver iterations")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the configured solver")
    p.add_argument("config")
    p.add_argument("--out", help="output directory (overrides output.dir)")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("verify", help="run a property suite")
    p.add_argument("--suite", choices=SUITES + ("all",), default="all")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="directory for the CSV and text reports")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("converge", help="refinement study")
    p.add_argument("config")
    p.add_argument("--kind", choices=KINDS, required=True)
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--allow-preasymptotic", action="store_true")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_converge)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s %(levelname)s %(message)s")
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
