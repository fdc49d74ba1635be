"""``liouctl`` command line: check, design-p, run, sweep.

Exit codes: 0 success, 1 usage or parse error, 2 condition-check failure,
3 runtime solver failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, build_problem, load_config_text, parse_config_tree, target_frame
from .errors import ConfigError, LiouError
from .pdesign import design_P, verify_min_over_permutations
from .runner import (check_report, parse_sweep, run_config, run_sweep, summary_line,
                     write_outputs, write_sweep_csv)

EXIT_OK, EXIT_USAGE, EXIT_CONDITION, EXIT_RUNTIME = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="liouctl", description="Lyapunov control of closed quantum systems "
                                             "with implicit-perturbation degeneracy lifting.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_ in (("check", "convergence-condition report"),
                        ("design-p", "design P and verify minimality at the target"),
                        ("run", "simulate the closed loop and write CSVs"),
                        ("sweep", "run a parameter grid")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", required=True, help="JSON config path, or @name for a bundled config")
        s.add_argument("--out", default=None, help="output directory")
        s.add_argument("--frame", choices=("original", "tilde"), default=None)
        s.add_argument("--dt", type=float, default=None)
        s.add_argument("--duration", type=float, default=None)
        if name == "sweep":
            s.add_argument("--sweep", required=True, help="sweep spec JSON path")
            s.add_argument("--workers", type=int, default=None)
        if name == "design-p":
            s.add_argument("--min-gap", type=float, default=None)
    return p


def _overrides(args) -> dict:
    out = {}
    if args.dt is not None:
        out["integration.dt"] = args.dt
    if args.duration is not None:
        out["integration.duration"] = args.duration
    if args.frame is not None:
        out["output.frame"] = args.frame
    return out


def _load(args) -> tuple[dict, RunConfig]:
    try:
        tree = json.loads(load_config_text(args.config))
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from None
    if isinstance(tree, dict):
        for path, value in _overrides(args).items():
            block, key = path.split(".")
            tree.setdefault(block, {})
            if isinstance(tree[block], dict):
                tree[block][key] = value
    return tree, parse_config_tree(tree)


def _yn(flag: bool) -> str:
    return "yes" if flag else "NO"


def cmd_check(args) -> int:
    _, cfg = _load(args)
    rep = check_report(cfg)
    g0 = rep["gamma_zero"]
    print(f"working frame: {rep['working_frame']}")
    print(f"gamma = 0: strongly regular {_yn(g0['strongly_regular'])} "
          f"(min Bohr gap {g0['min_bohr_gap']:.3e}, closest pairs {g0['bohr_witness']}); "
          f"fully connected {_yn(g0['fully_connected'])} "
          f"(weakest pair {g0['weakest_pair']}, coupling {g0['weakest_coupling']:.3e})")
    if g0["strongly_regular"] and g0["fully_connected"]:
        print("verdict: nondegenerate at gamma = 0; no perturbation needed")
    else:
        print("verdict: degenerate at gamma = 0")
    print(f"{'gamma':>8} {'regular':>8} {'bohr_gap':>11} {'connected':>9} {'coupling':>11} "
          f"{'P_diag_gap':>11} {'P_offdiag':>11}")
    for s in rep["scan"]:
        print(f"{s['gamma']:8.3f} {_yn(s['strongly_regular']):>8} {s['min_bohr_gap']:11.3e} "
              f"{_yn(s['fully_connected']):>9} {s['weakest_coupling']:11.3e} "
              f"{s['p_diag_gap']:11.3e} {s['p_offdiag_mass']:11.3e}")
    if rep["smallest_gamma"] is None:
        print("smallest gamma satisfying regularity and connectedness: none in scan range")
    else:
        print(f"smallest gamma satisfying regularity and connectedness: {rep['smallest_gamma']:g}")
    lem = rep["existence_bound"]
    if "error" in lem:
        print(f"existence bound: not evaluated ({lem['error']})")
    else:
        print(f"existence bound: sup|theta'| = {lem['sup_theta_prime']:.4g}, bound = {lem['bound']:.4g} "
              f"(C = {lem['C']:.4g}), margin {lem['margin']:+.4g} {'ok' if lem['ok'] else 'VIOLATED'}")
    print(f"V(rho0) = {rep['V_rho0_gamma0']:.6g}, V(rhof) = {rep['V_rhof_gamma0']:.6g} at gamma = 0")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "check.json").write_text(json.dumps(rep, indent=2, default=str) + "\n")
    return EXIT_OK if rep["satisfiable"] else EXIT_CONDITION


def cmd_design_p(args) -> int:
    _, cfg = _load(args)
    frame = target_frame(cfg)
    rhof_t = cfg.rhof if frame is None else frame.rhof_tilde
    d = np.real(np.diag(rhof_t))
    gap = args.min_gap if args.min_gap is not None else cfg.raw["controller"]["P_min_gap"]
    des = design_P(d, gap, cfg.raw["controller"]["P_base"])
    problem, _ = build_problem(cfg)
    mask = cfg.controller.mask
    print(f"target populations (working frame): {' '.join(f'{x:.6g}' for x in d)}")
    print(f"designed P: {' '.join(f'{x:.6g}' for x in des.values)}")
    ok = True
    for label, values in (("designed", des.values), ("configured", cfg.controller.P_values)):
        for mode in ("gamma-zero", "gamma-solved"):
            res = verify_min_over_permutations(values, problem.H0, problem.Hks, mask, problem.rhof,
                                               mode=mode, theta=cfg.controller.theta)
            print(f"{label} P, {mode}: target strictly minimal {_yn(res.ok)} "
                  f"(worst margin {res.worst_margin:.6g} at permutation {res.worst_permutation})")
            ok = ok and (res.ok or label == "configured")
    return EXIT_OK if ok else EXIT_CONDITION


def cmd_run(args) -> int:
    _, cfg = _load(args)
    res = run_config(cfg)
    out = args.out or "."
    paths = write_outputs(res, out)
    print(summary_line(res.summary()))
    print(f"wrote {paths['trajectory']} and {paths['controls']}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    tree, cfg = _load(args)
    try:
        spec = parse_sweep(json.loads(Path(args.sweep).read_text()))
    except OSError as exc:
        raise ConfigError(f"cannot read sweep spec: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid sweep JSON: {exc}") from None
    rows = run_sweep(cfg.raw, spec, workers=args.workers)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    path = out / "sweep.csv"
    write_sweep_csv(path, spec, rows, cfg.output["precision"])
    failed = sum(1 for _, _, e in rows if e)
    print(f"{len(rows)} cells, {failed} failed; wrote {path}")
    return EXIT_OK


COMMANDS = {"check": cmd_check, "design-p": cmd_design_p, "run": cmd_run, "sweep": cmd_sweep}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except LiouError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
