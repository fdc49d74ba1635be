"""Run a configured experiment, write CSVs, sweep parameter grids."""
from __future__ import annotations

import itertools
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .config import RunConfig, build_problem, parse_config_tree, set_path
from .controller import lyapunov_value
from .dynamics import TrajectoryRecord, conservation_report, simulate
from .errors import ConfigError, LiouError
from .hermitian import hermiticity_defect
from .spectral import build_frame, build_P
from .target import TargetFrame, transition_probability

METRICS = ("transition_probability", "final_V")
DEFAULT_SWEEP_CAP = 256


@dataclass
class RunResult:
    config: RunConfig
    trajectory: TrajectoryRecord
    frame: Optional[TargetFrame]

    def state_in(self, rho, frame: str) -> np.ndarray:
        if frame == "original" and self.frame is not None:
            return self.frame.to_original(rho)
        return np.asarray(rho)

    @property
    def final_original(self) -> np.ndarray:
        return self.state_in(self.trajectory.final_state, "original")

    @property
    def transition_probability(self) -> float:
        return transition_probability(self.final_original, self.config.rhof)

    @property
    def final_V(self) -> float:
        return float(self.trajectory.controls[-1].V)

    def summary(self) -> dict:
        rep = conservation_report(self.trajectory)
        rho = self.final_original
        return {
            "final_populations": [float(x) for x in np.real(np.diag(rho))],
            "transition_probability": self.transition_probability,
            "final_V": self.final_V,
            "max_V_increase": rep.max_V_increase,
            "max_trace_err": rep.max_trace_err,
            "max_herm_err": rep.max_herm_err,
            "max_spectrum_drift": rep.max_spectrum_drift,
            "steps": len(self.trajectory.controls) - 1,
            "stopped_early": self.trajectory.stopped_early,
            "working_frame": "direct" if self.frame is None else "target",
        }


def run_config(cfg: RunConfig, diagnostics: bool = True) -> RunResult:
    problem, frame = build_problem(cfg, diagnostics=diagnostics)
    return RunResult(cfg, simulate(problem), frame)


def fmt(x: float, precision: int = 17) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), f".{precision}g")


def trajectory_header(n: int, r: int) -> list:
    cols = ["t"]
    for i in range(1, n + 1):
        for j in range(i, n + 1):
            cols += [f"rho_{i}{j}_re", f"rho_{i}{j}_im"] if n < 10 else [f"rho_{i}_{j}_re", f"rho_{i}_{j}_im"]
    cols += ["V", "gamma"] + [f"v_{k}" for k in range(1, r + 1)] + [f"u_{k}" for k in range(1, r + 1)]
    return cols + ["trace_err", "herm_err"]


def trajectory_rows(result: RunResult, frame: str = "original") -> list:
    traj = result.trajectory
    n = result.config.dim
    iu = np.triu_indices(n)
    rows = []
    for rho, idx in zip(traj.states, traj.state_indices):
        c = traj.controls[idx]
        m = result.state_in(rho, frame)
        vals = [c.t]
        for a in m[iu]:
            vals += [a.real, a.imag]
        vals += [c.V, c.gamma, *c.v, *c.u]
        vals += [abs(np.trace(m).real - 1.0), hermiticity_defect(m)]
        rows.append(vals)
    return rows


CONTROL_COLUMNS = ("V", "Vdot_analytic", "gamma_dot_analytic", "gamma_residual",
                   "gamma_iterations", "theta_argument")


def control_header(r: int) -> list:
    return (["t", "gamma"] + [f"v_{k}" for k in range(1, r + 1)]
            + [f"u_{k}" for k in range(1, r + 1)] + list(CONTROL_COLUMNS) + ["gamma_method"])


def control_rows(result: RunResult) -> list:
    return [[c.t, c.gamma, *c.v, *c.u] + [getattr(c, name) for name in CONTROL_COLUMNS] + [c.gamma_method]
            for c in result.trajectory.controls]


def write_csv(path: Path, header: list, rows: list, precision: int) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(v if isinstance(v, str) else fmt(v, precision) for v in row))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_outputs(result: RunResult, out_dir, frame: Optional[str] = None) -> dict:
    """Write trajectory CSV, control CSV and ``summary.json``; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = result.config
    frame = frame or cfg.output["frame"]
    prec = cfg.output["precision"]
    r = len(cfg.Hks)
    paths = {"trajectory": out / cfg.output["trajectory_csv"],
             "controls": out / cfg.output["controls_csv"],
             "summary": out / "summary.json"}
    write_csv(paths["trajectory"], trajectory_header(cfg.dim, r), trajectory_rows(result, frame), prec)
    write_csv(paths["controls"], control_header(r), control_rows(result), prec)
    with open(paths["summary"], "w", newline="\n") as fh:
        json.dump(result.summary(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths


def summary_line(summary: dict) -> str:
    pops = " ".join(f"{p:.5f}" for p in summary["final_populations"])
    return (f"populations=[{pops}] transition_probability={summary['transition_probability']:.6f} "
            f"max_dV={summary['max_V_increase']:.3e} trace_err={summary['max_trace_err']:.2e} "
            f"herm_err={summary['max_herm_err']:.2e} spectrum_drift={summary['max_spectrum_drift']:.2e}")


# --- sweeps -----------------------------------------------------------------

@dataclass(frozen=True)
class SweepSpec:
    axes: tuple  # ((path, (values...)), ...)
    metric: str = "transition_probability"
    cap: int = DEFAULT_SWEEP_CAP

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ConfigError(f"expected one of {list(METRICS)}, got {self.metric!r}", "metric")
        if self.size > self.cap:
            raise ConfigError(f"sweep has {self.size} cells, cap is {self.cap}", "axes")

    @property
    def size(self) -> int:
        return math.prod(len(v) for _, v in self.axes)

    def cells(self) -> list:
        paths = [p for p, _ in self.axes]
        return [dict(zip(paths, combo)) for combo in itertools.product(*(v for _, v in self.axes))]


def parse_sweep(tree: dict) -> SweepSpec:
    if not isinstance(tree, dict):
        raise ConfigError("sweep spec must be a JSON object")
    extra = set(tree) - {"axes", "metric", "cap"}
    if extra:
        raise ConfigError(f"unknown keys {sorted(extra)}")
    axes = []
    for i, ax in enumerate(tree.get("axes", [])):
        if not isinstance(ax, dict) or set(ax) != {"path", "values"}:
            raise ConfigError("each axis needs exactly 'path' and 'values'", f"axes.{i}")
        if not isinstance(ax["values"], list) or not ax["values"]:
            raise ConfigError("values must be a non-empty list", f"axes.{i}.values")
        axes.append((str(ax["path"]), tuple(ax["values"])))
    cap = tree.get("cap", DEFAULT_SWEEP_CAP)
    if isinstance(cap, bool) or not isinstance(cap, int) or cap < 1:
        raise ConfigError(f"cap must be a positive integer, got {cap!r}", "cap")
    return SweepSpec(tuple(axes), tree.get("metric", "transition_probability"), cap)


def _run_cell(args):
    base, cell, metric, overrides = args
    try:
        tree = base
        for path, value in list(cell.items()) + list(overrides.items()):
            tree = set_path(tree, path, value)
        res = run_config(parse_config_tree(tree), diagnostics=False)
        return (res.transition_probability if metric == "transition_probability" else res.final_V), ""
    except (LiouError, ValueError, ArithmeticError) as exc:
        return math.nan, f"{type(exc).__name__}: {exc}"


def run_sweep(base_tree: dict, spec: SweepSpec, workers: Optional[int] = None,
              overrides: Optional[dict] = None) -> list:
    """Evaluate every cell; returns ``(cell, metric, error)`` in cartesian order."""
    cells = spec.cells()
    jobs = [(base_tree, c, spec.metric, overrides or {}) for c in cells]
    workers = workers or min(len(jobs), os.cpu_count() or 1)
    if workers <= 1:
        results = [_run_cell(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_cell, jobs))  # map preserves submission order
    return [(c, m, e) for c, (m, e) in zip(cells, results)]


def write_sweep_csv(path, spec: SweepSpec, rows: list, precision: int = 17) -> None:
    header = [p for p, _ in spec.axes] + [spec.metric, "error"]
    out = []
    for cell, metric, err in rows:
        vals = [json.dumps(cell[p]) if not isinstance(cell[p], (int, float)) else cell[p]
                for p, _ in spec.axes]
        out.append([v if isinstance(v, str) else fmt(v, precision) for v in vals]
                   + [fmt(metric, precision), '"' + err.replace('"', "'") + '"' if err else ""])
    write_csv(Path(path), header, out, precision)


# --- condition check --------------------------------------------------------

def check_report(cfg: RunConfig) -> dict:
    """Convergence-condition report in the working frame."""
    from .perturbation import existence_bound
    from .spectral import (check_full_connectedness, check_P_diag_distinct,
                           check_strong_regularity, offdiag_mass)

    problem, frame = build_problem(cfg)
    H0, Hks, mask = problem.H0, problem.Hks, cfg.controller.mask
    tol = cfg.tolerances
    step = tol["check_gamma_step"]
    n_grid = int(round(tol["check_gamma_max"] / step))
    grid = [round(i * step, 12) for i in range(n_grid + 1)]
    scan = []
    for g in grid:
        fr = build_frame(H0, Hks, mask, g)
        reg = check_strong_regularity(fr, tol["strong_regularity"])
        con = check_full_connectedness(fr, Hks, tol["connectedness"])
        P = build_P(fr, cfg.controller.P_values)
        p_ok, p_gap = check_P_diag_distinct(P, tol["p_diag"])
        scan.append({
            "gamma": g, "strongly_regular": reg.ok, "min_bohr_gap": reg.min_gap,
            "bohr_witness": reg.witness, "fully_connected": con.ok, "weakest_pair": con.weakest,
            "weakest_coupling": float(np.nanmin(con.coupling)) if fr.dim > 1 else math.inf,
            "p_diag_distinct": p_ok, "p_diag_gap": p_gap, "p_offdiag_mass": offdiag_mass(P),
            "eigenvalues": [float(x) for x in fr.eigenvalues],
        })
    smallest = next((s["gamma"] for s in scan if s["strongly_regular"] and s["fully_connected"]), None)
    try:
        lem = existence_bound(cfg.controller.theta, H0, Hks, mask, cfg.controller.P_values, grid)
        bound = {"C": lem.C, "C_perturbative": lem.C_perturbative, "bound": lem.bound,
                 "sup_theta_prime": lem.sup_theta_prime, "margin": lem.margin, "ok": lem.ok}
    except ArithmeticError as exc:
        bound = {"error": str(exc)}
    P0 = build_P(build_frame(H0, Hks, mask, 0.0), cfg.controller.P_values)
    return {
        "working_frame": "direct" if frame is None else "target",
        "gamma_zero": scan[0],
        "scan": scan,
        "smallest_gamma": smallest,
        "satisfiable": smallest is not None,
        "existence_bound": bound,
        "P_values": list(cfg.controller.P_values),
        "V_rho0_gamma0": lyapunov_value(P0, problem.rho0),
        "V_rhof_gamma0": lyapunov_value(P0, problem.rhof),
    }
