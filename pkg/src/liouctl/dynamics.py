"""Closed-loop integration of the controlled Liouville equation.

Controls are held constant over each step and the state is propagated by
the exact unitary ``U = exp(-i (H0 + sum_k u_k H_k) dt)``, so trace,
Hermiticity and spectrum are conserved up to eigensolver round-off.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .controller import ControlRecord, ControllerConfig, evaluate_control
from .errors import DimensionError, LiouError
from .hermitian import check_hermitian, expm_unitary, hermiticity_defect, validate_density
from .target import transition_probability

log = logging.getLogger(__name__)

SPECTRUM_MATCH_TOL = 1e-8


@dataclass(frozen=True)
class SimulationProblem:
    """Everything needed for one closed-loop run.

    ``controller=None`` runs free evolution under ``H0`` alone.
    """

    H0: np.ndarray
    Hks: tuple
    rho0: np.ndarray
    rhof: np.ndarray
    controller: Optional[ControllerConfig]
    dt: float
    duration: float
    record_stride: int = 1
    early_stop: Optional[float] = None
    diagnostics: bool = True

    def __post_init__(self):
        object.__setattr__(self, "Hks", tuple(self.Hks))

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))


def validate_problem(problem: SimulationProblem) -> None:
    n = np.asarray(problem.H0).shape[0]
    check_hermitian(problem.H0)
    for k, hk in enumerate(problem.Hks):
        if np.asarray(hk).shape != (n, n):
            raise DimensionError(f"H_{k + 1} has shape {np.asarray(hk).shape}, expected {(n, n)}")
        check_hermitian(hk)
    for name in ("rho0", "rhof"):
        m = getattr(problem, name)
        if np.asarray(m).shape != (n, n):
            raise DimensionError(f"{name} has shape {np.asarray(m).shape}, expected {(n, n)}")
        validate_density(m)
    if not (problem.dt > 0 and math.isfinite(problem.dt)):
        raise ValueError(f"dt must be > 0, got {problem.dt!r}")
    if not (problem.duration >= 0 and math.isfinite(problem.duration)):
        raise ValueError(f"duration must be >= 0, got {problem.duration!r}")
    if problem.record_stride < 1:
        raise ValueError("record_stride must be >= 1")
    if problem.controller is not None:
        c = problem.controller
        if c.n_controls != len(problem.Hks):
            raise DimensionError(f"controller has {c.n_controls} controls, problem has {len(problem.Hks)}")
        if len(c.P_values) != n:
            raise DimensionError(f"controller has {len(c.P_values)} P values, dimension is {n}")
    drift = spectrum_distance(problem.rho0, problem.rhof)
    if drift > SPECTRUM_MATCH_TOL:
        raise ValueError(f"rho0 and rhof are not unitarily equivalent (spectra differ by {drift:.3e})")


def spectrum(rho) -> np.ndarray:
    m = np.asarray(rho)
    return np.linalg.eigvalsh(0.5 * (m + m.conj().T))


def spectrum_distance(a, b) -> float:
    return float(np.max(np.abs(spectrum(a) - spectrum(b))))


def step(rho, H0, Hks, u, dt: float) -> np.ndarray:
    """One exact unitary step with piecewise-constant controls ``u``."""
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise ValueError(f"non-finite control {u.tolist()}")
    H = np.asarray(H0, dtype=np.complex128).copy()
    for uk, hk in zip(u, Hks):
        H += uk * hk
    U = expm_unitary(H, dt)
    return U @ rho @ U.conj().T


@dataclass
class TrajectoryRecord:
    times: np.ndarray
    state_times: np.ndarray
    states: list
    # step index of each recorded state, so states[i] pairs with controls[state_indices[i]]
    state_indices: np.ndarray
    controls: list
    trace_err: np.ndarray
    herm_err: np.ndarray
    spectrum_drift: np.ndarray
    mode: str = "closed-loop"
    stopped_early: bool = False
    negative_argument_steps: int = 0
    rhof: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    @property
    def V(self) -> np.ndarray:
        return np.array([c.V for c in self.controls])

    @property
    def gamma(self) -> np.ndarray:
        return np.array([c.gamma for c in self.controls])


class SimulationError(LiouError, RuntimeError):
    def __init__(self, message, step_index: int, gamma: float = math.nan):
        super().__init__(f"step {step_index}: {message}")
        self.step_index = step_index
        self.gamma = gamma


def _free_record(t, rho, n_controls):
    z = np.zeros(n_controls)
    return ControlRecord(t=t, gamma=0.0, v=z, u=z.copy(), V=math.nan)


def simulate(problem: SimulationProblem) -> TrajectoryRecord:
    """Integrate the closed loop from ``rho0`` for ``duration``.

    At each step the perturbation is re-solved (warm-started from the
    previous value, eigenbranches continued from the previous frame), the
    feedback is evaluated at the step's initial state, and the state is
    propagated exactly for ``dt``.
    """
    validate_problem(problem)
    H0 = np.asarray(problem.H0, dtype=np.complex128)
    Hks = [np.asarray(h, dtype=np.complex128) for h in problem.Hks]
    rho = np.asarray(problem.rho0, dtype=np.complex128)
    rhof = np.asarray(problem.rhof, dtype=np.complex128)
    cfg = problem.controller
    spec0 = spectrum(rho)
    n = problem.n_steps

    times, controls, states, state_times, state_idx = [], [], [], [], []
    tr_err, h_err, s_drift = [], [], []
    gamma, frame = 0.0, None
    negatives = 0
    stopped = False

    for i in range(n + 1):
        t = i * problem.dt
        if cfg is None:
            rec = _free_record(t, rho, len(Hks))
        else:
            try:
                rec = evaluate_control(rho, rhof, H0, Hks, cfg, t=t, warm_start=gamma,
                                       prev=frame, diagnostics=problem.diagnostics)
            except LiouError as exc:
                raise SimulationError(str(exc), i, gamma) from exc
            gamma, frame = rec.gamma, rec.solve.frame
            rec.solve = None
            negatives += rec.theta_argument < 0
        times.append(t)
        controls.append(rec)
        tr_err.append(abs(np.trace(rho).real - 1.0))
        h_err.append(hermiticity_defect(rho))
        s_drift.append(float(np.max(np.abs(spectrum(rho) - spec0))))
        last = i == n
        if problem.early_stop is not None and transition_probability(rho, rhof) >= problem.early_stop:
            stopped, last = not last, True
        if i % problem.record_stride == 0 or last:
            states.append(rho.copy())
            state_times.append(t)
            state_idx.append(i)
        if last:
            break
        rho = step(rho, H0, Hks, rec.u, problem.dt)

    if negatives and cfg is not None and cfg.theta.negative == "signed":
        log.warning("theta received a negative argument on %d of %d steps (evaluated unclamped)",
                    negatives, len(controls))
    return TrajectoryRecord(
        times=np.array(times), state_times=np.array(state_times), states=states,
        state_indices=np.array(state_idx, dtype=int),
        controls=controls, trace_err=np.array(tr_err), herm_err=np.array(h_err),
        spectrum_drift=np.array(s_drift), mode="free" if cfg is None else "closed-loop",
        stopped_early=stopped, negative_argument_steps=int(negatives), rhof=rhof)


@dataclass(frozen=True)
class ConservationSummary:
    max_trace_err: float
    max_herm_err: float
    max_spectrum_drift: float
    # nan in free-evolution mode, where V is not a Lyapunov function
    max_V_increase: float
    mode: str


def conservation_report(traj: TrajectoryRecord) -> ConservationSummary:
    if not traj.controls:
        raise ValueError("empty trajectory")
    if traj.mode == "closed-loop" and len(traj.controls) > 1:
        dv = float(np.max(np.diff(traj.V)))
    elif traj.mode == "closed-loop":
        dv = 0.0
    else:
        dv = math.nan
    return ConservationSummary(
        max_trace_err=float(np.max(traj.trace_err)),
        max_herm_err=float(np.max(traj.herm_err)),
        max_spectrum_drift=float(np.max(traj.spectrum_drift)),
        max_V_increase=dv,
        mode=traj.mode,
    )
