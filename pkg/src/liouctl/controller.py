"""Lyapunov function, feedback law and closed-loop control evaluation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .perturbation import GammaSolve, ThetaSpec, solve_gamma
from .spectral import SpectralFrame, dP_dgamma_perturbative

F_KINDS = ("identity", "odd-saturating")
IMAG_TOL = 1e-12
DENOM_TOL = 1e-12


@dataclass(frozen=True)
class ControllerConfig:
    mask: tuple
    theta: ThetaSpec
    gains: tuple
    P_values: tuple
    f_kind: tuple = None
    f_scale: float = 1.0
    gamma_tol: float = 1e-12
    gamma_max_iter: int = 100

    def __post_init__(self):
        object.__setattr__(self, "mask", tuple(int(c) for c in self.mask))
        object.__setattr__(self, "gains", tuple(float(k) for k in self.gains))
        object.__setattr__(self, "P_values", tuple(float(p) for p in self.P_values))
        if self.f_kind is None:
            object.__setattr__(self, "f_kind", ("identity",) * len(self.gains))
        elif isinstance(self.f_kind, str):
            object.__setattr__(self, "f_kind", (self.f_kind,) * len(self.gains))
        else:
            object.__setattr__(self, "f_kind", tuple(self.f_kind))
        if any(c not in (0, 1) for c in self.mask):
            raise ValueError(f"mask entries must be 0 or 1, got {list(self.mask)}")
        if not any(self.mask):
            raise ValueError("at least one control must carry the perturbation (mask has no 1)")
        if len(self.gains) != len(self.mask) or len(self.f_kind) != len(self.mask):
            raise ValueError("mask, gains and f_kind must have one entry per control")
        if any(not (k > 0 and math.isfinite(k)) for k in self.gains):
            raise ValueError(f"gains must be finite and > 0, got {list(self.gains)}")
        if any(not (p > 0 and math.isfinite(p)) for p in self.P_values):
            raise ValueError(f"P values must be finite and > 0, got {list(self.P_values)}")
        bad = [f for f in self.f_kind if f not in F_KINDS]
        if bad:
            raise ValueError(f"unknown feedback shape(s) {bad}; expected one of {F_KINDS}")
        if not self.f_scale > 0:
            raise ValueError("f_scale must be > 0")

    @property
    def n_controls(self) -> int:
        return len(self.mask)


@dataclass
class ControlRecord:
    t: float
    gamma: float
    v: np.ndarray
    u: np.ndarray
    V: float
    Vdot_analytic: float = math.nan
    gamma_dot_analytic: float = math.nan
    gamma_residual: float = 0.0
    gamma_iterations: int = 0
    gamma_method: str = ""
    theta_argument: float = 0.0
    solve: Optional[GammaSolve] = field(default=None, repr=False)


def lyapunov_value(P, rho) -> float:
    """``tr(P rho)``; raises if the imaginary part exceeds 1e-12."""
    val = np.trace(np.asarray(P) @ np.asarray(rho))
    if abs(val.imag) > IMAG_TOL:
        raise ValueError(f"tr(P rho) has imaginary part {val.imag:.3e}; Hermiticity is broken upstream")
    return float(val.real)


def feedback_signals(P, Hks, rho) -> np.ndarray:
    """``T_k = i tr([P, H_k] rho)`` for every control (real by construction)."""
    out = np.empty(len(Hks))
    for k, hk in enumerate(Hks):
        ph = P @ hk
        c = np.trace(ph @ rho) - np.trace(hk @ P @ rho)
        if abs(c.real) > IMAG_TOL:
            raise ValueError(f"i tr([P, H_{k + 1}] rho) has imaginary part {c.real:.3e}")
        out[k] = -c.imag
    return out


def shape_f(kind: str, x: float, scale: float = 1.0) -> float:
    if kind == "identity":
        return x
    return scale * math.tanh(x / scale)


def control_v(P, Hks, rho, config: ControllerConfig) -> np.ndarray:
    """``v_k = K_k f_k(i tr([P, H_k] rho))``."""
    T = feedback_signals(P, Hks, rho)
    return np.array([k * shape_f(f, t, config.f_scale)
                     for k, f, t in zip(config.gains, config.f_kind, T)])


def _trace_real(a) -> float:
    return float(np.real(np.trace(a)))


def vdot_diagnostic(P, dPdg, theta_prime: float, rho, rhof, Hks, v) -> float:
    """Closed-form ``dV/dt`` along the closed loop; ``nan`` when the denominator vanishes."""
    denom = 1.0 - theta_prime * _trace_real(dPdg @ (rho - rhof))
    if abs(denom) < DENOM_TOL:
        return math.nan
    num = 1.0 + theta_prime * _trace_real(dPdg @ rhof)
    T = feedback_signals(P, Hks, rho)
    return -num / denom * float(np.dot(T, v))


def gamma_dot_diagnostic(theta_prime: float, dPdg, rho, rhof, P, Hks, v) -> float:
    """Closed-form ``d gamma / dt``; ``nan`` when the denominator vanishes."""
    denom = theta_prime * _trace_real(dPdg @ (rho - rhof)) - 1.0
    if abs(denom) < DENOM_TOL:
        return math.nan
    T = feedback_signals(P, Hks, rho)
    # i * sum_k v_k tr([P, H_k] rho) = sum_k v_k T_k
    return theta_prime * float(np.dot(T, v)) / denom


def evaluate_control(rho, rhof, H0, Hks, config: ControllerConfig, t: float = 0.0,
                     warm_start: float = 0.0, prev: Optional[SpectralFrame] = None,
                     diagnostics: bool = True) -> ControlRecord:
    """Solve gamma, build P_gamma, and return the full control at state ``rho``."""
    sol = solve_gamma(rho, rhof, H0, Hks, config.mask, config.P_values, config.theta,
                      warm_start=warm_start, tol=config.gamma_tol,
                      max_iter=config.gamma_max_iter, prev=prev)
    P = sol.P
    v = control_v(P, Hks, rho, config)
    u = np.asarray(config.mask, dtype=float) * sol.value + v
    rec = ControlRecord(t=t, gamma=sol.value, v=v, u=u, V=lyapunov_value(P, rho),
                        gamma_residual=sol.residual, gamma_iterations=sol.iterations,
                        gamma_method=sol.method, theta_argument=sol.argument, solve=sol)
    if diagnostics:
        try:
            dP = dP_dgamma_perturbative(sol.frame, Hks, config.mask, config.P_values)
        except ArithmeticError:
            return rec
        rec.Vdot_analytic = vdot_diagnostic(P, dP, sol.theta_prime, rho, rhof, Hks, v)
        rec.gamma_dot_analytic = gamma_dot_diagnostic(sol.theta_prime, dP, rho, rhof, P, Hks, v)
    return rec


def target_residual_control(rhof, H0, Hks, config: ControllerConfig) -> float:
    """``max_k |v_k|`` at the target; nonzero means the target is not an equilibrium."""
    rec = evaluate_control(rhof, rhof, H0, Hks, config, diagnostics=False)
    return float(np.max(np.abs(rec.v))) if rec.v.size else 0.0
