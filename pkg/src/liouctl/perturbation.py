"""Implicit perturbation ``gamma = theta(tr(P_gamma rho) - tr(P_gamma rho_f))``.

A single scalar ``gamma`` is shared by every control on the mask.  Because
``P_gamma`` itself depends on ``gamma`` the relation is a scalar fixed-point
equation, solved here by (optionally damped) fixed-point iteration with a
bisection fallback.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import GammaSolveError
from .hermitian import check_hermitian
from .spectral import (
    SpectralFrame,
    _check_P_values,
    build_frame,
    control_generator,
    dP_dgamma,
    dP_dgamma_perturbative,
    frame_from_hamiltonian,
)

log = logging.getLogger(__name__)

THETA_KINDS = ("linear", "saturating")
NEGATIVE_MODES = ("signed", "clamp")


@dataclass(frozen=True)
class ThetaSpec:
    """Monotone map from the Lyapunov excess to the perturbation.

    ``linear``: ``theta(s) = slope * s``.
    ``saturating``: ``theta(s) = gamma_star * tanh(slope * s / gamma_star)``.

    ``negative`` selects what happens for ``s < 0``: ``"signed"`` evaluates
    the formula as is, ``"clamp"`` returns 0.  ``gamma_max`` bounds the
    bisection bracket for the linear kind (``None``: derived from P).
    """

    kind: str = "linear"
    slope: float = 0.1
    gamma_star: Optional[float] = None
    negative: str = "signed"
    gamma_max: Optional[float] = None

    def __post_init__(self):
        if self.kind not in THETA_KINDS:
            raise ValueError(f"theta kind must be one of {THETA_KINDS}, got {self.kind!r}")
        if self.negative not in NEGATIVE_MODES:
            raise ValueError(f"negative mode must be one of {NEGATIVE_MODES}, got {self.negative!r}")
        if not self.slope >= 0 or not math.isfinite(self.slope):
            raise ValueError(f"theta slope must be finite and >= 0, got {self.slope!r}")
        if self.kind == "saturating" and not (self.gamma_star and self.gamma_star > 0):
            raise ValueError("saturating theta needs gamma_star > 0")

    @property
    def max_slope(self) -> float:
        """``sup |theta'|``; attained at ``s = 0`` for both kinds."""
        return self.slope


def theta_eval(spec: ThetaSpec, s: float) -> tuple[float, float]:
    """Return ``(theta(s), theta'(s))``."""
    if s < 0 and spec.negative == "clamp":
        return 0.0, 0.0
    if spec.kind == "linear":
        return spec.slope * s, spec.slope
    g = spec.gamma_star
    x = spec.slope * s / g
    return g * math.tanh(x), spec.slope / math.cosh(x) ** 2


@dataclass
class GammaSolve:
    value: float
    residual: float
    iterations: int
    method: str
    frame: SpectralFrame = field(repr=False)
    P: np.ndarray = field(repr=False)
    # theta argument tr(P_gamma (rho - rho_f)) at the solution
    argument: float = 0.0
    theta_prime: float = 0.0

    @property
    def negative_argument(self) -> bool:
        return self.argument < 0


class _Excess:
    """Evaluates ``gamma -> (frame, P_gamma, tr(P_gamma (rho - rho_f)))`` for fixed inputs."""

    def __init__(self, rho, rhof, H0, Hks, mask, P_values, prev):
        self.H0 = check_hermitian(H0)
        self.G = check_hermitian(control_generator(Hks, mask))
        self.p = _check_P_values(P_values, self.H0.shape[0])
        # d = rho - rho_f is Hermitian, so tr(P d) = sum_ij P_ij conj(d_ij)
        self.diff = np.asarray(rho - rhof, dtype=np.complex128)
        self.prev = prev

    def __call__(self, g: float):
        frame = frame_from_hamiltonian(self.H0 + g * self.G, g, self.prev, phase_fix=False)
        U = frame.U1
        P = (U * self.p) @ U.conj().T
        P = 0.5 * (P + P.conj().T)
        s = float(np.real(np.vdot(self.diff, P)))
        return frame, P, s


def default_bracket(spec: ThetaSpec, P_values) -> tuple[float, float]:
    """Interval guaranteed to contain every root of ``gamma - theta(s(gamma))``.

    ``|tr(P (rho - rho_f))| <= max(P) - min(P)`` for densities, so the linear
    kind never leaves ``slope * (max P - min P)``.
    """
    if spec.kind == "saturating":
        hi = spec.gamma_star
    elif spec.gamma_max is not None:
        hi = spec.gamma_max
    else:
        p = np.asarray(P_values, dtype=float)
        hi = spec.slope * float(p.max() - p.min())
    hi = max(hi, 1e-300)
    lo = 0.0 if spec.negative == "clamp" else -hi
    return lo, hi


def solve_gamma(rho, rhof, H0, Hks, mask, P_values, theta: ThetaSpec, warm_start: float = 0.0,
                tol: float = 1e-12, max_iter: int = 100,
                prev: Optional[SpectralFrame] = None) -> GammaSolve:
    """Solve ``gamma = theta(tr(P_gamma (rho - rho_f)))``.

    ``prev`` is the frame used for eigenbranch continuation (typically the
    frame accepted at the previous time step).
    """
    if not np.isfinite(warm_start):
        raise ValueError(f"warm start must be finite, got {warm_start!r}")
    excess = _Excess(rho, rhof, H0, Hks, mask, P_values, prev)
    g = float(warm_start)
    step_signs = []
    damping = 1.0
    for it in range(1, max_iter + 1):
        frame, P, s = excess(g)
        g_new, dtheta = theta_eval(theta, s)
        res = abs(g_new - g)
        if res <= tol:
            return GammaSolve(g, res, it, "fixed-point", frame, P, s, dtheta)
        step_signs.append(g_new > g)
        if damping == 1.0 and len(step_signs) >= 10 and all(
                step_signs[-i] != step_signs[-i - 1] for i in range(1, 10)):
            damping = 0.5
        g = g + damping * (g_new - g)
    log.debug("fixed-point iteration stalled after %d iterations; bisecting", max_iter)
    return _bisect(excess, theta, P_values, tol)


def _bisect(excess, theta, P_values, tol, max_iter: int = 200) -> GammaSolve:
    lo, hi = default_bracket(theta, P_values)

    def F(g):
        frame, P, s = excess(g)
        t, dt = theta_eval(theta, s)
        return g - t, frame, P, s, dt

    f_lo = F(lo)[0]
    f_hi = F(hi)[0]
    if f_lo == 0.0:
        hi = lo
    elif f_hi == 0.0:
        lo = hi
    elif np.sign(f_lo) == np.sign(f_hi):
        raise GammaSolveError(
            f"bisection bracket [{lo:.6g}, {hi:.6g}] does not straddle a root",
            {"lo": lo, "hi": hi, "F_lo": f_lo, "F_hi": f_hi})
    it = 0
    g = 0.5 * (lo + hi)
    f, frame, P, s, dt = F(g)
    while abs(f) > tol and hi - lo > 1e-16 * max(1.0, abs(g)) and it < max_iter:
        if np.sign(f) == np.sign(f_lo):
            lo, f_lo = g, f
        else:
            hi = g
        g = 0.5 * (lo + hi)
        f, frame, P, s, dt = F(g)
        it += 1
    if abs(f) > tol:
        raise GammaSolveError(f"bisection residual {abs(f):.3e} exceeds tol {tol:.1e}",
                              {"gamma": g, "residual": abs(f), "iterations": it})
    return GammaSolve(g, abs(f), it, "bisection", frame, P, s, dt)


@dataclass(frozen=True)
class ExistenceBoundReport:
    C: float
    C_perturbative: float
    C_star: float
    bound: float
    sup_theta_prime: float
    ok: bool

    @property
    def margin(self) -> float:
        return self.bound - self.sup_theta_prime


def existence_bound(theta: ThetaSpec, H0, Hks, mask, P_values,
                  gamma_grid: Sequence[float]) -> ExistenceBoundReport:
    """Existence bound ``sup|theta'| < 1 / (2 (1 + C))`` over a gamma grid.

    ``C`` is the largest spectral norm of ``dP/dgamma`` on the grid, computed
    both by finite differences and by the perturbation formula.
    """
    grid = sorted(float(g) for g in gamma_grid)
    C_fd = 0.0
    C_pt = 0.0
    prev = None
    for g in grid:
        frame = build_frame(H0, Hks, mask, g, prev)
        d_fd = dP_dgamma(H0, Hks, mask, g, P_values, prev=prev)
        d_pt = dP_dgamma_perturbative(frame, Hks, mask, P_values)
        C_fd = max(C_fd, float(np.linalg.norm(d_fd, 2)))
        C_pt = max(C_pt, float(np.linalg.norm(d_pt, 2)))
        prev = frame
    C_star = 1.0 + C_fd
    bound = 1.0 / (2.0 * C_star)
    sup = theta.max_slope
    ok = sup < bound
    if not ok:
        log.warning("existence bound violated: sup|theta'| = %.4g >= %.4g", sup, bound)
    return ExistenceBoundReport(C_fd, C_pt, C_star, bound, sup, ok)
