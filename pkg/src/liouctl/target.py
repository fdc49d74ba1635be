"""Diagonalising frame for non-diagonal targets and the transfer metric.

A target ``rho_f`` is diagonalised as ``rho_f~ = U2^H rho_f U2``.  The whole
problem is conjugated into this frame, simulated there against the diagonal
target, and mapped back with ``rho = U2 rho~ U2^H``.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import DimensionError
from .hermitian import eig_hermitian, unitarity_defect, validate_density


@dataclass(frozen=True)
class TargetFrame:
    U2: np.ndarray
    rhof_tilde: np.ndarray
    eigenvalues: np.ndarray
    # position of each tilde-frame eigenvalue in ascending order; identity for eigh output
    ordering: tuple

    def to_tilde(self, a) -> np.ndarray:
        return self.U2.conj().T @ np.asarray(a) @ self.U2

    def to_original(self, a) -> np.ndarray:
        return self.U2 @ np.asarray(a) @ self.U2.conj().T


def diagonalize_target(rhof, U2: Optional[np.ndarray] = None) -> TargetFrame:
    """Eigenbasis of the target, eigenvalues ascending, phase-fixed columns.

    An explicit ``U2`` may be supplied instead (it must be unitary and
    diagonalise ``rhof``); it is used verbatim, without phase fixing.
    """
    rhof = validate_density(rhof)
    if U2 is None:
        w, U2 = eig_hermitian(rhof)
    else:
        U2 = np.asarray(U2, dtype=np.complex128)
        if U2.shape != rhof.shape:
            raise DimensionError(f"U2 has shape {U2.shape}, target has {rhof.shape}")
        if unitarity_defect(U2) > 1e-8:
            raise ValueError(f"supplied U2 is not unitary (defect {unitarity_defect(U2):.2e})")
    tilde = U2.conj().T @ rhof @ U2
    off = tilde - np.diag(np.diag(tilde))
    if np.linalg.norm(off) > 1e-8:
        raise ValueError(f"U2 does not diagonalise the target (off-diagonal norm {np.linalg.norm(off):.2e})")
    w = np.real(np.diag(tilde))
    # the diagonal form is exact by construction; drop the rounding residue
    tilde = np.diag(w).astype(np.complex128)
    ordering = tuple(int(i) for i in np.argsort(np.argsort(w, kind="stable"), kind="stable"))
    return TargetFrame(U2=U2, rhof_tilde=tilde, eigenvalues=w, ordering=ordering)


def transform_problem(problem, frame: TargetFrame, hamiltonians: bool = True):
    """Conjugate a :class:`~liouctl.dynamics.SimulationProblem` into the target frame.

    With ``hamiltonians=False`` the generators are taken to be already
    expressed in the target frame and are left untouched; only the states
    are conjugated.
    """
    n = frame.U2.shape[0]
    if problem.H0.shape != (n, n):
        raise DimensionError(f"problem dimension {problem.H0.shape[0]} does not match frame dimension {n}")
    if hamiltonians:
        H0 = frame.to_tilde(problem.H0)
        Hks = tuple(frame.to_tilde(h) for h in problem.Hks)
    else:
        H0, Hks = problem.H0, tuple(problem.Hks)
    return replace(problem, H0=_herm(H0), Hks=tuple(_herm(h) for h in Hks),
                   rho0=_herm(frame.to_tilde(problem.rho0)), rhof=frame.rhof_tilde)


def _herm(a):
    return 0.5 * (a + a.conj().T)


def transition_probability(rho, rhof) -> float:
    """``tr(rho rho_f) / tr(rho_f^2)``; equals ``tr(rho rho_f)`` for a pure target."""
    rho = np.asarray(rho)
    rhof = np.asarray(rhof)
    if rho.shape != rhof.shape:
        raise DimensionError(f"shapes differ: {rho.shape} vs {rhof.shape}")
    purity = float(np.real(np.trace(rhof @ rhof)))
    return float(np.real(np.trace(rho @ rhof))) / purity
