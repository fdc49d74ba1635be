"""Eigen-frame of the perturbed Hamiltonian and the designed operator P.

The perturbed Hamiltonian is ``H(gamma) = H0 + gamma * sum_{k in mask} H_k``.
Its eigenvectors, ordered by ascending eigenvalue at the start of a
continuation and by overlap matching afterwards, define the frame in which
``P_gamma = sum_j P_j |phi_j><phi_j|`` is built.  This module also evaluates
the four convergence conditions (strong regularity, full connectedness,
commutation of P with H(gamma), and distinct diagonal entries of P).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import BranchCrossingError, DegenerateSpectrumError, DimensionError
from .hermitian import as_matrix, check_hermitian, fix_phases

BRANCH_OVERLAP_MIN = 0.7
DEGENERACY_GUARD = 1e-8
REGULARITY_TOL = 1e-8
CONNECTEDNESS_TOL = 1e-10
FD_STEP = 1e-6


@dataclass(frozen=True)
class SpectralFrame:
    """Eigendecomposition of ``H(gamma)``; columns of ``U1`` are the eigenvectors."""

    gamma: float
    eigenvalues: np.ndarray
    U1: np.ndarray
    H: np.ndarray

    @property
    def dim(self) -> int:
        return self.eigenvalues.shape[0]

    @property
    def bohr(self) -> dict:
        """``{(l, m): lambda_l - lambda_m}`` for all ordered pairs ``l != m`` (0-based)."""
        lam = self.eigenvalues
        return {(l, m): float(lam[l] - lam[m])
                for l in range(self.dim) for m in range(self.dim) if l != m}

    def min_eigen_gap(self) -> float:
        lam = np.sort(self.eigenvalues)
        return float(np.min(np.diff(lam))) if lam.size > 1 else np.inf


@dataclass(frozen=True)
class RegularityReport:
    ok: bool
    min_gap: float
    # closest pair of ordered level pairs, 0-based
    witness: Optional[tuple]


@dataclass(frozen=True)
class ConnectivityReport:
    ok: bool
    # max_k |(U1^H H_k U1)_{jl}|; diagonal set to nan
    coupling: np.ndarray
    connected: np.ndarray
    weakest: Optional[tuple]


def control_generator(Hks: Sequence[np.ndarray], mask: Sequence[int]) -> np.ndarray:
    """``sum_k C_k H_k`` for the masked controls."""
    if len(Hks) != len(mask):
        raise DimensionError(f"mask has length {len(mask)} but there are {len(Hks)} controls")
    out = np.zeros_like(np.asarray(Hks[0], dtype=np.complex128))
    for c, hk in zip(mask, Hks):
        if c:
            out = out + c * np.asarray(hk, dtype=np.complex128)
    return out


def perturbed_hamiltonian(H0, Hks, mask, gamma: float) -> np.ndarray:
    return np.asarray(H0, dtype=np.complex128) + gamma * control_generator(Hks, mask)


def match_branches(prev_vecs: np.ndarray, vecs: np.ndarray, gamma: float = None) -> np.ndarray:
    """Column permutation of ``vecs`` that best continues ``prev_vecs``.

    Raises :class:`BranchCrossingError` if some matched overlap is below 0.7.
    """
    overlap = np.abs(prev_vecs.conj().T @ vecs)
    order = np.argmax(overlap, axis=1)
    if np.unique(order).size != order.size:
        rows, cols = linear_sum_assignment(-overlap)
        order = cols[np.argsort(rows)]
    matched = overlap[np.arange(overlap.shape[0]), order]
    worst = float(matched.min())
    if worst < BRANCH_OVERLAP_MIN:
        raise BranchCrossingError(
            f"eigenbranch matching ambiguous at gamma={gamma!r}: best overlap {worst:.3f} < {BRANCH_OVERLAP_MIN}",
            gamma=gamma, overlap=worst)
    return order


def build_frame(H0, Hks, mask, gamma: float, prev: Optional[SpectralFrame] = None) -> SpectralFrame:
    if not np.isfinite(gamma):
        raise ValueError(f"gamma must be finite, got {gamma!r}")
    H = perturbed_hamiltonian(H0, Hks, mask, gamma)
    check_hermitian(H)
    return frame_from_hamiltonian(H, gamma, prev)


def frame_from_hamiltonian(H: np.ndarray, gamma: float, prev: Optional[SpectralFrame] = None,
                           phase_fix: bool = True) -> SpectralFrame:
    """Frame of an already-validated Hermitian ``H = H(gamma)``.

    ``phase_fix=False`` skips the eigenvector phase convention; projectors
    and overlap magnitudes do not depend on it.
    """
    w, v = np.linalg.eigh(H)
    if phase_fix:
        v = fix_phases(v)
    if prev is not None:
        order = match_branches(prev.U1, v, gamma)
        w = w[order]
        v = v[:, order]
    return SpectralFrame(gamma=float(gamma), eigenvalues=w, U1=v, H=H)


def check_strong_regularity(frame: SpectralFrame, tol: float = REGULARITY_TOL) -> RegularityReport:
    """All Bohr frequencies of distinct ordered level pairs pairwise distinct."""
    items = sorted(frame.bohr.items(), key=lambda kv: kv[1])
    if len(items) < 2:
        return RegularityReport(True, np.inf, None)
    values = np.array([v for _, v in items])
    gaps = np.diff(values)
    i = int(np.argmin(gaps))
    min_gap = float(gaps[i])
    return RegularityReport(min_gap > tol, min_gap, (items[i][0], items[i + 1][0]))


def control_in_frame(frame: SpectralFrame, hk) -> np.ndarray:
    """``U1^H H_k U1``."""
    return frame.U1.conj().T @ np.asarray(hk, dtype=np.complex128) @ frame.U1


def check_full_connectedness(frame: SpectralFrame, Hks, tol: float = CONNECTEDNESS_TOL) -> ConnectivityReport:
    n = frame.dim
    coupling = np.zeros((n, n))
    for hk in Hks:
        coupling = np.maximum(coupling, np.abs(control_in_frame(frame, hk)))
    np.fill_diagonal(coupling, np.nan)
    off = ~np.eye(n, dtype=bool)
    connected = np.zeros((n, n), dtype=bool)
    connected[off] = coupling[off] > tol
    weakest = None
    if n > 1:
        masked = np.where(off, coupling, np.inf)
        j, l = np.unravel_index(int(np.argmin(masked)), masked.shape)
        weakest = (int(min(j, l)), int(max(j, l)))
    return ConnectivityReport(bool(connected[off].all()) if n > 1 else True, coupling, connected, weakest)


def _check_P_values(P_values, n: int) -> np.ndarray:
    p = np.asarray(P_values, dtype=float)
    if p.shape != (n,):
        raise DimensionError(f"expected {n} P values, got shape {p.shape}")
    if np.any(p <= 0) or not np.all(np.isfinite(p)):
        raise ValueError(f"P values must be finite and > 0, got {p.tolist()}")
    return p


def build_P(frame: SpectralFrame, P_values) -> np.ndarray:
    """``P_gamma = U1 diag(P) U1^H``; commutes with ``H(gamma)`` by construction."""
    p = _check_P_values(P_values, frame.dim)
    P = (frame.U1 * p) @ frame.U1.conj().T
    return 0.5 * (P + P.conj().T)


def _require_nondegenerate(frame: SpectralFrame) -> None:
    gap = frame.min_eigen_gap()
    if gap < DEGENERACY_GUARD:
        raise DegenerateSpectrumError(
            f"eigenvalue gap {gap:.3e} below {DEGENERACY_GUARD:.0e} at gamma={frame.gamma!r}; dP/dgamma is singular")


def dP_dgamma(H0, Hks, mask, gamma: float, P_values, prev: Optional[SpectralFrame] = None,
              h: float = FD_STEP) -> np.ndarray:
    """Central finite difference of ``P_gamma`` with branch-matched frames."""
    center = build_frame(H0, Hks, mask, gamma, prev)
    _require_nondegenerate(center)
    plus = build_frame(H0, Hks, mask, gamma + h, center)
    minus = build_frame(H0, Hks, mask, gamma - h, center)
    d = (build_P(plus, P_values) - build_P(minus, P_values)) / (2.0 * h)
    return 0.5 * (d + d.conj().T)


def dP_dgamma_perturbative(frame: SpectralFrame, Hks, mask, P_values) -> np.ndarray:
    """First-order eigenvector perturbation formula for ``dP/dgamma``.

    ``dP = sum_{l != j} (P_j - P_l) <phi_l|H'|phi_j> / (lambda_j - lambda_l) |phi_l><phi_j|``
    with ``H' = sum_{k in mask} H_k``.
    """
    _require_nondegenerate(frame)
    p = _check_P_values(P_values, frame.dim)
    hp = control_in_frame(frame, control_generator(Hks, mask))
    lam = frame.eigenvalues
    denom = lam[np.newaxis, :] - lam[:, np.newaxis]  # [l, j] = lambda_j - lambda_l
    weight = p[np.newaxis, :] - p[:, np.newaxis]  # [l, j] = P_j - P_l
    np.fill_diagonal(denom, 1.0)
    coeff = weight * hp / denom
    np.fill_diagonal(coeff, 0.0)
    return frame.U1 @ coeff @ frame.U1.conj().T


def check_P_diag_distinct(P, tol: float = 1e-8) -> tuple[bool, float]:
    d = np.real(np.diag(np.asarray(P)))
    if d.size < 2:
        return True, np.inf
    s = np.sort(d)
    gap = float(np.min(np.diff(s)))
    return gap > tol, gap


def offdiag_mass(P) -> float:
    """Frobenius norm of the off-diagonal part; a diagnostic for condition iv."""
    P = np.asarray(P)
    return float(np.linalg.norm(P - np.diag(np.diag(P))))


def to_eigenbasis(rho, frame: SpectralFrame) -> np.ndarray:
    rho = as_matrix(rho)
    if rho.shape != frame.U1.shape:
        raise DimensionError(f"state shape {rho.shape} does not match frame {frame.U1.shape}")
    return frame.U1.conj().T @ rho @ frame.U1


def from_eigenbasis(rho_hat, frame: SpectralFrame) -> np.ndarray:
    return frame.U1 @ np.asarray(rho_hat) @ frame.U1.conj().T
