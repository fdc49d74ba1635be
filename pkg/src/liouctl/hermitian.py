"""Dense complex matrix primitives.

Matrices are plain ``numpy.ndarray`` objects of dtype ``complex128``.  The
helpers here validate Hermiticity and density-operator invariants,
diagonalise Hermitian matrices with a deterministic eigenvector phase, and
build unitary propagators ``exp(-i H dt)`` from the spectral decomposition.
"""
from __future__ import annotations

import numpy as np

from .errors import (
    DimensionError,
    EigenSolverError,
    InvalidDensityError,
    NotHermitianError,
)

HERMITICITY_TOL = 1e-10
UNITARITY_TOL = 1e-12
POSITIVITY_TOL = 1e-10


def as_matrix(a) -> np.ndarray:
    """Coerce ``a`` to a square complex128 array with finite entries."""
    m = np.asarray(a, dtype=np.complex128)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] == 0:
        raise DimensionError(f"expected a non-empty square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    return m


def dagger(a: np.ndarray) -> np.ndarray:
    return a.conj().T


def hermiticity_defect(a: np.ndarray) -> float:
    """Frobenius norm of ``a - a^dagger``."""
    return float(np.linalg.norm(a - a.conj().T))


def check_hermitian(a, tol: float = HERMITICITY_TOL) -> np.ndarray:
    m = as_matrix(a)
    defect = hermiticity_defect(m)
    if defect > tol:
        raise NotHermitianError(f"matrix is not Hermitian: ||A - A^H||_F = {defect:.3e} > {tol:.1e}")
    return m


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Return ``AB - BA``."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise DimensionError(f"commutator of mismatched shapes {a.shape} and {b.shape}")
    return a @ b - b @ a


def fix_phases(vecs: np.ndarray) -> np.ndarray:
    """Rotate each column so its largest-magnitude component is real positive.

    Ties in magnitude resolve to the lowest row index (``argmax`` semantics).
    """
    vecs = np.array(vecs, dtype=np.complex128, copy=True)
    idx = np.argmax(np.abs(vecs), axis=0)
    pivots = vecs[idx, np.arange(vecs.shape[1])]
    phases = pivots.conj() / np.abs(pivots)
    vecs *= phases[np.newaxis, :]
    # the pivot entries are real up to rounding; pin them exactly
    vecs[idx, np.arange(vecs.shape[1])] = np.abs(pivots)
    return vecs


def eig_hermitian(h, tol: float = HERMITICITY_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a Hermitian matrix.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvalues ascending and
    eigenvectors as phase-fixed columns.
    """
    m = check_hermitian(h, tol)
    # symmetrise so LAPACK sees an exactly Hermitian input
    m = 0.5 * (m + m.conj().T)
    try:
        w, v = np.linalg.eigh(m)
    except np.linalg.LinAlgError as exc:
        raise EigenSolverError(f"Hermitian eigensolver did not converge: {exc}") from exc
    return w, fix_phases(v)


def expm_unitary(h, dt: float, tol: float = HERMITICITY_TOL) -> np.ndarray:
    """``exp(-i H dt)`` via the spectral decomposition of ``H``."""
    w, v = eig_hermitian(h, tol)
    return (v * np.exp(-1j * w * dt)) @ v.conj().T


def unitarity_defect(u: np.ndarray) -> float:
    return float(np.linalg.norm(u @ u.conj().T - np.eye(u.shape[0])))


def validate_density(rho, tol: float = POSITIVITY_TOL) -> np.ndarray:
    """Check the density-operator invariants and return ``rho`` as complex128.

    Raises :class:`InvalidDensityError` listing every invariant that failed.
    """
    m = as_matrix(rho)
    failures = []
    messages = []
    defect = hermiticity_defect(m)
    if defect > HERMITICITY_TOL:
        failures.append("hermitian")
        messages.append(f"not Hermitian (defect {defect:.3e})")
    tr = np.trace(m)
    if abs(tr - 1.0) > max(tol, 1e-10):
        failures.append("trace")
        messages.append(f"trace = {tr.real:.12g}, expected 1")
    if "hermitian" not in failures:
        lam_min = float(np.linalg.eigvalsh(0.5 * (m + m.conj().T))[0])
        if lam_min < -tol:
            failures.append("positive")
            messages.append(f"negative eigenvalue {lam_min:.3e}")
    if failures:
        raise InvalidDensityError("invalid density matrix: " + "; ".join(messages), failures)
    return m


def frobenius(a: np.ndarray) -> float:
    return float(np.linalg.norm(a))
