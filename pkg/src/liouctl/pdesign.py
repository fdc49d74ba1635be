"""Ordering rule for the eigenvalues of P and exhaustive minimality checks.

For a diagonal target the candidate equilibria are diagonal states whose
diagonals are permutations of the initial spectrum.  ``V = tr(P rho)`` must
be strictly smallest at the target among them; assigning larger ``P_j`` to
smaller target populations achieves this.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import permutations
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionError
from .perturbation import ThetaSpec, solve_gamma
from .spectral import build_P, build_frame

MAX_ENUMERATION_DIM = 8


@dataclass(frozen=True)
class PDesign:
    values: tuple
    min_gap: float
    provenance: str = "constructed"


def design_P(rhof_diag: Sequence[float], min_gap: float = 0.5, base: float = 0.01,
             tie_tol: float = 1e-12) -> PDesign:
    """Assign ``P_j`` anti-monotone to the target populations.

    The most populated level gets ``base``; each following level in the
    order gets ``min_gap`` more.  Populations within ``tie_tol`` count as
    equal and are ordered by index, the lower index receiving the larger value.
    """
    d = np.asarray(rhof_diag, dtype=float)
    if d.ndim != 1 or d.size == 0:
        raise DimensionError("target diagonal must be a non-empty vector")
    if np.any(d < -1e-12) or abs(d.sum() - 1.0) > 1e-8:
        raise ValueError(f"target diagonal must be nonnegative and sum to 1, got {d.tolist()}")
    if not (min_gap > 0 and base > 0):
        raise ValueError("min_gap and base must be > 0")
    # group populations within tie_tol, then break ties by index
    by_pop = sorted(range(d.size), key=lambda i: -d[i])
    groups = [[by_pop[0]]]
    for i in by_pop[1:]:
        if d[groups[-1][0]] - d[i] <= tie_tol:
            groups[-1].append(i)
        else:
            groups.append([i])
    order = [i for g in groups for i in sorted(g, reverse=True)]
    values = np.empty(d.size)
    for rank, i in enumerate(order):
        values[i] = base + rank * min_gap
    return PDesign(tuple(float(v) for v in values), float(min_gap))


def _distinct_permutations(vec: np.ndarray, tol: float) -> list:
    out = []
    for perm in permutations(range(vec.size)):
        cand = vec[list(perm)]
        if not any(np.max(np.abs(cand - c)) <= tol for c in out):
            out.append(cand)
    return out


@dataclass(frozen=True)
class ESet:
    candidates: list

    def __len__(self):
        return len(self.candidates)


def enumerate_E(rho0, dedup_tol: float = 1e-9) -> ESet:
    """Diagonal states whose diagonals are the distinct permutations of ``spec(rho0)``."""
    rho0 = np.asarray(rho0)
    n = rho0.shape[0]
    if n > MAX_ENUMERATION_DIM:
        raise ValueError(f"enumeration limited to N <= {MAX_ENUMERATION_DIM}, got {n}")
    lam = np.linalg.eigvalsh(0.5 * (rho0 + rho0.conj().T))
    return ESet([np.diag(c).astype(np.complex128) for c in _distinct_permutations(lam, dedup_tol)])


@dataclass(frozen=True)
class MinimalityResult:
    ok: bool
    worst_margin: float
    worst_permutation: Optional[tuple]
    values: dict


def verify_min_over_permutations(P_values, H0, Hks, mask, rhof_tilde, mode: str = "gamma-zero",
                                 theta: Optional[ThetaSpec] = None,
                                 dedup_tol: float = 1e-12) -> MinimalityResult:
    """Check that ``V`` is strictly smallest at the target among all permuted diagonals.

    ``gamma-zero`` evaluates every candidate with ``P`` at ``gamma = 0``;
    ``gamma-solved`` re-solves the perturbation at each candidate (needs
    ``theta``).  ``values`` maps each permutation tuple to its ``V``.
    """
    rhof_tilde = np.asarray(rhof_tilde)
    n = rhof_tilde.shape[0]
    if n > MAX_ENUMERATION_DIM:
        raise ValueError(f"enumeration limited to N <= {MAX_ENUMERATION_DIM}, got {n}")
    if mode not in ("gamma-zero", "gamma-solved"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "gamma-solved" and theta is None:
        raise ValueError("gamma-solved mode needs a ThetaSpec")
    d = np.real(np.diag(rhof_tilde))
    P0 = build_P(build_frame(H0, Hks, mask, 0.0), P_values)

    def V(perm):
        c = np.diag(d[list(perm)]).astype(np.complex128)
        if mode == "gamma-zero":
            return float(np.real(np.trace(P0 @ c)))
        sol = solve_gamma(c, np.diag(d).astype(np.complex128), H0, Hks, mask, P_values, theta)
        return float(np.real(np.trace(sol.P @ c)))

    identity = tuple(range(n))
    v_target = V(identity)
    values = {identity: v_target}
    worst, worst_perm = math.inf, None
    for perm in permutations(range(n)):
        if np.max(np.abs(d[list(perm)] - d)) <= dedup_tol:
            continue  # same state as the target
        v = V(perm)
        values[perm] = v
        if v - v_target < worst:
            worst, worst_perm = v - v_target, perm
    return MinimalityResult(worst > 0, worst, worst_perm, values)
