import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from liouctl.errors import BranchCrossingError, DegenerateSpectrumError
from liouctl.hermitian import eig_hermitian
from liouctl.spectral import (build_frame, build_P, check_full_connectedness, check_P_diag_distinct,
                              check_strong_regularity, control_in_frame, dP_dgamma,
                              dP_dgamma_perturbative, from_eigenbasis, match_branches, offdiag_mass,
                              to_eigenbasis)
from liouctl.target import diagonalize_target

from conftest import H0_LADDER, H1_LADDER, P_LADDER, RHOF, random_density, random_hermitian

LADDER = (H0_LADDER, [H1_LADDER], [1])


def cubic_roots(a):
    # hand-expanded characteristic polynomial of H0 + a H1
    return np.sort(np.roots([1.0, -1.8, 0.99 - 2 * a * a, -(0.162 - 1.5 * a * a)]).real)


def test_frame_at_zero_is_bare_basis():
    fr = build_frame(*LADDER, 0.0)
    np.testing.assert_allclose(fr.eigenvalues, [0.3, 0.6, 0.9], atol=1e-15)
    np.testing.assert_allclose(fr.U1, np.eye(3), atol=1e-15)


def test_frame_without_prev_equals_plain_eigendecomposition():
    rng = np.random.default_rng(11)
    H = random_hermitian(rng, 4)
    fr = build_frame(H, [np.zeros((4, 4))], [1], 0.0)
    w, v = eig_hermitian(H)
    assert np.array_equal(fr.eigenvalues, w) and np.array_equal(fr.U1, v)


@pytest.mark.parametrize("gamma", [0.01, 0.05, 0.1, 0.2])
def test_frame_eigenvalues_match_cubic(gamma):
    fr = build_frame(*LADDER, gamma)
    np.testing.assert_allclose(fr.eigenvalues, cubic_roots(gamma), atol=1e-12)
    H = H0_LADDER + gamma * H1_LADDER
    assert np.linalg.norm(H @ fr.U1 - fr.U1 * fr.eigenvalues) <= 1e-10


def test_bohr_consistent_with_eigenvalues():
    fr = build_frame(*LADDER, 0.1)
    for (l, m), w in fr.bohr.items():
        assert w == fr.eigenvalues[l] - fr.eigenvalues[m]
    assert len(fr.bohr) == 6


def test_regularity_fails_for_equally_spaced_ladder():
    rep = check_strong_regularity(build_frame(*LADDER, 0.0))
    assert not rep.ok
    fr = build_frame(*LADDER, 0.0)
    a, b = rep.witness
    assert abs(fr.bohr[a] - fr.bohr[b]) < 1e-12
    assert abs(abs(fr.bohr[a]) - 0.3) < 1e-12


def test_regularity_two_level():
    fr = build_frame(np.diag([0.0, 1.0]), [np.array([[0, 1], [1, 0]])], [1], 0.0)
    assert check_strong_regularity(fr).ok


def test_regularity_restored_at_0p1_with_oracle_margin():
    lam = cubic_roots(0.1)
    bohr = sorted(lam[l] - lam[m] for l, m in itertools.permutations(range(3), 2))
    oracle_gap = min(np.diff(bohr))
    rep = check_strong_regularity(build_frame(*LADDER, 0.1))
    assert rep.ok
    assert abs(rep.min_gap - oracle_gap) < 1e-12
    assert oracle_gap > 0.08


def test_connectedness_fails_on_missing_23_coupling():
    rep = check_full_connectedness(build_frame(*LADDER, 0.0), [H1_LADDER])
    assert not rep.ok
    assert rep.weakest == (1, 2)
    assert not rep.connected[1, 2] and not rep.connected[2, 1]
    assert rep.connected[0, 1] and rep.connected[0, 2]


def test_connectedness_all_ones():
    ones = np.ones((3, 3), dtype=complex)
    rng = np.random.default_rng(0)
    small = 1e-3 * random_hermitian(rng, 3)
    fr = build_frame(H0_LADDER + small, [ones], [1], 0.0)
    assert check_full_connectedness(fr, [ones]).ok


def test_connectedness_at_0p1_matches_explicit_congruence():
    fr = build_frame(*LADDER, 0.1)
    rep = check_full_connectedness(fr, [H1_LADDER])
    assert rep.ok
    explicit = np.abs(np.conj(fr.U1.T).dot(H1_LADDER).dot(fr.U1))
    off = ~np.eye(3, dtype=bool)
    np.testing.assert_allclose(rep.coupling[off], explicit[off], atol=1e-14)
    assert np.min(explicit[off]) > 0.4


def test_build_P_diagonal_at_zero():
    P = build_P(build_frame(*LADDER, 0.0), P_LADDER)
    np.testing.assert_allclose(P, np.diag(P_LADDER), atol=1e-15)


def test_build_P_conjugated_ladder():
    tf = diagonalize_target(RHOF)
    U2 = tf.U2
    H0t = U2.conj().T @ H0_LADDER @ U2
    H1t = U2.conj().T @ H1_LADDER @ U2
    P = build_P(build_frame(H0t, [H1t], [1], 0.0), P_LADDER)
    # projector sum over the eigenvectors U2^H e_j of the conjugated H0
    oracle = sum(p * np.outer(U2.conj().T[:, j], U2.conj().T[:, j].conj()) for j, p in enumerate(P_LADDER))
    np.testing.assert_allclose(P, oracle, atol=1e-12)
    np.testing.assert_allclose(P, U2.conj().T @ np.diag(P_LADDER) @ U2, atol=1e-12)


def test_build_P_rejects_nonpositive():
    with pytest.raises(ValueError):
        build_P(build_frame(*LADDER, 0.0), [1.0, 0.0, 2.0])


def test_dP_zero_for_equal_P():
    d = dP_dgamma(*LADDER, 0.1, [0.7, 0.7, 0.7])
    assert np.linalg.norm(d) < 1e-8


def test_dP_zero_for_diagonal_controls():
    d = dP_dgamma(H0_LADDER, [np.diag([1.0, -0.5, 0.5])], [1], 0.1, P_LADDER)
    assert np.linalg.norm(d) < 1e-8


@pytest.mark.parametrize("gamma", [0.0, 0.01, 0.05, 0.1])
def test_dP_finite_difference_matches_perturbation_formula(gamma):
    fd = dP_dgamma(*LADDER, gamma, P_LADDER)
    pt = dP_dgamma_perturbative(build_frame(*LADDER, gamma), [H1_LADDER], [1], P_LADDER)
    assert np.linalg.norm(fd - pt) <= 1e-5 * np.linalg.norm(pt)
    assert np.linalg.norm(fd - fd.conj().T) <= 1e-10


def test_dP_degenerate_raises():
    with pytest.raises(DegenerateSpectrumError):
        dP_dgamma(np.diag([0.0, 0.0, 1.0]), [np.diag([1.0, 1.0, 0.0])], [1], 0.0, P_LADDER)


def test_branch_matching_rejects_ambiguous_overlap():
    n = 3
    dft = np.exp(2j * np.pi * np.outer(range(n), range(n)) / n) / np.sqrt(n)
    with pytest.raises(BranchCrossingError) as exc:
        match_branches(np.eye(n), dft, gamma=0.4)
    assert exc.value.overlap == pytest.approx(1 / np.sqrt(3))


def test_branch_matching_reorders_swapped_columns():
    v = np.eye(3)[:, [2, 0, 1]]
    order = match_branches(np.eye(3), v)
    np.testing.assert_array_equal(v[:, order], np.eye(3))


def test_branch_continuity_along_gamma():
    prev = build_frame(*LADDER, 0.0)
    for g in np.arange(1, 201) * 1e-3:
        fr = build_frame(*LADDER, g, prev)
        overlaps = np.abs(np.sum(prev.U1.conj() * fr.U1, axis=0))
        assert overlaps.min() > 0.99
        prev = fr


def test_condition_four_and_offdiag_mass():
    P0 = build_P(build_frame(*LADDER, 0.0), P_LADDER)
    ok, gap = check_P_diag_distinct(P0)
    assert ok and gap == pytest.approx(0.6)
    assert offdiag_mass(P0) == 0.0
    P1 = build_P(build_frame(*LADDER, 0.1), P_LADDER)
    assert offdiag_mass(P1) > 0.1
    ok, _ = check_P_diag_distinct(np.eye(3))
    assert not ok


def test_eigenbasis_identity_and_round_trip():
    rng = np.random.default_rng(5)
    rho = random_density(rng, 3)
    fr0 = build_frame(*LADDER, 0.0)
    np.testing.assert_allclose(to_eigenbasis(rho, fr0), rho, atol=1e-15)
    fr = build_frame(*LADDER, 0.13)
    back = from_eigenbasis(to_eigenbasis(rho, fr), fr)
    np.testing.assert_allclose(back, rho, atol=1e-12)
    np.testing.assert_allclose(np.linalg.eigvalsh(to_eigenbasis(rho, fr)), np.linalg.eigvalsh(rho), atol=1e-10)


def test_control_in_frame_identity_frame():
    fr = build_frame(*LADDER, 0.0)
    np.testing.assert_allclose(control_in_frame(fr, H1_LADDER), H1_LADDER, atol=1e-15)


seeds = st.integers(0, 2**32 - 1)


@given(seeds, st.floats(-0.3, 0.3))
def test_P_commutes_with_perturbed_hamiltonian(seed, gamma):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 6))
    H0 = random_hermitian(rng, n)
    Hk = random_hermitian(rng, n)
    p = rng.uniform(0.01, 3.0, size=n)
    fr = build_frame(H0, [Hk], [1], gamma)
    P = build_P(fr, p)
    H = H0 + gamma * Hk
    assert np.linalg.norm(P @ H - H @ P) <= 1e-10 * max(1.0, np.linalg.norm(H))
    assert np.linalg.eigvalsh(P).min() == pytest.approx(p.min(), abs=1e-10)


@given(seeds)
def test_frame_at_zero_equals_eig_of_H0(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 7))
    H0 = random_hermitian(rng, n)
    fr = build_frame(H0, [random_hermitian(rng, n)], [1], 0.0)
    w, v = eig_hermitian(H0)
    assert np.array_equal(fr.eigenvalues, w) and np.array_equal(fr.U1, v)


@given(seeds, st.floats(0.0, 0.2))
def test_dP_hermitian(seed, gamma):
    rng = np.random.default_rng(seed)
    H0 = np.diag(np.sort(rng.uniform(0, 3, size=3)) + np.arange(3))
    d = dP_dgamma(H0, [random_hermitian(rng, 3, 0.1)], [1], gamma, rng.uniform(0.1, 2, size=3))
    assert np.linalg.norm(d - d.conj().T) <= 1e-10
