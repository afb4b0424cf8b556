import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from resmarkov.davies import Superoperator, build_davies, vec
from resmarkov.equilibrium import gibbs
from resmarkov.errors import AmbiguityError, DiagonalizabilityError, StructuralError
from resmarkov.model import SystemSpec, h_hat, qubit, three_level
from resmarkov.resonance import (LevelShift, LevelShifts, bohr_decompose, level_shift,
                                 resonance_energies, w_map)


def test_qubit_sectors(qb):
    secs = bohr_decompose(qb)
    assert [(s.e, s.dim) for s in secs] == [(-1.0, 1), (0.0, 2), (1.0, 1)]


def test_zero_hamiltonian_single_sector():
    s = SystemSpec.from_matrices(np.zeros((3, 3)), np.eye(3))
    secs = bohr_decompose(s)
    assert len(secs) == 1 and secs[0].e == 0.0 and secs[0].dim == 9


def test_three_level_sectors():
    s = three_level(1.0, 3.0)
    got = sorted((round(x.e, 12), x.dim) for x in bohr_decompose(s))
    assert got == [(-3, 1), (-2, 1), (-1, 1), (0, 3), (1, 1), (2, 1), (3, 1)]
    assert sum(d for _, d in got) == 9


def test_bohr_tolerance_too_large():
    with pytest.raises(AmbiguityError):
        bohr_decompose(three_level(1.0, 2.5), tol=0.8)


def test_zero_coupling_level_shifts(bath):
    lso = level_shift(build_davies(qubit(1.0, "zero"), bath))
    assert all(np.all(b.matrix == 0) for b in lso.blocks)
    rd = resonance_energies(lso, 0.1)
    assert rd.gamma_fgr == 0 and not rd.fgr_holds


def test_qubit_population_block(qb, bath):
    lso = level_shift(build_davies(qb, bath))
    ev = sorted(np.linalg.eigvals(lso[0.0]), key=lambda z: z.imag)
    s = h_hat(bath, 1.0) + h_hat(bath, -1.0)
    assert np.allclose(ev, [0, 1j * s], atol=1e-12)


def test_population_block_from_rates(tl, bath):
    # redundant route: classical rate matrix of the Pauli equation
    dav = build_davies(tl, bath)
    n = tl.dim
    g = tl.in_eigenbasis(tl.coupling)
    e = tl.eigvals
    w = np.zeros((n, n))
    for a in range(n):
        for b in range(n):
            if a != b:
                w[b, a] = h_hat(bath, e[a] - e[b]) * abs(g[b, a]) ** 2
    rate = w - np.diag(w.sum(axis=0))
    lam0 = level_shift(dav)[0.0]
    # Heisenberg picture: -i times the transposed rate matrix
    assert np.allclose(lam0, -1j * rate.T, atol=1e-12)


def test_qubit_fgr_rate(qb, bath):
    rd = resonance_energies(level_shift(build_davies(qb, bath)), 0.1)
    assert rd.gamma_fgr == pytest.approx(0.5 * (h_hat(bath, 1.0) + h_hat(bath, -1.0)), rel=1e-12)
    assert rd.fgr_holds
    assert rd.gamma_lambda == pytest.approx(0.01 * rd.gamma_fgr, rel=1e-12)


def test_lambda_zero_energies(qb, bath):
    rd = resonance_energies(level_shift(build_davies(qb, bath)), 0.0)
    assert np.allclose(rd.epsilons(), [en.e for en in rd.entries])
    assert rd.gamma_lambda == 0.0


@pytest.mark.parametrize("sysf", [qubit, three_level, lambda: qubit(1.0, "sigma_z")])
def test_spectrum_reassembly_and_projections(sysf, bath):
    s = sysf()
    lam = 0.3
    dav = build_davies(s, bath, lam)
    rd = resonance_energies(level_shift(dav), lam)
    n2 = s.dim ** 2
    assert len(rd.entries) == n2
    heis = np.sort_complex(np.linalg.eigvals(dav.total.dual().matrix))
    assert np.allclose(np.sort_complex(1j * rd.epsilons()), heis, atol=1e-8)
    qs = [en.q.matrix for en in rd.entries]
    for i, a in enumerate(qs):
        for j, b in enumerate(qs):
            assert np.max(np.abs(a @ b - (a if i == j else 0))) < 1e-9
    assert np.allclose(sum(qs), np.eye(n2), atol=1e-9)
    st = rd.stationary
    assert st.e == 0 and st.s == 1 and st.a == 0
    rho0 = gibbs(s.h_sys, bath.beta).rho
    assert np.allclose(st.p.apply(np.eye(s.dim) / s.dim), rho0, atol=1e-12)


def test_conjugate_pairing(tl, bath):
    rd = resonance_energies(level_shift(build_davies(tl, bath)), 0.1)
    by_e = {}
    for en in rd.entries:
        by_e.setdefault(round(en.e, 9), []).append(en.a)
    for e, vals in by_e.items():
        if e > 0:
            mirror = sorted(-np.conj(np.array(by_e[-e])), key=lambda z: (z.imag, z.real))
            assert np.allclose(sorted(vals, key=lambda z: (z.imag, z.real)), mirror, atol=1e-9)


def test_w_map_identities(tl, bath):
    lam = 0.2
    rd = resonance_energies(level_shift(build_davies(tl, bath, lam)), lam)
    n = tl.dim
    rho0 = gibbs(tl.h_sys, bath.beta).rho
    w0 = w_map(rd, 0.0).matrix
    assert np.allclose(w0, np.eye(n * n) - np.outer(vec(rho0), vec(np.eye(n))), atol=1e-9)
    t_dead = 50 / (lam ** 2 * rd.gamma_fgr)
    assert np.linalg.norm(w_map(rd, t_dead).matrix, 2) <= 1e-12


@settings(max_examples=25, deadline=None)
@given(t=st.floats(0, 30), s=st.floats(0, 30))
def test_w_semigroup(t, s):
    from resmarkov.model import BathSpec
    rd = _qubit_rd()
    lhs = w_map(rd, t + s).matrix
    rhs = w_map(rd, t).matrix @ w_map(rd, s).matrix
    assert np.max(np.abs(lhs - rhs)) < 1e-9


_CACHE = {}


def _qubit_rd():
    if "rd" not in _CACHE:
        from resmarkov.model import BathSpec
        _CACHE["rd"] = resonance_energies(level_shift(build_davies(qubit(), BathSpec(1.0), 0.3)), 0.3)
    return _CACHE["rd"]


def test_semigroup_equals_stationary_plus_w(bath):
    from resmarkov.davies import Propagator
    for s in (qubit(), three_level(), qubit(1.0, "sigma_z")):
        lam = 0.25
        dav = build_davies(s, bath, lam)
        rd = resonance_energies(level_shift(dav), lam)
        p = Propagator(dav.total)
        for t in (0.0, 1.3, 17.0):
            rebuilt = rd.stationary.p.matrix + w_map(rd, t).matrix
            assert np.allclose(p.matrix(t), rebuilt, atol=1e-12)


def test_gamma_ratio_tracks_fgr(qb, bath):
    lso = level_shift(build_davies(qb, bath))
    devs = []
    for lam in (0.1, 0.05, 0.025):
        rd = resonance_energies(lso, lam)
        devs.append(abs(rd.gamma_lambda / lam ** 2 - rd.gamma_fgr) / rd.gamma_fgr)
    # gamma(lambda) is exactly quadratic here, the deviation is rounding
    assert max(devs) < 1e-12


def test_noncommuting_k_rejected(qb, bath):
    dav = build_davies(qb, bath)
    bad = Superoperator.sandwich(np.array([[0, 1], [1, 0]]), np.eye(2))
    import dataclasses
    with pytest.raises(StructuralError):
        level_shift(dataclasses.replace(dav, k_super=bad))


def test_defective_block_rejected(qb, bath):
    lso = level_shift(build_davies(qb, bath))
    blocks = []
    for b in lso.blocks:
        if b.sector.e == 0.0:
            b = LevelShift(b.sector, np.array([[0, 1], [0, 0]], dtype=complex))
        blocks.append(b)
    with pytest.raises(DiagonalizabilityError):
        resonance_energies(LevelShifts(blocks, lso.system, lso.gibbs), 0.1)
