import math
import warnings

import numpy as np
import pytest

from resmarkov.davies import Propagator, Superoperator, build_davies, cpt_report, vec
from resmarkov.dynamics import log_time_grid, loglog_slope
from resmarkov.equilibrium import (GibbsState, gibbs, reduced_gibbs_second_order, renormalize,
                                   renormalized_generators, second_order_correction)
from resmarkov.errors import DomainError, StructuralError
from resmarkov.model import BathSpec, qubit, three_level
from resmarkov.oracle import discrete_imaginary_kernel, discretize_bath, exact_reduced_gibbs
from resmarkov.resonance import level_shift, resonance_energies

LAMS = (0.1, 0.05, 0.025)


def test_gibbs_closed_forms():
    assert np.allclose(gibbs(np.zeros((3, 3)), 2.0).rho, np.eye(3) / 3)
    r = gibbs(np.diag([0.0, 1.0, 2.0]), 50.0).rho
    assert abs(r[0, 0] - 1) < 1e-10
    beta, d = 0.7, 1.3
    p = gibbs(np.diag([0.0, d]), beta).rho.diagonal().real
    z = 1 + math.exp(-beta * d)
    assert np.allclose(p, [1 / z, math.exp(-beta * d) / z], atol=1e-15)
    with pytest.raises(DomainError):
        gibbs(np.eye(2), 0.0)


def test_second_order_basic(qb, bath):
    assert np.array_equal(reduced_gibbs_second_order(qb, bath, 0.0).rho, gibbs(qb.h_sys, 1.0).rho)
    r = reduced_gibbs_second_order(qb, bath, 0.1).rho
    assert abs(np.trace(r) - 1) < 1e-12
    assert np.max(np.abs(r - r.conj().T)) < 1e-12
    rho2 = second_order_correction(qb, bath)
    assert abs(np.trace(rho2)) < 1e-14


def test_second_order_node_convergence(tl, bath):
    a = second_order_correction(tl, bath, 32)
    b = second_order_correction(tl, bath, 96)
    assert np.max(np.abs(a - b)) < 1e-12


def test_second_order_against_finite_mode_dyson(qb, bath):
    # with the oracle's own kernel the second-order formula is exact up to O(lambda^2)
    fm = discretize_bath(bath, 3, 4.0, 3, thermal_tail=0.05, omega_tail_tol=None)
    rho0 = gibbs(qb.h_sys, 1.0).rho
    rho2 = second_order_correction(qb, bath, kernel=lambda s: discrete_imaginary_kernel(fm, s))
    errs = []
    for lam in (0.02, 0.01):
        ex = exact_reduced_gibbs(qb, fm, lam, max_tail_mass=None).rho
        errs.append(np.abs((ex - rho0) / lam ** 2 - rho2).max())
    assert errs[0] < 1e-6
    assert errs[1] < errs[0] / 3


def test_renormalize_gibbs_inverts(tl):
    rs = renormalize(gibbs(tl.h_sys, 1.3))
    assert np.allclose(rs.h_tilde, tl.h_sys, atol=1e-12)
    assert rs.e_tilde[0] == 0.0


def test_renormalize_rejects_nonpositive():
    with pytest.raises(DomainError):
        renormalize(GibbsState(np.diag([1.0, 0.0]), 1.0))


def test_renormalized_gibbs_and_purification(tl, bath, rng):
    rho_l = reduced_gibbs_second_order(tl, bath, 0.1)
    rs = renormalize(rho_l, basis=tl.eigvecs)
    assert np.allclose(gibbs(rs.h_tilde, 1.0).rho, rho_l.rho, atol=1e-10)
    for _ in range(5):
        x = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
        assert rs.expectation(x) == pytest.approx(np.trace(rho_l.rho @ x), abs=1e-10)


def test_h_tilde_scaling(qb, bath):
    d = [np.linalg.norm(renormalize(reduced_gibbs_second_order(qb, bath, lam)).h_tilde - qb.h_sys)
         for lam in LAMS]
    assert loglog_slope(LAMS, d) == pytest.approx(2.0, abs=0.5)


def test_md_at_zero_is_davies(tl, bath):
    g = renormalized_generators(tl, bath, 0.0, check_fgr=False)
    k = build_davies(tl, bath).k_super.matrix
    assert np.max(np.abs(g.m_d.matrix - k)) < 1e-12


@pytest.mark.parametrize("sysf", [qubit, three_level])
def test_renormalized_invariants(sysf, bath):
    s = sysf()
    lam = 0.1
    g = renormalized_generators(s, bath, lam)
    rho_l = g.rho_lambda.rho
    assert np.linalg.norm(g.m.matrix @ vec(rho_l)) < 1e-9
    assert np.linalg.norm(g.m_d.matrix @ vec(rho_l)) < 1e-9
    lt = Superoperator.commutator(g.system.h_tilde).matrix
    md = g.m_d.matrix
    assert np.linalg.norm(lt @ md - md @ lt) < 1e-9 * np.linalg.norm(lt) * np.linalg.norm(md)
    # route through the Davies construction of the renormalized system
    assert np.max(np.abs(md - g.k_tilde.k_super.matrix)) < 1e-10
    # the purification is annihilated by the doubled-space level shift
    assert np.linalg.norm(g.lambda_tilde @ g.system.purification) < 1e-9
    k = build_davies(s, bath).k_super.matrix
    rho0 = gibbs(s.h_sys, 1.0).rho
    assert np.linalg.norm(k @ vec(rho0)) < 1e-9


def test_md_and_level_shift_scaling(qb, bath):
    dav = build_davies(qb, bath)
    k = dav.k_super.matrix
    bare = level_shift(dav).as_dict()
    dk, dl = [], []
    for lam in LAMS:
        g = renormalized_generators(qb, bath, lam)
        dk.append(np.linalg.norm(g.m_d.matrix - k))
        worst = 0.0
        for e, blk in g.lambda_tilde_blocks().items():
            ref = bare[min(bare, key=lambda x: abs(x - e))]
            a = np.sort_complex(np.round(np.linalg.eigvals(blk), 14))
            b = np.sort_complex(np.round(np.linalg.eigvals(ref), 14))
            worst = max(worst, np.max(np.abs(a - b)))
        dl.append(worst)
    assert loglog_slope(LAMS, dk) == pytest.approx(2.0, abs=0.5)
    assert loglog_slope(LAMS, dl) == pytest.approx(2.0, abs=0.5)


def test_renormalized_semigroup_cpt(tl, bath):
    lam = 0.1
    g = renormalized_generators(tl, bath, lam)
    gamma = resonance_energies(level_shift(build_davies(tl, bath)), lam).gamma_fgr
    p = Propagator(g.m)
    for t in log_time_grid(20 / (lam ** 2 * gamma), 16):
        rep = cpt_report(p(t))
        assert rep.min_choi_eig >= -1e-9 and rep.trace_dev <= 1e-10


def test_fgr_violation_warns(bath):
    s = qubit(1.0, "sigma_z")
    with pytest.warns(RuntimeWarning, match="golden rule"):
        renormalized_generators(s, bath, 0.1)


def test_singular_purification_rejected(qb, bath):
    with pytest.raises(StructuralError):
        renormalized_generators(qb, bath, 0.1, cond_max=1.5)
