"""Acceptance criteria, one test each.

Every test prints a single ``PASS``/``FAIL`` line with the measured value
and threshold before asserting, so ``pytest -v`` shows the outcome of all
criteria even when output capture is on.
"""

import math
import time

import numpy as np
import pytest
from scipy import stats

from resmarkov.davies import Propagator, build_davies, cpt_report, vec
from resmarkov.dynamics import (compare, default_time_grid, log_time_grid, loglog_slope, propagate,
                                resonance_trajectory)
from resmarkov.equilibrium import (gibbs, reduced_gibbs_second_order, renormalized_generators,
                                   second_order_correction)
from resmarkov.experiments import OracleSettings, compare_with_oracle, random_density_matrices
from resmarkov.model import AnalyticFamily, BathSpec, correlation_function, h_hat, qubit, three_level
from resmarkov.oracle import discretize_bath, exact_reduced_gibbs
from resmarkov.resonance import level_shift, resonance_energies

BATH = BathSpec(1.0, AnalyticFamily(0, 1, 1.0))
PRESETS = {"qubit": qubit(), "three_level": three_level()}
SCALING_LAMS = (0.1, 0.05, 0.025)
ORACLE_LAMS = (0.02, 0.04, 0.08)
PROFILE = OracleSettings(n_modes=6, omega_max=4.0, cutoff=3, thermal_tail=0.05,
                         max_tail_mass=None, omega_tail_tol=None, n_times=20, floor_modes=8)


def report(capsys, number, ok, detail, elapsed, budget):
    ok = bool(ok) and elapsed <= budget
    with capsys.disabled():
        print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {detail} "
              f"[{elapsed:.1f} s, budget {budget:g} s]")
    return ok


def _fgr(sys_, lam):
    return resonance_energies(level_shift(build_davies(sys_, BATH, lam)), lam).gamma_fgr


def test_c01_detailed_balance(capsys):
    t0 = time.perf_counter()
    u = np.linspace(-8.0, 8.0, 200)
    hp, hm = h_hat(BATH, u), h_hat(BATH, -u)
    worst = float(np.max(np.abs(hm - np.exp(-BATH.beta * u) * hp) / hp))
    ok = report(capsys, 1, worst <= 1e-10, f"max relative KMS defect {worst:.2e} <= 1e-10",
                time.perf_counter() - t0, 1)
    assert ok


def test_c02_gibbs_stationarity(capsys):
    t0 = time.perf_counter()
    rel = {}
    for name, s in PRESETS.items():
        k = build_davies(s, BATH).k_super.matrix
        rel[name] = np.linalg.norm(k @ vec(gibbs(s.h_sys, BATH.beta).rho)) / np.linalg.norm(k)
    worst = max(rel.values())
    ok = report(capsys, 2, worst <= 1e-9, f"||K rho_beta|| / ||K||_F = {worst:.2e} <= 1e-9",
                time.perf_counter() - t0, 1)
    assert ok


def test_c03_cpt_semigroup(capsys):
    t0 = time.perf_counter()
    lam = 0.1
    min_eig, tr_dev = math.inf, 0.0
    for s in PRESETS.values():
        p = Propagator(build_davies(s, BATH, lam).total)
        for t in log_time_grid(20 / (lam ** 2 * _fgr(s, lam)), 16):
            r = cpt_report(p(t))
            min_eig, tr_dev = min(min_eig, r.min_choi_eig), max(tr_dev, r.trace_dev)
    ok = report(capsys, 3, min_eig >= -1e-9 and tr_dev <= 1e-10,
                f"min Choi eigenvalue {min_eig:.2e} >= -1e-9, trace deviation {tr_dev:.2e} <= 1e-10",
                time.perf_counter() - t0, 10)
    assert ok


def test_c04_commutation_and_reassembly(capsys):
    t0 = time.perf_counter()
    comm, reas = 0.0, 0.0
    for s in PRESETS.values():
        for lam in (0.1, 0.5):
            dav = build_davies(s, BATH, lam)
            k, l_s = dav.k_super.matrix, dav.l_sys.matrix
            comm = max(comm, np.linalg.norm(l_s @ k - k @ l_s) / (np.linalg.norm(l_s) * np.linalg.norm(k)))
            rd = resonance_energies(level_shift(dav), lam)
            ev = np.linalg.eigvals(dav.total.dual().matrix)
            eps = list(1j * rd.epsilons())
            for z in ev:
                j = int(np.argmin([abs(z - w) for w in eps]))
                reas = max(reas, abs(z - eps.pop(j)))
    ok = report(capsys, 4, comm <= 1e-9 and reas <= 1e-8,
                f"relative commutator {comm:.2e} <= 1e-9, spectrum reassembly {reas:.2e} <= 1e-8",
                time.perf_counter() - t0, 5)
    assert ok


def test_c05_resonance_expansion_scaling(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    slopes = {}
    for name, s in PRESETS.items():
        states = random_density_matrices(s.dim, 10, rng)
        lso = level_shift(build_davies(s, BATH))
        sups = []
        for lam in SCALING_LAMS:
            dav = build_davies(s, BATH, lam)
            rd = resonance_energies(lso, lam)
            rho_inf = reduced_gibbs_second_order(s, BATH, lam).rho
            times = default_time_grid(lam, rd.gamma_fgr)
            p = Propagator(dav.total)
            sups.append(max(compare(resonance_trajectory(rd, rho_inf, r, times),
                                    propagate(p, r, times)).sup for r in states))
        slopes[name] = loglog_slope(SCALING_LAMS, sups)
    ok = all(abs(v - 2) <= 0.5 for v in slopes.values())
    detail = ", ".join(f"{k} slope {v:.3f}" for k, v in slopes.items())
    ok = report(capsys, 5, ok, f"{detail} (target 2 +- 0.5)", time.perf_counter() - t0, 30)
    assert ok


@pytest.fixture(scope="module")
def oracle_run():
    t0 = time.perf_counter()
    res = compare_with_oracle(qubit(), BATH, ORACLE_LAMS, PROFILE)
    return res, time.perf_counter() - t0


def test_c06_all_time_bound(capsys, oracle_run):
    res, elapsed = oracle_run
    slope = res.slope("davies")
    sups = ", ".join(f"{x:.3e}" for x in res.sup["davies"])
    refine = ", ".join(f"{x:.1e}" for x in res.refinement)
    ok = report(capsys, 6, abs(slope - 2) <= 0.5,
                f"sup distance [{sups}] at lambda {list(ORACLE_LAMS)}, floor {res.floor:.1e}, "
                f"6-vs-8-mode gap [{refine}], slope {slope:.3f} (target 2 +- 0.5)", elapsed, 300)
    assert ok


def test_c08_asymptotic_exactness(capsys, oracle_run):
    res, elapsed = oracle_run
    t0 = time.perf_counter()
    lam = ORACLE_LAMS[-1]
    lines, ok = [], True
    for state in ("excited", "plus"):
        d = res.at(lam, state)
        tail = slice(-3, None)
        m, dv = d["m_lambda"][tail], d["davies"][tail]
        pm, pd = d["md_populations"][tail], d["davies_populations"][tail]
        ok &= bool(np.all(m < dv) and np.all(pm < pd))
        lines.append(f"{state}: M {m.max():.4e} vs Davies {dv.min():.4e}, "
                     f"M_d populations {pm.max():.4e} vs Davies populations {pd.min():.4e}")
    ok = report(capsys, 8, ok, "last 3 times, " + "; ".join(lines),
                elapsed + time.perf_counter() - t0, 300)
    assert ok


def test_c07_renormalized_pipeline(capsys):
    t0 = time.perf_counter()
    zero_dev, stat, min_eig, tr_dev, slopes = 0.0, 0.0, math.inf, 0.0, {}
    for name, s in PRESETS.items():
        k = build_davies(s, BATH).k_super.matrix
        zero_dev = max(zero_dev, np.max(np.abs(
            renormalized_generators(s, BATH, 0.0, check_fgr=False).m_d.matrix - k)))
        dist = []
        for lam in SCALING_LAMS:
            g = renormalized_generators(s, BATH, lam)
            dist.append(np.linalg.norm(g.m_d.matrix - k))
            stat = max(stat, np.linalg.norm(g.m.matrix @ vec(g.rho_lambda.rho)))
            if lam == 0.1:
                p = Propagator(g.m)
                for t in log_time_grid(20 / (lam ** 2 * _fgr(s, lam)), 16):
                    r = cpt_report(p(t))
                    min_eig, tr_dev = min(min_eig, r.min_choi_eig), max(tr_dev, r.trace_dev)
        slopes[name] = loglog_slope(SCALING_LAMS, dist)
    ok = (zero_dev <= 1e-12 and stat <= 1e-9 and min_eig >= -1e-9 and tr_dev <= 1e-10
          and all(abs(v - 2) <= 0.5 for v in slopes.values()))
    detail = (f"M_d(0) - K {zero_dev:.1e}, ||M rho_lambda|| {stat:.1e} <= 1e-9, "
              + ", ".join(f"{k} slope {v:.3f}" for k, v in slopes.items())
              + f", min Choi {min_eig:.1e}, trace deviation {tr_dev:.1e}")
    ok = report(capsys, 7, ok, detail, time.perf_counter() - t0, 60)
    assert ok


def test_c09_second_order_equilibrium(capsys):
    t0 = time.perf_counter()
    s, lam = qubit(), 0.05
    rho0 = gibbs(s.h_sys, BATH.beta).rho
    rho2 = second_order_correction(s, BATH)
    errs = []
    for n in (4, 6, 8):
        fm = PROFILE.reservoir(BATH, n)
        ex = exact_reduced_gibbs(s, fm, lam, dim_cap=PROFILE.dim_cap, max_tail_mass=None).rho
        errs.append(float(np.linalg.svd((ex - rho0) / lam ** 2 - rho2, compute_uv=False).sum()))
    ok = report(capsys, 9, errs[0] > errs[1] > errs[2],
                f"trace-norm error {errs[0]:.4e} > {errs[1]:.4e} > {errs[2]:.4e} for 4/6/8 modes",
                time.perf_counter() - t0, 300)
    assert ok


def test_c10_correlation_decay(capsys):
    t = np.linspace(0.0, 10.0, 101)

    def fit(n):
        c = np.abs(correlation_function(BathSpec(1.0, AnalyticFamily(n, 1, 1.0)), t))
        r = stats.linregress(t, np.log(c))
        return -r.slope, r.rvalue ** 2

    t0 = time.perf_counter()
    rate, r2 = fit(0)
    elapsed = time.perf_counter() - t0
    # other members of the m = 1 family, for context only
    others = ", ".join("n=%d: rate %.3f, R^2 %.4f" % (n, *fit(n)) for n in (1, 2))
    ok = report(capsys, 10, rate > 0 and r2 >= 0.99,
                f"n=0 (acceptance bath): rate {rate:.3f}, R^2 {r2:.4f} (need > 0 and >= 0.99); {others}",
                elapsed, 5)
    assert ok
