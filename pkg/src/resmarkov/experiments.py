"""Composite pipelines shared by the command line and the test-suite:
oracle comparisons with scaling fits, and the invariant suite."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .davies import Propagator, Superoperator, build_davies, cpt_report, vec
from .dynamics import (compare, log_time_grid, loglog_slope, populations, propagate,
                       resonance_trajectory, trace_norm)
from .equilibrium import gibbs, reduced_gibbs_second_order, renormalized_generators
from .model import BathSpec, SystemSpec, h_hat
from .oracle import discretize_bath, exact_reduced_dynamics, recurrence_window
from .resonance import level_shift, resonance_energies, w_map

__all__ = [
    "OracleSettings",
    "OracleComparison",
    "random_density_matrices",
    "standard_states",
    "compare_with_oracle",
    "Check",
    "invariant_suite",
]


def random_density_matrices(n: int, count: int, rng: np.random.Generator) -> List[np.ndarray]:
    """Full-rank random states from Ginibre matrices."""
    out = []
    for _ in range(count):
        a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        r = a @ a.conj().T
        out.append(r / np.trace(r).real)
    return out


def standard_states(sys: SystemSpec) -> Dict[str, np.ndarray]:
    """Top eigenstate and the uniform superposition of the energy eigenstates."""
    v = sys.eigvecs
    top = v[:, -1:]
    plus = v.sum(axis=1, keepdims=True) / math.sqrt(sys.dim)
    return {"excited": top @ top.conj().T, "plus": plus @ plus.conj().T}


@dataclass(frozen=True)
class OracleSettings:
    """Finite-mode reservoir profile for oracle comparisons.

    ``cutoff`` caps the per-mode occupation; modes whose thermal weight
    beyond a lower occupation is under ``thermal_tail`` get that lower
    cutoff.  ``max_tail_mass`` and ``omega_tail_tol`` are the oracle's
    guards (``None`` disables them).
    """

    n_modes: int = 6
    omega_max: float = 4.0
    cutoff: Optional[int] = 3
    thermal_tail: float = 0.05
    max_tail_mass: Optional[float] = None
    omega_tail_tol: Optional[float] = None
    dim_cap: int = 4096
    n_times: int = 20
    floor_modes: Optional[int] = 8

    def reservoir(self, bath: BathSpec, n_modes: Optional[int] = None):
        return discretize_bath(bath, n_modes or self.n_modes, self.omega_max, self.cutoff,
                               thermal_tail=self.thermal_tail, omega_tail_tol=self.omega_tail_tol)


@dataclass
class OracleComparison:
    """Distances between the oracle and each approximant.

    ``rows`` holds one dict per (lambda, initial state, time).  ``sup`` maps
    an approximant name to its sup distance per lambda (max over states).
    """

    lambdas: List[float]
    times: np.ndarray
    rows: List[dict] = field(default_factory=list)
    sup: Dict[str, List[float]] = field(default_factory=dict)
    floor: float = 0.0
    refinement: List[float] = field(default_factory=list)
    t_rec: float = math.nan

    def slope(self, name: str = "davies", subtract_floor: bool = True) -> float:
        lam = [x for x in self.lambdas if x > 0]
        d = [s for x, s in zip(self.lambdas, self.sup[name]) if x > 0]
        if subtract_floor:
            d = [s - self.floor for s in d]
        return loglog_slope(lam, d)

    def at(self, lam: float, state: str) -> Dict[str, np.ndarray]:
        sel = [r for r in self.rows if r["lambda"] == lam and r["state"] == state]
        return {k: np.array([r[k] for r in sel]) for k in sel[0] if k not in ("lambda", "state")}

    def scaling(self) -> dict:
        out = {
            "lambdas": self.lambdas,
            "t_rec": self.t_rec,
            "floor": self.floor,
            "refinement_sup": self.refinement,
            "sup": self.sup,
        }
        slopes = {}
        if sum(1 for x in self.lambdas if x > 0) >= 2:
            for name in self.sup:
                try:
                    slopes[name] = self.slope(name)
                except ValueError:
                    slopes[name] = None
        out["slopes"] = slopes
        return out


APPROXIMANTS = ("davies", "resonance_wt", "m_lambda", "md_populations", "davies_populations")


def compare_with_oracle(sys: SystemSpec, bath: BathSpec, lambdas: Sequence[float],
                        settings: OracleSettings = OracleSettings(),
                        states: Optional[Dict[str, np.ndarray]] = None,
                        n_nodes: int = 64) -> OracleComparison:
    """Run the oracle for every lambda and initial state and measure the
    trace distance to the Davies semigroup, the resonance expansion, the
    renormalized semigroup, and the population tracks."""
    states = standard_states(sys) if states is None else states
    fm = settings.reservoir(bath)
    t_rec = recurrence_window(fm)
    times = np.linspace(0.0, 0.5 * t_rec, settings.n_times)
    res = OracleComparison(list(map(float, lambdas)), times, t_rec=t_rec)
    res.sup = {k: [] for k in APPROXIMANTS}
    fine = settings.reservoir(bath, settings.floor_modes) if settings.floor_modes else None
    basis = sys.eigvecs
    run = lambda f, lam, r0: exact_reduced_dynamics(
        sys, f, lam, r0, times, dim_cap=settings.dim_cap, max_tail_mass=settings.max_tail_mass)
    floor = 0.0
    for lam in res.lambdas:
        dav = build_davies(sys, bath, lam)
        rd = resonance_energies(level_shift(dav), lam)
        rho_l = reduced_gibbs_second_order(sys, bath, lam, n_nodes)
        gens = renormalized_generators(sys, bath, lam, rho_lambda=rho_l, check_fgr=False)
        p_dav = Propagator(dav.total)
        p_m = Propagator(gens.m)
        p_md = Propagator((lam ** 2) * gens.m_d)
        sups = {k: 0.0 for k in APPROXIMANTS}
        refine = 0.0
        for name, r0 in states.items():
            orc = run(fm, lam, r0)
            tr = {
                "davies": propagate(p_dav, r0, times),
                "resonance_wt": resonance_trajectory(rd, rho_l.rho, r0, times),
                "m_lambda": propagate(p_m, r0, times, "M(lambda)"),
            }
            dist = {k: compare(orc, v).per_time for k, v in tr.items()}
            pop_o = populations(orc, basis)
            pop_md = populations(propagate(p_md, r0, times, "M_d populations"), basis)
            dist["md_populations"] = np.abs(pop_md - pop_o).sum(axis=1)
            dist["davies_populations"] = np.abs(populations(tr["davies"], basis) - pop_o).sum(axis=1)
            for i, t in enumerate(times):
                row = {"lambda": lam, "state": name, "t": float(t)}
                row.update({k: float(dist[k][i]) for k in APPROXIMANTS})
                res.rows.append(row)
            for k in APPROXIMANTS:
                sups[k] = max(sups[k], float(dist[k].max()))
            if fine is not None:
                ref = compare(orc, run(fine, lam, r0)).per_time
                refine = max(refine, float(ref.max()))
                if lam == 0:
                    floor = max(floor, float(dist["davies"].max()), refine)
            elif lam == 0:
                floor = max(floor, float(dist["davies"].max()))
        for k in APPROXIMANTS:
            res.sup[k].append(sups[k])
        res.refinement.append(refine)
    if fine is not None and 0.0 not in res.lambdas:
        for r0 in states.values():
            a, b = run(fm, 0.0, r0), run(fine, 0.0, r0)
            free = propagate(Superoperator.commutator(sys.h_sys), r0, times, "free")
            floor = max(floor, compare(a, free).sup, compare(b, free).sup)
    res.floor = floor
    return res


# ---------------------------------------------------------------------------
# invariant suite


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    threshold: float
    passed: bool
    note: str = ""


def _le(name, value, threshold, note=""):
    return Check(name, float(value), float(threshold), bool(value <= threshold), note)


def _ge(name, value, threshold, note=""):
    return Check(name, float(value), float(threshold), bool(value >= threshold), note)


def invariant_suite(sys: SystemSpec, bath: BathSpec, lam: float, *, seed: int = 0,
                    n_random: int = 10, n_cpt_times: int = 16) -> List[Check]:
    """Structural invariants of every construction for one model."""
    rng = np.random.default_rng(seed)
    checks: List[Check] = []
    u = np.linspace(-6.0, 6.0, 200)
    u = u[u != 0]
    hh, hm = h_hat(bath, u), h_hat(bath, -u)
    pos = hh > 0
    kms = np.max(np.abs(hm[pos] - np.exp(-bath.beta * u[pos]) * hh[pos]) / hh[pos]) if pos.any() else 0.0
    checks.append(_le("detailed balance of h_hat", kms, 1e-10))
    checks.append(_ge("h_hat nonnegative", float(np.min(hh)), 0.0))

    dav = build_davies(sys, bath, lam)
    k = dav.k_super.matrix
    kn = np.linalg.norm(k)
    rho0 = gibbs(sys.h_sys, bath.beta).rho
    checks.append(_le("K annihilates the Gibbs state", np.linalg.norm(k @ vec(rho0)), 1e-9 * max(kn, 1e-300)))
    l_s = dav.l_sys.matrix
    comm = np.linalg.norm(l_s @ k - k @ l_s)
    checks.append(_le("K commutes with the free Liouvillian", comm,
                      1e-9 * np.linalg.norm(l_s) * kn + 1e-300))
    checks.append(_le("K reassembles from jumps and Lamb shift",
                      np.max(np.abs(dav.reassemble().matrix - k)), 1e-10))
    checks.append(_le("Lamb shift commutes with H_S",
                      np.max(np.abs(dav.lamb_shift @ sys.h_sys - sys.h_sys @ dav.lamb_shift)), 1e-10))
    checks.append(_ge("all rates nonnegative", min((j.rate for j in dav.jumps), default=0.0), 0.0))

    lso = level_shift(dav)
    rd = resonance_energies(lso, lam)
    ev = np.linalg.eigvals(dav.total.matrix)
    eps = 1j * rd.epsilons()
    cost = np.abs(ev[:, None] - eps[None, :])
    r, c = linear_sum_assignment(cost)
    checks.append(_le("spectrum reassembles from resonance energies", cost[r, c].max(), 1e-8))
    ps = [en.p.matrix for en in rd.entries]
    alg = max(np.max(np.abs(ps[i] @ ps[j] - (ps[i] if i == j else 0)))
              for i in range(len(ps)) for j in range(len(ps)))
    checks.append(_le("projection algebra", alg, 1e-9))

    if rd.gamma_fgr > 0 and lam != 0:
        t_max = 20.0 / (lam ** 2 * rd.gamma_fgr)
    else:
        t_max = 100.0
    grid = log_time_grid(t_max, n_cpt_times)
    prop = Propagator(dav.total)
    reps = [cpt_report(prop(t)) for t in grid]
    checks.append(_ge("Davies semigroup completely positive", min(x.min_choi_eig for x in reps), -1e-9))
    checks.append(_le("Davies semigroup trace preserving", max(x.trace_dev for x in reps), 1e-10))
    checks.append(_le("Davies semigroup hermiticity preserving", max(x.herm_dev for x in reps), 1e-10))

    w0 = w_map(rd, 0.0).matrix
    n = sys.dim
    target = np.eye(n * n) - np.outer(vec(rho0), vec(np.eye(n)))
    checks.append(_le("W_0 = 1 - Gibbs (x) trace", np.max(np.abs(w0 - target)), 1e-9))
    rho_l = reduced_gibbs_second_order(sys, bath, lam)
    worst = 0.0
    for r0 in random_density_matrices(n, n_random, rng):
        a = resonance_trajectory(rd, rho_l.rho, r0, grid)
        b = propagate(prop, r0, grid)
        worst = max(worst, compare(a, b).sup)
    checks.append(_le("resonance expansion within O(lambda^2) of the semigroup", worst,
                      10 * lam ** 2 if lam else 1e-9))

    if rd.fgr_holds and lam != 0:
        gens = renormalized_generators(sys, bath, lam, rho_lambda=rho_l, check_fgr=False)
        checks.append(_le("M(lambda) annihilates rho_lambda",
                          np.linalg.norm(gens.m.matrix @ vec(rho_l.rho)), 1e-9))
        checks.append(_le("M_d agrees with the renormalized Davies generator",
                          np.max(np.abs(gens.m_d.matrix - gens.k_tilde.k_super.matrix)), 1e-9))
        pm = Propagator(gens.m)
        reps = [cpt_report(pm(t)) for t in grid]
        checks.append(_ge("renormalized semigroup completely positive",
                          min(x.min_choi_eig for x in reps), -1e-9))
        checks.append(_le("renormalized semigroup trace preserving",
                          max(x.trace_dev for x in reps), 1e-10))

    transpose = Superoperator.from_map(lambda x: x.T, 2)
    tr_min = cpt_report(transpose).min_choi_eig
    checks.append(Check("self-test: transpose map flagged as not CP", tr_min, -1e-9, tr_min < -1e-9))
    return checks
