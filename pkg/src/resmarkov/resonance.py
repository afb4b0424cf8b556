"""Bohr sectors, level-shift operators and resonance expansions.

Level shifts are taken in the observable (Heisenberg) picture.  On the
sector spanned by ``|phi_k><phi_l|`` with ``E_k - E_l = e`` the
Heisenberg generator acts as ``i e + i lambda^2 Lambda_e``, so the
semigroup on observables is ``sum exp(i t eps) Q`` with resonance
energies ``eps = e + lambda^2 a`` and ``Im a >= 0`` meaning decay.
Density-matrix projections ``P`` are the duals of the ``Q``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .davies import DaviesGenerator, Superoperator, group_values
from .errors import DiagonalizabilityError, DomainError, StructuralError
from .model import SystemSpec

__all__ = [
    "BohrSector",
    "LevelShift",
    "ResonanceEntry",
    "ResonanceData",
    "bohr_decompose",
    "level_shift",
    "resonance_energies",
    "w_map",
    "eigenbasis_change",
]

LAMBDA_COND_MAX = 1e10
COMMUTATION_RTOL = 1e-9


@dataclass(frozen=True)
class BohrSector:
    e: float
    pairs: Tuple[Tuple[int, int], ...]

    @property
    def dim(self) -> int:
        return len(self.pairs)

    def indices(self, n: int) -> np.ndarray:
        return np.array([k * n + l for k, l in self.pairs], dtype=int)


def _default_tol(sys: SystemSpec) -> float:
    return max(1e-9 * float(np.max(np.abs(sys.eigvals))), 1e-12)


def bohr_decompose(sys: SystemSpec, tol: Optional[float] = None) -> List[BohrSector]:
    """Partition the index pairs ``(k, l)`` by Bohr frequency ``E_k - E_l``."""
    if tol is None:
        tol = _default_tol(sys)
    if not tol > 0:
        raise DomainError(f"Bohr tolerance must be positive, got {tol}")
    n = sys.dim
    pairs = [(k, l) for k in range(n) for l in range(n)]
    diffs = np.array([sys.eigvals[k] - sys.eigvals[l] for k, l in pairs])
    sectors = []
    for members in group_values(diffs, tol):
        ps = tuple(sorted(pairs[i] for i in members))
        e = float(np.mean(diffs[members]))
        if all(k == l for k, l in ps) or abs(e) <= tol:
            e = 0.0
        sectors.append(BohrSector(e, ps))
    return sectors


def eigenbasis_change(sys: SystemSpec) -> np.ndarray:
    """``U`` with ``vec(X) = U vec(X_eig)`` for ``X = V X_eig V^*``."""
    v = sys.eigvecs
    return np.kron(v, v.conj())


@dataclass(frozen=True)
class LevelShift:
    sector: BohrSector
    matrix: np.ndarray


@dataclass(frozen=True)
class LevelShifts:
    """Level-shift blocks of a Davies generator, keyed by sector."""

    blocks: List[LevelShift]
    system: SystemSpec = field(repr=False)
    gibbs: np.ndarray = field(repr=False)

    def __getitem__(self, e: float) -> np.ndarray:
        for b in self.blocks:
            if abs(b.sector.e - e) <= _default_tol(self.system):
                return b.matrix
        raise KeyError(e)

    def as_dict(self) -> Dict[float, np.ndarray]:
        return {b.sector.e: b.matrix for b in self.blocks}


def level_shift(dav: DaviesGenerator, sectors: Optional[Sequence[BohrSector]] = None) -> LevelShifts:
    """Level-shift operators ``Lambda_e = -i K_*|_e`` on each Bohr sector."""
    sys = dav.system
    n = sys.dim
    if sectors is None:
        sectors = bohr_decompose(sys)
    l_s, k = dav.l_sys.matrix, dav.k_super.matrix
    scale = np.linalg.norm(l_s) * np.linalg.norm(k)
    comm = np.linalg.norm(l_s @ k - k @ l_s)
    if comm > COMMUTATION_RTOL * scale:
        raise StructuralError(
            f"K does not commute with the free Liouvillian (relative {comm / scale:.2e})")
    u = eigenbasis_change(sys)
    k_eig = Superoperator(np.linalg.solve(u, k @ u))
    k_h = k_eig.dual().matrix
    blocks = []
    covered = np.zeros(n * n, dtype=bool)
    for sec in sectors:
        idx = sec.indices(n)
        covered[idx] = True
        rest = np.setdiff1d(np.arange(n * n), idx)
        leak = np.linalg.norm(k_h[np.ix_(rest, idx)]) if rest.size else 0.0
        if leak > COMMUTATION_RTOL * max(np.linalg.norm(k_h), 1.0):
            raise StructuralError(f"K couples sector e = {sec.e:.6g} to other sectors ({leak:.2e})")
        blocks.append(LevelShift(sec, -1j * k_h[np.ix_(idx, idx)]))
    if not covered.all():
        raise StructuralError("sectors do not cover all index pairs")
    w = np.exp(-dav.beta * (sys.eigvals - sys.eigvals.min()))
    return LevelShifts(blocks, sys, w / w.sum())


@dataclass(frozen=True)
class ResonanceEntry:
    e: float
    s: int
    a: complex
    q: Superoperator = field(repr=False)
    p: Superoperator = field(repr=False)

    def epsilon(self, lam: float) -> complex:
        return self.e + lam ** 2 * self.a


@dataclass(frozen=True)
class ResonanceData:
    entries: List[ResonanceEntry]
    lam: float
    gamma_lambda: float
    gamma_fgr: float
    fgr_holds: bool

    @property
    def stationary(self) -> ResonanceEntry:
        return self.entries[0]

    def decaying(self) -> List[ResonanceEntry]:
        return self.entries[1:]

    def epsilons(self) -> np.ndarray:
        return np.array([en.epsilon(self.lam) for en in self.entries])


def _zero_cluster_split(rc: np.ndarray, lc: np.ndarray, one: np.ndarray, gibbs: np.ndarray,
                        tol: float = 1e-8):
    """Split the projection onto the kernel of the e = 0 block so the first
    piece is ``|1><rho_beta|`` and the rest are rank-one pieces."""
    pc = rc @ lc
    if np.linalg.norm(pc @ one - one) > tol * np.linalg.norm(one) or \
            np.linalg.norm(gibbs @ pc - gibbs) > tol * max(np.linalg.norm(gibbs), 1.0):
        raise StructuralError("identity / Gibbs state are not in the zero eigenspace of Lambda_0")
    rs, ls = [one], [gibbs / (gibbs @ one)]
    m = rc.shape[1]
    if m > 1:
        rest = pc - np.outer(rs[0], ls[0])
        u, _, _ = np.linalg.svd(rest)
        b = u[:, : m - 1]
        c = b.conj().T @ rest
        rs += [b[:, i] for i in range(m - 1)]
        ls += [c[i] for i in range(m - 1)]
    return rs, ls


def resonance_energies(lso: LevelShifts, lam: float, cond_max: float = LAMBDA_COND_MAX,
                       zero_tol: float = 1e-10) -> ResonanceData:
    """Diagonalize every ``Lambda_e`` and assemble resonance data at ``lam``."""
    sys = lso.system
    n = sys.dim
    u = eigenbasis_change(sys)
    uinv = u.conj().T
    amax = max((np.max(np.abs(b.matrix)) for b in lso.blocks if b.matrix.size), default=0.0)
    entries: List[ResonanceEntry] = []
    zero_entry = None
    for blk in lso.blocks:
        sec, lam_e = blk.sector, blk.matrix
        idx = sec.indices(n)
        evals, r = np.linalg.eig(lam_e)
        cond = np.linalg.cond(r)
        if not np.isfinite(cond) or cond > cond_max:
            raise DiagonalizabilityError(
                f"level shift operator at e = {sec.e:.6g} is not diagonalizable "
                f"(eigenvector condition number {cond:.2e})")
        l = np.linalg.inv(r)
        rs = [r[:, i] for i in range(len(evals))]
        ls = [l[i] for i in range(len(evals))]
        avals = list(evals)
        first = None
        if sec.e == 0.0:
            zero = np.flatnonzero(np.abs(evals) <= zero_tol * max(amax, 1.0))
            if zero.size == 0:
                raise StructuralError("Lambda_0 has no zero eigenvalue")
            one = np.array([1.0 if k == l_ else 0.0 for k, l_ in sec.pairs], dtype=complex)
            gib = np.array([lso.gibbs[k] if k == l_ else 0.0 for k, l_ in sec.pairs], dtype=complex)
            zr, zl = _zero_cluster_split(r[:, zero], l[zero], one, gib)
            keep = [i for i in range(len(evals)) if i not in set(zero)]
            rs = zr + [rs[i] for i in keep]
            ls = zl + [ls[i] for i in keep]
            avals = [complex(zl[i] @ lam_e @ zr[i]) for i in range(len(zr))]
            avals[0] = 0.0
            avals += [evals[i] for i in keep]
            first = 0
        order = list(range(len(avals)))
        tail = [i for i in order if i != first]
        tail.sort(key=lambda i: (round(avals[i].imag, 12), round(avals[i].real, 12)))
        order = ([first] if first is not None else []) + tail
        sec_entries = []
        for s, i in enumerate(order, start=1):
            q_eig = np.zeros((n * n, n * n), dtype=complex)
            q_eig[np.ix_(idx, idx)] = np.outer(rs[i], ls[i])
            q = Superoperator(u @ q_eig @ uinv)
            sec_entries.append(ResonanceEntry(sec.e, s, complex(avals[i]), q, q.dual()))
        if sec.e == 0.0:
            zero_entry = sec_entries[0]
            entries.extend(sec_entries[1:])
        else:
            entries.extend(sec_entries)
    entries.sort(key=lambda en: (en.e, en.s))
    entries.insert(0, zero_entry)
    rest = entries[1:]
    im_eps = [en.epsilon(lam).imag for en in rest]
    nonneg = [x for x in im_eps if x >= -1e-12]
    gamma_lambda = max(min(nonneg), 0.0) if nonneg and lam != 0 else 0.0
    gamma_fgr = min((en.a.imag for en in rest), default=0.0)
    fgr = bool(gamma_fgr > 1e-12 * max(amax, 1.0))
    return ResonanceData(entries, float(lam), float(gamma_lambda), float(gamma_fgr), fgr)


def w_map(rd: ResonanceData, t: float) -> Superoperator:
    """``W_t = sum over (e, s) != (0, 1) of exp(i t eps) P``."""
    m = sum(np.exp(1j * t * en.epsilon(rd.lam)) * en.p.matrix for en in rd.decaying())
    n2 = rd.stationary.p.matrix.shape[0]
    return Superoperator(m if rd.decaying() else np.zeros((n2, n2)))
