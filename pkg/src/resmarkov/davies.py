"""Superoperators, the Davies generator and complete-positivity diagnostics.

Vectorization is row-major: ``vec(|i><j|)`` has index ``i * N + j`` and
the map ``rho -> A rho B`` is represented by ``kron(A, B.T)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Sequence

import numpy as np
import scipy.linalg

from .errors import AmbiguityError, DomainError
from .model import BathSpec, SystemSpec, h_hat, lamb_shift_coefficient

__all__ = [
    "vec",
    "unvec",
    "transpose_permutation",
    "Superoperator",
    "Propagator",
    "Jump",
    "DaviesGenerator",
    "group_levels",
    "group_values",
    "bohr_components",
    "build_davies",
    "to_choi",
    "CPTReport",
    "cpt_report",
]

DEGENERACY_RTOL = 1e-9
EIG_COND_MAX = 1e8


def vec(rho: np.ndarray) -> np.ndarray:
    return np.asarray(rho).reshape(-1)


def unvec(v: np.ndarray) -> np.ndarray:
    n = int(round(np.sqrt(v.size)))
    return np.asarray(v).reshape(n, n)


def transpose_permutation(n: int) -> np.ndarray:
    """Index map ``p`` with ``vec(X.T) = vec(X)[p]``."""
    return np.arange(n * n).reshape(n, n).T.reshape(-1)


@dataclass(frozen=True)
class Superoperator:
    """Linear map on ``N x N`` matrices stored as an ``N^2 x N^2`` matrix."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        n2 = m.shape[0]
        n = int(round(np.sqrt(n2)))
        if m.ndim != 2 or m.shape != (n2, n2) or n * n != n2:
            raise DomainError(f"superoperator matrix must be N^2 x N^2, got {m.shape}")
        m = m.copy()
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return int(round(np.sqrt(self.matrix.shape[0])))

    @classmethod
    def identity(cls, n: int) -> "Superoperator":
        return cls(np.eye(n * n))

    @classmethod
    def from_map(cls, f: Callable[[np.ndarray], np.ndarray], n: int) -> "Superoperator":
        cols = []
        for k in range(n * n):
            e = np.zeros(n * n, dtype=complex)
            e[k] = 1.0
            cols.append(vec(f(unvec(e))))
        return cls(np.array(cols).T)

    @classmethod
    def sandwich(cls, a: np.ndarray, b: np.ndarray) -> "Superoperator":
        """``rho -> a rho b``."""
        return cls(np.kron(a, np.asarray(b).T))

    @classmethod
    def commutator(cls, h: np.ndarray) -> "Superoperator":
        """``rho -> -i [h, rho]``."""
        n = h.shape[0]
        eye = np.eye(n)
        return cls(-1j * (np.kron(h, eye) - np.kron(eye, h.T)))

    def apply(self, rho: np.ndarray) -> np.ndarray:
        return unvec(self.matrix @ vec(rho))

    def dual(self) -> "Superoperator":
        """Adjoint for the pairing ``tr(X rho)``: ``tr(X S(rho)) = tr(S_*(X) rho)``."""
        p = transpose_permutation(self.dim)
        return Superoperator(self.matrix.T[np.ix_(p, p)])

    def __matmul__(self, other: "Superoperator") -> "Superoperator":
        return Superoperator(self.matrix @ other.matrix)

    def __add__(self, other: "Superoperator") -> "Superoperator":
        return Superoperator(self.matrix + other.matrix)

    def __sub__(self, other: "Superoperator") -> "Superoperator":
        return Superoperator(self.matrix - other.matrix)

    def __mul__(self, c: complex) -> "Superoperator":
        return Superoperator(c * self.matrix)

    __rmul__ = __mul__

    def norm(self) -> float:
        return float(np.linalg.norm(self.matrix))


class Propagator:
    """``t -> exp(t L)`` for a fixed generator ``L``.

    Uses one eigendecomposition; falls back to a Schur form when the
    eigenvector matrix is ill conditioned.
    """

    def __init__(self, gen: Superoperator, cond_max: float = EIG_COND_MAX):
        self.gen = gen
        m = gen.matrix
        evals, r = np.linalg.eig(m)
        cond = np.linalg.cond(r)
        self.condition = float(cond)
        if np.isfinite(cond) and cond <= cond_max:
            self._mode = "eig"
            self._evals = evals
            self._r = r
            self._rinv = np.linalg.inv(r)
        else:
            self._mode = "schur"
            self._t, self._z = scipy.linalg.schur(m, output="complex")

    def matrix(self, t: float) -> np.ndarray:
        if self._mode == "eig":
            return (self._r * np.exp(t * self._evals)) @ self._rinv
        return self._z @ scipy.linalg.expm(t * self._t) @ self._z.conj().T

    def __call__(self, t: float) -> Superoperator:
        return Superoperator(self.matrix(t))

    def evolve(self, rho0: np.ndarray, times: Sequence[float]) -> np.ndarray:
        """States ``exp(t L) rho0`` stacked along the first axis."""
        v0 = vec(np.asarray(rho0, dtype=complex))
        n = int(round(np.sqrt(v0.size)))
        if self._mode == "eig":
            c = self._rinv @ v0
            out = [(self._r @ (np.exp(t * self._evals) * c)) for t in times]
        else:
            out = [self.matrix(t) @ v0 for t in times]
        return np.array(out).reshape(len(times), n, n)


# ---------------------------------------------------------------------------
# spectral grouping


def group_values(values: np.ndarray, tol: float) -> List[np.ndarray]:
    """Cluster sorted real values by single linkage at ``tol``.

    Returns index arrays (into ``values``) per cluster, clusters in
    ascending order.  A cluster whose spread exceeds ``tol / 2`` merges
    values that are not clearly closer than the tolerance (or chains
    several together); that raises :class:`AmbiguityError`.
    """
    values = np.asarray(values, dtype=float)
    order = np.argsort(values, kind="stable")
    clusters: List[List[int]] = []
    for i in order:
        if clusters and values[i] - values[clusters[-1][-1]] <= tol:
            clusters[-1].append(i)
        else:
            clusters.append([i])
    for c in clusters:
        spread = values[c[-1]] - values[c[0]]
        if spread > 0.5 * tol:
            gaps = np.diff(np.unique(values))
            raise AmbiguityError(
                f"grouping tolerance {tol:.3e} chains values spanning {spread:.3e}; "
                f"smallest gap between distinct values is {gaps[gaps > 0].min():.3e}")
    return [np.array(c) for c in clusters]


def group_levels(sys: SystemSpec, rtol: float = DEGENERACY_RTOL):
    """Distinct energy levels with spectral projections.

    Returns ``(levels, projections, members)`` where ``members[a]`` lists
    the eigenvector indices belonging to level ``a``.
    """
    scale = float(np.max(np.abs(sys.eigvals))) if sys.dim else 0.0
    tol = rtol * scale
    members = group_values(sys.eigvals, tol)
    v = sys.eigvecs
    levels = np.array([sys.eigvals[m].mean() for m in members])
    projs = [v[:, m] @ v[:, m].conj().T for m in members]
    return levels, projs, members


# ---------------------------------------------------------------------------
# Davies generator


@dataclass(frozen=True)
class Jump:
    """One Bohr component ``A_w`` of the coupling with its rate ``h_hat(w)``."""

    omega: float
    rate: float
    operator: np.ndarray
    lamb: float = 0.0


@dataclass(frozen=True)
class DaviesGenerator:
    """Davies generator ``K`` and the total generator ``L_S + lambda^2 K``."""

    k_super: Superoperator
    lamb_shift: np.ndarray
    jumps: List[Jump]
    lam: float
    l_sys: Superoperator
    system: SystemSpec = field(repr=False)
    beta: float = float("nan")

    @property
    def total(self) -> Superoperator:
        return self.l_sys + (self.lam ** 2) * self.k_super

    @property
    def dissipator(self) -> Superoperator:
        return self.k_super - Superoperator.commutator(self.lamb_shift)

    def reassemble(self) -> Superoperator:
        """``K`` rebuilt from the jump list and the Lamb shift."""
        return _gksl(self.jumps, self.lamb_shift, self.system.dim)


def _gksl(jumps: Sequence[Jump], h_ls: np.ndarray, n: int) -> Superoperator:
    eye = np.eye(n)
    m = Superoperator.commutator(h_ls).matrix.copy()
    for jp in jumps:
        a = jp.operator
        ada = a.conj().T @ a
        m += jp.rate * (np.kron(a, a.conj()) - 0.5 * np.kron(ada, eye) - 0.5 * np.kron(eye, ada.T))
    return Superoperator(m)


def bohr_components(sys: SystemSpec, rtol: float = DEGENERACY_RTOL):
    """Bohr frequencies ``w`` and operators ``A_w = sum P_l G P_k`` over level
    pairs with ``E_k - E_l = w``.  ``w = 0`` collects the diagonal blocks."""
    levels, projs, _ = group_levels(sys, rtol)
    scale = float(np.max(np.abs(levels))) if len(levels) else 0.0
    pairs = [(a, b) for a in range(len(levels)) for b in range(len(levels))]
    diffs = np.array([levels[a] - levels[b] for a, b in pairs])
    out = []
    for members in group_values(diffs, rtol * scale):
        omega = float(diffs[members].mean())
        if np.all([pairs[i][0] == pairs[i][1] for i in members]):
            omega = 0.0
        op = sum(projs[pairs[i][1]] @ sys.coupling @ projs[pairs[i][0]] for i in members)
        out.append((omega, op))
    return out


def build_davies(sys: SystemSpec, bath: BathSpec, lam: float = 0.0) -> DaviesGenerator:
    """Davies generator of ``sys`` coupled through its coupling operator to ``bath``.

    ``K rho = sum_w h_hat(w) (A_w rho A_w^* - {A_w^* A_w, rho}/2) - i [H_LS, rho]``
    with ``H_LS = sum_w S(w) A_w^* A_w``.
    """
    jumps = []
    n = sys.dim
    h_ls = np.zeros((n, n), dtype=complex)
    for omega, a in bohr_components(sys):
        if np.any(a != 0):
            s = lamb_shift_coefficient(bath, omega)
        else:
            s = 0.0
        jumps.append(Jump(omega, float(h_hat(bath, omega)), a, s))
        h_ls += s * (a.conj().T @ a)
    h_ls = 0.5 * (h_ls + h_ls.conj().T)
    k = _gksl(jumps, h_ls, n)
    return DaviesGenerator(k, h_ls, jumps, float(lam), Superoperator.commutator(sys.h_sys), sys,
                           bath.beta)


# ---------------------------------------------------------------------------
# complete positivity


def to_choi(s: Superoperator) -> np.ndarray:
    """Choi matrix ``sum_ij s(|i><j|) (x) |i><j|``."""
    n = s.dim
    c = s.matrix.reshape(n, n, n, n).transpose(0, 2, 1, 3).reshape(n * n, n * n)
    return c


@dataclass(frozen=True)
class CPTReport:
    min_choi_eig: float
    trace_dev: float
    herm_dev: float

    def ok(self, choi_tol: float = 1e-9, trace_tol: float = 1e-10, herm_tol: float = 1e-10) -> bool:
        return (self.min_choi_eig >= -choi_tol and self.trace_dev <= trace_tol
                and self.herm_dev <= herm_tol)


def cpt_report(s: Superoperator, n_samples: int = 8, seed: int = 0) -> CPTReport:
    """Complete positivity, trace and hermiticity preservation of ``s``."""
    n = s.dim
    c = to_choi(s)
    min_eig = float(np.linalg.eigvalsh(0.5 * (c + c.conj().T)).min())
    tr = vec(np.eye(n))
    trace_dev = float(np.max(np.abs(tr @ s.matrix - tr)))
    rng = np.random.default_rng(seed)
    herm_dev = 0.0
    for _ in range(n_samples):
        x = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        x = x + x.conj().T
        x /= np.linalg.norm(x)
        y = s.apply(x)
        herm_dev = max(herm_dev, float(np.max(np.abs(y - y.conj().T))))
    return CPTReport(min_eig, trace_dev, herm_dev)
