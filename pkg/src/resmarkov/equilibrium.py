"""Equilibrium states and the renormalized generators.

The coupled reduced equilibrium state is expanded to second order in the
coupling via the imaginary-time Dyson series of ``tr_R exp(-beta H)``.
Its logarithm defines a renormalized system Hamiltonian, from which a
Davies-type generator ``M_d`` and ``M = -i[H~, .] + lambda^2 M_d`` are
built that leave the coupled equilibrium state exactly invariant.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .davies import DaviesGenerator, Superoperator, build_davies, group_values
from .errors import DomainError, StructuralError
from .model import BathSpec, SystemSpec, imaginary_time_correlation
from .resonance import level_shift, resonance_energies

__all__ = [
    "GibbsState",
    "RenormalizedSystem",
    "RenormalizedGenerators",
    "gibbs",
    "second_order_correction",
    "reduced_gibbs_second_order",
    "renormalize",
    "renormalized_generators",
]

PHI_COND_MAX = 1e12


@dataclass(frozen=True)
class GibbsState:
    rho: np.ndarray
    beta: float
    source: str = "bare"


def _clean_state(rho: np.ndarray) -> np.ndarray:
    rho = 0.5 * (rho + rho.conj().T)
    return rho / np.trace(rho).real


def gibbs(h: np.ndarray, beta: float, source: str = "bare") -> GibbsState:
    """``exp(-beta h) / tr exp(-beta h)``."""
    if not beta > 0:
        raise DomainError(f"beta must be positive, got {beta}")
    h = np.asarray(h, dtype=complex)
    e, v = np.linalg.eigh(0.5 * (h + h.conj().T))
    w = np.exp(-beta * (e - e.min()))
    rho = (v * (w / w.sum())) @ v.conj().T
    return GibbsState(_clean_state(rho), float(beta), source)


def _phi1(z: np.ndarray) -> np.ndarray:
    """``(exp(z) - 1) / z`` with the removable singularity filled in."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-8
    safe = np.where(small, 1.0, z)
    return np.where(small, 1.0 + 0.5 * z, np.expm1(safe) / safe)


def second_order_correction(sys: SystemSpec, bath: BathSpec, n_nodes: int = 64,
                            kernel: Optional[Callable[[np.ndarray], np.ndarray]] = None
                            ) -> np.ndarray:
    """Second-order coefficient ``rho2`` in ``rho_lambda = rho_0 + lambda^2 rho2``.

    ``kernel(s)`` is the bath imaginary-time two-point function on
    ``[0, beta]``; by default the continuum one.  With the free Dyson
    series the unnormalized correction is

        X = exp(-beta H) int_0^beta dt1 int_0^t1 dt2 G(t1) G(t2) c(t1 - t2) / Z,

    ``G(t) = exp(t H) G exp(-t H)``.  The inner time integral is done in
    closed form; the lag ``s = t1 - t2`` by Gauss-Legendre.
    """
    beta = bath.beta
    if kernel is None:
        kernel = lambda s: imaginary_time_correlation(bath, s)
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    s = 0.5 * beta * (x + 1.0)
    w = 0.5 * beta * w
    cs = np.asarray(kernel(s), dtype=float)

    e = sys.eigvals - sys.eigvals.min()
    g = sys.in_eigenbasis(sys.coupling)
    ei = e[:, None, None, None]
    ej = e[None, :, None, None]
    em = e[None, None, :, None]
    sq = s[None, None, None, :]
    z = (beta - sq) * (ei - ej)
    # (exp(x) - exp(y)) / (E_i - E_j) with x - y = z, written with a
    # non-positive exponent on whichever side is larger
    x_exp = -beta * ej - sq * (em - ej)
    y_exp = -beta * ei + sq * (ei - em)
    t = np.where(z >= 0,
                 np.exp(x_exp) * (beta - sq) * _phi1(-z),
                 np.exp(y_exp) * (beta - sq) * _phi1(z))
    inner = t @ (w * cs)                     # (i, j, m)
    gg = g[:, None, :] * g.T[None, :, :]     # G_im G_mj -> (i, j, m)
    z_part = np.exp(-beta * e).sum()
    xmat = (gg * inner).sum(axis=2) / z_part
    rho0 = np.diag(np.exp(-beta * e) / z_part)
    rho2 = xmat - rho0 * np.trace(xmat)
    rho2 = 0.5 * (rho2 + rho2.conj().T)
    rho2 -= rho0 * np.trace(rho2)
    v = sys.eigvecs
    return v @ rho2 @ v.conj().T


def reduced_gibbs_second_order(sys: SystemSpec, bath: BathSpec, lam: float,
                               n_nodes: int = 64, kernel=None) -> GibbsState:
    """``rho_0 + lam^2 rho2``, hermitized and trace-normalized."""
    rho0 = gibbs(sys.h_sys, bath.beta).rho
    if lam == 0:
        return GibbsState(rho0, bath.beta, "second-order reduced")
    rho2 = second_order_correction(sys, bath, n_nodes, kernel)
    return GibbsState(_clean_state(rho0 + lam ** 2 * rho2), bath.beta, "second-order reduced")


# ---------------------------------------------------------------------------
# renormalization


def _conj_in_basis(v: np.ndarray):
    """Antiunitary conjugation ``C`` in the basis ``v``: returns a function on
    vectors and one giving the (linear) matrix of ``C Z C``."""
    vec_c = lambda x: v @ np.conj(v.conj().T @ x)
    op_c = lambda z: v @ np.conj(v.conj().T @ z @ v) @ v.conj().T
    return vec_c, op_c


@dataclass(frozen=True)
class RenormalizedSystem:
    h_tilde: np.ndarray
    e_tilde: np.ndarray
    phi_tilde: np.ndarray
    purification: np.ndarray
    lam: float
    beta: float
    basis: np.ndarray = field(repr=False)

    @property
    def purification_matrix(self) -> np.ndarray:
        """``Omega~`` reshaped to ``N x N`` (first tensor factor = rows)."""
        n = self.h_tilde.shape[0]
        return self.purification.reshape(n, n)

    def expectation(self, x: np.ndarray) -> complex:
        """``<Omega~, (x (x) 1) Omega~>``."""
        n = x.shape[0]
        om = self.purification
        return complex(om.conj() @ (np.kron(x, np.eye(n)) @ om))


def renormalize(rho_lambda: GibbsState, beta: Optional[float] = None,
                basis: Optional[np.ndarray] = None, lam: float = float("nan")) -> RenormalizedSystem:
    """``H~ = -(1/beta) ln(rho / ||rho||)`` and the purification of ``rho``.

    ``basis`` fixes the complex conjugation used in the purification
    (default: the computational basis).
    """
    beta = rho_lambda.beta if beta is None else beta
    rho = _clean_state(np.asarray(rho_lambda.rho, dtype=complex))
    n = rho.shape[0]
    p, v = np.linalg.eigh(rho)
    if p.min() <= 0:
        raise DomainError(f"state is not strictly positive (min eigenvalue {p.min():.3e})")
    order = np.argsort(-p, kind="stable")
    p, v = p[order], v[:, order]
    e_t = -np.log(p / p[0]) / beta
    e_t[0] = 0.0
    h_t = (v * e_t) @ v.conj().T
    basis = np.eye(n) if basis is None else np.asarray(basis)
    vec_c, _ = _conj_in_basis(basis)
    wts = np.sqrt(p / p.sum())
    omega = sum(wts[j] * np.kron(v[:, j], vec_c(v[:, j])) for j in range(n))
    return RenormalizedSystem(0.5 * (h_t + h_t.conj().T), e_t, v, omega, float(lam),
                              float(beta), basis)


@dataclass(frozen=True)
class RenormalizedGenerators:
    m: Superoperator
    m_d: Superoperator
    k_tilde: DaviesGenerator = field(repr=False)
    lambda_tilde: np.ndarray = field(repr=False)
    phi: np.ndarray = field(repr=False)
    system: RenormalizedSystem = field(repr=False)
    rho_lambda: GibbsState = field(repr=False)
    lam: float = 0.0

    def lambda_tilde_blocks(self, tol: float = 1e-9):
        """Sector blocks of ``Lambda~`` in the basis ``phi~_k (x) C phi~_l``."""
        rs = self.system
        n = rs.h_tilde.shape[0]
        vec_c, _ = _conj_in_basis(rs.basis)
        vc = np.array([vec_c(rs.phi_tilde[:, j]) for j in range(n)]).T
        b = np.kron(rs.phi_tilde, vc)
        lt = b.conj().T @ self.lambda_tilde @ b
        diffs = np.array([rs.e_tilde[k] - rs.e_tilde[l] for k in range(n) for l in range(n)])
        scale = max(float(np.max(np.abs(rs.e_tilde))), 1.0)
        blocks = {}
        for members in group_values(diffs, tol * scale):
            e = float(diffs[members].mean())
            blocks[e] = lt[np.ix_(members, members)]
        return blocks


def _doubled_level_shift(dav: DaviesGenerator, rsys: RenormalizedSystem) -> np.ndarray:
    """``i Lambda~`` on C^N (x) C^N, assembled from the Bohr components with
    the KMS weights ``exp(-beta w / 2)`` and the conjugation ``C``."""
    n = dav.system.dim
    _, op_c = _conj_in_basis(rsys.basis)
    eye = np.eye(n)
    beta = rsys.beta
    m = 1j * (np.kron(dav.lamb_shift, eye) - np.kron(eye, op_c(dav.lamb_shift)))
    for jp in dav.jumps:
        a = jp.operator
        ad = a.conj().T
        ada = ad @ a
        m = m + jp.rate * (np.exp(-0.5 * beta * jp.omega) * np.kron(ad, op_c(ad))
                           - 0.5 * np.kron(ada, eye) - 0.5 * np.kron(eye, op_c(ada)))
    return m


def renormalized_generators(sys: SystemSpec, bath: BathSpec, lam: float, *,
                            rho_lambda: Optional[GibbsState] = None, n_nodes: int = 64,
                            check_fgr: bool = True,
                            cond_max: float = PHI_COND_MAX) -> RenormalizedGenerators:
    """Renormalized Davies generator ``M_d(lam)`` and ``M(lam)``.

    The level-shift operator of the renormalized system is assembled on
    the doubled space and transported to observables through
    ``Phi: X -> (X (x) 1) Omega~``; its dual on density matrices is ``M_d``.
    """
    if check_fgr:
        rd = resonance_energies(level_shift(build_davies(sys, bath, lam)), lam)
        if not rd.fgr_holds:
            warnings.warn("Fermi golden rule condition fails for the bare generator; "
                          "the renormalized generator need not be asymptotically exact",
                          RuntimeWarning, stacklevel=2)
    if rho_lambda is None:
        rho_lambda = reduced_gibbs_second_order(sys, bath, lam, n_nodes)
    rsys = renormalize(rho_lambda, bath.beta, basis=sys.eigvecs, lam=lam)
    n = sys.dim
    sys_t = SystemSpec.from_matrices(rsys.h_tilde, sys.coupling)
    dav_t = build_davies(sys_t, bath, lam)
    i_lambda = _doubled_level_shift(dav_t, rsys)
    om = rsys.purification_matrix
    phi = np.kron(np.eye(n), om.T)
    cond = np.linalg.cond(phi)
    if not np.isfinite(cond) or cond > cond_max:
        raise StructuralError(f"purification map is near singular (condition number {cond:.2e})")
    md_heis = Superoperator(np.linalg.solve(phi, i_lambda @ phi))
    m_d = md_heis.dual()
    m = Superoperator.commutator(rsys.h_tilde) + (lam ** 2) * m_d
    return RenormalizedGenerators(m, m_d, dav_t, -1j * i_lambda, phi, rsys, rho_lambda, float(lam))
