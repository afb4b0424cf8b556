"""Exact reference dynamics for a reservoir of finitely many truncated modes.

The reservoir is a set of harmonic modes ``w_k`` with occupation cutoffs
``d_k``; the total Hamiltonian is

    H = H_S (x) 1 + 1 (x) sum_k w_k a_k^* a_k + lam G (x) phi,
    phi = sum_k g_k (a_k + a_k^*) / sqrt(2),

and the bath starts in its (truncated, renormalized) thermal state.

Couplings are fixed so that the free two-point function of ``phi``
reproduces the continuum one bin by bin:  ``g_k^2 <a a^*>_k`` equals
``(1/pi) (1 + n(w_k)) int_bin J``.  For untruncated modes this is
``g_k^2 = (1/pi) int_bin J``; for truncated modes the factor
``(1 + n) / <a a^*>_trunc`` compensates the missing occupation, so the
truncation only enters through non-Gaussian (fourth and higher order)
correlations.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .dynamics import Trajectory
from .equilibrium import GibbsState
from .errors import DomainError, OracleError
from .model import BathSpec, SystemSpec, spectral_mass

__all__ = [
    "FiniteModeReservoir",
    "discretize_bath",
    "required_cutoff",
    "recurrence_window",
    "thermal_tail_mass",
    "discrete_correlation",
    "discrete_imaginary_kernel",
    "total_hamiltonian",
    "exact_reduced_dynamics",
    "exact_reduced_gibbs",
]

DIM_CAP = 4096
MAX_TAIL_MASS = 1e-6
OMEGA_TAIL_TOL = 1e-10


@dataclass(frozen=True)
class FiniteModeReservoir:
    omegas: np.ndarray
    couplings: np.ndarray
    cutoffs: tuple
    beta: float

    def __post_init__(self):
        w = np.asarray(self.omegas, dtype=float)
        g = np.asarray(self.couplings, dtype=float)
        d = tuple(int(x) for x in self.cutoffs)
        if w.ndim != 1 or w.shape != g.shape or len(d) != w.size or w.size < 1:
            raise DomainError("omegas, couplings and cutoffs must have one entry per mode")
        if np.any(w <= 0) or np.any(g < 0) or min(d) < 1:
            raise DomainError("need omegas > 0, couplings >= 0 and cutoffs >= 1")
        if not self.beta > 0:
            raise DomainError("beta must be positive")
        object.__setattr__(self, "omegas", w)
        object.__setattr__(self, "couplings", g)
        object.__setattr__(self, "cutoffs", d)

    @property
    def n_modes(self) -> int:
        return self.omegas.size

    @property
    def per_mode_cutoff(self) -> tuple:
        return self.cutoffs

    @property
    def bath_dim(self) -> int:
        return int(np.prod([d + 1 for d in self.cutoffs]))

    def occupations(self):
        """Truncated thermal ``<a a^*>`` and ``<a^* a>`` per mode."""
        up, down = [], []
        for w, d in zip(self.omegas, self.cutoffs):
            n = np.arange(d + 1)
            p = np.exp(-self.beta * w * n)
            p /= p.sum()
            down.append(float((n * p).sum()))
            up.append(float(((n + 1) * p)[:-1].sum()))
        return np.array(up), np.array(down)


def required_cutoff(omega: float, beta: float, tail: float = MAX_TAIL_MASS) -> int:
    """Smallest ``d`` with thermal weight beyond occupation ``d`` below ``tail``."""
    return max(1, int(math.ceil(math.log(1.0 / tail) / (beta * omega))) - 1)


def thermal_tail_mass(fm: FiniteModeReservoir) -> float:
    """Thermal probability discarded by the occupation cutoffs."""
    x = np.exp(-fm.beta * fm.omegas * (np.array(fm.cutoffs) + 1))
    return float(-np.expm1(np.sum(np.log1p(-x))))


def discretize_bath(bath: BathSpec, n: int, omega_max: float,
                    cutoff: Union[None, int, Sequence[int]] = None, *,
                    thermal_tail: float = MAX_TAIL_MASS,
                    omega_tail_tol: Optional[float] = OMEGA_TAIL_TOL,
                    compensate: bool = True) -> FiniteModeReservoir:
    """``n`` modes at the midpoints of equal bins on ``(0, omega_max]``.

    ``cutoff=None`` picks each mode's occupation cutoff so the discarded
    thermal weight is below ``thermal_tail``; an integer caps those
    choices; a sequence sets them explicitly.  ``omega_tail_tol=None``
    skips the check that ``omega_max`` captures the spectral mass.
    """
    if n < 1 or not omega_max > 0:
        raise DomainError("need n >= 1 and omega_max > 0")
    total = spectral_mass(bath, 0.0)
    if omega_tail_tol is not None and total > 0 and \
            spectral_mass(bath, omega_max) > omega_tail_tol * total:
        raise OracleError(
            f"omega_max = {omega_max} leaves a spectral tail of "
            f"{spectral_mass(bath, omega_max) / total:.2e} (> {omega_tail_tol:.0e})")
    edges = np.linspace(0.0, omega_max, n + 1)
    omegas = 0.5 * (edges[1:] + edges[:-1])
    tails = np.array([spectral_mass(bath, e) for e in edges])
    mass = np.maximum(tails[:-1] - tails[1:], 0.0)
    needed = [required_cutoff(w, bath.beta, thermal_tail) for w in omegas]
    if cutoff is None:
        cut = needed
    elif np.ndim(cutoff) == 0:
        cut = [min(int(cutoff), d) for d in needed]
    else:
        cut = [int(c) for c in cutoff]
        if len(cut) != n:
            raise DomainError(f"expected {n} cutoffs, got {len(cut)}")
    g2 = mass / math.pi
    fm = FiniteModeReservoir(omegas, np.sqrt(g2), tuple(cut), bath.beta)
    if compensate:
        up, _ = fm.occupations()
        full = 1.0 / -np.expm1(-bath.beta * omegas)
        fm = FiniteModeReservoir(omegas, np.sqrt(g2 * full / up), tuple(cut), bath.beta)
    return fm


def recurrence_window(fm: FiniteModeReservoir) -> float:
    """``2 pi`` over the smallest spacing between mode frequencies.

    A single mode recurs at ``2 pi / w_1``.
    """
    w = np.sort(fm.omegas)
    if w.size == 1:
        return 2 * math.pi / w[0]
    gaps = np.diff(w)
    gaps = gaps[gaps > 0]
    return 2 * math.pi / gaps.min() if gaps.size else math.inf


def discrete_correlation(fm: FiniteModeReservoir, t) -> np.ndarray:
    """``<phi(t) phi(0)>`` in the truncated thermal state."""
    t = np.asarray(t, dtype=float)
    up, down = fm.occupations()
    g2 = 0.5 * fm.couplings ** 2
    ph = np.exp(-1j * np.multiply.outer(t, fm.omegas))
    return (ph * (g2 * up)).sum(-1) + (ph.conj() * (g2 * down)).sum(-1)


def discrete_imaginary_kernel(fm: FiniteModeReservoir, s) -> np.ndarray:
    """``<exp(s H_R) phi exp(-s H_R) phi>`` for ``0 <= s <= beta``."""
    s = np.asarray(s, dtype=float)
    up, down = fm.occupations()
    g2 = 0.5 * fm.couplings ** 2
    x = np.multiply.outer(s, fm.omegas)
    return (np.exp(-x) * (g2 * up)).sum(-1) + (np.exp(x) * (g2 * down)).sum(-1)


# ---------------------------------------------------------------------------
# Fock-space assembly


def _kron_all(ops):
    out = np.ones((1, 1))
    for o in ops:
        out = np.kron(out, o)
    return out


def _bath_operators(fm: FiniteModeReservoir):
    """``H_R`` diagonal, the field ``phi`` and the thermal weights."""
    dims = [d + 1 for d in fm.cutoffs]
    h_r = np.zeros(1)
    for w, d in zip(fm.omegas, dims):
        h_r = np.add.outer(h_r, w * np.arange(d)).reshape(-1)
    phi = np.zeros((fm.bath_dim, fm.bath_dim))
    for k, (g, d) in enumerate(zip(fm.couplings, dims)):
        if g == 0:
            continue
        a = np.diag(np.sqrt(np.arange(1, d)), 1)
        ops = [np.eye(dd) for dd in dims]
        ops[k] = a + a.T
        phi += g / math.sqrt(2) * _kron_all(ops)
    w = np.exp(-fm.beta * h_r)
    return h_r, phi, w / w.sum()


def total_hamiltonian(sys: SystemSpec, fm: FiniteModeReservoir, lam: float) -> np.ndarray:
    h_r, phi, _ = _bath_operators(fm)
    n, m = sys.dim, fm.bath_dim
    h = np.kron(sys.h_sys, np.eye(m)) + np.kron(np.eye(n), np.diag(h_r))
    h = h + lam * np.kron(sys.coupling, phi)
    if np.allclose(h.imag, 0.0, atol=0.0):
        h = h.real
    return h


def _guards(sys: SystemSpec, fm: FiniteModeReservoir, dim_cap: int, max_tail_mass: Optional[float]):
    dim = sys.dim * fm.bath_dim
    if dim > dim_cap:
        raise OracleError(f"total Hilbert dimension {dim} exceeds the cap {dim_cap}")
    if max_tail_mass is not None:
        tail = thermal_tail_mass(fm)
        if tail > max_tail_mass:
            need = [required_cutoff(w, fm.beta, max_tail_mass / fm.n_modes) for w in fm.omegas]
            raise OracleError(
                f"occupation cutoffs discard thermal weight {tail:.2e} (> {max_tail_mass:.0e}); "
                f"suggested cutoffs {need}")


def exact_reduced_dynamics(sys: SystemSpec, fm: FiniteModeReservoir, lam: float,
                           rho_s0: np.ndarray, times: Sequence[float], *,
                           dim_cap: int = DIM_CAP,
                           max_tail_mass: Optional[float] = MAX_TAIL_MASS) -> Trajectory:
    """Reduced states ``tr_R exp(-itH) (rho_s0 (x) rho_R) exp(itH)``.

    One full eigendecomposition of ``H``; each time then costs a few
    ``O(dim^2)`` contractions.
    """
    _guards(sys, fm, dim_cap, max_tail_mass)
    times = np.asarray(times, dtype=float)
    t_rec = recurrence_window(fm)
    if times.size and times.max() > 0.5 * t_rec * (1 + 1e-12):
        warnings.warn(f"times beyond half the recurrence window ({0.5 * t_rec:.4g})",
                      RuntimeWarning, stacklevel=2)
    n, m = sys.dim, fm.bath_dim
    rho_s0 = np.asarray(rho_s0, dtype=complex)
    h = total_hamiltonian(sys, fm, lam)
    _, _, w_r = _bath_operators(fm)
    evals, v = np.linalg.eigh(h)
    blocks = [v[a * m:(a + 1) * m] for a in range(n)]
    wb = [w_r[:, None] * b for b in blocks]
    bh = [b.conj().T for b in blocks]
    r = np.zeros((v.shape[1], v.shape[1]), dtype=complex)
    for a in range(n):
        for b in range(n):
            if rho_s0[a, b] != 0:
                r += rho_s0[a, b] * (bh[a] @ wb[b])
    evals = evals - evals[0]
    z = {}
    for i in range(n):
        for j in range(i, n):
            y_t = (bh[j] @ blocks[i]).T
            z[i, j] = r * y_t
    out = np.empty((times.size, n, n), dtype=complex)
    for ti, t in enumerate(times):
        u = np.exp(-1j * evals * t)
        for (i, j), zz in z.items():
            val = u @ (zz @ u.conj())
            out[ti, i, j] = val
            out[ti, j, i] = np.conj(val)
        for i in range(n):
            out[ti, i, i] = out[ti, i, i].real
    return Trajectory(times, out, "oracle")


def exact_reduced_gibbs(sys: SystemSpec, fm: FiniteModeReservoir, lam: float, *,
                        dim_cap: int = DIM_CAP,
                        max_tail_mass: Optional[float] = MAX_TAIL_MASS) -> GibbsState:
    """``tr_R exp(-beta H) / Z`` on the truncated space."""
    _guards(sys, fm, dim_cap, max_tail_mass)
    n, m = sys.dim, fm.bath_dim
    h = total_hamiltonian(sys, fm, lam)
    evals, v = np.linalg.eigh(h)
    w = np.exp(-fm.beta * (evals - evals[0]))
    w /= w.sum()
    blocks = [v[a * m:(a + 1) * m] for a in range(n)]
    rho = np.empty((n, n), dtype=complex)
    for i in range(n):
        for j in range(n):
            rho[i, j] = np.sum((blocks[i] * w) * blocks[j].conj())
    rho = 0.5 * (rho + rho.conj().T)
    return GibbsState(rho / np.trace(rho).real, fm.beta, "oracle")
