"""System and bath descriptions, and the scalar bath functions.

Conventions
-----------
For a bath with spectral density ``J`` at inverse temperature ``beta`` the
thermal rate function is

    h_hat(u) = J(|u|) * |exp(beta u) / (exp(beta u) - 1)|,

which obeys ``h_hat(-u) = exp(-beta u) h_hat(u)``.  The complex two-point
function is normalized as its inverse Fourier transform,

    C(t) = (1 / 2 pi) * integral h_hat(u) exp(-i u t) du,

so that ``C(t) = <B(t) B(0)>`` for the bath operator ``B`` coupled to the
system.  The Lamb-shift coefficients use the same normalization,
``S(w) = (1 / 2 pi) P.V. integral h_hat(u) / (w - u) du``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence, Union

import numpy as np
from scipy import integrate, interpolate, optimize, special

from .errors import DomainError, QuadratureError

__all__ = [
    "SystemSpec",
    "AnalyticFamily",
    "Tabulated",
    "BathSpec",
    "named_coupling",
    "qubit",
    "three_level",
    "spectral_density",
    "h_hat",
    "h_hat_zero",
    "correlation_function",
    "imaginary_time_correlation",
    "principal_value",
    "lamb_shift_coefficient",
    "support_cutoff",
    "spectral_mass",
]

HERMITIAN_TOL = 1e-12
QUAD_EPSABS = 1e-11
QUAD_EPSREL = 1e-10
TAIL_TOL = 1e-12


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def _check_hermitian(m: np.ndarray, name: str, tol: float = HERMITIAN_TOL) -> np.ndarray:
    m = np.asarray(m, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DomainError(f"{name} must be a square matrix, got shape {m.shape}")
    dev = np.max(np.abs(m - m.conj().T)) if m.size else 0.0
    if dev > tol:
        raise DomainError(f"{name} is not hermitian (max deviation {dev:.3e} > {tol:.1e})")
    return 0.5 * (m + m.conj().T)


# ---------------------------------------------------------------------------
# system


@dataclass(frozen=True)
class SystemSpec:
    """An N-level system with Hamiltonian ``h_sys`` and coupling operator.

    Use :meth:`from_matrices` to build one; it validates hermiticity,
    diagonalizes ``h_sys`` and shifts it so that its smallest eigenvalue
    is zero.
    """

    h_sys: np.ndarray
    coupling: np.ndarray
    eigvals: np.ndarray
    eigvecs: np.ndarray

    @property
    def dim(self) -> int:
        return self.h_sys.shape[0]

    @classmethod
    def from_matrices(cls, h_sys, coupling, tol: float = HERMITIAN_TOL) -> "SystemSpec":
        h = _check_hermitian(h_sys, "h_sys", tol)
        g = _check_hermitian(coupling, "coupling", tol)
        if h.shape != g.shape:
            raise DomainError(f"h_sys {h.shape} and coupling {g.shape} differ in shape")
        if h.shape[0] < 1:
            raise DomainError("system dimension must be positive")
        evals, evecs = np.linalg.eigh(h)
        shift = evals[0]
        h = h - shift * np.eye(h.shape[0])
        evals = evals - shift
        return cls(_frozen(h), _frozen(g), _frozen(evals), _frozen(evecs))

    def in_eigenbasis(self, op: np.ndarray) -> np.ndarray:
        """Matrix elements ``<phi_k| op |phi_l>``."""
        v = self.eigvecs
        return v.conj().T @ op @ v


def named_coupling(name: str, dim: int) -> np.ndarray:
    """Named coupling operators in the energy-ordered level basis.

    ``sigma_x`` couples neighbouring levels, ``sigma_z`` is the traceless
    diagonal ``diag(1, ..., -1)`` with equal spacing.  For ``dim = 2`` both
    are the Pauli matrices.
    """
    if name == "sigma_x":
        g = np.zeros((dim, dim), dtype=complex)
        idx = np.arange(dim - 1)
        g[idx, idx + 1] = 1.0
        g[idx + 1, idx] = 1.0
        return g
    if name == "sigma_z":
        if dim == 1:
            return np.zeros((1, 1), dtype=complex)
        return np.diag(np.linspace(1.0, -1.0, dim)).astype(complex)
    if name == "zero":
        return np.zeros((dim, dim), dtype=complex)
    raise DomainError(f"unknown coupling name {name!r}")


def qubit(delta: float = 1.0, coupling: Union[str, np.ndarray] = "sigma_x") -> SystemSpec:
    """Two-level system ``H_S = diag(0, delta)``."""
    g = named_coupling(coupling, 2) if isinstance(coupling, str) else coupling
    return SystemSpec.from_matrices(np.diag([0.0, float(delta)]), g)


def three_level(e1: float = 1.0, e2: float = 2.5,
                coupling: Union[str, np.ndarray] = "sigma_x") -> SystemSpec:
    """Three-level system ``H_S = diag(0, e1, e2)``."""
    g = named_coupling(coupling, 3) if isinstance(coupling, str) else coupling
    return SystemSpec.from_matrices(np.diag([0.0, float(e1), float(e2)]), g)


# ---------------------------------------------------------------------------
# bath


@dataclass(frozen=True)
class AnalyticFamily:
    """Form factors ``|g(w, S)|^2 = w^(2p) exp(-2 w^m) |g1(S)|^2`` with
    ``p = n - 1/2`` and angular norm ``c1``."""

    n: int = 0
    m: int = 1
    c1: float = 1.0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 0:
            raise DomainError(f"family index n must be a nonnegative integer, got {self.n}")
        if self.m not in (1, 2):
            raise DomainError(f"family exponent m must be 1 or 2, got {self.m}")
        if not self.c1 > 0:
            raise DomainError(f"angular norm c1 must be positive, got {self.c1}")

    @property
    def power(self) -> int:
        """Exponent of ``w`` in ``J``: ``2 + 2p = 1 + 2n``."""
        return 1 + 2 * int(self.n)

    def __call__(self, omega: np.ndarray) -> np.ndarray:
        return 0.5 * math.pi * self.c1 * omega ** self.power * np.exp(-2.0 * omega ** self.m)

    def tail(self, omega: float) -> float:
        """``integral_omega^inf J``, in closed form via the incomplete gamma function."""
        s = (self.power + 1) / self.m
        pref = 0.5 * math.pi * self.c1 / self.m * 2.0 ** (-s) * special.gamma(s)
        return float(pref * special.gammaincc(s, 2.0 * omega ** self.m))


@dataclass(frozen=True)
class Tabulated:
    """Spectral density given by samples, interpolated with a monotone
    piecewise cubic (PCHIP) and set to zero beyond the last node."""

    omegas: np.ndarray
    values: np.ndarray
    _interp: Callable = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        w = np.asarray(self.omegas, dtype=float)
        j = np.asarray(self.values, dtype=float)
        if w.ndim != 1 or w.shape != j.shape or w.size < 3:
            raise DomainError("tabulated J needs matching 1-d grids with at least 3 nodes")
        if np.any(np.diff(w) <= 0):
            raise DomainError("tabulated omega grid must be strictly increasing")
        if w[0] != 0.0 or j[0] != 0.0:
            raise DomainError("tabulated J must start at omega = 0 with J(0) = 0")
        if np.any(j < 0):
            raise DomainError("tabulated J must be nonnegative")
        object.__setattr__(self, "omegas", _frozen(w))
        object.__setattr__(self, "values", _frozen(j))
        object.__setattr__(self, "_interp", interpolate.PchipInterpolator(w, j, extrapolate=False))

    @classmethod
    def from_file(cls, path) -> "Tabulated":
        data = np.loadtxt(path, delimiter=None, ndmin=2)
        if data.shape[1] != 2:
            raise DomainError(f"{path}: expected two columns (omega, J)")
        return cls(data[:, 0], data[:, 1])

    def __call__(self, omega: np.ndarray) -> np.ndarray:
        out = self._interp(omega)
        out = np.where(np.isnan(out), 0.0, out)
        # exact node values, and clip rounding-level negatives
        return np.maximum(out, 0.0)

    def tail(self, omega: float) -> float:
        if omega >= self.omegas[-1]:
            return 0.0
        return float(self._interp.integrate(max(omega, 0.0), self.omegas[-1]))


FormFactor = Union[AnalyticFamily, Tabulated]


@dataclass(frozen=True)
class BathSpec:
    """Bosonic reservoir at inverse temperature ``beta``."""

    beta: float
    form_factor: FormFactor = field(default_factory=AnalyticFamily)

    def __post_init__(self):
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise DomainError(f"beta must be positive and finite, got {self.beta}")


def spectral_density(bath: BathSpec, omega):
    """``J(omega)`` for ``omega >= 0``; scalar in, scalar out."""
    w = np.asarray(omega, dtype=float)
    if np.any(w < 0) or np.any(np.isnan(w)):
        raise DomainError("spectral density is defined for omega >= 0 only")
    out = bath.form_factor(w)
    return float(out) if np.ndim(omega) == 0 else out


def spectral_mass(bath: BathSpec, omega: float = 0.0) -> float:
    """``integral_omega^inf J(w) dw``."""
    return bath.form_factor.tail(omega)


def h_hat_zero(bath: BathSpec) -> float:
    """The limit of ``J(u) / (beta u)`` as ``u -> 0+``."""
    ff = bath.form_factor
    if isinstance(ff, AnalyticFamily):
        return 0.5 * math.pi * ff.c1 / bath.beta if ff.n == 0 else 0.0
    # Richardson extrapolation of r(u) = J(u)/(beta u) = r0 + r1 u + r2 u^2 + ...
    h = ff.omegas[1]
    us = np.array([h, h / 2, h / 4])
    r = ff(us) / (bath.beta * us)
    lvl1 = 2 * r[1:] - r[:-1]
    r0 = (4 * lvl1[1] - lvl1[0]) / 3
    scale = max(abs(r0), np.max(np.abs(r)), 1e-300)
    if abs(lvl1[1] - lvl1[0]) > 1e-3 * scale:
        warnings.warn(
            "tabulated spectral density is poorly resolved near omega = 0; "
            f"h_hat(0) estimate {r0:.6g} is uncertain",
            RuntimeWarning, stacklevel=2)
    return float(max(r0, 0.0))


def h_hat(bath: BathSpec, u):
    """Thermal rate function ``J(|u|) |e^(beta u) / (e^(beta u) - 1)|``.

    Vectorized over ``u``.  At ``u = 0`` the one-sided limit
    :func:`h_hat_zero` is used.
    """
    uu = np.asarray(u, dtype=float)
    a = np.abs(uu)
    j = bath.form_factor(a)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        pos = j / -np.expm1(-bath.beta * a)
        neg = j / np.expm1(bath.beta * a)
    out = np.where(uu > 0, pos, neg)
    if np.any(uu == 0):
        out = np.where(uu == 0, h_hat_zero(bath), out)
    out = np.where(np.isnan(out) & ~np.isnan(uu), 0.0, out)
    return float(out) if np.ndim(u) == 0 else out


def support_cutoff(bath: BathSpec, tol: float = TAIL_TOL) -> float:
    """Frequency ``U`` beyond which the integrated spectral mass is below ``tol``.

    The thermal factor is at most ``1 + 1/(beta U)`` there, so the tail of
    ``h_hat`` outside ``[-U, U]`` is bounded by a small multiple of ``tol``.
    """
    ff = bath.form_factor
    if isinstance(ff, Tabulated):
        return float(ff.omegas[-1])
    lo, hi = 0.0, 1.0
    while ff.tail(hi) > tol:
        lo, hi = hi, 2 * hi
    return float(optimize.brentq(lambda w: ff.tail(w) - tol, lo, hi, xtol=1e-10))


# ---------------------------------------------------------------------------
# quadrature helpers


def _quad(f, a, b, *, points: Iterable[float] = (), **kw) -> float:
    """``quad`` over ``[a, b]`` split at the interior ``points``.

    Raises :class:`QuadratureError` if the error estimate is large.
    """
    kw.setdefault("epsabs", QUAD_EPSABS)
    kw.setdefault("epsrel", QUAD_EPSREL)
    kw.setdefault("limit", 500)
    if a == b:
        return 0.0
    cuts = sorted(p for p in set(points) if a < p < b)
    edges = [a, *cuts, b]
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            val, err = integrate.quad(f, lo, hi, **kw)
        if not (math.isfinite(val) and math.isfinite(err)):
            raise QuadratureError(f"non-finite quadrature on [{lo}, {hi}]")
        if err > max(1e-8, 1e-7 * abs(val)):
            raise QuadratureError(
                f"quadrature on [{lo}, {hi}] did not converge (value {val:.6g}, error {err:.2e})")
        total += val
    return total


def _kinks(bath: BathSpec) -> list:
    """Nonnegative frequencies where ``J`` is not smooth."""
    ff = bath.form_factor
    return list(ff.omegas) if isinstance(ff, Tabulated) else []


def _scalar(f):
    return lambda x: float(f(x))


def correlation_function(bath: BathSpec, t):
    """Complex bath two-point function ``<B(t) B(0)>``.

    Evaluated as one-sided integrals of the symmetric and antisymmetric
    parts of ``h_hat``; vectorized over ``t``.
    """
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    umax = support_cutoff(bath)
    sym = lambda u: float(h_hat(bath, u) + h_hat(bath, -u))
    anti = lambda u: float(spectral_density(bath, u))
    kinks = _kinks(bath)
    out = np.empty(ts.shape, dtype=complex)
    for i, tt in enumerate(ts):
        if tt == 0.0:
            re, im = _quad(sym, 0.0, umax, points=kinks), 0.0
        else:
            w = abs(tt)
            re = _quad(sym, 0.0, umax, points=kinks, weight="cos", wvar=w)
            im = -math.copysign(1.0, tt) * _quad(anti, 0.0, umax, points=kinks, weight="sin", wvar=w)
        out[i] = (re + 1j * im) / (2 * math.pi)
    return complex(out[0]) if np.ndim(t) == 0 else out


def imaginary_time_correlation(bath: BathSpec, tau):
    """Imaginary-time kernel ``(1/2pi) integral h_hat(u) e^(-tau u) du``
    for ``0 <= tau <= beta``.

    Symmetric under ``tau -> beta - tau``.  Vectorized over ``tau``.
    """
    taus = np.atleast_1d(np.asarray(tau, dtype=float))
    beta = bath.beta
    if np.any(taus < 0) or np.any(taus > beta):
        raise DomainError("imaginary time must lie in [0, beta]")
    umax = support_cutoff(bath)
    kinks = _kinks(bath)
    out = np.empty(taus.shape)
    for i, s in enumerate(taus):
        f = lambda u, s=s: float(h_hat(bath, u)) * (math.exp(-s * u) + math.exp(-(beta - s) * u))
        out[i] = _quad(f, 0.0, umax, points=kinks) / (2 * math.pi)
    return float(out[0]) if np.ndim(tau) == 0 else out


def principal_value(f: Callable[[float], float], pole: float,
                    window: Sequence[float] = (-math.inf, math.inf), *,
                    points: Iterable[float] = (), delta: float | None = None) -> float:
    """Cauchy principal value of ``integral f(u) / (pole - u) du`` over ``window``.

    A symmetric interval ``[pole - delta, pole + delta]`` is folded onto
    ``[0, delta]`` where the integrand ``(f(pole - s) - f(pole + s)) / s``
    is regular; the rest is ordinary quadrature.  ``points`` are known
    kinks of ``f``.
    """
    a, b = float(window[0]), float(window[1])
    if not a < b:
        raise DomainError(f"empty integration window ({a}, {b})")
    points = [float(p) for p in points]
    g = lambda u: f(u) / (pole - u)
    if not a < pole < b:
        if pole in (a, b):
            raise DomainError("pole lies on the window boundary")
        return _quad(g, a, b, points=points)
    if math.isnan(f(pole)):
        raise QuadratureError(f"integrand is NaN at the pole {pole}")
    if delta is None:
        delta = min(1.0, 0.5 * (pole - a), 0.5 * (b - pole))
    core = lambda s: (f(pole - s) - f(pole + s)) / s if s > 0 else 0.0
    kinks = [abs(p - pole) for p in points]
    val = _quad(core, 0.0, delta, points=kinks)
    val += _quad(g, a, pole - delta, points=points)
    val += _quad(g, pole + delta, b, points=points)
    return val


def lamb_shift_coefficient(bath: BathSpec, omega: float) -> float:
    """``S(omega) = (1/2pi) P.V. integral h_hat(u) / (omega - u) du``."""
    umax = support_cutoff(bath)
    window = (-umax, umax)
    if not -umax < omega < umax:
        window = (min(-umax, omega - 1.0), max(umax, omega + 1.0))
    points = [0.0]
    if isinstance(bath.form_factor, Tabulated):
        # the interpolant is only piecewise smooth
        nodes = _kinks(bath)
        points += nodes + [-x for x in nodes]
    return principal_value(_scalar(lambda u: h_hat(bath, u)), float(omega), window,
                           points=points) / (2 * math.pi)
