"""Time propagation, population tracks and trajectory comparison."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .davies import Propagator, Superoperator
from .errors import DomainError
from .resonance import ResonanceData, w_map

__all__ = [
    "TAGS",
    "Trajectory",
    "Comparison",
    "propagate",
    "populations",
    "compare",
    "trace_norm",
    "default_time_grid",
    "log_time_grid",
    "resonance_trajectory",
    "loglog_slope",
]

TAGS = ("davies", "resonance-Wt", "M(lambda)", "M_d populations", "oracle", "free")


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    tag: str = "davies"

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        s = np.asarray(self.states, dtype=complex)
        if t.ndim != 1 or s.ndim != 3 or s.shape[0] != t.size or s.shape[1] != s.shape[2]:
            raise DomainError(f"inconsistent trajectory shapes {t.shape} / {s.shape}")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise DomainError("trajectory times must be strictly ascending")
        if self.tag not in TAGS:
            raise DomainError(f"unknown trajectory tag {self.tag!r}")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", s)

    def __len__(self) -> int:
        return self.times.size


@dataclass(frozen=True)
class Comparison:
    per_time: np.ndarray
    sup: float


def trace_norm(x: np.ndarray) -> float:
    x = np.asarray(x)
    if np.allclose(x, x.conj().T, atol=1e-14, rtol=0):
        return float(np.abs(np.linalg.eigvalsh(0.5 * (x + x.conj().T))).sum())
    return float(np.linalg.svd(x, compute_uv=False).sum())


def propagate(gen: Superoperator | Propagator, rho0: np.ndarray, times: Sequence[float],
              tag: str = "davies") -> Trajectory:
    """States ``exp(t gen) rho0`` on the grid ``times``."""
    prop = gen if isinstance(gen, Propagator) else Propagator(gen)
    times = np.asarray(times, dtype=float)
    return Trajectory(times, prop.evolve(rho0, times), tag)


def populations(traj: Trajectory, basis: np.ndarray) -> np.ndarray:
    """Diagonal ``<phi_k| rho(t) |phi_k>`` for each time; shape ``(T, N)``."""
    v = np.asarray(basis)
    rot = np.einsum("ik,tij,jk->tk", v.conj(), traj.states, v)
    return rot.real


def compare(a: Trajectory, b: Trajectory) -> Comparison:
    """Trace-norm distance per time and its supremum."""
    if a.times.shape != b.times.shape or not np.allclose(a.times, b.times, rtol=1e-12, atol=0):
        raise DomainError("trajectories are sampled on different time grids")
    d = np.array([trace_norm(x - y) for x, y in zip(a.states, b.states)])
    return Comparison(d, float(d.max()) if d.size else 0.0)


def log_time_grid(t_max: float, n: int = 64, t_min_ratio: float = 1e-4) -> np.ndarray:
    """``0`` followed by ``n - 1`` log-spaced times ending at ``t_max``."""
    if n < 2:
        return np.array([0.0])
    return np.concatenate([[0.0], np.geomspace(t_max * t_min_ratio, t_max, n - 1)])


def default_time_grid(lam: float, gamma_fgr: float, n: int = 64) -> np.ndarray:
    """Log-spaced grid on ``[0, 20 / (lam^2 gamma_fgr)]``."""
    if not (lam != 0 and gamma_fgr > 0):
        raise DomainError("default time grid needs lambda != 0 and a positive golden-rule rate")
    return log_time_grid(20.0 / (lam ** 2 * gamma_fgr), n)


def resonance_trajectory(rd: ResonanceData, rho_inf: np.ndarray, rho0: np.ndarray,
                         times: Sequence[float]) -> Trajectory:
    """``rho_inf + W_t rho0``."""
    times = np.asarray(times, dtype=float)
    states = np.array([rho_inf + w_map(rd, t).apply(rho0) for t in times])
    return Trajectory(times, states, "resonance-Wt")


def loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    if np.any(x <= 0) or np.any(y <= 0):
        raise DomainError("log-log fit needs positive data")
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])
