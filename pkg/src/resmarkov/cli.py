"""Command-line front end.

Reads a TOML run configuration, dispatches to one of the pipelines and
writes CSV/JSON results into the output directory.  Exit codes: 0 ok,
2 configuration error, 3 numerical failure.

Configuration layout::

    [system]
    preset = "qubit"            # or "three_level"; omit to give matrices
    delta = 1.0                 # qubit
    e1 = 1.0                    # three_level
    e2 = 2.5
    coupling = "sigma_x"        # "sigma_x" | "sigma_z" | "zero"
    # h_real / h_imag / coupling_real / coupling_imag: nested arrays

    [bath]
    beta = 1.0
    family = { n = 0, m = 1, c1 = 1.0 }   # or tabulated = "J.txt"

    [run]
    lambdas = [0.1]
    generator = "davies"        # davies | resonance | M | M_d | free
    initial_state = "excited"   # excited | ground | plus | gibbs | {real, imag}
    time_grid = { kind = "log", t_max = 100.0, n_points = 64 }
    tolerances = { choi = 1e-9, trace = 1e-10, hermiticity = 1e-12 }
    oracle = { n_modes = 6, omega_max = 4.0, cutoff = 3 }
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from .davies import Propagator, Superoperator, build_davies, cpt_report
from .dynamics import (default_time_grid, log_time_grid, populations, propagate,
                       resonance_trajectory)
from .equilibrium import gibbs, reduced_gibbs_second_order, renormalized_generators
from .errors import (ConfigError, DiagonalizabilityError, DomainError, OracleError,
                     QuadratureError, ResMarkovError, StructuralError)
from .experiments import OracleSettings, compare_with_oracle, invariant_suite, standard_states
from .model import AnalyticFamily, BathSpec, SystemSpec, Tabulated, named_coupling, qubit, three_level
from .resonance import level_shift, resonance_energies

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = ["RunConfig", "load_config", "parse_config", "load_generator", "main"]

FLOAT_FMT = "%.17g"

_SCHEMA: Dict[str, Any] = {
    "system": {"preset", "delta", "e1", "e2", "coupling",
               "h_real", "h_imag", "coupling_real", "coupling_imag"},
    "bath": {"beta", "family", "tabulated"},
    "run": {"lambdas", "generator", "initial_state", "time_grid", "tolerances", "oracle", "n_nodes"},
}
_SUB = {
    ("bath", "family"): {"n", "m", "c1"},
    ("run", "time_grid"): {"kind", "t_max", "n_points"},
    ("run", "tolerances"): {"choi", "trace", "hermiticity", "cond_max"},
    ("run", "oracle"): {"n_modes", "omega_max", "cutoff", "thermal_tail", "max_tail_mass",
                        "omega_tail_tol", "dim_cap", "n_times", "floor_modes"},
    ("run", "initial_state"): {"real", "imag"},
}
GENERATORS = ("davies", "resonance", "M", "M_d", "free")


@dataclass(frozen=True)
class Tolerances:
    choi: float = 1e-9
    trace: float = 1e-10
    hermiticity: float = 1e-12
    cond_max: float = 1e8


@dataclass(frozen=True)
class TimeGrid:
    kind: str = "default"
    t_max: Optional[float] = None
    n_points: int = 64

    def times(self, lam: float, gamma_fgr: float) -> np.ndarray:
        if self.t_max is None:
            if lam != 0 and gamma_fgr > 0:
                t_max = 20.0 / (lam ** 2 * gamma_fgr)
            else:
                t_max = 100.0
        else:
            t_max = self.t_max
        if self.kind == "linear":
            return np.linspace(0.0, t_max, self.n_points)
        if self.kind == "default" and self.t_max is None and lam != 0 and gamma_fgr > 0:
            return default_time_grid(lam, gamma_fgr, self.n_points)
        return log_time_grid(t_max, self.n_points)


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration."""

    h_sys: np.ndarray
    coupling: np.ndarray
    bath: BathSpec
    lambdas: List[float] = field(default_factory=lambda: [0.1])
    generator: str = "davies"
    initial_state: Any = "excited"
    time_grid: TimeGrid = TimeGrid()
    tolerances: Tolerances = Tolerances()
    oracle: OracleSettings = OracleSettings()
    n_nodes: int = 64

    def system(self) -> SystemSpec:
        return SystemSpec.from_matrices(self.h_sys, self.coupling, self.tolerances.hermiticity)


def _check_keys(table: dict, allowed: set, where: str):
    if not isinstance(table, dict):
        raise ConfigError(f"[{where}] must be a table")
    extra = sorted(set(table) - allowed)
    if extra:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(extra)}")


def _num(table: dict, key: str, where: str, default=None, positive=False, integer=False):
    if key not in table:
        if default is None:
            raise ConfigError(f"missing key {where}.{key}")
        return default
    v = table[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or (integer and not isinstance(v, int)):
        raise ConfigError(f"{where}.{key} must be {'an integer' if integer else 'a number'}, got {v!r}")
    if not math.isfinite(v) or (positive and v <= 0):
        raise ConfigError(f"{where}.{key} must be {'positive' if positive else 'finite'}, got {v!r}")
    return v


def _matrix(table: dict, prefix: str, where: str) -> np.ndarray:
    try:
        re = np.array(table[prefix + "_real"], dtype=float)
        im = np.array(table.get(prefix + "_imag", np.zeros_like(re)), dtype=float)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{where}.{prefix}_real/_imag must be nested numeric arrays ({exc})") from None
    if re.ndim != 2 or re.shape[0] != re.shape[1] or im.shape != re.shape:
        raise ConfigError(f"{where}.{prefix} must be a square matrix, got shapes {re.shape} / {im.shape}")
    return re + 1j * im


def _system_matrices(t: dict):
    _check_keys(t, _SCHEMA["system"], "system")
    preset = t.get("preset")
    if preset is None:
        if "h_real" not in t:
            raise ConfigError("[system] needs either preset or h_real")
        h = _matrix(t, "h", "system")
    elif preset == "qubit":
        h = np.diag([0.0, _num(t, "delta", "system", 1.0)]).astype(complex)
    elif preset == "three_level":
        h = np.diag([0.0, _num(t, "e1", "system", 1.0), _num(t, "e2", "system", 2.5)]).astype(complex)
    else:
        raise ConfigError(f"system.preset must be 'qubit' or 'three_level', got {preset!r}")
    if "coupling_real" in t:
        if "coupling" in t:
            raise ConfigError("give either system.coupling or system.coupling_real, not both")
        g = _matrix(t, "coupling", "system")
    else:
        name = t.get("coupling", "sigma_x")
        try:
            g = named_coupling(name, h.shape[0])
        except DomainError as exc:
            raise ConfigError(f"system.coupling: {exc}") from None
    if g.shape != h.shape:
        raise ConfigError(f"system coupling shape {g.shape} differs from Hamiltonian {h.shape}")
    return h, g


def _bath(t: dict, base: Path) -> BathSpec:
    _check_keys(t, _SCHEMA["bath"], "bath")
    beta = _num(t, "beta", "bath", positive=True)
    if "family" in t and "tabulated" in t:
        raise ConfigError("give either bath.family or bath.tabulated, not both")
    try:
        if "tabulated" in t:
            path = Path(t["tabulated"])
            path = path if path.is_absolute() else base / path
            if not path.exists():
                raise ConfigError(f"bath.tabulated file not found: {path}")
            ff = Tabulated.from_file(path)
        else:
            fam = t.get("family", {})
            _check_keys(fam, _SUB[("bath", "family")], "bath.family")
            ff = AnalyticFamily(_num(fam, "n", "bath.family", 0, integer=True),
                                _num(fam, "m", "bath.family", 1, integer=True),
                                _num(fam, "c1", "bath.family", 1.0, positive=True))
        return BathSpec(float(beta), ff)
    except DomainError as exc:
        raise ConfigError(f"[bath]: {exc}") from None


def _run(t: dict) -> dict:
    _check_keys(t, _SCHEMA["run"], "run")
    out: Dict[str, Any] = {}
    lams = t.get("lambdas", [0.1])
    if not isinstance(lams, list) or not lams or not all(
            isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x) and x >= 0
            for x in lams):
        raise ConfigError(f"run.lambdas must be a non-empty list of non-negative numbers, got {lams!r}")
    out["lambdas"] = [float(x) for x in lams]
    gen = t.get("generator", "davies")
    if gen not in GENERATORS:
        raise ConfigError(f"run.generator must be one of {GENERATORS}, got {gen!r}")
    out["generator"] = gen
    st = t.get("initial_state", "excited")
    if isinstance(st, dict):
        _check_keys(st, _SUB[("run", "initial_state")], "run.initial_state")
        st = _matrix({"s_real": st.get("real"), "s_imag": st.get("imag", np.zeros_like(
            np.array(st.get("real"), dtype=float)))}, "s", "run.initial_state")
    elif st not in ("excited", "ground", "plus", "gibbs"):
        raise ConfigError(f"run.initial_state must be excited/ground/plus/gibbs or a matrix, got {st!r}")
    out["initial_state"] = st
    tg = t.get("time_grid", {})
    _check_keys(tg, _SUB[("run", "time_grid")], "run.time_grid")
    kind = tg.get("kind", "default")
    if kind not in ("default", "log", "linear"):
        raise ConfigError(f"run.time_grid.kind must be default/log/linear, got {kind!r}")
    t_max = _num(tg, "t_max", "run.time_grid", positive=True) if "t_max" in tg else None
    out["time_grid"] = TimeGrid(kind, t_max, _num(tg, "n_points", "run.time_grid", 64,
                                                  positive=True, integer=True))
    tol = t.get("tolerances", {})
    _check_keys(tol, _SUB[("run", "tolerances")], "run.tolerances")
    d = Tolerances()
    out["tolerances"] = Tolerances(**{k: float(_num(tol, k, "run.tolerances", getattr(d, k), positive=True))
                                      for k in ("choi", "trace", "hermiticity", "cond_max")})
    orc = t.get("oracle", {})
    _check_keys(orc, _SUB[("run", "oracle")], "run.oracle")
    od = OracleSettings()
    kw = {}
    for k, integer in (("n_modes", True), ("omega_max", False), ("cutoff", True),
                       ("thermal_tail", False), ("max_tail_mass", False), ("omega_tail_tol", False),
                       ("dim_cap", True), ("n_times", True), ("floor_modes", True)):
        if k in orc:
            kw[k] = _num(orc, k, "run.oracle", positive=True, integer=integer)
        else:
            kw[k] = getattr(od, k)
    out["oracle"] = OracleSettings(**kw)
    out["n_nodes"] = _num(t, "n_nodes", "run", 64, positive=True, integer=True)
    return out


def parse_config(data: dict, base: Path = Path(".")) -> RunConfig:
    """Validate a parsed TOML document."""
    _check_keys(data, set(_SCHEMA), "top level")
    if "system" not in data or "bath" not in data:
        raise ConfigError("configuration needs [system] and [bath] sections")
    h, g = _system_matrices(data["system"])
    return RunConfig(h, g, _bath(data["bath"], base), **_run(data.get("run", {})))


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}") from None
    return parse_config(data, path.parent)


def default_config() -> RunConfig:
    return parse_config({"system": {"preset": "qubit"}, "bath": {"beta": 1.0}})


# ---------------------------------------------------------------------------
# output helpers


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return FLOAT_FMT % float(x)


def _write_csv(path: Path, header: Sequence[str], rows, comments: Sequence[str] = ()):
    with open(path, "w", newline="") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])


def _cmat(m: np.ndarray) -> dict:
    m = np.asarray(m, dtype=complex)
    return {"real": m.real.tolist(), "imag": m.imag.tolist()}


def _from_cmat(d: dict) -> np.ndarray:
    return np.array(d["real"], dtype=float) + 1j * np.array(d["imag"], dtype=float)


def _write_json(path: Path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, allow_nan=True)
        fh.write("\n")


def load_generator(path) -> Dict[str, Any]:
    """Read ``generator.json`` back into superoperators and matrices."""
    with open(path) as fh:
        d = json.load(fh)
    return {
        "lambda": d["lambda"],
        "k": Superoperator(_from_cmat(d["K"])),
        "total": Superoperator(_from_cmat(d["generator"])),
        "lamb_shift": _from_cmat(d["lamb_shift"]),
        "h_sys": _from_cmat(d["system"]["h_sys"]),
        "coupling": _from_cmat(d["system"]["coupling"]),
        "jumps": [dict(omega=j["omega"], rate=j["rate"], lamb=j["lamb"],
                       operator=_from_cmat(j["operator"])) for j in d["jumps"]],
    }


def _initial_state(cfg: RunConfig, sys_: SystemSpec) -> np.ndarray:
    st = cfg.initial_state
    if isinstance(st, np.ndarray):
        if st.shape != (sys_.dim, sys_.dim):
            raise ConfigError(f"run.initial_state has shape {st.shape}, system is {sys_.dim}-level")
        if not np.allclose(st, st.conj().T, atol=1e-12) or np.linalg.eigvalsh(st).min() < -1e-12 \
                or abs(np.trace(st) - 1) > 1e-10:
            raise ConfigError("run.initial_state is not a density matrix")
        return st
    if st == "gibbs":
        return gibbs(sys_.h_sys, cfg.bath.beta).rho
    if st == "ground":
        v = sys_.eigvecs[:, :1]
        return v @ v.conj().T
    return standard_states(sys_)[st]


# ---------------------------------------------------------------------------
# commands


def cmd_generator(cfg: RunConfig, out: Path, seed: int) -> int:
    sys_ = cfg.system()
    lam = cfg.lambdas[0]
    dav = build_davies(sys_, cfg.bath, lam)
    _write_json(out / "generator.json", {
        "lambda": lam,
        "beta": cfg.bath.beta,
        "system": {"h_sys": _cmat(sys_.h_sys), "coupling": _cmat(sys_.coupling)},
        "K": _cmat(dav.k_super.matrix),
        "generator": _cmat(dav.total.matrix),
        "lamb_shift": _cmat(dav.lamb_shift),
        "jumps": [{"omega": j.omega, "rate": j.rate, "lamb": j.lamb, "operator": _cmat(j.operator)}
                  for j in dav.jumps],
    })
    rd = resonance_energies(level_shift(dav), lam)
    prop = Propagator(dav.total, cfg.tolerances.cond_max)
    rows, bad = [], []
    for t in cfg.time_grid.times(lam, rd.gamma_fgr):
        r = cpt_report(prop(t), seed=seed)
        ok = r.ok(cfg.tolerances.choi, cfg.tolerances.trace)
        rows.append((t, r.min_choi_eig, r.trace_dev, r.herm_dev, int(ok)))
        if not ok:
            bad.append(t)
    _write_csv(out / "cpt_report.csv", ("t", "min_choi_eig", "trace_dev", "herm_dev", "ok"), rows)
    if bad:
        raise _NumericFailure(f"complete positivity / trace preservation fails at t = {bad[0]:.6g}")
    return 0


def cmd_resonances(cfg: RunConfig, out: Path, seed: int) -> int:
    sys_ = cfg.system()
    rows, summary = [], []
    lso = level_shift(build_davies(sys_, cfg.bath, 0.0))
    for lam in cfg.lambdas:
        rd = resonance_energies(lso, lam)
        for en in rd.entries:
            eps = en.epsilon(lam)
            rows.append((lam, en.e, en.s, en.a.real, en.a.imag, eps.real, eps.imag))
        summary.append(f"lambda={_fmt(lam)} gamma_lambda={_fmt(rd.gamma_lambda)} "
                       f"gamma_fgr={_fmt(rd.gamma_fgr)} fgr_holds={int(rd.fgr_holds)}")
    _write_csv(out / "resonances.csv", ("lambda", "e", "s", "re_a", "im_a", "re_eps", "im_eps"),
               rows, summary)
    return 0


def _trajectory(cfg: RunConfig, sys_: SystemSpec, lam: float, rho0: np.ndarray):
    dav = build_davies(sys_, cfg.bath, lam)
    rd = resonance_energies(level_shift(dav), lam)
    times = cfg.time_grid.times(lam, rd.gamma_fgr)
    gen = cfg.generator
    cm = cfg.tolerances.cond_max
    if gen == "davies":
        return propagate(Propagator(dav.total, cm), rho0, times)
    if gen == "free":
        return propagate(Propagator(dav.l_sys, cm), rho0, times, "free")
    rho_l = reduced_gibbs_second_order(sys_, cfg.bath, lam, cfg.n_nodes)
    if gen == "resonance":
        return resonance_trajectory(rd, rho_l.rho, rho0, times)
    gens = renormalized_generators(sys_, cfg.bath, lam, rho_lambda=rho_l)
    if gen == "M":
        return propagate(Propagator(gens.m, cm), rho0, times, "M(lambda)")
    return propagate(Propagator((lam ** 2) * gens.m_d, cm), rho0, times, "M_d populations")


def cmd_propagate(cfg: RunConfig, out: Path, seed: int) -> int:
    sys_ = cfg.system()
    rho0 = _initial_state(cfg, sys_)
    n = sys_.dim
    idx = [(k, l) for k in range(n) for l in range(n)]
    header = (["lambda", "t"] + [f"re_{k}{l}" for k, l in idx] + [f"im_{k}{l}" for k, l in idx]
              + ["trace"] + [f"pop_{k}" for k in range(n)])
    rows = []
    for lam in cfg.lambdas:
        tr = _trajectory(cfg, sys_, lam, rho0)
        pops = populations(tr, sys_.eigvecs)
        for t, s, p in zip(tr.times, tr.states, pops):
            v = s.reshape(-1)
            rows.append([lam, t, *v.real, *v.imag, np.trace(s).real, *p])
    _write_csv(out / "trajectory.csv", header, rows, [f"generator={cfg.generator}"])
    return 0


def cmd_equilibrium(cfg: RunConfig, out: Path, seed: int) -> int:
    sys_ = cfg.system()
    rho0 = gibbs(sys_.h_sys, cfg.bath.beta).rho
    res = {"beta": cfg.bath.beta, "rho_0": _cmat(rho0), "entries": []}
    for lam in cfg.lambdas:
        rho_l = reduced_gibbs_second_order(sys_, cfg.bath, lam, cfg.n_nodes)
        entry = {"lambda": lam, "rho_lambda": _cmat(rho_l.rho)}
        if lam > 0:
            entry["rho_2"] = _cmat((rho_l.rho - rho0) / lam ** 2)
            gens = renormalized_generators(sys_, cfg.bath, lam, rho_lambda=rho_l)
            k = build_davies(sys_, cfg.bath, lam).k_super
            entry.update({
                "h_tilde": _cmat(gens.system.h_tilde),
                "e_tilde": gens.system.e_tilde.tolist(),
                "m_d": _cmat(gens.m_d.matrix),
                "m_d_minus_k_fro": (gens.m_d - k).norm(),
                "stationarity_residual": float(np.linalg.norm(gens.m.matrix @ rho_l.rho.reshape(-1))),
            })
        res["entries"].append(entry)
    _write_json(out / "equilibrium.json", res)
    return 0


def cmd_compare_oracle(cfg: RunConfig, out: Path, seed: int) -> int:
    sys_ = cfg.system()
    res = compare_with_oracle(sys_, cfg.bath, cfg.lambdas, cfg.oracle, n_nodes=cfg.n_nodes)
    names = ("davies", "resonance_wt", "m_lambda", "md_populations", "davies_populations")
    _write_csv(out / "comparison.csv", ("lambda", "state", "t") + names,
               [[r["lambda"], r["state"], r["t"]] + [r[k] for k in names] for r in res.rows])
    _write_json(out / "scaling.json", res.scaling())
    return 0


def cmd_validate(cfg: RunConfig, out: Path, seed: int) -> int:
    rows = []
    herm = {"H_S hermitian": cfg.h_sys, "coupling hermitian": cfg.coupling}
    for name, m in herm.items():
        dev = float(np.max(np.abs(m - m.conj().T)))
        rows.append((name, dev, cfg.tolerances.hermiticity, dev <= cfg.tolerances.hermiticity, math.nan))
    if all(r[3] for r in rows):
        sys_ = cfg.system()
        for lam in cfg.lambdas:
            for c in invariant_suite(sys_, cfg.bath, lam, seed=seed):
                rows.append((c.name, c.value, c.threshold, c.passed, lam))
    _write_csv(out / "validation.csv", ("invariant", "value", "threshold", "pass", "lambda"),
               [(n, v, t, "PASS" if p else "FAIL", lam) for n, v, t, p, lam in rows])
    failed = [r[0] for r in rows if not r[3]]
    for n, v, t, p, lam in rows:
        print(f"{'PASS' if p else 'FAIL'}  {n}  value={v:.3e} threshold={t:.3e}")
    if failed:
        raise _NumericFailure("invariant failed: " + "; ".join(dict.fromkeys(failed)))
    return 0


COMMANDS = {
    "generator": cmd_generator,
    "resonances": cmd_resonances,
    "propagate": cmd_propagate,
    "equilibrium": cmd_equilibrium,
    "compare-oracle": cmd_compare_oracle,
    "validate": cmd_validate,
}


class _NumericFailure(ResMarkovError):
    pass


NUMERIC_ERRORS = (_NumericFailure, QuadratureError, StructuralError, DiagonalizabilityError,
                  OracleError, np.linalg.LinAlgError, ArithmeticError)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="resmarkov", description=__doc__.split("\n\n")[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", type=Path, help="TOML run configuration (default: qubit, beta = 1)")
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")
    p.add_argument("--seed", type=int, default=0, help="seed for random test states")
    p.add_argument("--threads", type=int, default=None, help="BLAS thread limit")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else default_config()
        if args.command != "validate":
            try:
                cfg.system()
            except DomainError as exc:
                raise ConfigError(f"[system]: {exc}") from None
        args.out.mkdir(parents=True, exist_ok=True)
        if args.threads is not None:
            from threadpoolctl import threadpool_limits
            with threadpool_limits(limits=args.threads):
                return COMMANDS[args.command](cfg, args.out, args.seed)
        return COMMANDS[args.command](cfg, args.out, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NUMERIC_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (DomainError, ValueError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
