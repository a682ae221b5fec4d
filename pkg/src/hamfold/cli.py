"""``hamfold`` command-line front end."""

from __future__ import annotations

import argparse
import csv
import io
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import acceptance, report
from .brackets import build_FG, check_bracket_axioms
from .dirac import build_constraints, count_primary_constraints, verify_equivalence
from .dynamics import classify_bundle, integrate, probe_points, residual_noncanonical_eom
from .errors import ConfigError, CriterionFailed, HamfoldError
from .legendre import HamiltonianBundle, PhasePoint
from .library import get, library
from .model import LagrangianSystem, analyze_hessian, load_model
from .multitime import MultiTimeSystem, TimePath, check_integrability, integrate_path, random_probes

COMMANDS = ("analyze", "simulate", "brackets", "dirac", "multitime", "selftest")
DEFAULT_SEED = 42
NONCANONICAL_EOM_TOL = 1e-4
AXIOM_TOLS = {"antisymmetry": 1e-12, "leibniz": 1e-8, "jacobi": 1e-5}


@dataclass
class RunConfig:
    command: str
    model: str | None = None
    np: int | None = None
    seed: int = DEFAULT_SEED
    samples: int = 100
    tol: float | None = None
    t1: float = 10.0
    dt: float = 1e-3
    method: str = "rk4"
    ic: dict | None = None
    gauge: tuple[float, ...] | None = None
    out: Path | None = None
    path: Path | None = None
    only: tuple[str, ...] | None = None
    fail_fast: bool = False

    def validate(self) -> None:
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.command != "selftest" and not self.model:
            raise ConfigError(f"{self.command} needs a model name or file")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ConfigError("--dt must be positive")
        if not (self.t1 > 0 and math.isfinite(self.t1)):
            raise ConfigError("--t1 must exceed the initial time 0")
        if self.samples < 1:
            raise ConfigError("--samples must be at least 1")
        if self.tol is not None and not self.tol > 0:
            raise ConfigError("--tol must be positive")
        if self.method not in ("rk4", "rk45"):
            raise ConfigError("--method must be rk4 or rk45")
        if self.command == "multitime" and self.path is None:
            raise ConfigError("multitime needs --path")
        if self.only:
            unknown = [c for c in self.only if c not in acceptance.CRITERIA]
            if unknown:
                raise ConfigError(f"unknown criteria: {', '.join(unknown)}")


def _parse_ic(text: str) -> dict:
    out = {}
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        key, sep, val = item.partition("=")
        key = key.strip()
        if not sep or not key or not (key[:2] == "qd" and key[2:].isdigit() or key[0] in "qp" and key[1:].isdigit()):
            raise ConfigError(f"bad --ic entry {item!r} (expected q<k>=v, qd<k>=v or p<k>=v)")
        try:
            out[key] = float(val)
        except ValueError:
            raise ConfigError(f"bad --ic value in {item!r}") from None
    return out


def _parse_vector(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"bad vector {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hamfold", description="Partial Hamiltonian analysis of Lagrangian models.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("model", nargs="?", help="library name or model file")
    ap.add_argument("--np", type=int, dest="np", help="number of canonical coordinates (default: Hessian rank)")
    ap.add_argument("--seed", type=int, help="random seed (fallback: HAMFOLD_SEED, then 42)")
    ap.add_argument("--samples", type=int, default=100, help="random points for bracket and constraint checks")
    ap.add_argument("--tol", type=float, help="consistency tolerance (simulate) or integrability threshold (multitime)")
    ap.add_argument("--t1", type=float, default=10.0)
    ap.add_argument("--dt", type=float, default=1e-3)
    ap.add_argument("--method", default="rk4", choices=("rk4", "rk45"))
    ap.add_argument("--ic", help="initial data, e.g. q1=1,qd2=0.5,p1=0")
    ap.add_argument("--gauge", help="gauge velocities, comma separated")
    ap.add_argument("--out", type=Path, help="output directory")
    ap.add_argument("--path", type=Path, help="waypoint file for multitime")
    ap.add_argument("--only", help="selftest: comma-separated criterion ids")
    ap.add_argument("--fail-fast", action="store_true", help="selftest: stop at the first failing criterion")
    return ap


def config_from_args(argv=None) -> RunConfig:
    a = build_parser().parse_args(argv)
    seed = a.seed
    if seed is None:
        env = os.environ.get("HAMFOLD_SEED")
        try:
            seed = int(env) if env else DEFAULT_SEED
        except ValueError:
            raise ConfigError(f"HAMFOLD_SEED must be an integer, got {env!r}") from None
    return RunConfig(
        command=a.command,
        model=a.model,
        np=a.np,
        seed=seed,
        samples=a.samples,
        tol=a.tol,
        t1=a.t1,
        dt=a.dt,
        method=a.method,
        ic=_parse_ic(a.ic) if a.ic else None,
        gauge=_parse_vector(a.gauge) if a.gauge else None,
        out=a.out,
        path=a.path,
        only=tuple(s.strip() for s in a.only.split(",") if s.strip()) if a.only else None,
        fail_fast=a.fail_fast,
    )


# ---------------------------------------------------------------------------
# helpers


def _load(cfg: RunConfig) -> tuple[LagrangianSystem, object]:
    p = Path(cfg.model)
    if p.is_file():
        return load_model(p), None
    entry = get(cfg.model)
    return entry.system, entry


def _bundle(cfg: RunConfig, system: LagrangianSystem) -> HamiltonianBundle:
    if cfg.np is not None and not 0 <= cfg.np <= system.n:
        raise ConfigError(f"--np must lie in 0..{system.n}")
    return HamiltonianBundle(system, analyze_hessian(system, n_p=cfg.np, seed=cfg.seed))


def _initial_point(cfg: RunConfig, system, entry, bundle: HamiltonianBundle) -> PhasePoint:
    n = system.n
    q = np.array(entry.q0 if entry else np.zeros(n), dtype=float)
    qd = np.array(entry.qd0 if entry else np.zeros(n), dtype=float)
    given_p = {}
    for key, val in (cfg.ic or {}).items():
        kind, k = ("qd", int(key[2:])) if key.startswith("qd") else (key[0], int(key[1:]))
        if not 1 <= k <= n:
            raise ConfigError(f"--ic entry {key} outside 1..{n}")
        idx = system.coords.index(f"q{k}") if f"q{k}" in system.coords else k - 1
        if kind == "q":
            q[idx] = val
        elif kind == "qd":
            qd[idx] = val
        else:
            given_p[idx] = val
    x = bundle.point_from_lagrangian(0.0, q, qd)
    if given_p:
        p = x.p.copy()
        for idx, val in given_p.items():
            if idx not in bundle.C:
                raise ConfigError(f"p{idx + 1} is not a canonical momentum for this partition")
            p[bundle.C.index(idx)] = val
        x = x.replace(p=p)
    return x


def _out_dir(cfg: RunConfig, default: str) -> Path:
    d = cfg.out if cfg.out is not None else Path(default)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _emit(obj, out_dir: Path | None, filename: str) -> None:
    """Print the report and, when a directory is given, save it there too."""
    text = report.dumps(obj)
    sys.stdout.write(text)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / filename).write_text(text, encoding="utf-8")


def _fail_checks(command: str, checks: dict) -> None:
    bad = [k for k, v in checks.items() if not v]
    if bad:
        raise CriterionFailed(f"{command} checks failed: {', '.join(bad)}")


# ---------------------------------------------------------------------------
# commands


def cmd_analyze(cfg: RunConfig) -> int:
    system, entry = _load(cfg)
    b = _bundle(cfg, system)
    out = {"model": system.name, "coords": list(system.coords), "partition": b.partition.report(), "regime": b.regime}
    checks = {}
    if b.nondynamical:
        cls = classify_bundle(b)
        out["classification"] = cls.as_dict()
        out["probes"] = []
        for x in probe_points(b):
            fg = build_FG(b, x)
            out["probes"].append({"t": x.t, "q": b.full_q(x), "p": x.p, "F": fg.F, "G": fg.G, "r_F": fg.r_F})
        if entry is not None and cfg.np is None:
            checks = {"r_W": b.partition.r_W == entry.expected_r_W, "classification": cls.kind == entry.expected_kind}
    elif entry is not None and cfg.np is None:
        checks = {"r_W": b.partition.r_W == entry.expected_r_W}
    if checks:
        out["library_checks"] = checks
    _emit(out, cfg.out, "analyze.json")
    _fail_checks("analyze", checks)
    return 0


def cmd_simulate(cfg: RunConfig) -> int:
    system, entry = _load(cfg)
    b = _bundle(cfg, system)
    x0 = _initial_point(cfg, system, entry, b)
    kw = {} if cfg.tol is None else {"tol": cfg.tol}
    tr = integrate(b, x0, cfg.t1, cfg.dt, method=cfg.method, gauge_input=cfg.gauge, **kw)
    d = _out_dir(cfg, "hamfold_out")
    (d / "trajectory.csv").write_text(tr.to_csv(), encoding="utf-8")
    time_dep = entry.time_dependent if entry is not None else "t" in system.L.symbols
    diag = {
        "model": system.name,
        "regime": b.regime,
        "partition": b.partition.report(),
        "method": cfg.method,
        "t1": cfg.t1,
        "dt": cfg.dt,
        "steps": len(tr) - 1,
        "endpoint": {"t": tr.times[-1], "q": tr.q[-1], "p": tr.p[-1]},
        "r_F": sorted({int(r) for r in tr.r_F}),
        "max_consistency_residual": float(np.max(tr.consistency)),
    }
    checks = {}
    if time_dep:
        diag["H0_drift"] = None
        diag["H0_drift_skipped"] = "H0 depends on t explicitly"
    else:
        diag["H0_drift"] = float(np.max(np.abs(tr.H0 - tr.H0[0])))
    if len(tr) >= 3:
        _, r = residual_noncanonical_eom(b, tr)
        diag["noncanonical_eom_max"] = float(np.max(r)) if r.size else 0.0
        checks["noncanonical_eom"] = diag["noncanonical_eom_max"] <= NONCANONICAL_EOM_TOL
    diag["error"] = tr.error.record() if tr.error is not None else None
    diag["checks"] = checks
    _emit(diag, d, "diagnostics.json")
    if tr.error is not None:
        raise tr.error
    _fail_checks("simulate", checks)
    return 0


def cmd_brackets(cfg: RunConfig) -> int:
    system, _ = _load(cfg)
    b = _bundle(cfg, system)
    if b.m == 0:
        kind = "poisson"
    else:
        kind = "nongauge" if classify_bundle(b).kind == "nongauge" else "gauge"
    rep = check_bracket_axioms(kind, b, n_points=cfg.samples, n_triples=50, seed=cfg.seed)
    out = rep.as_dict()
    checks = {k: out[k] <= tol for k, tol in AXIOM_TOLS.items()}
    out["checks"] = checks
    _emit(out, cfg.out, "brackets.json")
    _fail_checks("brackets", checks)
    return 0


def cmd_dirac(cfg: RunConfig) -> int:
    system, _ = _load(cfg)
    b = _bundle(cfg, system)
    build_constraints(b)
    rep = verify_equivalence(b, n_points=cfg.samples, n_pairs=50, seed=cfg.seed)
    out = rep.as_dict()
    out["overextension"] = {str(k): count_primary_constraints(system, k, seed=cfg.seed) for k in range(b.n_p, system.n + 1)}
    checks = {"F": rep.F_residual <= 1e-9, "H0_signed": rep.H0_residual_signed <= 1e-9}
    if rep.dirac_vs_nongauge is not None:
        checks["dirac_vs_nongauge"] = rep.dirac_vs_nongauge <= 1e-8
    out["checks"] = checks
    _emit(out, cfg.out, "dirac.json")
    _fail_checks("dirac", checks)
    return 0


def cmd_multitime(cfg: RunConfig) -> int:
    system, entry = _load(cfg)
    b = _bundle(cfg, system)
    ms = MultiTimeSystem.from_model(b, seed=cfg.seed)
    path = TimePath.load(cfg.path)
    x0 = _initial_point(cfg, system, entry, b)
    res = integrate_path(ms, x0.q_c, x0.p, path, cfg.dt)
    integ = check_integrability(ms, random_probes(ms, cfg.samples, seed=cfg.seed))
    thresh = 1e-10 if cfg.tol is None else cfg.tol
    d = _out_dir(cfg, "hamfold_out")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["s", *ms.time_labels, *ms.labels, *("p" + c[1:] for c in ms.labels)])
    for k in range(len(res.s)):
        w.writerow([format(float(v), ".17g") for v in (res.s[k], *res.tau[k], *res.q_trace[k], *res.p_trace[k])])
    (d / "path.csv").write_text(buf.getvalue(), encoding="utf-8")
    out = {
        "model": system.name,
        "times": list(ms.time_labels),
        "waypoints": path.waypoints,
        "endpoint": {"q": res.q, "p": res.p},
        "integrability": integ.as_dict(),
        "integrable": integ.max_residual <= thresh,
    }
    _emit(out, d, "multitime.json")
    return 0


def cmd_selftest(cfg: RunConfig) -> int:
    for e in library():
        e.system  # fail early on a broken library entry

    def show(r):
        print(r.line(), flush=True)

    results = acceptance.run(cfg.only, seed=cfg.seed, fail_fast=cfg.fail_fast, on_result=show)
    summ = acceptance.summary(results, cfg.seed)
    d = _out_dir(cfg, "hamfold_selftest")
    report.write(d / "report.json", summ)
    if summ["failed"]:
        first = summ["failed"][0]
        raise CriterionFailed(f"criterion {first} failed ({len(summ['failed'])} of {len(results)} failing: {', '.join(summ['failed'])})")
    return 0


HANDLERS = {
    "analyze": cmd_analyze,
    "simulate": cmd_simulate,
    "brackets": cmd_brackets,
    "dirac": cmd_dirac,
    "multitime": cmd_multitime,
    "selftest": cmd_selftest,
}


def run(cfg: RunConfig) -> int:
    try:
        cfg.validate()
        return HANDLERS[cfg.command](cfg)
    except HamfoldError as e:
        sys.stdout.flush()
        print(e.record(), file=sys.stderr)
        return e.code


def main(argv=None) -> int:
    try:
        cfg = config_from_args(argv)
    except HamfoldError as e:
        print(e.record(), file=sys.stderr)
        return e.code
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
