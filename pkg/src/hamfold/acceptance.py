"""Acceptance checks shared by ``hamfold selftest`` and the test suite.

Each check returns a :class:`CriterionResult` holding a single metric
compared against a single tolerance.  Trajectories are cached on a
:class:`Context`, so checks that reuse a run do not pay for it twice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import report
from .brackets import build_FG, check_bracket_axioms, random_point
from .dirac import build_constraints, count_primary_constraints, integrate_extended, verify_equivalence
from .dynamics import classify_bundle, decompose, integrate, project_consistent, residual_noncanonical_eom
from .errors import HamfoldError, InconsistentSystem
from .legendre import HamiltonianBundle, PhasePoint
from .library import get, library
from .model import analyze_hessian
from .multitime import MultiTimeSystem, TimePath, check_integrability, integrate_path, random_probes
from .reference import full_momenta, reference_euler_lagrange, reference_full_hamilton

T_LONG = 10.0
T_GAUGE = 5.0
DT = 1e-3


@dataclass
class CriterionResult:
    id: str
    title: str
    passed: bool
    metric: float | None
    tol: float | None
    relation: str = "<="
    detail: dict = field(default_factory=dict)
    error: str | None = None

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        m = "n/a" if self.metric is None else format(self.metric, ".3e")
        t = "" if self.tol is None else f" (needs {self.relation} {self.tol:.0e})"
        err = f" error: {self.error}" if self.error else ""
        return f"{tag} {self.id} {self.title}: {m}{t}{err}"

    def as_dict(self) -> dict:
        return {
            "id": self.id,
            "title": self.title,
            "passed": self.passed,
            "metric": self.metric,
            "tol": self.tol,
            "relation": self.relation,
            "detail": self.detail,
            "error": self.error,
        }


def _result(cid, title, metric, tol, detail=None, relation="<=") -> CriterionResult:
    metric = float(metric)
    ok = metric <= tol if relation == "<=" else metric > tol
    return CriterionResult(cid, title, bool(ok and math.isfinite(metric)), metric, tol, relation, detail or {})


def _flag(cid, title, ok: bool, detail=None) -> CriterionResult:
    return CriterionResult(cid, title, bool(ok), None, None, "==", detail or {})


class Context:
    """Seed plus caches of bundles and trajectories."""

    def __init__(self, seed: int = 42):
        self.seed = int(seed)
        self._bundles: dict = {}
        self._traj: dict = {}

    def rng(self, salt: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, salt])

    def bundle(self, name: str, n_p: int | None = None) -> HamiltonianBundle:
        key = (name, n_p)
        if key not in self._bundles:
            s = get(name).system
            self._bundles[key] = HamiltonianBundle(s, analyze_hessian(s, n_p=n_p))
        return self._bundles[key]

    def initial_point(self, name: str, n_p: int | None = None) -> PhasePoint:
        e = get(name)
        return self.bundle(name, n_p).point_from_lagrangian(0.0, e.q0, e.qd0)

    def trajectory(self, name: str, n_p: int | None = None, t1: float = T_LONG, dt: float = DT, gauge=None):
        key = (name, n_p, t1, dt, None if gauge is None else tuple(gauge))
        if key not in self._traj:
            b = self.bundle(name, n_p)
            tr = integrate(b, self.initial_point(name, n_p), t1, dt, gauge_input=gauge)
            if tr.error is not None:
                raise tr.error
            self._traj[key] = tr
        return self._traj[key]

    def trajectories(self):
        return list(self._traj.items())


# runs every criterion relies on; criterion 9 checks all of them
STANDARD_RUNS = (
    ("osc1", 0, T_LONG, None),
    ("osc1", 1, T_LONG, None),
    ("osc2", 0, T_LONG, None),
    ("osc2", 1, T_LONG, None),
    ("osc2", 2, T_LONG, None),
    ("forced", 0, T_LONG, None),
    ("forced", 1, T_LONG, None),
    ("firstorder", None, 2 * math.pi, None),
    ("firstorder", None, T_LONG, None),
    ("gauge1", None, T_GAUGE, (0.0,)),
    ("gauge1", None, T_GAUGE, (0.3,)),
    ("rotgauge", None, T_GAUGE, (0.0,)),
    ("shiftosc", None, T_GAUGE, (0.0,)),
    ("tfirstorder", None, T_LONG, None),
)


def _el_error(ctx: Context, name: str, n_p: int) -> float:
    e = get(name)
    tr = ctx.trajectory(name, n_p)
    ref = reference_euler_lagrange(e.system, e.q0, e.qd0, T_LONG, DT, reduced=e.reduced_el)
    return float(np.max(np.abs(tr.q - ref.q)))


# -- 1, 2 -----------------------------------------------------------------------


def c1(ctx: Context) -> CriterionResult:
    errs = {}
    for name in ("osc1", "osc2"):
        for n_p in range(get(name).system.n + 1):
            errs[f"{name}/n_p={n_p}"] = _el_error(ctx, name, n_p)
    return _result("1", "partial formalism vs Euler-Lagrange, all n_p", max(errs.values()), 1e-6, errs)


def c2a(ctx: Context) -> CriterionResult:
    errs = {}
    for name in ("osc1", "osc2", "forced"):
        e = get(name)
        n = e.system.n
        b = ctx.bundle(name, n)
        tr = ctx.trajectory(name, n)
        p0 = full_momenta(e.system, 0.0, e.q0, e.qd0)
        ref = reference_full_hamilton(e.system, e.q0, p0, T_LONG, DT)
        p = np.empty_like(ref.p)
        p[:, b.C] = tr.p
        errs[name] = float(max(np.max(np.abs(tr.q - ref.q)), np.max(np.abs(p - ref.p))))
    return _result("2a", "n_p = n vs full Hamilton equations", max(errs.values()), 1e-10, errs)


def c2b(ctx: Context) -> CriterionResult:
    errs = {name: _el_error(ctx, name, 0) for name in ("osc1", "osc2", "forced")}
    return _result("2b", "n_p = 0 vs Lagrangian dynamics", max(errs.values()), 1e-6, errs)


# -- 3 firstorder -------------------------------------------------------------------


def c3a(ctx: Context) -> CriterionResult:
    c = classify_bundle(ctx.bundle("firstorder"))
    return _flag("3a", "firstorder classifies nongauge with r_F = 2", c.kind == "nongauge" and c.r_F == 2, c.as_dict())


def c3b(ctx: Context) -> CriterionResult:
    b = ctx.bundle("firstorder")
    rng = ctx.rng(3)
    F0 = np.array([[0.0, -1.0], [1.0, 0.0]])
    err = 0.0
    for _ in range(50):
        x = random_point(b, rng)
        fg = build_FG(b, x)
        err = max(err, float(np.max(np.abs(fg.F - F0))), float(np.max(np.abs(fg.G - x.q_nc))))
    return _result("3b", "firstorder F and G exact", err, 1e-12)


def c3c(ctx: Context) -> CriterionResult:
    tr = ctx.trajectory("firstorder", None, 2 * math.pi)
    err = float(np.max(np.abs(tr.q[-1] - np.array([1.0, 0.0]))))
    return _result("3c", "firstorder returns to (1,0) after 2 pi", err, 1e-5, {"endpoint": tr.q[-1]})


def c3d(ctx: Context) -> CriterionResult:
    tr = ctx.trajectory("firstorder")
    return _result("3d", "firstorder H0 drift over t = 10", float(np.max(np.abs(tr.H0 - tr.H0[0]))), 1e-8)


# -- 4 gauge1 -----------------------------------------------------------------------


def c4a(ctx: Context) -> CriterionResult:
    c = classify_bundle(ctx.bundle("gauge1"))
    return _flag("4a", "gauge1 classifies abelian-limit with F = 0", c.kind == "abelian-limit" and c.max_abs_F == 0.0, c.as_dict())


def c4b(ctx: Context) -> CriterionResult:
    b = ctx.bundle("gauge1")
    x = ctx.initial_point("gauge1").replace(p=np.array([0.3]))
    try:
        integrate(b, x, 1.0, DT)
    except InconsistentSystem as e:
        return _flag("4b", "gauge1 rejects p1 != 0", True, {"error": e.record()})
    return _flag("4b", "gauge1 rejects p1 != 0", False)


def c4c(ctx: Context) -> CriterionResult:
    tr = ctx.trajectory("gauge1", None, T_GAUGE, gauge=(0.0,))
    q1, q2 = get("gauge1").q0
    err = float(np.max(np.abs(tr.q[:, 0] - (q1 + q2 * tr.times))))
    return _result("4c", "gauge1 q1(t) = q1(0) + q2(0) t", err, 1e-8)


def c4d(ctx: Context) -> CriterionResult:
    a = ctx.trajectory("gauge1", None, T_GAUGE, gauge=(0.0,))
    b = ctx.trajectory("gauge1", None, T_GAUGE, gauge=(0.3,))
    moved = float(abs(b.q[-1, 1] - a.q[-1, 1]))
    p1 = float(max(np.max(np.abs(a.p)), np.max(np.abs(b.p))))
    # the gauge input must move q2; p1 must stay zero
    metric = p1 if moved > 1e-3 else math.inf
    return _result("4d", "gauge input moves q2, p1 stays 0", metric, 1e-10, {"q2_shift": moved, "max_abs_p1": p1})


# -- 5 ------------------------------------------------------------------------------


def c5(ctx: Context) -> CriterionResult:
    b = ctx.bundle("rotgauge")
    rng = ctx.rng(5)
    worst = {"F21": 0.0, "F22": 0.0, "G": 0.0}
    for _ in range(50):
        x = project_consistent(b, random_point(b, rng))
        d = decompose(build_FG(b, x))
        worst["F21"] = max(worst["F21"], d.residual_F21)
        worst["F22"] = max(worst["F22"], d.residual_F22)
        worst["G"] = max(worst["G"], d.consistency)
    return _result("5", "rotgauge decomposition identities", max(worst.values()), 1e-8, worst)


# -- 6 ------------------------------------------------------------------------------


def _axioms(ctx, cid, kind, name, n_p=None) -> CriterionResult:
    rep = check_bracket_axioms(kind, ctx.bundle(name, n_p), 100, 50, seed=ctx.seed + 6)
    # each axiom against its own tolerance; the metric is the worst ratio
    ratio = max(rep.antisymmetry / 1e-12, rep.leibniz / 1e-8, rep.jacobi / 1e-5)
    return _result(cid, f"{kind} bracket axioms on {name} (worst residual / tolerance)", ratio, 1.0, rep.as_dict())


def c6a(ctx):
    return _axioms(ctx, "6a", "poisson", "osc2", 2)


def c6b(ctx):
    return _axioms(ctx, "6b", "nongauge", "firstorder")


def c6c(ctx):
    return _axioms(ctx, "6c", "gauge", "rotgauge")


# -- 7 ------------------------------------------------------------------------------


def _equivalence(ctx: Context) -> dict:
    if not hasattr(ctx, "_equiv"):
        ctx._equiv = {n: verify_equivalence(ctx.bundle(n), 100, 50, seed=ctx.seed + 7) for n in ("firstorder", "gauge1")}
    return ctx._equiv


def c7a(ctx):
    eq = _equivalence(ctx)
    d = {n: r.F_residual for n, r in eq.items()}
    return _result("7a", "F equals full brackets of constraints", max(d.values()), 1e-9, d)


def c7b(ctx):
    eq = _equivalence(ctx)
    d = {n: r.H0_residual_literal for n, r in eq.items()}
    detail = {"literal": d, "signed": {n: r.H0_residual_signed for n, r in eq.items()}}
    return _result("7b", "D_alpha H0 equals {Phi_alpha, H0}_full", max(d.values()), 1e-9, detail)


def c7c(ctx):
    drift = {}
    for name in ("firstorder", "gauge1"):
        b = ctx.bundle(name)
        cs = build_constraints(b)
        et = integrate_extended(cs, cs.lift(ctx.initial_point(name)), T_LONG, DT)
        drift[name] = float(np.max(et.drift))
    return _result("7c", "constraint drift under the total Hamiltonian", max(drift.values()), 1e-6, drift)


def c7d(ctx):
    r = _equivalence(ctx)["firstorder"]
    return _result("7d", "nongauge bracket equals Dirac bracket on firstorder", r.dirac_vs_nongauge, 1e-8)


def _overextension(cid, k) -> CriterionResult:
    s = get("rotgauge").system
    title = f"n_p = r_W + {k} gives {k} primary constraints on rotgauge"
    r_W = get("rotgauge").expected_r_W
    try:
        got = count_primary_constraints(s, r_W + k)
    except HamfoldError as e:
        return CriterionResult(cid, title, False, None, None, "==", {"n_p": r_W + k, "n": s.n}, e.record())
    return _flag(cid, title, got == k, {"count": got})


def c7e(ctx):
    return _overextension("7e", 1)


def c7f(ctx):
    return _overextension("7f", 2)


# -- 8 ------------------------------------------------------------------------------


def _two_paths(ms: MultiTimeSystem, x: PhasePoint):
    w0 = np.concatenate([[x.t], x.q_nc])
    one = np.ones(ms.m)
    pa = TimePath([w0, w0 + np.concatenate([[1.0], 0 * one]), w0 + np.concatenate([[1.0], one])])
    pb = TimePath([w0, w0 + np.concatenate([[0.4], 0.8 * one]), w0 + np.concatenate([[1.0], one])])
    ra = integrate_path(ms, x.q_c, x.p, pa, DT)
    rb = integrate_path(ms, x.q_c, x.p, pb, DT)
    return float(max(np.max(np.abs(ra.q - rb.q)), np.max(np.abs(ra.p - rb.p))))


def c8a(ctx):
    detail, worst, qualifying = {}, 0.0, 0
    for e in library():
        b = ctx.bundle(e.name)
        if b.m == 0 or b.n_p == 0:
            continue
        ms = MultiTimeSystem.from_model(b)
        res = check_integrability(ms, random_probes(ms, 50, seed=ctx.seed + 8)).max_residual
        entry = {"residual": res}
        if res <= 1e-10:
            qualifying += 1
            entry["endpoint_mismatch"] = _two_paths(ms, ctx.initial_point(e.name))
            worst = max(worst, entry["endpoint_mismatch"])
        detail[e.name] = entry
    metric = worst if qualifying else math.inf
    return _result("8a", "integrable library systems are path independent", metric, 1e-6, detail)


def c8b(ctx):
    ms = MultiTimeSystem.from_expressions(["p1*tau1", "q1"])
    a = integrate_path(ms, [0.0], [0.0], TimePath([[0, 0], [1, 0], [1, 1]]), DT)
    b = integrate_path(ms, [0.0], [0.0], TimePath([[0, 0], [0, 1], [1, 1]]), DT)
    mis = float(max(np.max(np.abs(a.q - b.q)), np.max(np.abs(a.p - b.p))))
    return _result("8b", "non-integrable pair shows loop mismatch", mis, 1e-3, relation=">")


def c8c(ctx):
    errs = {}
    for name in ("gauge1", "rotgauge", "shiftosc"):
        b = ctx.bundle(name)
        tr = ctx.trajectory(name, None, T_GAUGE, gauge=(0.0,))
        x = tr.point(0)
        w0 = np.concatenate([[x.t], x.q_nc])
        w1 = w0.copy()
        w1[0] = tr.times[-1]
        r = integrate_path(MultiTimeSystem.from_model(b), x.q_c, x.p, TimePath([w0, w1]), DT)
        n_p = b.n_p
        errs[name] = float(max(np.max(np.abs(r.q_trace - tr.states[:, :n_p])), np.max(np.abs(r.p_trace - tr.states[:, n_p:2 * n_p]))))
    return _result("8c", "physical-time paths match the reduced dynamics", max(errs.values()), 1e-6, errs)


# -- 9, 10 --------------------------------------------------------------------------


def c9(ctx):
    for name, n_p, t1, gauge in STANDARD_RUNS:
        ctx.trajectory(name, n_p, t1, gauge=gauge)
    detail = {}
    for (name, n_p, t1, dt, gauge), tr in ctx.trajectories():
        _, r = residual_noncanonical_eom(tr.bundle, tr)
        key = f"{name}/n_p={tr.n_p}/t1={t1:.6g}" + ("" if gauge is None else f"/gauge={list(gauge)}")
        detail[key] = float(np.max(r)) if r.size else 0.0
    return _result("9", "second-order noncanonical equation along trajectories", max(detail.values()), 1e-4, detail)


_DETERMINISM_SUBSET = ("3b", "5", "7e", "8b")


def c10(ctx):
    def once():
        sub = Context(ctx.seed)
        return report.dumps([CRITERIA[c][1](sub) for c in _DETERMINISM_SUBSET])

    a, b = once(), once()
    return _flag("10", "repeated runs serialize byte-identically", a == b, {"subset": list(_DETERMINISM_SUBSET), "bytes": len(a)})


CRITERIA: dict = {
    cid: (cid, fn)
    for cid, fn in [
        ("1", c1), ("2a", c2a), ("2b", c2b),
        ("3a", c3a), ("3b", c3b), ("3c", c3c), ("3d", c3d),
        ("4a", c4a), ("4b", c4b), ("4c", c4c), ("4d", c4d),
        ("5", c5), ("6a", c6a), ("6b", c6b), ("6c", c6c),
        ("7a", c7a), ("7b", c7b), ("7c", c7c), ("7d", c7d), ("7e", c7e), ("7f", c7f),
        ("8a", c8a), ("8b", c8b), ("8c", c8c),
        ("9", c9), ("10", c10),
    ]
}


def run_one(cid: str, ctx: Context) -> CriterionResult:
    _, fn = CRITERIA[cid]
    try:
        return fn(ctx)
    except HamfoldError as e:
        return CriterionResult(cid, fn.__name__, False, None, None, error=e.record())


def run(ids=None, seed: int = 42, fail_fast: bool = False, on_result=None, ctx: Context | None = None) -> list[CriterionResult]:
    ctx = ctx or Context(seed)
    out = []
    for cid in ids or CRITERIA:
        r = run_one(cid, ctx)
        out.append(r)
        if on_result:
            on_result(r)
        if fail_fast and not r.passed:
            break
    return out


def summary(results, seed: int) -> dict:
    return {
        "seed": seed,
        "passed": all(r.passed for r in results),
        "failed": [r.id for r in results if not r.passed],
        "criteria": [r.as_dict() for r in results],
    }
