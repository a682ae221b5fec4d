"""Brackets on the reduced (and extended) phase space.

Everything here works on *jets*: a value together with its first
derivatives in ``t``, the coordinates (partition order) and the momenta.
Observables, Hamiltonians and finite-difference surrogates all reduce to
jets, so one bracket implementation serves them all.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import linalg
from .errors import (
    BracketError,
    VelocityDependenceViolation,
    MissingDecomposition,
    SingularF,
    SingularMatrix,
    SymbolSpaceMismatch,
)
from .expr import PHASE_SYMBOLS, Expr, add, compile_exprs, const, differentiate, mul, parse, power, rename, sym
from .legendre import HamiltonianBundle, HState, PhasePoint


@dataclass(frozen=True, eq=False)
class Jet:
    """Value and first derivatives of a phase-space function at one point."""

    value: float
    dq: np.ndarray
    dp: np.ndarray
    dt: float = 0.0

    @classmethod
    def of_state(cls, st: HState, row: int) -> "Jet":
        return cls(float(st.H[row]), st.dq[row], st.dp[row], float(st.dt[row]))

    @classmethod
    def constant(cls, value: float, n: int, k: int) -> "Jet":
        return cls(float(value), np.zeros(n), np.zeros(k), 0.0)


# ---------------------------------------------------------------------------
# phase spaces and observables


@dataclass(frozen=True)
class PhaseSpace:
    """Coordinate labels in partition order plus the labels carrying momenta.

    In the reduced space only canonical coordinates have momenta; in the
    extended space every coordinate does.  Momenta always belong to the
    leading coordinates, so ``coords[:len(momenta)] == momenta``.
    """

    coords: tuple[str, ...]
    momenta: tuple[str, ...]
    noncanonical: tuple[str, ...]
    extended: bool = False

    @classmethod
    def reduced(cls, bundle: HamiltonianBundle) -> "PhaseSpace":
        part = bundle.partition
        c, nc = tuple(part.canonical_labels()), tuple(part.noncanonical_labels())
        return cls(c + nc, c, nc, False)

    @classmethod
    def extended_of(cls, bundle: HamiltonianBundle) -> "PhaseSpace":
        part = bundle.partition
        c, nc = tuple(part.canonical_labels()), tuple(part.noncanonical_labels())
        return cls(c + nc, c + nc, nc, True)


_ALIAS = re.compile(r"([QP])([1-9][0-9]*)")


class Observable:
    """A function of ``t``, coordinates and momenta given as an expression.

    Symbols: ``t``; ``q<k>`` for coordinate label ``q<k>``; ``p<k>`` for its
    momentum; ``Q<k>`` is an alias of ``q<k>`` that insists the coordinate is
    noncanonical, and ``P<k>`` an alias of ``p<k>`` for the extra momentum of
    a noncanonical coordinate (extended space only).
    """

    def __init__(self, source: str | Expr, name: str | None = None):
        expr = parse(source, PHASE_SYMBOLS) if isinstance(source, str) else source
        for s in expr.symbols:
            if PHASE_SYMBOLS.fullmatch(s) is None:
                raise SymbolSpaceMismatch(f"symbol {s!r} is not a phase-space symbol")
        self.source_expr = expr
        self.aliases = {s for s in expr.symbols if _ALIAS.fullmatch(s)}
        self.expr = rename(expr, {s: s.lower() for s in self.aliases})
        self.name = name or str(source)
        self._compiled: dict = {}

    def __repr__(self) -> str:
        return f"Observable({self.name!r})"

    def check_space(self, space: PhaseSpace):
        for s in self.aliases:
            label = "q" + s[1:]
            if label not in space.noncanonical:
                raise SymbolSpaceMismatch(f"{s} requires q{s[1:]} to be noncanonical")
            if s[0] == "P" and not space.extended:
                raise SymbolSpaceMismatch(f"{s} lives in the extended phase space")
        for s in self.expr.symbols:
            if s == "t":
                continue
            label = "q" + s[1:]
            if label not in space.coords:
                raise SymbolSpaceMismatch(f"{s} refers to unknown coordinate {label}")
            if s[0] == "p" and label not in space.momenta:
                raise SymbolSpaceMismatch(f"{s}: coordinate {label} has no momentum in this phase space")

    def _program(self, space: PhaseSpace):
        prog = self._compiled.get(space)
        if prog is None:
            self.check_space(space)
            qs = list(space.coords)
            ps = ["p" + c[1:] for c in space.momenta]
            exprs = [self.expr, differentiate(self.expr, "t")]
            exprs += [differentiate(self.expr, s) for s in qs]
            exprs += [differentiate(self.expr, s) for s in ps]
            src = {"t": "t"}
            src.update({s: f"q[{k}]" for k, s in enumerate(qs)})
            src.update({s: f"p[{k}]" for k, s in enumerate(ps)})
            prog = compile_exprs(exprs, ("t", "q", "p"), src)
            self._compiled[space] = prog
        return prog

    def jet_at(self, space: PhaseSpace, t: float, q, p) -> Jet:
        out = self._program(space)(t, q, p)
        n, k = len(space.coords), len(space.momenta)
        a = np.asarray(out, dtype=float)
        return Jet(float(a[0]), a[2:2 + n], a[2 + n:2 + n + k], float(a[1]))

    def value_at(self, space: PhaseSpace, t: float, q, p) -> float:
        return self.jet_at(space, t, q, p).value

    def jet(self, bundle: HamiltonianBundle, x: PhasePoint) -> Jet:
        space = PhaseSpace.reduced(bundle)
        return self.jet_at(space, x.t, np.concatenate([x.q_c, x.q_nc]), x.p)


def _as_jet(A, bundle, x) -> Jet:
    if isinstance(A, Jet):
        return A
    if isinstance(A, Observable):
        return A.jet(bundle, x)
    if isinstance(A, (str, Expr)):
        return Observable(A).jet(bundle, x)
    raise BracketError(f"cannot interpret {A!r} as an observable")


# ---------------------------------------------------------------------------
# Poisson brackets


def poisson(a: Jet, b: Jet) -> float:
    """Canonical bracket over the coordinates that carry momenta."""
    k = len(a.dp)
    if len(b.dp) != k or len(a.dq) != len(b.dq):
        raise SymbolSpaceMismatch("jets live in different phase spaces")
    if k == 0:
        return 0.0
    return float(a.dq[:k] @ b.dp - b.dq[:k] @ a.dp)


def poisson_reduced(A, B, x: PhasePoint, bundle: HamiltonianBundle) -> float:
    """Reduced bracket: sum over canonical pairs only."""
    return poisson(_as_jet(A, bundle, x), _as_jet(B, bundle, x))


def poisson_full(A: Jet, B: Jet) -> float:
    """Bracket on the extended space (jets with momenta for every coordinate)."""
    if len(A.dp) != len(A.dq):
        raise SymbolSpaceMismatch("full bracket needs extended-space jets")
    return poisson(A, B)


# ---------------------------------------------------------------------------
# F, G and the D operator


def D_alpha_jet(a: Jet, k: int, st: HState, generator: bool = False, n_p: int | None = None) -> float:
    """``dA/dq^a + {A, H_a}`` for the k-th noncanonical coordinate.

    With ``generator`` set the explicit time derivative of ``H_a`` is
    subtracted as well, which is how the source vector of the velocity
    equations is built from H0.
    """
    n_p = len(st.v) if n_p is None else n_p
    h = Jet.of_state(st, 1 + k)
    val = float(a.dq[n_p + k]) + poisson(a, h)
    if generator:
        val -= h.dt
    return val


def D_alpha(A, alpha, x: PhasePoint, bundle: HamiltonianBundle, generator: bool = False) -> float:
    """D operator for observable ``A``; ``alpha`` is a position or a label."""
    st = bundle.evaluate(x)
    k = bundle.row_of(alpha) - 1
    if k < 0:
        raise BracketError("alpha must name a noncanonical coordinate")
    return D_alpha_jet(_as_jet(A, bundle, x), k, st, generator)


@dataclass(frozen=True, eq=False)
class FGSystem:
    """Antisymmetric matrix F and source vector G at one phase point."""

    F: np.ndarray
    G: np.ndarray
    r_F: int
    point: PhasePoint
    state: HState
    pivot_tol: float

    @property
    def m(self) -> int:
        return len(self.G)

    @cached_property
    def Fbar(self) -> np.ndarray:
        if self.r_F < self.m:
            raise SingularF(f"F has rank {self.r_F} < {self.m}")
        try:
            inv = linalg.inverse(self.F, self.pivot_tol)
        except SingularMatrix as e:
            raise SingularF(str(e)) from None
        return 0.5 * (inv - inv.T)


def build_FG(bundle: HamiltonianBundle, x: PhasePoint, drop_time_term: bool = False, guess=None) -> FGSystem:
    """Assemble F and G from the Hamiltonian derivatives at ``x``."""
    if not bundle.nondynamical:
        raise VelocityDependenceViolation(f"F and G need the nondynamical regime (bundle is {bundle.regime})")
    st = bundle.evaluate(x, guess)
    F, G = fg_arrays(st, bundle.n_p, drop_time_term)
    r_F = linalg.rank(F, bundle.pivot_tol) if bundle.m else 0
    return FGSystem(F=F, G=G, r_F=r_F, point=x, state=st, pivot_tol=bundle.pivot_tol)


def fg_arrays(st: HState, n_p: int, drop_time_term: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """F (exactly antisymmetric) and G from an evaluated state, any regime."""
    A = st.dq[1:, n_p:]
    Xq = st.dq[1:, :n_p]
    Xp = st.dp[1:]
    P = Xq @ Xp.T
    F = (A - A.T) + (P - P.T)
    G = st.dq[0, n_p:] + Xp @ st.dq[0, :n_p] - Xq @ st.dp[0]
    if not drop_time_term:
        G = G - st.dt[1:]
    return F, G


# ---------------------------------------------------------------------------
# deformed brackets


def _D_vectors(a: Jet, b: Jet, st: HState, idx) -> tuple[np.ndarray, np.ndarray]:
    da = np.array([D_alpha_jet(a, k, st) for k in idx])
    db = np.array([D_alpha_jet(b, k, st) for k in idx])
    return da, db


def _skew(da: np.ndarray, M: np.ndarray, db: np.ndarray) -> float:
    # symmetrized so that swapping the arguments flips the sign bit-exactly
    return 0.5 * (float(da @ M @ db) - float(db @ M @ da))


def nongauge_jet(a: Jet, b: Jet, fg: FGSystem) -> float:
    base = poisson(a, b)
    if fg.m == 0:
        return base
    da, db = _D_vectors(a, b, fg.state, range(fg.m))
    return base + _skew(da, fg.Fbar, db)


def gauge_jet(a: Jet, b: Jet, fg: FGSystem, decomposition) -> float:
    if decomposition is None:
        raise MissingDecomposition("the gauge bracket needs a gauge decomposition")
    base = poisson(a, b)
    idx = list(decomposition.alpha1)
    if not idx:
        return base
    da, db = _D_vectors(a, b, fg.state, idx)
    return base + _skew(da, decomposition.F11bar, db)


def bracket_nongauge(A, B, x: PhasePoint, fg: FGSystem, bundle: HamiltonianBundle) -> float:
    return nongauge_jet(_as_jet(A, bundle, x), _as_jet(B, bundle, x), fg)


def bracket_gauge(A, B, x: PhasePoint, fg: FGSystem, bundle: HamiltonianBundle, decomposition=None) -> float:
    return gauge_jet(_as_jet(A, bundle, x), _as_jet(B, bundle, x), fg, decomposition)


BRACKET_KINDS = ("poisson", "nongauge", "gauge")


class PointBracket:
    """A bracket of a given kind frozen at one phase point."""

    def __init__(self, kind: str, bundle: HamiltonianBundle, x: PhasePoint):
        if kind not in BRACKET_KINDS:
            raise BracketError(f"unknown bracket kind {kind!r}")
        self.kind = kind
        self.bundle = bundle
        self.x = x
        self.fg = None
        self.decomposition = None
        if kind != "poisson":
            self.fg = build_FG(bundle, x)
        if kind == "nongauge":
            self.fg.Fbar  # noqa: B018 - raise SingularF early
        if kind == "gauge":
            from .dynamics import decompose

            self.decomposition = decompose(self.fg)

    def __call__(self, a: Jet, b: Jet) -> float:
        if self.kind == "poisson":
            return poisson(a, b)
        if self.kind == "nongauge":
            return nongauge_jet(a, b, self.fg)
        return gauge_jet(a, b, self.fg, self.decomposition)


# ---------------------------------------------------------------------------
# axiom checks


def random_polynomial(space: PhaseSpace, rng: np.random.Generator, degree: int = 2) -> Observable:
    """Dense random polynomial of the given degree in coordinates and momenta."""
    vars_ = list(space.coords) + ["p" + c[1:] for c in space.momenta]
    terms = [const(float(rng.uniform(-1, 1)))]
    for d in range(1, degree + 1):
        for combo in _monomials(len(vars_), d):
            c = float(rng.uniform(-1, 1))
            factors = [const(c)]
            for i, e in combo:
                factors.append(sym(vars_[i]) if e == 1 else power(sym(vars_[i]), const(float(e))))
            terms.append(mul(*factors))
    return Observable(add(*terms), name="poly")


def _monomials(nvars: int, degree: int):
    import itertools

    for combo in itertools.combinations_with_replacement(range(nvars), degree):
        counts: dict[int, int] = {}
        for i in combo:
            counts[i] = counts.get(i, 0) + 1
        yield sorted(counts.items())


def random_point(bundle: HamiltonianBundle, rng: np.random.Generator, scale: float = 1.0) -> PhasePoint:
    n_p, m = bundle.n_p, bundle.m
    t = float(rng.uniform(0.0, 1.0))
    z = rng.uniform(-scale, scale, 2 * n_p + m)
    qd = rng.uniform(-scale, scale, m) if bundle.regime == "dynamical" else None
    return PhasePoint(t, z[:n_p], z[n_p:2 * n_p], z[2 * n_p:], qd)


def fd_jet(f, x: PhasePoint, h_rel: float = 1e-4) -> Jet:
    """Central-difference jet of ``f(PhasePoint) -> float`` in q and p."""
    n_p = x.n_p
    qv = np.concatenate([x.q_c, x.q_nc])
    pv = x.p.copy()

    def at(q, p):
        return f(PhasePoint(x.t, q[:n_p], p, q[n_p:], x.qd_nc))

    dq = np.empty(len(qv))
    for k in range(len(qv)):
        h = h_rel * max(1.0, abs(qv[k]))
        a, b = qv.copy(), qv.copy()
        a[k] += h
        b[k] -= h
        dq[k] = (at(a, pv) - at(b, pv)) / (2 * h)
    dp = np.empty(n_p)
    for k in range(n_p):
        h = h_rel * max(1.0, abs(pv[k]))
        a, b = pv.copy(), pv.copy()
        a[k] += h
        b[k] -= h
        dp[k] = (at(qv, a) - at(qv, b)) / (2 * h)
    return Jet(f(x), dq, dp, 0.0)


@dataclass
class AxiomReport:
    kind: str
    n_points: int
    n_triples: int
    antisymmetry: float
    bilinearity: float
    leibniz: float
    jacobi: float

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "n_points": self.n_points,
            "n_triples": self.n_triples,
            "antisymmetry": self.antisymmetry,
            "bilinearity": self.bilinearity,
            "leibniz": self.leibniz,
            "jacobi": self.jacobi,
        }


def check_bracket_axioms(
    kind: str,
    bundle: HamiltonianBundle,
    n_points: int = 100,
    n_triples: int = 50,
    seed: int = 0,
    h_rel: float = 1e-4,
) -> AxiomReport:
    """Max residuals of the bracket axioms on random quadratic observables.

    Every triple is evaluated at every point.  Products and linear
    combinations are formed symbolically, so Leibniz and bilinearity are
    checked on exact derivatives; the nested brackets in the Jacobi identity
    use central differences of the inner bracket.
    """
    rng = np.random.default_rng(seed)
    space = PhaseSpace.reduced(bundle)
    points = [random_point(bundle, rng) for _ in range(n_points)]
    triples = []
    for _ in range(n_triples):
        A, B, C = (random_polynomial(space, rng) for _ in range(3))
        a, b = float(rng.uniform(-2, 2)), float(rng.uniform(-2, 2))
        lin = Observable(add(mul(const(a), A.expr), mul(const(b), B.expr)))
        prod = Observable(mul(B.expr, C.expr))
        triples.append((A, B, C, a, b, lin, prod))
    brackets: dict = {}

    def br_at(x: PhasePoint) -> PointBracket:
        key = x.key()
        got = brackets.get(key)
        if got is None:
            got = PointBracket(kind, bundle, x)
            if len(brackets) > 4096:
                brackets.clear()
            brackets[key] = got
        return got

    anti = bil = leib = jac = 0.0
    for x in points:
        br = br_at(x)
        for A, B, C, a, b, lin, prod in triples:
            jA, jB, jC = A.jet(bundle, x), B.jet(bundle, x), C.jet(bundle, x)
            ab, ba = br(jA, jB), br(jB, jA)
            bc, ca = br(jB, jC), br(jC, jA)
            ac = -ca
            anti = max(anti, abs(ab + ba), abs(br(jA, jA)))
            bil = max(bil, abs(br(lin.jet(bundle, x), jC) - a * ac - b * bc))
            leib = max(leib, abs(br(jA, prod.jet(bundle, x)) - ab * jC.value - jB.value * ac))

            def inner(u, v):
                return lambda y: br_at(y)(u.jet(bundle, y), v.jet(bundle, y))

            j1 = br(jA, fd_jet(inner(B, C), x, h_rel))
            j2 = br(jB, fd_jet(inner(C, A), x, h_rel))
            j3 = br(jC, fd_jet(inner(A, B), x, h_rel))
            jac = max(jac, abs(j1 + j2 + j3))
    return AxiomReport(kind, n_points, n_triples, anti, bil, leib, jac)
