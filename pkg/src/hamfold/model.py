"""Lagrangian systems, their velocity Hessian and the coordinate partition."""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from . import linalg
from .errors import (
    AllProbesDegenerate,
    DimensionError,
    DomainError,
    ModelFileError,
    PartitionError,
    RankVariation,
    SingularMatrix,
)
from .expr import (
    LAGRANGIAN_SYMBOLS,
    Binding,
    Expr,
    compile_exprs,
    differentiate,
    parse,
    rename,
    symbol_index,
    to_string,
)

DEFAULT_PIVOT_TOL = 1e-9
DEFAULT_SEED = 42
DEFAULT_N_PROBES = 8
PROBE_TIMES = (0.0, 0.37)


class Derivs:
    """Numeric values of L and its first/second derivatives at one point."""

    __slots__ = ("L", "Lt", "Lq", "Lqd", "W", "Wq", "Wt")

    def __init__(self, flat, n: int):
        a = np.asarray(flat, dtype=float)
        k = 0
        self.L = a[0]
        self.Lt = a[1]
        k = 2
        self.Lq = a[k:k + n]
        k += n
        self.Lqd = a[k:k + n]
        k += n
        self.W = a[k:k + n * n].reshape(n, n)
        k += n * n
        self.Wq = a[k:k + n * n].reshape(n, n)
        k += n * n
        self.Wt = a[k:k + n]


@dataclass(frozen=True, eq=False)
class LagrangianSystem:
    """A parsed Lagrangian with all symbolic first and second derivatives.

    ``coords`` lists coordinate labels (``q<k>``); position in the list is the
    coordinate index A used by every array in the package.
    """

    name: str
    coords: tuple[str, ...]
    L: Expr
    dL_dt: Expr = field(repr=False)
    dL_dq: tuple[Expr, ...] = field(repr=False)
    dL_dqd: tuple[Expr, ...] = field(repr=False)
    W: tuple[tuple[Expr, ...], ...] = field(repr=False)
    Wq: tuple[tuple[Expr, ...], ...] = field(repr=False)
    Wt: tuple[Expr, ...] = field(repr=False)

    @property
    def n(self) -> int:
        return len(self.coords)

    @property
    def velocities(self) -> tuple[str, ...]:
        return tuple("qd" + c[1:] for c in self.coords)

    def compile_derivs(self, order=None):
        """Compiled ``(t, q, qd) -> Derivs`` with coordinates taken in ``order``.

        ``order`` lists coordinate indices; arguments and every returned
        array follow it.  The default is the model order.
        """
        order = list(range(self.n)) if order is None else list(order)
        if sorted(order) != list(range(self.n)):
            raise ValueError("order must be a permutation of the coordinate indices")
        exprs = [self.L, self.dL_dt]
        exprs += [self.dL_dq[a] for a in order]
        exprs += [self.dL_dqd[a] for a in order]
        exprs += [self.W[a][b] for a in order for b in order]
        exprs += [self.Wq[a][b] for a in order for b in order]
        exprs += [self.Wt[a] for a in order]
        src = {"t": "t"}
        for k, a in enumerate(order):
            src[self.coords[a]] = f"q[{k}]"
            src[self.velocities[a]] = f"qd[{k}]"
        prog = compile_exprs(exprs, ("t", "q", "qd"), src)
        n = self.n

        def derivs(t, q, qd) -> Derivs:
            return Derivs(prog(t, q, qd), n)

        return derivs

    @cached_property
    def _derivs(self):
        return self.compile_derivs()

    def derivs(self, t: float, q, qd) -> Derivs:
        return self._derivs(t, q, qd)

    def hessian(self, t: float, q, qd) -> np.ndarray:
        return self.derivs(t, q, qd).W

    def lagrangian(self, t: float, q, qd) -> float:
        return float(self.derivs(t, q, qd).L)

    def binding(self, t: float, q, qd) -> Binding:
        """Binding whose ``q<k>`` slots follow the model's coordinate labels."""
        k = max(symbol_index(c) for c in self.coords)
        qq = [0.0] * k
        vv = [0.0] * k
        for a, c in enumerate(self.coords):
            qq[symbol_index(c) - 1] = q[a]
            vv[symbol_index(c) - 1] = qd[a]
        return Binding(t, tuple(qq), tuple(vv))

    def to_text(self) -> str:
        return f"name = {self.name}\ncoords = {', '.join(self.coords)}\nlagrangian = {to_string(self.L)}\n"


def build_system(name: str, coords, L: Expr | str) -> LagrangianSystem:
    """Validate symbols and precompute the symbolic derivatives."""
    coords = tuple(c.strip() for c in coords)
    if not coords:
        raise ModelFileError("coords must list at least one coordinate")
    for c in coords:
        if re.fullmatch(r"q[1-9][0-9]*", c) is None:
            raise ModelFileError(f"bad coordinate label {c!r}")
    if len(set(coords)) != len(coords):
        raise ModelFileError("duplicate coordinate labels")
    if isinstance(L, str):
        L = parse(L, LAGRANGIAN_SYMBOLS)
    allowed = set(coords) | {"qd" + c[1:] for c in coords} | {"t"}
    extra = sorted(L.symbols - allowed)
    if extra:
        raise DimensionError(f"symbols {extra} are not among coordinates {list(coords)}")
    vel = ["qd" + c[1:] for c in coords]
    dL_dq = tuple(differentiate(L, c) for c in coords)
    dL_dqd = tuple(differentiate(L, v) for v in vel)
    W = tuple(tuple(differentiate(dv, w) for w in vel) for dv in dL_dqd)
    Wq = tuple(tuple(differentiate(dv, c) for c in coords) for dv in dL_dqd)
    Wt = tuple(differentiate(dv, "t") for dv in dL_dqd)
    return LagrangianSystem(
        name=name,
        coords=coords,
        L=L,
        dL_dt=differentiate(L, "t"),
        dL_dq=dL_dq,
        dL_dqd=dL_dqd,
        W=W,
        Wq=Wq,
        Wt=Wt,
    )


def load_model_text(text: str) -> LagrangianSystem:
    """Parse the line-oriented model format (``name``, ``coords``, ``lagrangian``)."""
    keys: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ModelFileError(f"line {lineno}: expected `key = value`")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in ("name", "coords", "lagrangian"):
            raise ModelFileError(f"line {lineno}: unknown key {key!r}")
        if key in keys:
            raise ModelFileError(f"line {lineno}: duplicate key {key!r}")
        keys[key] = val
    missing = {"name", "coords", "lagrangian"} - keys.keys()
    if missing:
        raise ModelFileError(f"missing keys: {sorted(missing)}")
    if re.fullmatch(r"[A-Za-z_][A-Za-z0-9_\-]*", keys["name"]) is None:
        raise ModelFileError(f"bad model name {keys['name']!r}")
    coords = [c for c in keys["coords"].split(",")]
    return build_system(keys["name"], coords, keys["lagrangian"])


def load_model(file) -> LagrangianSystem:
    return load_model_text(Path(file).read_text(encoding="utf-8"))


def relabel(system: LagrangianSystem, perm) -> LagrangianSystem:
    """Rename coordinates: label ``coords[a]`` becomes ``coords[perm[a]]``."""
    perm = list(perm)
    mapping = {}
    for a, b in enumerate(perm):
        ca, cb = system.coords[a], system.coords[b]
        mapping[ca] = cb
        mapping["qd" + ca[1:]] = "qd" + cb[1:]
    return build_system(system.name, system.coords, rename(system.L, mapping))


# ---------------------------------------------------------------------------
# Hessian analysis


@dataclass(frozen=True, eq=False)
class Partition:
    """Canonical/noncanonical split of the coordinates.

    ``canonical`` and ``noncanonical`` hold coordinate indices (positions in
    ``system.coords``); ``permutation`` is their concatenation, which puts the
    nonsingular Hessian minor in the upper-left corner.
    """

    system: LagrangianSystem
    r_W: int
    n_p: int
    canonical: tuple[int, ...]
    noncanonical: tuple[int, ...]
    pivot_tol: float
    probes: tuple[Binding, ...] = field(repr=False)
    probe_ranks: tuple[int, ...] = ()

    @property
    def n(self) -> int:
        return self.system.n

    @property
    def m(self) -> int:
        return len(self.noncanonical)

    @property
    def permutation(self) -> tuple[int, ...]:
        return self.canonical + self.noncanonical

    @property
    def inverse_permutation(self) -> tuple[int, ...]:
        inv = [0] * self.n
        for pos, a in enumerate(self.permutation):
            inv[a] = pos
        return tuple(inv)

    def canonical_labels(self) -> list[str]:
        return [self.system.coords[a] for a in self.canonical]

    def noncanonical_labels(self) -> list[str]:
        return [self.system.coords[a] for a in self.noncanonical]

    def with_n_p(self, n_p: int) -> "Partition":
        return analyze_hessian(self.system, self.probes, self.pivot_tol, n_p=n_p)

    def report(self) -> dict:
        return {
            "r_W": self.r_W,
            "n_p": self.n_p,
            "canonical": self.canonical_labels(),
            "noncanonical": self.noncanonical_labels(),
            "permutation": [self.system.coords[a] for a in self.permutation],
        }


def default_probes(n: int, seed: int = DEFAULT_SEED, count: int = DEFAULT_N_PROBES) -> list[tuple]:
    """Probe states ``(t, q, qd)`` with q, qd uniform in [-1, 1]."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(count):
        x = rng.uniform(-1.0, 1.0, size=2 * n)
        out.append((PROBE_TIMES[k % len(PROBE_TIMES)], x[:n], x[n:]))
    return out


def _probe_tuple(p, system: LagrangianSystem):
    if isinstance(p, Binding):
        idx = [symbol_index(c) - 1 for c in system.coords]
        return p.t, np.array([p.q[i] for i in idx]), np.array([p.qd[i] for i in idx])
    t, q, qd = p
    return float(t), np.asarray(q, dtype=float), np.asarray(qd, dtype=float)


def analyze_hessian(
    system: LagrangianSystem,
    probes=None,
    pivot_tol: float = DEFAULT_PIVOT_TOL,
    n_p: int | None = None,
    seed: int = DEFAULT_SEED,
) -> Partition:
    """Numeric rank of the velocity Hessian and the coordinate partition.

    Probes may be :class:`Binding` objects or ``(t, q, qd)`` tuples in model
    coordinate order.  The rank must agree across all probes.
    """
    if pivot_tol <= 0:
        raise PartitionError("pivot_tol must be positive")
    if probes is None:
        probes = default_probes(system.n, seed)
    if len(probes) == 0:
        raise PartitionError("need at least one probe")
    n = system.n
    mats, used = [], []
    for p in probes:
        t, q, qd = _probe_tuple(p, system)
        try:
            mats.append(system.hessian(t, q, qd))
        except DomainError:
            continue
        used.append((t, q, qd))
    if not mats:
        raise AllProbesDegenerate("the Hessian hit a domain error at every probe")
    pivots = [linalg.complete_pivot(w, pivot_tol) for w in mats]
    ranks = tuple(r for r, _, _ in pivots)
    if len(set(ranks)) > 1:
        lo, hi = min(ranks), max(ranks)
        raise RankVariation(
            f"Hessian rank varies across probes: {lo} at probe {ranks.index(lo)}, {hi} at probe {ranks.index(hi)}",
            ranks=ranks,
        )
    r_W = ranks[0]
    _, rows, _ = pivots[0]
    if n_p is None:
        n_p = r_W
    if not 0 <= n_p <= n:
        raise PartitionError(f"n_p={n_p} outside 0..{n}")
    if n_p == r_W:
        canonical = tuple(rows[:r_W])
    elif n_p > r_W:
        canonical = tuple(rows[:r_W]) + tuple(rows[r_W:r_W + n_p - r_W])
    else:
        canonical = _choose_principal_minor(mats, rows[:r_W], n_p, pivot_tol)
    noncanonical = tuple(sorted(set(range(n)) - set(canonical)))
    bindings = tuple(system.binding(t, q, qd) for t, q, qd in used)
    part = Partition(system, r_W, n_p, canonical, noncanonical, pivot_tol, bindings, ranks)
    if n_p <= r_W:
        for w in mats:
            try:
                linalg.lu_solve(w[np.ix_(canonical, canonical)], np.zeros(n_p), pivot_tol)
            except SingularMatrix:
                raise PartitionError("canonical Hessian block is singular at a probe") from None
    if n_p == r_W:
        worst = max(noncanonical_hessian_norm(w, canonical, noncanonical, pivot_tol) for w in mats)
        thresh = pivot_tol * max(1.0, max(float(np.max(np.abs(w))) for w in mats))
        if worst > thresh:
            raise RankVariation(f"degeneracy condition violated: reduced noncanonical Hessian {worst:.3e}")
    return part


def _choose_principal_minor(mats, candidates, n_p, pivot_tol) -> tuple[int, ...]:
    # Prefer the leading pivots; otherwise search subsets for a nonsingular principal minor.
    for combo in itertools.chain([tuple(candidates[:n_p])], itertools.combinations(candidates, n_p)):
        ok = True
        for w in mats:
            try:
                linalg.lu_solve(w[np.ix_(combo, combo)], np.zeros(n_p), pivot_tol)
            except SingularMatrix:
                ok = False
                break
        if ok:
            return tuple(combo)
    raise PartitionError(f"no nonsingular {n_p}x{n_p} principal minor of the Hessian")


def noncanonical_hessian_norm(w: np.ndarray, canonical, noncanonical, pivot_tol=DEFAULT_PIVOT_TOL) -> float:
    """Max entry of the noncanonical velocity Hessian at fixed canonical momenta.

    This is the Schur complement ``W_NN - W_NC W_CC^-1 W_CN``; it reduces to
    the plain block ``W_NN`` when canonical and noncanonical velocities do not
    mix in L.
    """
    c, nc = list(canonical), list(noncanonical)
    if not nc:
        return 0.0
    s = w[np.ix_(nc, nc)]
    if c:
        s = s - w[np.ix_(nc, c)] @ linalg.lu_solve(w[np.ix_(c, c)], w[np.ix_(c, nc)], pivot_tol)
    return float(np.max(np.abs(s)))
