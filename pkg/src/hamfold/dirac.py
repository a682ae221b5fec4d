"""Extended phase space: extra momenta, primary constraints, Dirac bracket.

Giving momenta to the noncanonical coordinates as well turns the relations
``p_a + H_a = 0`` into primary constraints.  This module builds them, runs
the consistency condition of the total Hamiltonian and compares the result
with the reduced formalism.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg
from .brackets import FGSystem, Jet, Observable, PhaseSpace, nongauge_jet, poisson, random_point, random_polynomial, build_FG
from .dynamics import CONSISTENCY_TOL, classify_bundle, decompose, rk4, solve_velocities
from .errors import DiracError, HigherStageConstraint, InconsistentSystem, OffSurface, PartitionError, SingularMatrix
from .legendre import NONDYNAMICAL, HamiltonianBundle, PhasePoint
from .model import LagrangianSystem, Partition, _probe_tuple, analyze_hessian

SURFACE_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class ExtendedPhasePoint:
    """``(t, q^A, p_A)`` with every coordinate carrying a momentum (model order)."""

    t: float
    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "t", float(self.t))
        object.__setattr__(self, "q", np.atleast_1d(np.asarray(self.q, dtype=float)))
        object.__setattr__(self, "p", np.atleast_1d(np.asarray(self.p, dtype=float)))
        if self.q.shape != self.p.shape or self.q.ndim != 1:
            raise DiracError("q and p must be vectors of equal length")
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.p)) and np.isfinite(self.t)):
            raise DiracError("extended phase point entries must be finite")


@dataclass(frozen=True, eq=False)
class ExtendedJets:
    """Row 0: H0; rows 1..m: constraints.  Columns in partition order."""

    value: np.ndarray
    dq: np.ndarray
    dp: np.ndarray
    dt: np.ndarray

    def brackets(self) -> np.ndarray:
        """Full Poisson brackets between all rows."""
        P = self.dq @ self.dp.T
        return P - P.T


class ConstraintSet:
    """Primary constraints ``Phi_a = p_a + H_a`` of an ``n_p = r_W`` bundle."""

    def __init__(self, bundle: HamiltonianBundle, kind: str):
        self.bundle = bundle
        self.kind = kind
        self.labels = tuple(bundle.partition.noncanonical_labels())
        self.space = PhaseSpace.extended_of(bundle)

    def __len__(self) -> int:
        return len(self.labels)

    # conversions between model order and partition order
    def reduce(self, xe: ExtendedPhasePoint) -> PhasePoint:
        b = self.bundle
        return PhasePoint.trusted(xe.t, xe.q[b.C], xe.p[b.C], xe.q[b.N])

    def lift(self, x: PhasePoint) -> ExtendedPhasePoint:
        """Extended point on the constraint surface (``p_a := -H_a``)."""
        b = self.bundle
        st = b.evaluate(x)
        q = b.full_q(x)
        p = np.empty(b.n)
        p[b.C] = x.p
        p[b.N] = -st.Halpha
        return ExtendedPhasePoint(x.t, q, p)

    def _state(self, xe: ExtendedPhasePoint):
        return self.bundle.evaluate(self.reduce(xe))

    def values(self, xe: ExtendedPhasePoint) -> np.ndarray:
        st = self._state(xe)
        return xe.p[self.bundle.N] + st.Halpha

    def arrays(self, xe: ExtendedPhasePoint) -> "ExtendedJets":
        """Values and extended-space derivatives of H0 (row 0) and the constraints."""
        b = self.bundle
        st = self._state(xe)
        val = st.H.copy()
        val[1:] += xe.p[b.N]
        dp = np.zeros((b.m + 1, b.n))
        dp[:, :b.n_p] = st.dp
        dp[1:, b.n_p:] = np.eye(b.m)
        return ExtendedJets(val, st.dq, dp, st.dt)

    def jets(self, xe: ExtendedPhasePoint) -> tuple[Jet, list[Jet]]:
        """Extended-space jets of H0 and of every constraint."""
        a = self.arrays(xe)
        h0 = Jet(float(a.value[0]), a.dq[0], a.dp[0], float(a.dt[0]))
        return h0, [Jet(float(a.value[r]), a.dq[r], a.dp[r], float(a.dt[r])) for r in range(1, len(a.value))]

    def observable_jet(self, A: Observable, xe: ExtendedPhasePoint) -> Jet:
        b = self.bundle
        return A.jet_at(self.space, xe.t, xe.q[b.perm], xe.p[b.perm])


def build_constraints(bundle: HamiltonianBundle) -> ConstraintSet:
    """Constraints for the noncanonical coordinates of a nondynamical bundle."""
    if bundle.regime != NONDYNAMICAL:
        raise DiracError(f"constraints need the nondynamical partition n_p = r_W (bundle is {bundle.regime})")
    if bundle.n_p != bundle.partition.r_W:
        raise DiracError("constraints are built from the partition n_p = r_W")
    kind = "none"
    if bundle.m:
        cls = classify_bundle(bundle)
        kind = "second-class-like" if cls.kind == "nongauge" else "first-class-like"
    return ConstraintSet(bundle, kind)


def count_primary_constraints(system: LagrangianSystem, n_p: int, pivot_tol: float | None = None, seed: int = 42) -> int:
    """Number of momentum definitions that cannot be solved for velocities.

    For a partition with ``n_p`` momenta this is ``n_p`` minus the rank of the
    canonical Hessian block, which must agree across probes.
    """
    kw = {} if pivot_tol is None else {"pivot_tol": pivot_tol}
    part: Partition = analyze_hessian(system, n_p=n_p, seed=seed, **kw)
    C = list(part.canonical)
    ranks = set()
    for b in part.probes:
        t, q, qd = _probe_tuple(b, system)
        w = system.hessian(t, q, qd)
        ranks.add(linalg.rank(w[np.ix_(C, C)], part.pivot_tol) if C else 0)
    if len(ranks) != 1:
        raise PartitionError(f"canonical block rank varies across probes: {sorted(ranks)}")
    return n_p - ranks.pop()


class TotalHamiltonian:
    """``H0 + v^a Phi_a`` on the extended space for fixed coefficients ``v``."""

    def __init__(self, cs: ConstraintSet, v):
        self.cs = cs
        self.v = np.asarray(v, dtype=float).reshape(-1)
        if len(self.v) != len(cs):
            raise DiracError(f"need {len(cs)} coefficients, got {len(self.v)}")

    def jet(self, xe: ExtendedPhasePoint) -> Jet:
        h0, phis = self.cs.jets(xe)
        val, dq, dp, dt = h0.value, h0.dq.copy(), h0.dp.copy(), h0.dt
        for c, ph in zip(self.v, phis):
            val += c * ph.value
            dq += c * ph.dq
            dp += c * ph.dp
            dt += c * ph.dt
        return Jet(val, dq, dp, dt)

    def value(self, xe: ExtendedPhasePoint) -> float:
        return self.jet(xe).value


def total_hamiltonian(cs: ConstraintSet, v) -> TotalHamiltonian:
    return TotalHamiltonian(cs, v)


@dataclass(eq=False)
class ConsistencyResult:
    F_full: np.ndarray
    G_full: np.ndarray
    r_F: int
    v: np.ndarray
    free: tuple[int, ...]
    jets: ExtendedJets | None = None


def consistency_system(cs: ConstraintSet, xe: ExtendedPhasePoint, gauge_input=None, check_surface: bool = True, tol: float = CONSISTENCY_TOL) -> ConsistencyResult:
    """Linear system for the multipliers from ``dPhi/dt = 0``.

    ``F_full v = G_full`` with ``F_full = {Phi, Phi}`` and
    ``G_full = -({Phi, H0} + dPhi/dt)``.  A dependent row that cannot be
    satisfied is a new constraint, reported as :class:`HigherStageConstraint`.
    """
    m = len(cs)
    if check_surface and m:
        phi = cs.values(xe)
        worst = float(np.max(np.abs(phi)))
        if worst > SURFACE_TOL:
            raise OffSurface(f"point is off the constraint surface: max |Phi| = {worst:.3e}")
    jets = cs.arrays(xe)
    PB = jets.brackets()
    F = PB[1:, 1:]
    G = -(PB[1:, 0] + jets.dt[1:])
    pivot_tol = cs.bundle.pivot_tol
    r_F = linalg.rank(F, pivot_tol) if m else 0
    fg = FGSystem(F=F, G=G, r_F=r_F, point=None, state=None, pivot_tol=pivot_tol)
    free: tuple[int, ...] = ()
    if m and r_F < m:
        dec = decompose(fg)
        free = dec.alpha2
        try:
            v = solve_velocities(fg, dec, gauge_input, tol)
        except InconsistentSystem as e:
            raise HigherStageConstraint(
                f"consistency yields a new constraint (residual {dec.consistency:.3e}); further Dirac stages are not pursued",
                residual=e.residual,
            ) from None
    else:
        v = solve_velocities(fg)
    return ConsistencyResult(F, G, r_F, v, free, jets)


# ---------------------------------------------------------------------------
# equivalence checks


@dataclass
class EquivalenceReport:
    model: str
    constraints: int
    kind: str
    n_points: int
    F_residual: float
    H0_residual_literal: float
    H0_residual_signed: float
    dirac_vs_nongauge: float | None

    def as_dict(self) -> dict:
        return {
            "model": self.model,
            "constraints": self.constraints,
            "kind": self.kind,
            "n_points": self.n_points,
            "F_residual": self.F_residual,
            "H0_residual_literal": self.H0_residual_literal,
            "H0_residual_signed": self.H0_residual_signed,
            "dirac_vs_nongauge": self.dirac_vs_nongauge,
        }


def dirac_bracket(cs: ConstraintSet, a: Jet, b: Jet, xe: ExtendedPhasePoint) -> float:
    """``{A,B} - {A,Phi_a} C^ab {Phi_b,B}`` with ``C = {Phi, Phi}``."""
    _, phis = cs.jets(xe)
    base = poisson(a, b)
    if not phis:
        return base
    C = np.array([[poisson(p, q) for q in phis] for p in phis])
    try:
        Cinv = linalg.inverse(0.5 * (C - C.T), cs.bundle.pivot_tol)
    except SingularMatrix as e:
        raise DiracError(f"constraint bracket matrix is singular: {e}") from None
    ua = np.array([poisson(a, p) for p in phis])
    ub = np.array([poisson(p, b) for p in phis])
    return base - float(ua @ Cinv @ ub)


def verify_equivalence(bundle: HamiltonianBundle, n_points: int = 100, n_pairs: int = 50, seed: int = 0) -> EquivalenceReport:
    """Compare reduced F, G and brackets with their extended-space counterparts.

    ``H0_residual_literal`` is ``max |D_a H0 - {Phi_a, H0}|`` and
    ``H0_residual_signed`` is ``max |D_a H0 + {Phi_a, H0} + dPhi_a/dt|``; only
    the second combination vanishes identically.
    """
    cs = build_constraints(bundle)
    rng = np.random.default_rng(seed)
    fres = lit = sgn = 0.0
    dvn = None
    m = len(cs)
    points = [random_point(bundle, rng) for _ in range(n_points)]
    for x in points:
        if not m:
            break
        xe = cs.lift(x)
        fg = build_FG(bundle, x)
        h0, phis = cs.jets(xe)
        Ffull = np.array([[poisson(a, b) for b in phis] for a in phis])
        fres = max(fres, float(np.max(np.abs(fg.F - Ffull))))
        pb = np.array([poisson(a, h0) for a in phis])
        dt = np.array([a.dt for a in phis])
        lit = max(lit, float(np.max(np.abs(fg.G - pb))))
        sgn = max(sgn, float(np.max(np.abs(fg.G + pb + dt))))
    if m and cs.kind == "second-class-like":
        dvn = 0.0
        space = PhaseSpace.reduced(bundle)
        for k in range(n_pairs):
            A, B = random_polynomial(space, rng), random_polynomial(space, rng)
            x = points[k % len(points)]
            xe = cs.lift(x)
            fg = build_FG(bundle, x)
            red = nongauge_jet(A.jet(bundle, x), B.jet(bundle, x), fg)
            ja, jb = cs.observable_jet(A, xe), cs.observable_jet(B, xe)
            dvn = max(dvn, abs(red - dirac_bracket(cs, ja, jb, xe)))
    return EquivalenceReport(bundle.system.name, m, cs.kind, n_points, fres, lit, sgn, dvn)


# ---------------------------------------------------------------------------
# evolution under the total Hamiltonian


@dataclass(eq=False)
class ExtendedTrajectory:
    times: np.ndarray
    q: np.ndarray
    p: np.ndarray
    drift: np.ndarray
    multipliers: np.ndarray


def integrate_extended(cs: ConstraintSet, xe0: ExtendedPhasePoint, t1: float, dt: float, gauge_input=None) -> ExtendedTrajectory:
    """RK4 for Hamilton's equations of the total Hamiltonian.

    The multipliers are re-solved from the consistency condition at every
    stage; ``drift`` records ``max |Phi_a|`` at each step.
    """
    b = cs.bundle
    n = b.n
    inv = list(b.partition.inverse_permutation)

    def unpack(t, y):
        return ExtendedPhasePoint(t, y[:n], y[n:])

    memo: dict = {}

    def solve(t, y):
        key = (t, y.tobytes())
        if key not in memo:
            memo.clear()
            memo[key] = consistency_system(cs, unpack(t, y), gauge_input, check_surface=False)
        return memo[key]

    def f(t, y):
        res = solve(t, y)
        coef = np.concatenate([[1.0], res.v])
        # jets are in partition order; the state is in model order
        dq = (coef @ res.jets.dp)[inv]
        dp = -(coef @ res.jets.dq)[inv]
        return np.concatenate([dq, dp])

    res0 = consistency_system(cs, xe0, gauge_input)
    times, qs, ps = [xe0.t], [xe0.q], [xe0.p]
    drift = [float(np.max(np.abs(res0.jets.value[1:]))) if len(cs) else 0.0]
    mult = [res0.v]

    def on_step(t, y):
        res = solve(t, y)
        times.append(t)
        qs.append(y[:n].copy())
        ps.append(y[n:].copy())
        drift.append(float(np.max(np.abs(res.jets.value[1:]))) if len(cs) else 0.0)
        mult.append(res.v)

    rk4(f, xe0.t, np.concatenate([xe0.q, xe0.p]), t1, dt, on_step)
    return ExtendedTrajectory(np.array(times), np.array(qs), np.array(ps), np.array(drift), np.array(mult))
