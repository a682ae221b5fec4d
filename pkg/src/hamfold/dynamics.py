"""Equations of motion on the reduced phase space and their integration."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .brackets import FGSystem, build_FG, fg_arrays
from .errors import (
    DynamicsError,
    HamfoldError,
    InconsistentSystem,
    RankVariation,
    SingularF,
    SingularMatrix,
    TrajectoryTooShort,
)
from .legendre import DYNAMICAL, HamiltonianBundle, PhasePoint
from .model import _probe_tuple

CONSISTENCY_TOL = 1e-6
NONGAUGE = "nongauge"
GAUGE = "gauge"
ABELIAN = "abelian-limit"


@dataclass(frozen=True)
class Classification:
    kind: str
    r_F: int
    n_gauge: int
    max_abs_F: float = 0.0

    def as_dict(self) -> dict:
        return {"kind": self.kind, "r_F": self.r_F, "gauge_parameters": self.n_gauge}


def probe_points(bundle: HamiltonianBundle) -> list[PhasePoint]:
    """Reduced phase points built from the Hessian probe states."""
    pts = []
    for b in bundle.partition.probes:
        t, q, qd = _probe_tuple(b, bundle.system)
        pts.append(bundle.point_from_lagrangian(t, q, qd))
    return pts


def classify(fgs: FGSystem | list[FGSystem]) -> Classification:
    """Classify by the rank of F, which must agree across all given points."""
    if isinstance(fgs, FGSystem):
        fgs = [fgs]
    if not fgs:
        raise DynamicsError("classification needs at least one point")
    ranks = [fg.r_F for fg in fgs]
    if len(set(ranks)) > 1:
        raise RankVariation(f"rank of F varies across probes: {ranks}", ranks=tuple(ranks))
    m = fgs[0].m
    r_F = ranks[0]
    maxF = max((float(np.max(np.abs(fg.F))) if m else 0.0) for fg in fgs)
    if r_F == m:
        kind = NONGAUGE
    elif r_F == 0 and maxF <= fgs[0].pivot_tol:
        kind = ABELIAN
    else:
        kind = GAUGE
    return Classification(kind, r_F, m - r_F, maxF)


def classify_bundle(bundle: HamiltonianBundle, points=None) -> Classification:
    pts = probe_points(bundle) if points is None else points
    return classify([build_FG(bundle, x) for x in pts])


# ---------------------------------------------------------------------------
# gauge decomposition


@dataclass(frozen=True, eq=False)
class GaugeDecomposition:
    """Split of the noncanonical indices into independent and gauge parts.

    ``alpha1`` indexes a nonsingular principal block of F, ``alpha2`` the
    rest; ``lam`` expresses the dependent rows through the independent ones.
    """

    alpha1: tuple[int, ...]
    alpha2: tuple[int, ...]
    lam: np.ndarray
    F11bar: np.ndarray
    residual_F21: float
    residual_F22: float
    residual_G: np.ndarray

    @property
    def consistency(self) -> float:
        return float(np.max(np.abs(self.residual_G))) if len(self.residual_G) else 0.0

    def as_dict(self) -> dict:
        return {
            "alpha1": list(self.alpha1),
            "alpha2": list(self.alpha2),
            "lambda": self.lam.tolist(),
            "residual_F21": self.residual_F21,
            "residual_F22": self.residual_F22,
            "residual_G": self.consistency,
        }


def _principal_block(F: np.ndarray, r: int, tol: float) -> tuple[int, ...]:
    import itertools

    _, rows, cols = linalg.complete_pivot(F, tol)
    tried = []
    for cand in (rows[:r], cols[:r]):
        tried.append(tuple(sorted(cand)))
    tried += list(itertools.combinations(range(F.shape[0]), r))
    for idx in tried:
        try:
            linalg.lu_solve(F[np.ix_(idx, idx)], np.zeros(r), tol)
            return tuple(idx)
        except SingularMatrix:
            continue
    raise SingularF(f"no nonsingular {r}x{r} principal block of F")


def decompose(fg: FGSystem, alpha1=None) -> GaugeDecomposition:
    """Block decomposition of F and the dependent-row coefficients.

    ``alpha1`` may be given to keep the split fixed (as during integration);
    otherwise a nonsingular principal block of size ``r_F`` is selected.
    """
    m, F, G = fg.m, fg.F, fg.G
    if alpha1 is None:
        alpha1 = _principal_block(F, fg.r_F, fg.pivot_tol) if fg.r_F else ()
    a1 = list(alpha1)
    a2 = [k for k in range(m) if k not in alpha1]
    F11 = F[np.ix_(a1, a1)]
    try:
        F11bar = linalg.inverse(F11, fg.pivot_tol) if a1 else np.zeros((0, 0))
    except SingularMatrix as e:
        raise SingularF(f"independent block of F became singular: {e}") from None
    lam = F[np.ix_(a2, a1)] @ F11bar if a1 else np.zeros((len(a2), 0))
    rF21 = F[np.ix_(a2, a1)] - lam @ F11
    rF22 = F[np.ix_(a2, a2)] - lam @ F[np.ix_(a1, a2)]
    rG = G[a2] - lam @ G[a1]
    return GaugeDecomposition(
        alpha1=tuple(a1),
        alpha2=tuple(a2),
        lam=lam,
        F11bar=F11bar,
        residual_F21=float(np.max(np.abs(rF21))) if rF21.size else 0.0,
        residual_F22=float(np.max(np.abs(rF22))) if rF22.size else 0.0,
        residual_G=rG,
    )


def solve_velocities(fg: FGSystem, decomposition: GaugeDecomposition | None = None, gauge_input=None, tol: float = CONSISTENCY_TOL) -> np.ndarray:
    """Noncanonical velocities from ``F qd = G``.

    Full-rank F is inverted directly.  Otherwise the dependent rows must be
    consistent and the gauge velocities take ``gauge_input`` (zeros by
    default).
    """
    m = fg.m
    if m == 0:
        return np.zeros(0)
    if fg.r_F == m and decomposition is None:
        try:
            return linalg.lu_solve(fg.F, fg.G, fg.pivot_tol)
        except SingularMatrix as e:
            raise SingularF(str(e)) from None
    dec = decompose(fg) if decomposition is None else decomposition
    if dec.consistency > tol:
        raise InconsistentSystem(
            f"velocity equations are inconsistent: dependent-row residual {dec.consistency:.3e}",
            residual=dec.residual_G.copy(),
        )
    n_g = len(dec.alpha2)
    u = np.zeros(n_g) if gauge_input is None else np.asarray(gauge_input, dtype=float)
    if u.shape != (n_g,):
        raise DynamicsError(f"gauge input needs {n_g} entries, got {u.size}")
    a1, a2 = list(dec.alpha1), list(dec.alpha2)
    out = np.empty(m)
    out[a2] = u
    if a1:
        out[a1] = dec.F11bar @ (fg.G[a1] - fg.F[np.ix_(a1, a2)] @ u)
    return out


# ---------------------------------------------------------------------------
# right-hand side


@dataclass
class StepInfo:
    H0: float
    residual: float
    r_F: int
    consistency: float


class EquationsOfMotion:
    """Right-hand side of the reduced equations for one bundle.

    Nondynamical regime: state ``[q_c, p, q_nc]``; noncanonical velocities
    solve ``F qd = G``.  Dynamical regime: state ``[q_c, p, q_nc, qd_nc]``;
    the second-order noncanonical equation is solved for the accelerations.
    """

    def __init__(self, bundle: HamiltonianBundle, gauge_input=None, drop_time_term: bool = False, alpha1=None, tol: float = CONSISTENCY_TOL):
        self.bundle = bundle
        self.gauge_input = None if gauge_input is None else np.asarray(gauge_input, dtype=float)
        self.drop_time_term = drop_time_term
        self.alpha1 = alpha1
        self.r_F = None
        self.tol = tol
        self.guess = None
        self._memo = None
        self.n_p, self.m = bundle.n_p, bundle.m

    @property
    def dynamical(self) -> bool:
        return self.bundle.regime == DYNAMICAL

    def point(self, t: float, y) -> PhasePoint:
        n_p, m = self.n_p, self.m
        if not np.all(np.isfinite(y)):
            raise DynamicsError(f"state became non-finite at t={t}")
        y = np.array(y, dtype=float)
        if self.dynamical:
            return PhasePoint.trusted(t, y[:n_p], y[n_p:2 * n_p], y[2 * n_p:2 * n_p + m], y[2 * n_p + m:])
        return PhasePoint.trusted(t, y[:n_p], y[n_p:2 * n_p], y[2 * n_p:])

    def state_vector(self, x: PhasePoint) -> np.ndarray:
        y = x.vector()
        if self.dynamical:
            if x.qd_nc is None:
                raise DynamicsError("dynamical regime needs initial noncanonical velocities")
            y = np.concatenate([y, x.qd_nc])
        return y

    def fix_split(self, x: PhasePoint):
        """Freeze the rank of F and the independent block from ``x``."""
        if self.dynamical or self.m == 0:
            self.r_F = self.m if self.m else 0
            self.alpha1 = tuple(range(self.m))
            return
        fg = build_FG(self.bundle, x, self.drop_time_term)
        self.r_F = fg.r_F
        if fg.r_F < self.m and self.alpha1 is None:
            self.alpha1 = decompose(fg).alpha1

    def evaluate(self, t: float, y):
        """Return ``(dy/dt, fg, qd_nc)`` at state ``y``."""
        key = (float(t), np.asarray(y, dtype=float).tobytes())
        if self._memo is not None and self._memo[0] == key:
            return self._memo[1]
        out = self._evaluate(t, y)
        self._memo = (key, out)
        return out

    def _evaluate(self, t: float, y):
        b = self.bundle
        x = self.point(t, y)
        st = b.evaluate(x, self.guess)
        self.guess = st.v
        F, G = fg_arrays(st, self.n_p, self.drop_time_term)
        # The rank of F is monitored once per accepted step (see info); at the
        # intermediate stages a singular block shows up in the solve instead.
        r_F = self.r_F if self.r_F is not None else (linalg.rank(F, b.pivot_tol) if self.m else 0)
        fg = FGSystem(F=F, G=G, r_F=r_F, point=x, state=st, pivot_tol=b.pivot_tol)
        n_p = self.n_p
        if self.dynamical:
            u = x.qd_nc
            try:
                acc = linalg.lu_solve(st.dqd[1:], G - F @ u, b.pivot_tol)
            except SingularMatrix as e:
                raise DynamicsError(f"noncanonical velocity Hessian became singular: {e}") from None
        elif self.m == 0:
            u = np.zeros(0)
        elif r_F == self.m:
            u = solve_velocities(fg)
        else:
            u = solve_velocities(fg, decompose(fg, self.alpha1), self.gauge_input, self.tol)
        dq_c = st.dp[0] + st.dp[1:].T @ u
        dp = -(st.dq[0, :n_p] + st.dq[1:, :n_p].T @ u)
        parts = [dq_c, dp, u]
        if self.dynamical:
            parts.append(acc)
        return np.concatenate(parts), fg, u

    def __call__(self, t: float, y) -> np.ndarray:
        return self.evaluate(t, y)[0]

    def info(self, t: float, y) -> StepInfo:
        _, fg, u = self.evaluate(t, y)
        r_F = fg.r_F
        if self.m and not self.dynamical:
            r_F = linalg.rank(fg.F, fg.pivot_tol)
            if self.r_F is not None and r_F != self.r_F:
                raise RankVariation(f"rank of F changed from {self.r_F} to {r_F} at t={t}", ranks=(self.r_F, r_F), where=t)
        res = float(np.max(np.abs(fg.F @ u - fg.G))) if self.m and not self.dynamical else 0.0
        cons = 0.0
        if self.m and not self.dynamical and r_F < self.m:
            cons = decompose(fg, self.alpha1).consistency
        return StepInfo(float(fg.state.H0), res, r_F, cons)


def step_rhs(bundle: HamiltonianBundle, x: PhasePoint, gauge_input=None, drop_time_term: bool = False) -> np.ndarray:
    """Time derivatives of ``(q_c, p, q_nc)`` (and ``qd_nc`` when dynamical)."""
    eom = EquationsOfMotion(bundle, gauge_input, drop_time_term)
    eom.fix_split(x)
    return eom(x.t, eom.state_vector(x))


# ---------------------------------------------------------------------------
# integrators


def rk4_steps(t0: float, t1: float, dt: float) -> tuple[int, float]:
    if not dt > 0:
        raise DynamicsError("dt must be positive")
    if t1 < t0:
        raise DynamicsError("t1 must not precede t0")
    n = max(1, math.ceil((t1 - t0) / dt - 1e-9)) if t1 > t0 else 0
    return n, ((t1 - t0) / n if n else 0.0)


def rk4(f, t0: float, y0, t1: float, dt: float, on_step=None):
    """Classical RK4 with a uniform step that lands exactly on ``t1``."""
    n, h = rk4_steps(t0, t1, dt)
    y = np.array(y0, dtype=float)
    for k in range(n):
        t = t0 + k * h
        k1 = f(t, y)
        k2 = f(t + h / 2, y + h / 2 * k1)
        k3 = f(t + h / 2, y + h / 2 * k2)
        k4 = f(t + h, y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        tn = t0 + (k + 1) * h if k + 1 < n else t1
        if on_step is not None:
            on_step(tn, y)
    return y


# Dormand-Prince 5(4) tableau
_DP_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_DP_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_DP_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_E = _DP_B - np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])


def rk45(f, t0: float, y0, t1: float, dt: float, on_step=None, rtol: float = 1e-8, atol: float = 1e-10, max_steps: int = 10_000_000):
    """Adaptive Dormand-Prince 5(4); ``dt`` is the first trial step."""
    if not dt > 0:
        raise DynamicsError("dt must be positive")
    t = t0
    y = np.array(y0, dtype=float)
    h = min(dt, t1 - t0) if t1 > t0 else 0.0
    k1 = f(t, y) if t1 > t0 else None
    steps = 0
    while t < t1:
        if steps >= max_steps:
            raise DynamicsError("adaptive integrator exceeded its step budget")
        h = min(h, t1 - t)
        ks = [k1]
        for i in range(1, 7):
            yi = y + h * sum(a * k for a, k in zip(_DP_A[i], ks))
            ks.append(f(t + _DP_C[i] * h, yi))
        y5 = y + h * sum(b * k for b, k in zip(_DP_B, ks))
        err = h * sum(e * k for e, k in zip(_DP_E, ks))
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y5))
        en = float(np.sqrt(np.mean((err / scale) ** 2))) if len(y) else 0.0
        if en <= 1.0:
            t = t + h
            if t1 - t <= 1e-14 * max(1.0, abs(t1)):
                t = t1
            y = y5
            k1 = ks[6]
            steps += 1
            if on_step is not None:
                on_step(t, y)
        fac = 0.9 * en ** -0.2 if en > 0 else 5.0
        h = h * min(5.0, max(0.2, fac))
        if h < 1e-14 * max(1.0, abs(t)):
            raise DynamicsError("adaptive step size underflow")
    return y


# ---------------------------------------------------------------------------
# trajectories


@dataclass(eq=False)
class Trajectory:
    """Time series of reduced phase points with per-step diagnostics."""

    bundle: HamiltonianBundle
    times: np.ndarray
    states: np.ndarray
    H0: np.ndarray
    residual: np.ndarray
    r_F: np.ndarray
    consistency: np.ndarray
    method: str
    gauge_input: np.ndarray | None = None
    error: HamfoldError | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_p(self) -> int:
        return self.bundle.n_p

    @property
    def m(self) -> int:
        return self.bundle.m

    def __len__(self) -> int:
        return len(self.times)

    def point(self, k: int) -> PhasePoint:
        n_p, m = self.n_p, self.m
        y = self.states[k]
        qd = y[2 * n_p + m:] if y.size > 2 * n_p + m else None
        return PhasePoint(self.times[k], y[:n_p], y[n_p:2 * n_p], y[2 * n_p:2 * n_p + m], qd)

    @property
    def q(self) -> np.ndarray:
        """Configuration in model coordinate order, one row per time."""
        n_p, m = self.n_p, self.m
        out = np.empty((len(self.times), self.bundle.n))
        out[:, self.bundle.C] = self.states[:, :n_p]
        out[:, self.bundle.N] = self.states[:, 2 * n_p:2 * n_p + m]
        return out

    @property
    def p(self) -> np.ndarray:
        return self.states[:, self.n_p:2 * self.n_p]

    @property
    def qd_nc(self) -> np.ndarray | None:
        k = 2 * self.n_p + self.m
        return self.states[:, k:] if self.states.shape[1] > k else None

    def to_csv(self) -> str:
        sys = self.bundle.system
        labels = self.bundle.partition.canonical_labels()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", *sys.coords, *("p" + c[1:] for c in labels), "H0", "residual", "rF"])
        q, p = self.q, self.p
        for k in range(len(self.times)):
            row = [self.times[k], *q[k], *p[k], self.H0[k], self.residual[k]]
            w.writerow([_g17(v) for v in row] + [int(self.r_F[k])])
        return buf.getvalue()


def _g17(v: float) -> str:
    return format(float(v), ".17g")


def integrate(
    bundle: HamiltonianBundle,
    ic: PhasePoint,
    t1: float,
    dt: float,
    method: str = "rk4",
    gauge_input=None,
    drop_time_term: bool = False,
    tol: float = CONSISTENCY_TOL,
) -> Trajectory:
    """Integrate the reduced equations from ``ic`` to time ``t1``.

    Inconsistent initial data raises.  Failures after the first step stop the
    run; the trajectory up to the failure is returned with ``error`` set.
    """
    if method not in ("rk4", "rk45"):
        raise DynamicsError(f"unknown method {method!r}")
    if not t1 > ic.t:
        raise DynamicsError("t1 must exceed the initial time")
    eom = EquationsOfMotion(bundle, gauge_input, drop_time_term, tol=tol)
    eom.fix_split(ic)
    y0 = eom.state_vector(ic)
    info0 = eom.info(ic.t, y0)
    if info0.consistency > tol:
        raise InconsistentSystem(f"initial data violate the velocity consistency conditions (residual {info0.consistency:.3e})")
    times, states, infos = [ic.t], [y0.copy()], [info0]

    def on_step(t, y):
        try:
            info = eom.info(t, y)
        except RankVariation as e:
            e.where = len(times)
            raise RankVariation(f"{e} (step {len(times)})", ranks=e.ranks, where=len(times)) from None
        times.append(t)
        states.append(y.copy())
        infos.append(info)

    error = None
    try:
        (rk4 if method == "rk4" else rk45)(eom, ic.t, y0, t1, dt, on_step)
    except HamfoldError as e:
        error = e
    return Trajectory(
        bundle=bundle,
        times=np.array(times),
        states=np.array(states),
        H0=np.array([i.H0 for i in infos]),
        residual=np.array([i.residual for i in infos]),
        r_F=np.array([i.r_F for i in infos]),
        consistency=np.array([i.consistency for i in infos]),
        method=method,
        gauge_input=None if gauge_input is None else np.asarray(gauge_input, dtype=float),
        error=error,
        meta={"t1": t1, "dt": dt, "regime": bundle.regime},
    )


# ---------------------------------------------------------------------------
# second-order noncanonical equation along a trajectory


def residual_noncanonical_eom(bundle: HamiltonianBundle, traj: Trajectory) -> tuple[np.ndarray, np.ndarray]:
    """Residual of the general noncanonical equation at interior samples.

    Velocities come from the stored noncanonical velocities when present and
    from central differences of the positions otherwise; accelerations and
    the total time derivative of the velocity-gradient term use central
    differences.  Returns ``(times, max-abs residual per time)``.
    """
    N = len(traj.times)
    if N < 3:
        raise TrajectoryTooShort(f"need at least 3 samples, got {N}")
    t = traj.times
    n_p, m = bundle.n_p, bundle.m
    if m == 0:
        return t[1:-1], np.zeros(N - 2)
    qn = traj.states[:, 2 * n_p:2 * n_p + m]
    stored = traj.qd_nc
    if stored is not None and stored.shape[1] == m:
        qd = stored
        qdd = np.gradient(qd, t, axis=0)
    else:
        qd = np.gradient(qn, t, axis=0)
        qdd = np.empty_like(qn)
        h1 = t[1:-1] - t[:-2]
        h2 = t[2:] - t[1:-1]
        qdd[1:-1] = 2 * ((qn[2:] - qn[1:-1]) / h2[:, None] - (qn[1:-1] - qn[:-2]) / h1[:, None]) / (h1 + h2)[:, None]
        qdd[0] = qdd[-1] = np.nan
    K = np.empty((N, m))
    lhs_M = np.empty((N, m))
    rhs = np.empty((N, m))
    for k in range(N):
        x = traj.point(k).replace(qd_nc=qd[k])
        st = bundle.evaluate(x)
        F, G = fg_arrays(st, n_p)
        M = st.dqd[1:]
        K[k] = st.dqd[0] + M.T @ qd[k]
        lhs_M[k] = M @ qdd[k] if np.all(np.isfinite(qdd[k])) else np.nan
        rhs[k] = G - F @ qd[k]
    dK = np.gradient(K, t, axis=0)
    r = lhs_M + dK - rhs
    return t[1:-1], np.max(np.abs(r[1:-1]), axis=1)


# ---------------------------------------------------------------------------
# consistent initial data


def consistency_residual(bundle: HamiltonianBundle, x: PhasePoint, alpha1=None) -> np.ndarray:
    fg = build_FG(bundle, x)
    if fg.m == 0 or fg.r_F == fg.m:
        return np.zeros(0)
    return decompose(fg, alpha1).residual_G


def project_consistent(bundle: HamiltonianBundle, x: PhasePoint, tol: float = 1e-13, max_iter: int = 30, alpha1=None) -> PhasePoint:
    """Move the momenta (minimum-norm Gauss-Newton) onto the consistency surface."""
    if bundle.n_p == 0:
        r = consistency_residual(bundle, x, alpha1)
        if r.size and np.max(np.abs(r)) > tol:
            raise InconsistentSystem("no momenta to adjust and the point is inconsistent", residual=r)
        return x
    for _ in range(max_iter):
        r = consistency_residual(bundle, x, alpha1)
        if r.size == 0 or np.max(np.abs(r)) <= tol:
            return x
        J = np.empty((r.size, bundle.n_p))
        for k in range(bundle.n_p):
            h = 1e-6 * max(1.0, abs(x.p[k]))
            pa, pb = x.p.copy(), x.p.copy()
            pa[k] += h
            pb[k] -= h
            J[:, k] = (consistency_residual(bundle, x.replace(p=pa), alpha1) - consistency_residual(bundle, x.replace(p=pb), alpha1)) / (2 * h)
        step, *_ = np.linalg.lstsq(J, r, rcond=None)
        x = x.replace(p=x.p - step)
    r = consistency_residual(bundle, x, alpha1)
    if r.size and np.max(np.abs(r)) > max(tol, 1e-10):
        raise InconsistentSystem("could not project onto the consistency surface", residual=r)
    return x
