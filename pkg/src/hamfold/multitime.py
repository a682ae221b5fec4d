"""Noncanonical coordinates read as extra times.

Each time ``tau^mu`` gets its own Hamiltonian; the canonical pair evolves
along any path in time space by summing the flows weighted by the path
direction.  The flows commute (and the endpoint is path independent) when
the zero-curvature residual vanishes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import VelocityDependenceViolation, MultiTimeError, PathError
from .expr import MULTITIME_SYMBOLS, compile_exprs, differentiate, parse
from .legendre import NONDYNAMICAL, HamiltonianBundle, PhasePoint


@dataclass(frozen=True, eq=False)
class TimeJets:
    """Hamiltonians (rows) with derivatives in tau, q and p."""

    H: np.ndarray
    dtau: np.ndarray
    dq: np.ndarray
    dp: np.ndarray


class MultiTimeSystem:
    """Hamiltonians ``H_mu(tau, q, p)`` for ``mu = 0..m``.

    Build with :meth:`from_model` (reinterpreting a nondynamical partition)
    or :meth:`from_expressions` (explicit Hamiltonians over ``tau<mu>``,
    ``q<k>``, ``p<k>``).
    """

    def __init__(self, m: int, n_p: int, jets_fn, labels=None, source: str = "", time_labels=None):
        self.m = m
        self.n_p = n_p
        self._jets = jets_fn
        self.labels = tuple(labels) if labels is not None else tuple(f"q{k + 1}" for k in range(n_p))
        self.source = source
        self.time_labels = tuple(time_labels) if time_labels is not None else ("t",) + tuple(f"tau{k}" for k in range(1, m + 1))

    @property
    def degenerate(self) -> bool:
        """True when no canonical pair is left to evolve."""
        return self.n_p == 0

    def jets(self, tau, q, p) -> TimeJets:
        tau = np.asarray(tau, dtype=float)
        if tau.shape != (self.m + 1,):
            raise MultiTimeError(f"tau needs {self.m + 1} entries")
        return self._jets(tau, np.asarray(q, dtype=float), np.asarray(p, dtype=float))

    @classmethod
    def from_model(cls, bundle: HamiltonianBundle, seed: int = 0) -> "MultiTimeSystem":
        if bundle.regime != NONDYNAMICAL:
            raise VelocityDependenceViolation(f"multi-time reading needs the nondynamical regime (bundle is {bundle.regime})")
        from .dynamics import probe_points

        for k, x in enumerate(probe_points(bundle)):
            bundle.check_velocity_independence(x, seed=seed + k)
        n_p, m = bundle.n_p, bundle.m

        def jets(tau, q, p):
            st = bundle.evaluate(PhasePoint(tau[0], q, p, tau[1:]))
            dtau = np.empty((m + 1, m + 1))
            dtau[:, 0] = st.dt
            dtau[:, 1:] = st.dq[:, n_p:]
            return TimeJets(st.H.copy(), dtau, st.dq[:, :n_p], st.dp)

        part = bundle.partition
        return cls(m, n_p, jets, part.canonical_labels(), bundle.system.name, ["t", *part.noncanonical_labels()])

    @classmethod
    def from_expressions(cls, hamiltonians, n_p: int | None = None) -> "MultiTimeSystem":
        exprs = [parse(h, MULTITIME_SYMBOLS) if isinstance(h, str) else h for h in hamiltonians]
        if not exprs:
            raise MultiTimeError("need at least one Hamiltonian")
        m = len(exprs) - 1
        syms = set().union(*(e.symbols for e in exprs))
        taus = [s for s in syms if s.startswith("tau")]
        if any(int(s[3:]) > m for s in taus):
            raise MultiTimeError(f"time symbols beyond tau{m} for {m + 1} Hamiltonians")
        ks = [int(s[1:]) for s in syms if s[0] in "qp"]
        if n_p is None:
            n_p = max(ks, default=0)
        if any(k > n_p for k in ks):
            raise MultiTimeError(f"phase symbols beyond index {n_p}")
        tau_s = [f"tau{k}" for k in range(m + 1)]
        q_s = [f"q{k + 1}" for k in range(n_p)]
        p_s = [f"p{k + 1}" for k in range(n_p)]
        flat = list(exprs)
        for e in exprs:
            flat += [differentiate(e, s) for s in tau_s + q_s + p_s]
        src = {s: f"tau[{k}]" for k, s in enumerate(tau_s)}
        src.update({s: f"q[{k}]" for k, s in enumerate(q_s)})
        src.update({s: f"p[{k}]" for k, s in enumerate(p_s)})
        prog = compile_exprs(flat, ("tau", "q", "p"), src)
        M = m + 1
        width = M + 2 * n_p

        def jets(tau, q, p):
            a = np.array(prog(tau, q, p))
            H = a[:M]
            d = a[M:].reshape(M, width)
            return TimeJets(H, d[:, :M], d[:, M:M + n_p], d[:, M + n_p:])

        return cls(m, n_p, jets, q_s, "expressions")

    def residual_matrix(self, tau, q, p) -> np.ndarray:
        """``dH_mu/dtau^nu - dH_nu/dtau^mu + {H_mu, H_nu}`` for all pairs."""
        j = self.jets(tau, q, p)
        P = j.dq @ j.dp.T
        return (j.dtau - j.dtau.T) + (P - P.T)


@dataclass
class IntegrabilityReport:
    max_residual: float
    per_probe: list[float]
    worst_pair: tuple[int, int] | None

    def as_dict(self) -> dict:
        return {"max_residual": self.max_residual, "per_probe": self.per_probe, "worst_pair": list(self.worst_pair) if self.worst_pair else None}


def random_probes(sys: MultiTimeSystem, count: int, seed: int = 0, scale: float = 1.0) -> list[tuple]:
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        out.append((rng.uniform(-scale, scale, sys.m + 1), rng.uniform(-scale, scale, sys.n_p), rng.uniform(-scale, scale, sys.n_p)))
    return out


def check_integrability(sys: MultiTimeSystem, probes) -> IntegrabilityReport:
    """Largest zero-curvature residual over the probes ``(tau, q, p)``."""
    per, worst, pair = [], 0.0, None
    for tau, q, p in probes:
        R = sys.residual_matrix(tau, q, p)
        r = float(np.max(np.abs(R))) if R.size else 0.0
        per.append(r)
        if R.size and r > worst:
            worst = r
            i, j = np.unravel_index(int(np.argmax(np.abs(R))), R.shape)
            pair = (int(min(i, j)), int(max(i, j)))
    return IntegrabilityReport(worst, per, pair)


@dataclass(frozen=True, eq=False)
class TimePath:
    """Piecewise-linear path through time space."""

    waypoints: np.ndarray

    def __post_init__(self):
        w = np.atleast_2d(np.asarray(self.waypoints, dtype=float))
        if w.size == 0:
            raise PathError("path needs at least one waypoint")
        if not np.all(np.isfinite(w)):
            raise PathError("waypoints must be finite")
        for k in range(1, len(w)):
            if w[k, 0] < w[k - 1, 0]:
                raise PathError(f"physical time decreases between waypoints {k - 1} and {k}")
            if np.array_equal(w[k], w[k - 1]):
                raise PathError(f"waypoints {k - 1} and {k} coincide")
        object.__setattr__(self, "waypoints", w)

    @property
    def dim(self) -> int:
        return self.waypoints.shape[1]

    @classmethod
    def from_text(cls, text: str) -> "TimePath":
        rows = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                rows.append([float(v) for v in line.split(",")])
            except ValueError:
                raise PathError(f"line {lineno}: expected comma-separated reals") from None
        if not rows:
            raise PathError("path file has no waypoints")
        if len({len(r) for r in rows}) != 1:
            raise PathError("waypoints have different lengths")
        return cls(np.array(rows))

    @classmethod
    def load(cls, file) -> "TimePath":
        return cls.from_text(Path(file).read_text(encoding="utf-8"))


@dataclass(eq=False)
class PathResult:
    q: np.ndarray
    p: np.ndarray
    s: np.ndarray
    tau: np.ndarray
    q_trace: np.ndarray
    p_trace: np.ndarray
    meta: dict = field(default_factory=dict)


def integrate_path(sys: MultiTimeSystem, q0, p0, path: TimePath, dt: float) -> PathResult:
    """RK4 along each segment in arclength with step at most ``dt``."""
    if not dt > 0:
        raise MultiTimeError("dt must be positive")
    if path.dim != sys.m + 1:
        raise PathError(f"waypoints need {sys.m + 1} entries, got {path.dim}")
    n_p = sys.n_p
    y = np.concatenate([np.asarray(q0, dtype=float), np.asarray(p0, dtype=float)])
    if y.shape != (2 * n_p,):
        raise MultiTimeError(f"initial data need {n_p} coordinates and momenta")
    w = path.waypoints
    s_tot = 0.0
    ss, taus, ys = [0.0], [w[0].copy()], [y.copy()]
    for k in range(len(w) - 1):
        a, b = w[k], w[k + 1]
        length = float(np.linalg.norm(b - a))
        u = (b - a) / length
        nsteps = max(1, math.ceil(length / dt - 1e-9))
        h = length / nsteps

        def f(s, y, a=a, u=u):
            j = sys.jets(a + s * u, y[:n_p], y[n_p:])
            return np.concatenate([u @ j.dp, -(u @ j.dq)])

        for i in range(nsteps):
            s = i * h
            k1 = f(s, y)
            k2 = f(s + h / 2, y + h / 2 * k1)
            k3 = f(s + h / 2, y + h / 2 * k2)
            k4 = f(s + h, y + h * k3)
            y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            ss.append(s_tot + (i + 1) * h)
            taus.append(b.copy() if i + 1 == nsteps else a + (i + 1) * h * u)
            ys.append(y.copy())
        s_tot += length
    Y = np.array(ys)
    return PathResult(y[:n_p], y[n_p:], np.array(ss), np.array(taus), Y[:, :n_p], Y[:, n_p:])
