"""Partial Legendre transform on the reduced phase space.

Only the canonical coordinates get momenta.  Their velocities are recovered
from ``p_i = dL/dqd_i`` by Newton iteration, and the Hamiltonians

    H0  = p_i v^i + (dL/dqd_a) qd^a - L
    H_a = -dL/dqd_a

are evaluated together with all their first derivatives.  The derivatives
come from implicit differentiation of the momenta map, so they are exact up
to the Newton tolerance.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import linalg
from .errors import (
    VelocityDependenceViolation,
    DomainError,
    LegendreError,
    NoConvergence,
    RegimeError,
    SingularJacobian,
    SingularMatrix,
)
from .model import LagrangianSystem, Partition, default_probes, noncanonical_hessian_norm

NONDYNAMICAL = "nondynamical"
DYNAMICAL = "dynamical"
OVEREXTENDED = "overextended"


def _vec(x) -> np.ndarray:
    a = np.atleast_1d(np.asarray(x, dtype=float))
    if a.ndim != 1:
        raise LegendreError("expected a vector")
    return a


@dataclass(frozen=True, eq=False)
class PhasePoint:
    """Point of the reduced phase space ``(t, q^i, p_i, q^a)``.

    ``qd_nc`` carries the noncanonical velocities; it matters only in the
    dynamical regime and may be ``None`` otherwise.
    """

    t: float
    q_c: np.ndarray
    p: np.ndarray
    q_nc: np.ndarray
    qd_nc: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "t", float(self.t))
        object.__setattr__(self, "q_c", _vec(self.q_c) if len(np.atleast_1d(self.q_c)) else np.zeros(0))
        object.__setattr__(self, "p", _vec(self.p) if len(np.atleast_1d(self.p)) else np.zeros(0))
        object.__setattr__(self, "q_nc", _vec(self.q_nc) if len(np.atleast_1d(self.q_nc)) else np.zeros(0))
        if self.qd_nc is not None:
            object.__setattr__(self, "qd_nc", np.atleast_1d(np.asarray(self.qd_nc, dtype=float)).reshape(-1))
        if len(self.q_c) != len(self.p):
            raise LegendreError("q_c and p lengths differ")
        vals = [self.t, *self.q_c, *self.p, *self.q_nc]
        if self.qd_nc is not None:
            vals += list(self.qd_nc)
        if not np.all(np.isfinite(vals)):
            raise LegendreError("phase point entries must be finite")

    @classmethod
    def trusted(cls, t: float, q_c, p, q_nc, qd_nc=None) -> "PhasePoint":
        """Build from float arrays already known to be valid (integrator hot path)."""
        self = object.__new__(cls)
        object.__setattr__(self, "t", float(t))
        object.__setattr__(self, "q_c", q_c)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q_nc", q_nc)
        object.__setattr__(self, "qd_nc", qd_nc)
        return self

    @property
    def n_p(self) -> int:
        return len(self.q_c)

    @property
    def m(self) -> int:
        return len(self.q_nc)

    def vector(self) -> np.ndarray:
        """State vector ``[q_c, p, q_nc]`` used by the integrators."""
        return np.concatenate([self.q_c, self.p, self.q_nc])

    @classmethod
    def from_vector(cls, t: float, y, n_p: int, qd_nc=None) -> "PhasePoint":
        y = np.asarray(y, dtype=float)
        return cls(t, y[:n_p], y[n_p:2 * n_p], y[2 * n_p:], qd_nc)

    def replace(self, **kw) -> "PhasePoint":
        d = dict(t=self.t, q_c=self.q_c, p=self.p, q_nc=self.q_nc, qd_nc=self.qd_nc)
        d.update(kw)
        return PhasePoint(**d)

    def key(self) -> tuple:
        qd = b"" if self.qd_nc is None else self.qd_nc.tobytes()
        return (self.t, self.q_c.tobytes(), self.p.tobytes(), self.q_nc.tobytes(), qd)


@dataclass(frozen=True, eq=False)
class Grad:
    """First derivatives of one Hamiltonian on the reduced space."""

    d_dq_c: np.ndarray
    d_dp: np.ndarray
    d_dq_nc: np.ndarray
    d_dt: float
    d_dqd_nc: np.ndarray


@dataclass(frozen=True, eq=False)
class HState:
    """All Hamiltonians and derivatives at one phase point.

    Row 0 of every array belongs to H0, row ``1 + k`` to the k-th noncanonical
    Hamiltonian.  Coordinate columns of ``dq``, and the vectors ``q`` and
    ``qd``, follow the partition order ``canonical + noncanonical``.
    """

    point: PhasePoint
    v: np.ndarray
    qd_nc: np.ndarray
    q: np.ndarray
    qd: np.ndarray
    H: np.ndarray
    dt: np.ndarray
    dq: np.ndarray
    dp: np.ndarray
    dqd: np.ndarray
    iterations: int

    @property
    def H0(self) -> float:
        return float(self.H[0])

    @property
    def Halpha(self) -> np.ndarray:
        return self.H[1:]

    def grad(self, row: int) -> Grad:
        n_p = len(self.v)
        return Grad(
            d_dq_c=self.dq[row, :n_p],
            d_dp=self.dp[row],
            d_dq_nc=self.dq[row, n_p:],
            d_dt=float(self.dt[row]),
            d_dqd_nc=self.dqd[row],
        )


class HamiltonianBundle:
    """Evaluators for H0 and the noncanonical Hamiltonians of one partition.

    The regime is fixed at construction from the probe states of the
    partition: *nondynamical* when the Hamiltonians cannot depend on the
    noncanonical velocities, *dynamical* when that dependence is
    nondegenerate, and *overextended* when the canonical Hessian block is
    singular (more momenta than the Hessian rank supports).
    """

    def __init__(self, system: LagrangianSystem, partition: Partition, newton_tol: float = 1e-12, max_iter: int = 50, cache_size: int = 64):
        if partition.system is not system:
            if partition.system.coords != system.coords or partition.system.L != system.L:
                raise LegendreError("partition belongs to a different system")
        self.system = system
        self.partition = partition
        self.newton_tol = float(newton_tol)
        self.max_iter = int(max_iter)
        self.pivot_tol = partition.pivot_tol
        self.C = list(partition.canonical)
        self.N = list(partition.noncanonical)
        self.perm = list(partition.permutation)
        self._CC = np.ix_(self.C, self.C)
        self._CN = np.ix_(self.C, self.N)
        self._NC = np.ix_(self.N, self.C)
        self._NN = np.ix_(self.N, self.N)
        self.n = system.n
        self.n_p = partition.n_p
        self.m = partition.m
        self._derivs = system.compile_derivs(self.perm)
        self._cache: OrderedDict = OrderedDict()
        self._cache_size = cache_size
        self.regime = self._detect_regime()

    # -- regime --------------------------------------------------------------

    def _detect_regime(self) -> str:
        probes = [(b.t, np.array([b.q[int(c[1:]) - 1] for c in self.system.coords]),
                   np.array([b.qd[int(c[1:]) - 1] for c in self.system.coords])) for b in self.partition.probes]
        if not probes:
            probes = default_probes(self.n)
        flat, nonsing = True, True
        for t, q, qd in probes:
            try:
                w = self.system.hessian(t, q, qd)
            except DomainError:
                continue
            if self.n_p:
                try:
                    linalg.lu_solve(w[np.ix_(self.C, self.C)], np.zeros(self.n_p), self.pivot_tol)
                except SingularMatrix:
                    return OVEREXTENDED
            if not self.m:
                continue
            thresh = self.pivot_tol * max(1.0, float(np.max(np.abs(w))))
            if noncanonical_hessian_norm(w, self.C, self.N, self.pivot_tol) > thresh:
                flat = False
            s = w[np.ix_(self.N, self.N)]
            if self.C:
                s = s - w[np.ix_(self.N, self.C)] @ linalg.lu_solve(w[np.ix_(self.C, self.C)], w[np.ix_(self.C, self.N)], self.pivot_tol)
            if linalg.rank(s, self.pivot_tol) < self.m:
                nonsing = False
        if flat:
            return NONDYNAMICAL
        if nonsing:
            return DYNAMICAL
        raise RegimeError("noncanonical velocity dependence is partially degenerate; choose another n_p")

    @property
    def nondynamical(self) -> bool:
        return self.regime == NONDYNAMICAL

    # -- points ----------------------------------------------------------------

    def point_from_lagrangian(self, t: float, q, qd) -> PhasePoint:
        """Reduced phase point for configuration ``q`` and velocity ``qd`` (model order)."""
        q = np.asarray(q, dtype=float)
        qd = np.asarray(qd, dtype=float)
        d = self.system.derivs(t, q, qd)
        return PhasePoint(t, q[self.C], d.Lqd[self.C], q[self.N], qd[self.N])

    def full_q(self, x: PhasePoint) -> np.ndarray:
        """Configuration in model coordinate order."""
        q = np.empty(self.n)
        q[self.C] = x.q_c
        q[self.N] = x.q_nc
        return q

    def _check_point(self, x: PhasePoint):
        if x.n_p != self.n_p or x.m != self.m:
            raise LegendreError(f"phase point has shape ({x.n_p}, {x.m}), partition needs ({self.n_p}, {self.m})")

    def _qd_nc(self, x: PhasePoint) -> np.ndarray:
        if self.regime == NONDYNAMICAL or self.m == 0:
            return np.zeros(self.m)
        if x.qd_nc is None or len(x.qd_nc) != self.m:
            raise RegimeError("dynamical regime needs the noncanonical velocities qd_nc")
        return x.qd_nc

    # -- core evaluation --------------------------------------------------------
    #
    # Internally all arrays are in partition order (canonical block first), so
    # the blocks of the Hessian are plain slices.

    def solve_velocities(self, x: PhasePoint, guess=None, qd_nc=None):
        """Newton solve of the momenta map.

        Returns ``(v, derivs, iterations, q, qd)`` with ``q``, ``qd`` and the
        derivative arrays in partition order.
        """
        self._check_point(x)
        if self.regime == OVEREXTENDED:
            raise SingularJacobian("canonical Hessian block is singular for this partition")
        n_p = self.n_p
        q = np.concatenate([x.q_c, x.q_nc])
        qd = np.empty(self.n)
        qd[n_p:] = self._qd_nc(x) if qd_nc is None else qd_nc
        v = np.zeros(n_p) if guess is None else np.array(guess, dtype=float)
        if v.shape != (n_p,):
            raise LegendreError("Newton guess has the wrong length")
        res = np.inf
        for it in range(self.max_iter + 1):
            qd[:n_p] = v
            d = self._derivs(x.t, q, qd)
            r = d.Lqd[:n_p] - x.p
            res = float(np.max(np.abs(r))) if n_p else 0.0
            if res <= self.newton_tol:
                return v, d, it, q, qd
            if it == self.max_iter:
                break
            try:
                step = linalg.lu_solve(d.W[:n_p, :n_p], r, self.pivot_tol)
            except SingularMatrix as e:
                raise SingularJacobian(f"canonical Hessian block became singular: {e}") from None
            v = v - step
            if not np.all(np.isfinite(v)):
                break
        raise NoConvergence(f"momenta map inversion failed after {self.max_iter} iterations", res)

    def evaluate(self, x: PhasePoint, guess=None) -> HState:
        key = x.key()
        hit = self._cache.get(key)
        if hit is not None:
            self._cache.move_to_end(key)
            return hit
        st = self._evaluate(x, guess)
        self._cache[key] = st
        if len(self._cache) > self._cache_size:
            self._cache.popitem(last=False)
        return st

    def _evaluate(self, x: PhasePoint, guess) -> HState:
        v, d, iters, q, qd = self.solve_velocities(x, guess)
        n, n_p, m = self.n, self.n_p, self.m
        c, nc = slice(0, n_p), slice(n_p, n)
        u = qd[nc]
        W, Wq, Wt = d.W, d.Wq, d.Wt
        # Velocity response to (t, q, p, qd_nc): one solve with the canonical block.
        if n_p:
            rhs = np.empty((n_p, 1 + n + n_p + m))
            rhs[:, 0] = -Wt[c]
            rhs[:, 1:1 + n] = -Wq[c]
            rhs[:, 1 + n:1 + n + n_p] = np.eye(n_p)
            rhs[:, 1 + n + n_p:] = -W[c, nc]
            try:
                dv = linalg.lu_solve(W[c, c], rhs, self.pivot_tol)
            except SingularMatrix as e:
                raise SingularJacobian(str(e)) from None
        else:
            dv = np.zeros((0, 1 + n + m))
        # Explicit partials of H = (H0, H_a) in (t, q, p, qd_nc) at fixed v, and
        # their sensitivity to v; the chain rule combines the two.
        expl = np.zeros((m + 1, 1 + n + n_p + m))
        expl[0, 0] = u @ Wt[nc] - d.Lt
        expl[0, 1:1 + n] = u @ Wq[nc] - d.Lq
        expl[0, 1 + n:1 + n + n_p] = v
        expl[0, 1 + n + n_p:] = u @ W[nc, nc]
        expl[1:, 0] = -Wt[nc]
        expl[1:, 1:1 + n] = -Wq[nc]
        expl[1:, 1 + n + n_p:] = -W[nc, nc]
        sens = np.empty((m + 1, n_p))
        sens[0] = x.p - d.Lqd[c] + W[c, nc] @ u
        sens[1:] = -W[nc, c]
        full = expl + sens @ dv
        H = np.empty(m + 1)
        H[0] = x.p @ v + d.Lqd[nc] @ u - d.L
        H[1:] = -d.Lqd[nc]
        return HState(
            point=x, v=v, qd_nc=u, q=q, qd=qd, H=H,
            dt=full[:, 0], dq=full[:, 1:1 + n], dp=full[:, 1 + n:1 + n + n_p],
            dqd=full[:, 1 + n + n_p:], iterations=iters,
        )

    # -- convenience --------------------------------------------------------

    def eval_H0(self, x: PhasePoint, guess=None) -> float:
        return self.evaluate(x, guess).H0

    def eval_Halpha(self, x: PhasePoint, guess=None) -> np.ndarray:
        return self.evaluate(x, guess).Halpha.copy()

    def row_of(self, which) -> int:
        """Row index for ``"H0"``, a noncanonical position ``k`` or a label."""
        if isinstance(which, str):
            if which == "H0":
                return 0
            labels = self.partition.noncanonical_labels()
            if which not in labels:
                raise LegendreError(f"{which!r} is not a noncanonical coordinate")
            return 1 + labels.index(which)
        k = int(which)
        if not 0 <= k < self.m:
            raise LegendreError(f"noncanonical index {k} outside 0..{self.m - 1}")
        return 1 + k

    def grad_H(self, x: PhasePoint, which="H0", guess=None) -> Grad:
        return self.evaluate(x, guess).grad(self.row_of(which))

    def check_velocity_independence(self, x: PhasePoint, seed: int = 0, tol: float = 1e-9, require: bool = True) -> float:
        """Compare the Hamiltonians at two random noncanonical velocities.

        Returns the largest difference.  Raises :class:`VelocityDependenceViolation`
        when it exceeds ``tol`` and ``require`` is set.
        """
        self._check_point(x)
        if self.m == 0:
            return 0.0
        rng = np.random.default_rng(seed)
        vals = []
        for _ in range(2):
            u = rng.uniform(-1.0, 1.0, self.m)
            v, d, _, _, _ = self.solve_velocities(x, None, qd_nc=u)
            vals.append(np.concatenate([[x.p @ v + d.Lqd[self.n_p:] @ u - d.L], -d.Lqd[self.n_p:]]))
        diff = float(np.max(np.abs(vals[0] - vals[1])))
        if require and diff > tol:
            raise VelocityDependenceViolation(f"Hamiltonians depend on noncanonical velocities (difference {diff:.3e})")
        return diff


def full_hamiltonian(system: LagrangianSystem, t: float, q, qd) -> float:
    """Standard Legendre transform ``p_A qd^A - L`` at a Lagrangian state."""
    d = system.derivs(t, q, qd)
    return float(d.Lqd @ np.asarray(qd, dtype=float) - d.L)
