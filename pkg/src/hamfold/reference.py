"""Independent oracles: Euler-Lagrange and full Hamilton integration.

These integrators deliberately avoid the reduced-formalism machinery.  They
differentiate the Lagrangian themselves, solve with ``numpy.linalg`` and run
their own RK4 loop, so agreement with the reduced equations is evidence
rather than tautology.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NoConvergence, OracleUndefined
from .expr import LAGRANGIAN_SYMBOLS, compile_exprs, differentiate, parse


@dataclass(eq=False)
class OracleTrajectory:
    times: np.ndarray
    q: np.ndarray
    qd: np.ndarray | None = None
    p: np.ndarray | None = None


def _rk4(f, t0, y0, t1, dt):
    n = max(1, math.ceil((t1 - t0) / dt - 1e-9))
    h = (t1 - t0) / n
    ts = [t0]
    ys = [np.array(y0, dtype=float)]
    y = ys[0]
    for k in range(n):
        t = t0 + k * h
        k1 = f(t, y)
        k2 = f(t + h / 2, y + h / 2 * k1)
        k3 = f(t + h / 2, y + h / 2 * k2)
        k4 = f(t + h, y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        ts.append(t0 + (k + 1) * h if k + 1 < n else t1)
        ys.append(y)
    return np.array(ts), np.array(ys)


class _LagrangianOracle:
    """Gradient, Hessian and mixed partials of L compiled from scratch."""

    def __init__(self, system):
        self.n = n = system.n
        coords = list(system.coords)
        vel = ["qd" + c[1:] for c in coords]
        L = system.L
        Lq = [differentiate(L, c) for c in coords]
        Lv = [differentiate(L, v) for v in vel]
        Wvv = [differentiate(a, b) for a in Lv for b in vel]
        Wvq = [differentiate(a, b) for a in Lv for b in coords]
        Wvt = [differentiate(a, "t") for a in Lv]
        src = {"t": "t"}
        src.update({c: f"q[{k}]" for k, c in enumerate(coords)})
        src.update({v: f"qd[{k}]" for k, v in enumerate(vel)})
        self.prog = compile_exprs([*Lq, *Lv, *Wvv, *Wvq, *Wvt], ("t", "q", "qd"), src)

    def __call__(self, t, q, qd):
        n = self.n
        a = np.array(self.prog(t, q, qd))
        Lq = a[:n]
        Lv = a[n:2 * n]
        Wvv = a[2 * n:2 * n + n * n].reshape(n, n)
        Wvq = a[2 * n + n * n:2 * n + 2 * n * n].reshape(n, n)
        Wvt = a[2 * n + 2 * n * n:]
        return Lq, Lv, Wvv, Wvq, Wvt


def reference_euler_lagrange(system, q0, qd0, t1: float, dt: float, t0: float = 0.0, reduced=None) -> OracleTrajectory:
    """Integrate the Euler-Lagrange equations in ``(q, qd)``.

    Regular Lagrangians use ``W qdd = dL/dq - Wq qd - Wt``.  Singular ones
    need ``reduced``: expressions for the accelerations in ``t, q<k>, qd<k>``
    (a hand reduction with a gauge fixed), supplied by the model library.
    """
    n = system.n
    if reduced is not None:
        coords = list(system.coords)
        src = {"t": "t"}
        src.update({c: f"q[{k}]" for k, c in enumerate(coords)})
        src.update({"qd" + c[1:]: f"qd[{k}]" for k, c in enumerate(coords)})
        exprs = [parse(r, LAGRANGIAN_SYMBOLS) if isinstance(r, str) else r for r in reduced]
        if len(exprs) != n:
            raise OracleUndefined(f"reduced system has {len(exprs)} equations for {n} coordinates")
        prog = compile_exprs(exprs, ("t", "q", "qd"), src)

        def acc(t, q, qd):
            return np.array(prog(t, q, qd))
    else:
        L = _LagrangianOracle(system)

        def acc(t, q, qd):
            Lq, _, W, Wq, Wt = L(t, q, qd)
            if np.linalg.matrix_rank(W) < n:
                raise OracleUndefined(f"Hessian is singular for {system.name}; a reduced Euler-Lagrange system is required")
            return np.linalg.solve(W, Lq - Wq @ qd - Wt)

    def f(t, y):
        q, qd = y[:n], y[n:]
        return np.concatenate([qd, acc(t, q, qd)])

    ts, ys = _rk4(f, t0, np.concatenate([q0, qd0]), t1, dt)
    return OracleTrajectory(ts, ys[:, :n], ys[:, n:])


def reference_full_hamilton(system, q0, p0, t1: float, dt: float, t0: float = 0.0, newton_tol: float = 1e-12) -> OracleTrajectory:
    """Integrate Hamilton's equations with momenta for every coordinate.

    ``dq/dt = v(q, p)`` and ``dp/dt = dL/dq(q, v)``, where ``v`` inverts
    ``p = dL/dqd`` by Newton iteration.  Requires a regular Lagrangian.
    """
    n = system.n
    L = _LagrangianOracle(system)
    state = {"v": np.zeros(n)}
    if np.linalg.matrix_rank(L(t0, np.asarray(q0, dtype=float), state["v"])[2]) < n:
        raise OracleUndefined("full Hamilton oracle needs a regular Lagrangian")

    def velocity(t, q, p):
        v = state["v"].copy()
        for _ in range(60):
            _, Lv, W, _, _ = L(t, q, v)
            r = Lv - p
            if np.max(np.abs(r)) <= newton_tol:
                state["v"] = v
                return v
            if np.linalg.matrix_rank(W) < n:
                raise OracleUndefined("full Hamilton oracle needs a regular Lagrangian")
            v = v - np.linalg.solve(W, r)
        raise NoConvergence("oracle momenta inversion failed", float(np.max(np.abs(r))))

    def f(t, y):
        q, p = y[:n], y[n:]
        v = velocity(t, q, p)
        Lq = L(t, q, v)[0]
        return np.concatenate([v, Lq])

    ts, ys = _rk4(f, t0, np.concatenate([q0, p0]), t1, dt)
    return OracleTrajectory(ts, ys[:, :n], p=ys[:, n:])


def full_momenta(system, t, q, qd) -> np.ndarray:
    return _LagrangianOracle(system)(t, np.asarray(q, float), np.asarray(qd, float))[1]
