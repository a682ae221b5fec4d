from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hamfold.brackets import random_point
from hamfold.errors import VelocityDependenceViolation, LegendreError, NoConvergence, RegimeError, SingularJacobian
from hamfold.legendre import DYNAMICAL, NONDYNAMICAL, OVEREXTENDED, HamiltonianBundle, PhasePoint, full_hamiltonian
from hamfold.library import get
from hamfold.model import analyze_hessian, build_system

coords = st.floats(-1.5, 1.5, allow_nan=False)


def P(t, qc, p, qn, qd=None):
    return PhasePoint(t, np.array(qc, float), np.array(p, float), np.array(qn, float), None if qd is None else np.array(qd, float))


def test_osc1(bundle):
    b = bundle("osc1")
    x = P(0, [1.0], [1.0], [])
    assert b.eval_H0(x) == pytest.approx(1.0, abs=1e-14)
    v, *_ = b.solve_velocities(P(0, [0.0], [0.7], []))
    assert v[0] == pytest.approx(0.7, abs=1e-14)
    assert b.grad_H(P(0, [0.0], [0.7], [])).d_dp[0] == pytest.approx(0.7, abs=1e-14)


def test_gauge1(bundle):
    b = bundle("gauge1")
    x = P(0, [0.0], [0.5], [0.2])
    v, *_ = b.solve_velocities(x)
    assert v[0] == pytest.approx(0.7, abs=1e-14)
    assert b.eval_H0(x) == pytest.approx(0.225, abs=1e-14)
    assert b.eval_Halpha(x) == pytest.approx([0.0], abs=1e-14)
    assert b.grad_H(x, "H0").d_dq_nc[0] == pytest.approx(0.5, abs=1e-14)


def test_firstorder(bundle):
    b = bundle("firstorder")
    x = P(0, [], [], [1.0, 2.0])
    v, *_ = b.solve_velocities(x)
    assert v.shape == (0,)
    assert b.eval_H0(x) == pytest.approx(2.5, abs=1e-14)
    assert np.allclose(b.eval_Halpha(x), [-2.0, 0.0], atol=1e-14)
    assert b.grad_H(x, "q1").d_dq_nc[1] == pytest.approx(-1.0, abs=1e-14)


def test_phase_point_validation():
    with pytest.raises(LegendreError):
        P(0, [1.0], [1.0, 2.0], [])
    with pytest.raises(LegendreError):
        P(0, [np.nan], [1.0], [])


def test_regimes(bundle):
    assert bundle("gauge1").regime == NONDYNAMICAL
    assert bundle("osc2", 1).regime == DYNAMICAL
    assert bundle("gauge1", 2).regime == OVEREXTENDED
    with pytest.raises(SingularJacobian):
        bundle("gauge1", 2).evaluate(P(0, [0.0, 0.0], [0.0, 0.0], []))


def test_partially_degenerate_regime_is_rejected():
    s = build_system("mixed", ["q1", "q2", "q3"], "0.5*qd1^2 + 0.5*qd2^2 + q3*qd1")
    with pytest.raises(RegimeError):
        HamiltonianBundle(s, analyze_hessian(s, n_p=1))


def test_velocity_independence(bundle):
    b = bundle("gauge1")
    assert b.check_velocity_independence(P(0, [0.3], [0.1], [0.4])) <= 1e-12
    d = bundle("osc2", 1)
    with pytest.raises(VelocityDependenceViolation):
        d.check_velocity_independence(P(0, [0.3], [0.1], [0.4], [0.2]))


def test_newton_failure_is_reported():
    s = build_system("cosh", ["q1"], "exp(qd1) + exp(-qd1)")
    b = HamiltonianBundle(s, analyze_hessian(s), max_iter=1)
    with pytest.raises(NoConvergence) as err:
        b.evaluate(P(0, [0.0], [5.0], []))
    assert err.value.residual > 0


def test_newton_converges_for_nonlinear_map():
    s = build_system("cosh", ["q1"], "exp(qd1) + exp(-qd1) - q1^2")
    b = HamiltonianBundle(s, analyze_hessian(s))
    st_ = b.evaluate(P(0, [0.2], [1.3], []))
    v = st_.v[0]
    assert abs(np.exp(v) - np.exp(-v) - 1.3) <= 1e-12


@pytest.mark.parametrize("name,n_p", [("osc2", 2), ("osc2", 1), ("gauge1", None), ("rotgauge", None), ("firstorder", None), ("forced", None)])
def test_gradients_match_central_differences(bundle, name, n_p):
    b = bundle(name, n_p)
    rng = np.random.default_rng(3)
    for _ in range(5):
        x = random_point(b, rng)
        if b.regime == DYNAMICAL:
            x = x.replace(qd_nc=rng.uniform(-1, 1, b.m))
        st_ = b.evaluate(x)
        q = np.concatenate([x.q_c, x.q_nc])
        for k in range(b.n):
            h = 1e-6 * (1 + abs(q[k]))
            qa, qb = q.copy(), q.copy()
            qa[k] += h
            qb[k] -= h
            ha = b.evaluate(x.replace(q_c=qa[:b.n_p], q_nc=qa[b.n_p:])).H
            hb = b.evaluate(x.replace(q_c=qb[:b.n_p], q_nc=qb[b.n_p:])).H
            assert np.allclose(st_.dq[:, k], (ha - hb) / (2 * h), atol=1e-6)
        for k in range(b.n_p):
            h = 1e-6 * (1 + abs(x.p[k]))
            pa, pb = x.p.copy(), x.p.copy()
            pa[k] += h
            pb[k] -= h
            fd = (b.evaluate(x.replace(p=pa)).H - b.evaluate(x.replace(p=pb)).H) / (2 * h)
            assert np.allclose(st_.dp[:, k], fd, atol=1e-6)
        h = 1e-6
        fd = (b.evaluate(x.replace(t=x.t + h)).H - b.evaluate(x.replace(t=x.t - h)).H) / (2 * h)
        assert np.allclose(st_.dt, fd, atol=1e-6)


@settings(max_examples=100, deadline=None)
@given(coords, coords, coords, coords, coords)
def test_envelope_identity(t, q1, q2, p1, p2):
    from conftest import make_bundle

    b = make_bundle("osc2", 2)
    st_ = b.evaluate(P(t, [q1, q2], [p1, p2], []))
    assert np.allclose(st_.dp[0], st_.v, atol=1e-8)


@settings(max_examples=50, deadline=None)
@given(coords, coords, coords, coords)
def test_full_hamiltonian_limit(q1, q2, qd1, qd2):
    from conftest import make_bundle

    b = make_bundle("osc2", 2)
    s = b.system
    x = b.point_from_lagrangian(0.0, [q1, q2], [qd1, qd2])
    assert abs(b.eval_H0(x) - full_hamiltonian(s, 0.0, [q1, q2], [qd1, qd2])) <= 1e-10


@settings(max_examples=50, deadline=None)
@given(coords, coords, coords, coords)
def test_zero_momenta_limit(q1, q2, qd1, qd2):
    from conftest import make_bundle

    b = make_bundle("osc2", 0)
    s = b.system
    x = b.point_from_lagrangian(0.0, [q1, q2], [qd1, qd2])
    st_ = b.evaluate(x)
    L = s.lagrangian(0.0, np.array([q1, q2]), np.array([qd1, qd2]))
    assert abs(st_.H0 + st_.Halpha @ np.array([qd1, qd2]) + L) <= 1e-10
