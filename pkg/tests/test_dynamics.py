from __future__ import annotations

import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hamfold.brackets import build_FG, random_point
from hamfold.dynamics import (
    ABELIAN,
    NONGAUGE,
    Trajectory,
    classify,
    classify_bundle,
    decompose,
    integrate,
    project_consistent,
    residual_noncanonical_eom,
    rk45,
    solve_velocities,
    step_rhs,
)
from hamfold.errors import DynamicsError, InconsistentSystem, OracleUndefined, TrajectoryTooShort
from hamfold.legendre import HamiltonianBundle, PhasePoint
from hamfold.library import get
from hamfold.model import analyze_hessian, build_system, relabel
from hamfold.reference import reference_euler_lagrange, reference_full_hamilton


def P(t, qc, p, qn, qd=None):
    return PhasePoint(t, np.array(qc, float), np.array(p, float), np.array(qn, float), None if qd is None else np.array(qd, float))


def test_classify_examples(bundle):
    c = classify_bundle(bundle("firstorder"))
    assert (c.kind, c.r_F) == (NONGAUGE, 2)
    c = classify_bundle(bundle("gauge1"))
    assert (c.kind, c.r_F, c.n_gauge) == (ABELIAN, 0, 1)
    c = classify_bundle(bundle("osc2"))
    assert (c.kind, c.r_F, c.n_gauge) == (NONGAUGE, 0, 0)


def test_classification_rank_variation():
    # F = q1 changes rank where q1 vanishes
    s = build_system("strat", ["q1", "q2", "q3"], "0.5*qd1^2 + q1*q2*qd3")
    b = HamiltonianBundle(s, analyze_hessian(s))
    fgs = [build_FG(b, P(0, [0.0], [0.1], [0.2, 0.3])), build_FG(b, P(0, [0.5], [0.1], [0.2, 0.3]))]
    from hamfold.errors import RankVariation

    with pytest.raises(RankVariation):
        classify(fgs)


def test_solve_velocities_examples(bundle):
    f = bundle("firstorder")
    assert np.allclose(solve_velocities(build_FG(f, P(0, [], [], [1.0, 2.0]))), [2.0, -1.0], atol=1e-15)
    g = bundle("gauge1")
    fg = build_FG(g, P(0, [0.1], [0.0], [0.5]))
    assert solve_velocities(fg, gauge_input=[0.7])[0] == 0.7
    with pytest.raises(InconsistentSystem) as err:
        solve_velocities(build_FG(g, P(0, [0.1], [0.3], [0.5])))
    assert err.value.residual[0] == pytest.approx(0.3)


def test_step_rhs_examples(bundle):
    assert np.allclose(step_rhs(bundle("osc1"), P(0, [0.4], [0.9], [])), [0.9, -0.4])
    assert np.allclose(step_rhs(bundle("firstorder"), P(0, [], [], [0.4, 0.9])), [0.9, -0.4])
    assert np.allclose(step_rhs(bundle("gauge1"), P(0, [0.1], [0.0], [0.5])), [0.5, 0.0, 0.0])


def test_firstorder_period(bundle):
    b = bundle("firstorder")
    tr = integrate(b, P(0, [], [], [1.0, 0.0]), 2 * math.pi, 1e-3)
    assert np.max(np.abs(tr.q[-1] - [1.0, 0.0])) <= 1e-6
    assert tr.error is None and len(tr) == math.ceil(2 * math.pi / 1e-3) + 1


def test_osc1_exact(bundle):
    b = bundle("osc1")
    tr = integrate(b, P(0, [1.0], [0.0], []), 2 * math.pi, 1e-3)
    assert np.max(np.abs(tr.q[:, 0] - np.cos(tr.times))) <= 1e-6
    assert np.max(np.abs(tr.p[:, 0] + np.sin(tr.times))) <= 1e-6


def test_gauge1_linear_growth(bundle):
    b = bundle("gauge1")
    tr = integrate(b, P(0, [0.2], [0.0], [0.5]), 2.0, 1e-2)
    assert np.max(np.abs(tr.q[:, 0] - (0.2 + 0.5 * tr.times))) <= 1e-8


def test_inconsistent_initial_data_rejected(bundle):
    with pytest.raises(InconsistentSystem):
        integrate(bundle("gauge1"), P(0, [0.2], [0.3], [0.5]), 1.0, 1e-2)


def test_bad_arguments(bundle):
    b = bundle("osc1")
    with pytest.raises(DynamicsError):
        integrate(b, P(0, [1.0], [0.0], []), 1.0, 1e-2, method="euler")
    with pytest.raises(DynamicsError):
        integrate(b, P(1.0, [1.0], [0.0], []), 0.5, 1e-2)


def test_failure_truncates_trajectory():
    # sqrt(q1) leaves its domain when q1 runs negative under qd1 = -1
    s = build_system("edge", ["q1"], "0.5*qd1^2 + sqrt(q1)")
    b = HamiltonianBundle(s, analyze_hessian(s, probes=[(0.0, [0.5], [0.1])]))
    tr = integrate(b, P(0, [0.05], [-1.0], []), 1.0, 1e-2)
    assert tr.error is not None and tr.times[-1] < 1.0 and len(tr) > 1


def test_rk45_matches_exact(bundle):
    b = bundle("firstorder")
    tr = integrate(b, P(0, [], [], [1.0, 0.0]), 10.0, 1e-2, method="rk45")
    assert abs(tr.q[-1, 0] - math.cos(10.0)) <= 1e-6
    assert np.all(np.diff(tr.times) > 0)


def test_rk45_scalar_decay():
    ts, ys = [], []
    rk45(lambda t, y: -y, 0.0, np.array([1.0]), 5.0, 0.1, lambda t, y: (ts.append(t), ys.append(y[0])))
    assert ts[-1] == 5.0 and abs(ys[-1] - math.exp(-5.0)) <= 1e-8


def test_conservation_and_noncanonical_eom(bundle):
    b = bundle("osc2", 0)
    e = get("osc2")
    x = b.point_from_lagrangian(0.0, e.q0, e.qd0)
    tr = integrate(b, x, 3.0, 1e-3)
    assert np.max(np.abs(tr.H0 - tr.H0[0])) <= 1e-8
    _, r = residual_noncanonical_eom(b, tr)
    assert np.max(r) <= 1e-4


def test_noncanonical_eom_on_oracle_trajectory(bundle):
    # Euler-Lagrange data for osc2 satisfy the second-order equation of the n_p = 1 split
    b = bundle("osc2", 1)
    e = get("osc2")
    ref = reference_euler_lagrange(e.system, e.q0, e.qd0, 2.0, 1e-3)
    states = []
    for k in range(len(ref.times)):
        x = b.point_from_lagrangian(ref.times[k], ref.q[k], ref.qd[k])
        states.append(np.concatenate([x.vector(), x.qd_nc]))
    n = len(ref.times)
    tr = Trajectory(b, ref.times, np.array(states), np.zeros(n), np.zeros(n), np.zeros(n, int), np.zeros(n), "oracle")
    _, r = residual_noncanonical_eom(b, tr)
    assert np.max(r) <= 1e-4


def test_noncanonical_eom_free_particle_constant():
    s = build_system("free", ["q1"], "0.5*qd1^2")
    b = HamiltonianBundle(s, analyze_hessian(s, n_p=0))
    tr = integrate(b, P(0, [], [], [0.3], [0.0]), 0.1, 1e-2)
    _, r = residual_noncanonical_eom(b, tr)
    assert np.max(r) == 0.0
    short = Trajectory(b, tr.times[:2], tr.states[:2], tr.H0[:2], tr.residual[:2], tr.r_F[:2], tr.consistency[:2], "rk4")
    with pytest.raises(TrajectoryTooShort):
        residual_noncanonical_eom(b, short)


def test_full_hamilton_limit(bundle):
    e = get("osc2")
    b = bundle("osc2", 2)
    x = b.point_from_lagrangian(0.0, e.q0, e.qd0)
    tr = integrate(b, x, 2.0, 1e-3)
    ref = reference_full_hamilton(e.system, e.q0, x.p, 2.0, 1e-3)
    assert np.max(np.abs(tr.q - ref.q)) <= 1e-10
    assert np.max(np.abs(tr.p - ref.p)) <= 1e-10


def test_reference_rejects_singular_models():
    with pytest.raises(OracleUndefined):
        reference_euler_lagrange(get("gauge1").system, [0.0, 0.0], [0.0, 0.0], 1.0, 1e-2)
    with pytest.raises(OracleUndefined):
        reference_full_hamilton(get("gauge1").system, [0.0, 0.0], [0.0, 0.0], 1.0, 1e-2)


def test_reference_euler_lagrange_osc1():
    ref = reference_euler_lagrange(get("osc1").system, [1.0], [0.0], 3.0, 1e-3)
    assert np.max(np.abs(ref.q[:, 0] - np.cos(ref.times))) <= 1e-9


def test_permutation_covariance(bundle):
    e = get("osc2")
    s = relabel(e.system, [1, 0])
    b2 = HamiltonianBundle(s, analyze_hessian(s))
    b1 = bundle("osc2")
    t1 = integrate(b1, b1.point_from_lagrangian(0.0, e.q0, e.qd0), 1.0, 1e-3)
    q0, qd0 = e.q0[::-1], e.qd0[::-1]
    t2 = integrate(b2, b2.point_from_lagrangian(0.0, q0, qd0), 1.0, 1e-3)
    assert np.max(np.abs(t1.q - t2.q[:, ::-1])) <= 1e-12


@settings(max_examples=5, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1))
def test_gauge_independence_of_invariant(u1, u2):
    from conftest import make_bundle

    b = make_bundle("gauge1")
    vals = []
    for u in (u1, u2):
        tr = integrate(b, P(0, [0.2], [0.0], [0.5]), 1.0, 1e-2, gauge_input=[u])
        q2 = tr.q[:, 1]
        integral = np.concatenate([[0.0], np.cumsum(0.5 * (q2[1:] + q2[:-1]) * np.diff(tr.times))])
        vals.append(tr.q[:, 0] - integral)
        assert np.max(np.abs(tr.p)) <= 1e-10
    assert np.max(np.abs(vals[0] - vals[1])) <= 1e-6


def test_rotgauge_decomposition_and_projection(bundle):
    b = bundle("rotgauge")
    rng = np.random.default_rng(0)
    for _ in range(10):
        x = project_consistent(b, random_point(b, rng))
        d = decompose(build_FG(b, x))
        assert d.consistency <= 1e-8 and d.residual_F21 <= 1e-8 and d.residual_F22 <= 1e-8


def test_drop_time_term_switch(bundle):
    b = bundle("tfirstorder")
    x = P(0.5, [], [], [0.3, 0.2])
    a = build_FG(b, x).G
    c = build_FG(b, x, drop_time_term=True).G
    # H_1 = -(q2 + sin t) carries the only explicit time dependence
    assert a[0] - c[0] == pytest.approx(math.cos(0.5), abs=1e-14)
    assert a[1] == c[1]


def test_csv_export(bundle):
    b = bundle("gauge1")
    tr = integrate(b, P(0, [0.2], [0.0], [0.5]), 0.05, 1e-2)
    rows = list(csv.reader(io.StringIO(tr.to_csv())))
    assert rows[0] == ["t", "q1", "q2", "p1", "H0", "residual", "rF"]
    assert len(rows) == len(tr) + 1
    assert float(rows[-1][1]) == tr.q[-1, 0]
