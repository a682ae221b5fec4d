from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hamfold.brackets import random_point
from hamfold.dirac import (
    ExtendedPhasePoint,
    build_constraints,
    consistency_system,
    count_primary_constraints,
    integrate_extended,
    total_hamiltonian,
    verify_equivalence,
)
from hamfold.dynamics import integrate
from hamfold.errors import DiracError, HigherStageConstraint, OffSurface
from hamfold.legendre import PhasePoint
from hamfold.library import get

vals = st.floats(-2, 2, allow_nan=False)


def E(q, p, t=0.0):
    return ExtendedPhasePoint(t, np.array(q, float), np.array(p, float))


@settings(max_examples=50, deadline=None)
@given(vals, vals, vals, vals, vals, vals)
def test_total_hamiltonian_firstorder(q1, q2, p1, p2, v1, v2):
    from conftest import make_bundle

    cs = build_constraints(make_bundle("firstorder"))
    h = total_hamiltonian(cs, [v1, v2]).value(E([q1, q2], [p1, p2]))
    want = 0.5 * (q1**2 + q2**2) + v1 * (p1 - q2) + v2 * p2
    assert h == pytest.approx(want, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(vals, vals, vals, vals, vals)
def test_total_hamiltonian_gauge1(q1, q2, p1, p2, v2):
    from conftest import make_bundle

    cs = build_constraints(make_bundle("gauge1"))
    h = total_hamiltonian(cs, [v2]).value(E([q1, q2], [p1, p2]))
    assert h == pytest.approx(0.5 * p1**2 + p1 * q2 + v2 * p2, abs=1e-12)
    assert total_hamiltonian(cs, [0.0]).value(E([q1, q2], [p1, p2])) == pytest.approx(0.5 * p1**2 + p1 * q2, abs=1e-12)


def test_consistency_firstorder(bundle):
    cs = build_constraints(bundle("firstorder"))
    res = consistency_system(cs, E([1.0, 2.0], [2.0, 0.0]))
    assert np.allclose(res.v, [2.0, -1.0], atol=1e-14) and res.free == ()


def test_consistency_gauge1(bundle):
    cs = build_constraints(bundle("gauge1"))
    res = consistency_system(cs, E([0.1, 0.5], [0.0, 0.0]), gauge_input=[0.4])
    assert res.free == (0,) and res.v[0] == 0.4
    with pytest.raises(HigherStageConstraint) as err:
        consistency_system(cs, E([0.1, 0.5], [0.3, 0.0]))
    assert err.value.code == 62


def test_off_surface(bundle):
    cs = build_constraints(bundle("firstorder"))
    with pytest.raises(OffSurface, match="max"):
        consistency_system(cs, E([1.0, 2.0], [0.0, 0.0]))


def test_constraints_need_nondynamical_partition(bundle):
    with pytest.raises(DiracError):
        build_constraints(bundle("osc2", 1))


def test_regular_model_is_vacuous(bundle):
    rep = verify_equivalence(bundle("osc2"), n_points=5)
    assert rep.constraints == 0 and rep.F_residual == 0.0 and rep.dirac_vs_nongauge is None


@pytest.mark.parametrize("name", ["firstorder", "gauge1", "rotgauge", "tfirstorder"])
def test_F_identity_and_signed_G_identity(bundle, name):
    rep = verify_equivalence(bundle(name), n_points=30, n_pairs=10, seed=4)
    assert rep.F_residual <= 1e-9
    assert rep.H0_residual_signed <= 1e-9


def test_literal_G_identity_differs_by_sign(bundle):
    # D_a H0 and {Phi_a, H0} are negatives of each other when dPhi/dt = 0
    b = bundle("firstorder")
    cs = build_constraints(b)
    x = PhasePoint(0.0, np.zeros(0), np.zeros(0), np.array([0.3, -0.8]))
    res = consistency_system(cs, cs.lift(x))
    assert np.allclose(res.G_full, [0.3, -0.8], atol=1e-15)


def test_dirac_bracket_matches_nongauge(bundle):
    rep = verify_equivalence(bundle("firstorder"), n_points=20, n_pairs=20, seed=9)
    assert rep.dirac_vs_nongauge <= 1e-8
    assert rep.kind == "second-class-like"
    assert verify_equivalence(bundle("gauge1"), n_points=5).kind == "first-class-like"


def test_overextension_counts():
    s = get("rotgauge").system
    assert [count_primary_constraints(s, k) for k in (2, 3)] == [0, 1]
    g = get("gauge1").system
    assert count_primary_constraints(g, 2) == 1


def test_extended_trajectory_matches_reduced(bundle):
    b = bundle("gauge1")
    cs = build_constraints(b)
    x = PhasePoint(0.0, np.array([0.2]), np.array([0.0]), np.array([0.5]))
    et = integrate_extended(cs, cs.lift(x), 2.0, 1e-2, gauge_input=[0.3])
    tr = integrate(b, x, 2.0, 1e-2, gauge_input=[0.3])
    assert np.max(et.drift) <= 1e-6
    assert np.max(np.abs(et.q - tr.q)) <= 1e-6
    assert np.max(np.abs(et.p[:, b.C] - tr.p)) <= 1e-6


def test_extended_firstorder_constraint_drift(bundle):
    b = bundle("firstorder")
    cs = build_constraints(b)
    x = random_point(b, np.random.default_rng(1))
    et = integrate_extended(cs, cs.lift(x), 1.0, 1e-3)
    tr = integrate(b, x, 1.0, 1e-3)
    assert np.max(et.drift) <= 1e-6
    assert np.max(np.abs(et.q - tr.q)) <= 1e-6
