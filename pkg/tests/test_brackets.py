from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hamfold.brackets import (
    D_alpha,
    Observable,
    PhaseSpace,
    bracket_gauge,
    bracket_nongauge,
    build_FG,
    check_bracket_axioms,
    poisson_reduced,
    random_point,
)
from hamfold.dynamics import decompose, project_consistent
from hamfold.errors import VelocityDependenceViolation, MissingDecomposition, SingularF, SymbolSpaceMismatch
from hamfold.legendre import PhasePoint


def P(t, qc, p, qn):
    return PhasePoint(t, np.array(qc, float), np.array(p, float), np.array(qn, float))


coords = st.floats(-2, 2, allow_nan=False)


def test_reduced_poisson_examples(bundle):
    b = bundle("osc2", 2)
    x = P(0, [0.3, 0.1], [0.2, -0.4], [])
    assert poisson_reduced("q1", "p1", x, b) == 1.0
    assert poisson_reduced("q1", "q1", x, b) == 0.0
    f = bundle("firstorder")
    y = P(0, [], [], [0.4, 0.9])
    assert poisson_reduced("q1*q2", "q1^2", y, f) == 0.0


def test_symbol_space_mismatch(bundle):
    b = bundle("gauge1")
    x = P(0, [0.1], [0.0], [0.3])
    with pytest.raises(SymbolSpaceMismatch):
        poisson_reduced("p2", "q1", x, b)
    with pytest.raises(SymbolSpaceMismatch):
        poisson_reduced("q7", "q1", x, b)
    with pytest.raises(SymbolSpaceMismatch):
        Observable("Q1").jet(b, x)
    with pytest.raises(SymbolSpaceMismatch):
        Observable("P2").jet(b, x)
    assert Observable("Q2^2").jet(b, x).value == pytest.approx(0.09)


def test_D_alpha_examples(bundle):
    f = bundle("firstorder")
    x = P(0, [], [], [0.4, 0.9])
    H0 = "0.5*(q1^2 + q2^2)"
    assert D_alpha(H0, "q1", x, f, generator=True) == pytest.approx(0.4, abs=1e-14)
    g = bundle("gauge1")
    y = P(0, [0.1], [0.35], [0.3])
    assert D_alpha("0.5*p1^2 + p1*q2", "q2", y, g, generator=True) == pytest.approx(0.35, abs=1e-14)
    assert D_alpha("p1^2 + q1", "q2", y, g) == 0.0


def test_FG_examples(bundle):
    f = bundle("firstorder")
    fg = build_FG(f, P(0, [], [], [0.4, 0.9]))
    assert np.array_equal(fg.F, [[0.0, -1.0], [1.0, 0.0]])
    assert np.allclose(fg.G, [0.4, 0.9], atol=1e-15)
    assert fg.r_F == 2
    g = build_FG(bundle("gauge1"), P(0, [0.1], [0.35], [0.3]))
    assert g.F.shape == (1, 1) and g.F[0, 0] == 0.0 and g.G[0] == pytest.approx(0.35) and g.r_F == 0
    o = build_FG(bundle("osc2", 2), P(0, [0.1, 0.2], [0.3, 0.4], []))
    assert o.F.shape == (0, 0) and o.G.shape == (0,)


def test_FG_requires_nondynamical(bundle):
    with pytest.raises(VelocityDependenceViolation):
        build_FG(bundle("osc2", 1), PhasePoint(0, np.array([0.1]), np.array([0.2]), np.array([0.3]), np.array([0.4])))


@pytest.mark.parametrize("name", ["firstorder", "gauge1", "rotgauge", "shiftosc", "tfirstorder"])
def test_F_antisymmetric_and_G_matches_D(bundle, name):
    b = bundle(name)
    rng = np.random.default_rng(11)
    for _ in range(20):
        x = random_point(b, rng)
        fg = build_FG(b, x)
        assert np.max(np.abs(fg.F + fg.F.T), initial=0.0) <= 1e-12
        assert 0 <= fg.r_F <= b.m
        H0 = b.evaluate(x)
        from hamfold.brackets import Jet, D_alpha_jet

        h0 = Jet.of_state(H0, 0)
        for k in range(b.m):
            assert abs(fg.G[k] - D_alpha_jet(h0, k, H0, generator=True)) <= 1e-10


def test_nongauge_examples(bundle):
    f = bundle("firstorder")
    x = P(0, [], [], [0.4, 0.9])
    fg = build_FG(f, x)
    assert bracket_nongauge("q1", "q2", x, fg, f) == pytest.approx(1.0, abs=1e-15)
    assert bracket_nongauge("q1^2*q2", "3.5", x, fg, f) == 0.0
    assert bracket_nongauge("q1*q2 + q2^2", "q1*q2 + q2^2", x, fg, f) == 0.0


def test_nongauge_requires_full_rank(bundle):
    g = bundle("gauge1")
    x = P(0, [0.1], [0.0], [0.3])
    with pytest.raises(SingularF):
        bracket_nongauge("q1", "p1", x, build_FG(g, x), g)


def test_nongauge_without_noncanonical_sector_is_poisson(bundle):
    b = bundle("osc2", 2)
    x = P(0, [0.3, 0.1], [0.2, -0.4], [])
    fg = build_FG(b, x)
    assert bracket_nongauge("q1*p2", "p1*q2", x, fg, b) == poisson_reduced("q1*p2", "p1*q2", x, b)


def test_gauge_examples(bundle):
    g = bundle("gauge1")
    x = P(0, [0.1], [0.0], [0.3])
    fg = build_FG(g, x)
    dec = decompose(fg)
    assert bracket_gauge("q1", "p1", x, fg, g, dec) == 1.0
    assert bracket_gauge("q1*p1 + q2", "p1^2*q1", x, fg, g, dec) == poisson_reduced("q1*p1 + q2", "p1^2*q1", x, g)
    assert bracket_gauge("q1*p1", "q1*p1", x, fg, g, dec) == 0.0
    with pytest.raises(MissingDecomposition):
        bracket_gauge("q1", "p1", x, fg, g, None)


def test_gauge_on_rotgauge_is_poisson(bundle):
    b = bundle("rotgauge")
    x = project_consistent(b, random_point(b, np.random.default_rng(2)))
    fg = build_FG(b, x)
    assert bracket_gauge("q1*p2", "q2*p1", x, fg, b, decompose(fg)) == poisson_reduced("q1*p2", "q2*p1", x, b)


@settings(max_examples=60, deadline=None)
@given(coords, coords, coords, coords)
def test_firstorder_nongauge_is_canonical_in_q1_q2(a, b, q1, q2):
    # on firstorder the nongauge bracket is the canonical bracket with q2 as momentum of q1
    from conftest import make_bundle

    f = make_bundle("firstorder")
    x = P(0, [], [], [q1, q2])
    fg = build_FG(f, x)
    A = f"{a}*q1^2 + q1*q2"
    B = f"{b}*q2^2 + q1"
    # {A,B} = dA/dq1 dB/dq2 - dA/dq2 dB/dq1
    want = (2 * a * q1 + q2) * (2 * b * q2) - q1 * 1.0
    assert bracket_nongauge(A, B, x, fg, f) == pytest.approx(want, abs=1e-12)


def test_phase_space_labels(bundle):
    s = PhaseSpace.reduced(bundle("gauge1"))
    assert s.coords == ("q1", "q2") and s.momenta == ("q1",) and s.noncanonical == ("q2",)


@pytest.mark.parametrize("kind,name,n_p", [("poisson", "osc2", 2), ("nongauge", "firstorder", None), ("gauge", "rotgauge", None), ("nongauge", "tfirstorder", None), ("gauge", "gauge1", None)])
def test_axioms_small(bundle, kind, name, n_p):
    rep = check_bracket_axioms(kind, bundle(name, n_p), n_points=8, n_triples=6, seed=1)
    assert rep.antisymmetry <= 1e-12
    assert rep.bilinearity <= 1e-10
    assert rep.leibniz <= 1e-8
    assert rep.jacobi <= 1e-5
