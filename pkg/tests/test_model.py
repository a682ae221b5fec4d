from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hamfold import linalg
from hamfold.errors import AllProbesDegenerate, DimensionError, ModelFileError, PartitionError, RankVariation
from hamfold.expr import Binding, evaluate
from hamfold.library import get, library
from hamfold.model import analyze_hessian, build_system, default_probes, load_model, load_model_text, relabel


def test_load_osc1_file(tmp_path):
    f = tmp_path / "osc1.model"
    f.write_text("# harmonic oscillator\nname = osc1\ncoords = q1\nlagrangian = qd1^2/2 - q1^2/2\n")
    s = load_model(f)
    assert s.name == "osc1" and s.n == 1


def test_load_firstorder():
    s = load_model_text("name = firstorder\ncoords = q1, q2\nlagrangian = q2*qd1 - 0.5*(q1^2+q2^2)\n")
    assert s.n == 2 and s.coords == ("q1", "q2")


def test_dimension_error():
    with pytest.raises(DimensionError):
        load_model_text("name = bad\ncoords = q1, q2\nlagrangian = qd3^2\n")
    with pytest.raises(DimensionError):
        build_system("bad", ["q1", "q2", "q3"], "q5*qd1")


@pytest.mark.parametrize(
    "text",
    [
        "name = a\ncoords = q1\n",
        "name = a\nname = b\ncoords = q1\nlagrangian = qd1^2\n",
        "name = a\ncoords = q1\nlagrangian = qd1^2\ncolour = red\n",
        "name = a\ncoords = x1\nlagrangian = qd1^2\n",
        "name = a\ncoords = q1\nlagrangian qd1^2\n",
    ],
)
def test_malformed_model_files(text):
    with pytest.raises(ModelFileError):
        load_model_text(text)


def test_osc1_partition():
    p = analyze_hessian(get("osc1").system)
    assert p.r_W == 1 and p.permutation == (0,)


def test_firstorder_partition():
    p = analyze_hessian(get("firstorder").system)
    assert p.r_W == 0 and p.canonical == () and p.noncanonical_labels() == ["q1", "q2"]


def test_gauge1_partition():
    p = analyze_hessian(get("gauge1").system)
    assert p.r_W == 1 and p.canonical_labels() == ["q1"] and p.noncanonical_labels() == ["q2"]


@pytest.mark.parametrize("entry", library(), ids=lambda e: e.name)
def test_library_ranks(entry):
    assert analyze_hessian(entry.system).r_W == entry.expected_r_W


def test_rank_variation():
    s = build_system("strat", ["q1"], "q1^2*qd1^2")
    probes = [(0.0, [0.0], [0.3]), (0.0, [0.5], [0.3])]
    with pytest.raises(RankVariation) as err:
        analyze_hessian(s, probes)
    assert err.value.ranks == (0, 1)


def test_all_probes_degenerate():
    s = build_system("dom", ["q1"], "log(q1)*qd1^2")
    with pytest.raises(AllProbesDegenerate):
        analyze_hessian(s, [(0.0, [-1.0], [0.0]), (0.0, [0.0], [1.0])])


def test_np_range_and_default():
    s = get("osc2").system
    assert analyze_hessian(s).n_p == 2
    assert analyze_hessian(s, n_p=1).n_p == 1
    with pytest.raises(PartitionError):
        analyze_hessian(s, n_p=3)


def test_probes_accept_bindings():
    s = get("gauge1").system
    p = analyze_hessian(s, [Binding(0.0, (0.1, 0.2), (0.3, 0.4))])
    assert p.r_W == 1


def test_pivot_minor_moves_to_top_left():
    # only q2 carries velocity dependence; the partition must put it first
    s = build_system("swap", ["q1", "q2"], "0.5*qd2^2 - q1*q2")
    p = analyze_hessian(s)
    assert p.canonical_labels() == ["q2"] and p.permutation == (1, 0)
    labels = p.canonical_labels() + p.noncanonical_labels()
    assert [labels[i] for i in p.inverse_permutation] == list(s.coords)


@pytest.mark.parametrize("entry", library(), ids=lambda e: e.name)
def test_hessian_symmetric_and_degenerate_block(entry):
    s = entry.system
    p = analyze_hessian(s)
    for t, q, qd in default_probes(s.n, seed=7):
        w = s.hessian(t, q, qd)
        assert np.max(np.abs(w - w.T)) <= 1e-12
        nc = list(p.noncanonical)
        if nc and not p.canonical:
            assert np.max(np.abs(w[np.ix_(nc, nc)])) <= p.pivot_tol


def test_dL_dqd_is_exact_derivative():
    s = get("osc2").system
    b = Binding(0.1, (0.3, -0.2), (0.5, 0.7))
    d = s.derivs(b.t, np.array(b.q), np.array(b.qd))
    assert d.Lqd[0] == pytest.approx(evaluate(s.dL_dqd[0], b), abs=1e-15)
    assert d.Lqd[0] == pytest.approx(0.5 + 0.3 * 0.7, abs=1e-15)


def test_relabel_permutes_coordinates():
    s = get("gauge1").system
    r = relabel(s, [1, 0])
    p = analyze_hessian(r)
    assert p.canonical_labels() == ["q2"]


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(0, 5), st.integers(0, 10_000))
def test_rank_matches_numpy(n, r, seed):
    r = min(r, n)
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n, r)) @ rng.normal(size=(r, n)) if r else np.zeros((n, n))
    assert linalg.rank(a) == np.linalg.matrix_rank(a)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 10), st.integers(0, 10_000))
def test_lu_solve_matches_numpy(n, seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n, n)) + n * np.eye(n)
    b = rng.normal(size=n)
    assert np.allclose(linalg.lu_solve(a, b), np.linalg.solve(a, b), atol=1e-12)
