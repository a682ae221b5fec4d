from __future__ import annotations

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hamfold.errors import DomainError, ExprSyntaxError, MalformedSymbol, UnknownFunction
from hamfold.expr import Binding, add, const, differentiate, evaluate, mul, parse, sym, to_string

SYMS = ("t", "q1", "q2", "qd1", "qd2")


def leaves():
    return st.one_of(
        st.sampled_from(SYMS).map(sym),
        st.floats(-3, 3, allow_nan=False).map(lambda v: const(round(v, 3))),
    )


def exprs():
    # bounded tree; only functions that stay finite on the sampled box
    return st.recursive(
        leaves(),
        lambda kids: st.one_of(
            st.tuples(kids, kids).map(lambda p: p[0] + p[1]),
            st.tuples(kids, kids).map(lambda p: p[0] - p[1]),
            st.tuples(kids, kids).map(lambda p: p[0] * p[1]),
            st.tuples(kids, st.integers(2, 3)).map(lambda p: p[0] ** p[1]),
            kids.map(lambda e: parse("sin(x)".replace("x", f"({to_string(e)})"))),
            kids.map(lambda e: parse("cos(x)".replace("x", f"({to_string(e)})"))),
        ),
        max_leaves=6,
    )


bindings = st.builds(
    lambda t, a, b, c, d: Binding(t, (a, b), (c, d)),
    *(st.floats(-1.5, 1.5, allow_nan=False) for _ in range(5)),
)


def test_parse_examples():
    e = parse("qd1^2/2 - q1^2/2")
    assert evaluate(e, Binding(0.0, (1.0,), (2.0,))) == 1.5
    e = parse("q2*qd1 - 0.5*(q1^2+q2^2)")
    assert e.symbols == {"q1", "q2", "qd1"}
    assert evaluate(parse("q2*qd1"), Binding(0.0, (0.0, 3.0), (-2.0, 0.0))) == -6.0


@pytest.mark.parametrize("src", ["sin(qq1)", "q0", "qdx + 1", "q1 + qd"])
def test_malformed_symbols(src):
    with pytest.raises(MalformedSymbol):
        parse(src)


def test_unknown_function():
    with pytest.raises(UnknownFunction):
        parse("tan(q1)")


def test_syntax_error_reports_offset_and_expected():
    with pytest.raises(ExprSyntaxError) as err:
        parse("q1 + * q2")
    assert err.value.offset == 5
    assert err.value.expected


def test_derivative_examples():
    assert to_string(differentiate(parse("qd1^2/2"), "qd1")) == "qd1"
    assert to_string(differentiate(parse("q2*qd1"), "q2")) == "qd1"
    assert differentiate(parse("q2*qd1"), "qd2") == const(0.0)


def test_domain_errors_name_the_subexpression():
    with pytest.raises(DomainError, match="log"):
        evaluate(parse("log(q1)"), Binding(0.0, (0.0,), (0.0,)))
    with pytest.raises(DomainError):
        evaluate(parse("sqrt(q1)"), Binding(0.0, (-1.0,), (0.0,)))
    with pytest.raises(DomainError):
        evaluate(parse("1/q1"), Binding(0.0, (0.0,), (0.0,)))
    with pytest.raises(DomainError):
        evaluate(parse("q1^0.5"), Binding(0.0, (-2.0,), (0.0,)))


@settings(max_examples=200, deadline=None)
@given(exprs(), bindings, st.sampled_from(SYMS))
def test_derivative_matches_central_difference(e, b, x):
    env = b.env()
    h = 1e-6

    def f(v):
        return evaluate(e, {**env, x: v})

    fd = (f(env[x] + h) - f(env[x] - h)) / (2 * h)
    exact = evaluate(differentiate(e, x), b)
    assert abs(exact - fd) <= 1e-5 * (1 + abs(evaluate(e, b)) + abs(exact))


@settings(max_examples=50, deadline=None)
@given(exprs(), exprs(), st.floats(-2, 2, allow_nan=False), st.lists(bindings, min_size=20, max_size=20))
def test_linearity(e1, e2, a, bs):
    lhs = differentiate(add(mul(const(a), e1), e2), "q1")
    d1, d2 = differentiate(e1, "q1"), differentiate(e2, "q1")
    for b in bs:
        want = a * evaluate(d1, b) + evaluate(d2, b)
        assert abs(evaluate(lhs, b) - want) <= 1e-12 * (1 + abs(want))


@settings(max_examples=50, deadline=None)
@given(exprs(), st.lists(bindings, min_size=20, max_size=20), st.sampled_from(SYMS), st.sampled_from(SYMS))
def test_mixed_partials_commute(e, bs, x, y):
    dxy = differentiate(differentiate(e, x), y)
    dyx = differentiate(differentiate(e, y), x)
    for b in bs:
        u, v = evaluate(dxy, b), evaluate(dyx, b)
        assert abs(u - v) <= 1e-12 * (1 + abs(u))


@settings(max_examples=200, deadline=None)
@given(exprs())
def test_print_parse_round_trip(e):
    again = parse(to_string(e))
    assert parse(to_string(again)) == again
    b = Binding(0.3, (0.7, -0.4), (1.1, 0.2))
    u, v = evaluate(e, b), evaluate(again, b)
    assert u == v or math.isclose(u, v, rel_tol=1e-12, abs_tol=1e-12)


def test_evaluation_is_reproducible():
    e = parse("sin(q1)*exp(qd1) - q1^3/7 + sqrt(qd1^2 + 1)")
    b = Binding(0.0, (0.123,), (-0.456,))
    assert evaluate(e, b) == evaluate(e, b)
