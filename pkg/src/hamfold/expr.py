"""Expression trees over time, coordinates and velocities.

An :class:`Expr` is an immutable tree.  Leaves are real constants or symbols
(``t``, ``q<k>``, ``qd<k>`` for Lagrangians; other symbol spaces are used for
phase-space observables).  Interior nodes are n-ary sums and products, binary
power and quotient, unary negation and the functions sin, cos, exp, log and
sqrt.

Two numeric paths exist.  :func:`evaluate` walks the tree and reports domain
errors with the offending subexpression.  :func:`compile_exprs` generates a
Python function for many trees at once; it evaluates children in the same
left-to-right order, so both paths produce bit-identical doubles.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

from .errors import DomainError, ExprError, ExprSyntaxError, MalformedSymbol, UnknownFunction

FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt")

LAGRANGIAN_SYMBOLS = re.compile(r"t|q[1-9][0-9]*|qd[1-9][0-9]*")
PHASE_SYMBOLS = re.compile(r"t|[qpQP][1-9][0-9]*")
MULTITIME_SYMBOLS = re.compile(r"tau(?:0|[1-9][0-9]*)|[qp][1-9][0-9]*")


class Expr:
    """Immutable expression node with value semantics."""

    __slots__ = ("kind", "value", "name", "children", "_hash", "_syms")

    def __init__(self, kind: str, value: float = 0.0, name: str = "", children: tuple = ()):
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "value", float(value))
        object.__setattr__(self, "name", name)
        object.__setattr__(self, "children", tuple(children))
        object.__setattr__(self, "_hash", None)
        object.__setattr__(self, "_syms", None)

    def __setattr__(self, key, val):
        raise AttributeError("Expr is immutable")

    def __eq__(self, other):
        if self is other:
            return True
        if not isinstance(other, Expr):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.value == other.value
            and self.name == other.name
            and self.children == other.children
        )

    def __hash__(self):
        h = self._hash
        if h is None:
            h = hash((self.kind, self.value, self.name, self.children))
            object.__setattr__(self, "_hash", h)
        return h

    def __repr__(self):
        return f"Expr({to_string(self)!r})"

    def __str__(self):
        return to_string(self)

    @property
    def symbols(self) -> frozenset[str]:
        s = self._syms
        if s is None:
            if self.kind == "sym":
                s = frozenset((self.name,))
            else:
                s = frozenset().union(*(c.symbols for c in self.children)) if self.children else frozenset()
            object.__setattr__(self, "_syms", s)
        return s

    # Operator sugar builds simplified trees; handy for tests and library code.
    def __add__(self, o):
        return add(self, _lift(o))

    def __radd__(self, o):
        return add(_lift(o), self)

    def __sub__(self, o):
        return add(self, neg(_lift(o)))

    def __rsub__(self, o):
        return add(_lift(o), neg(self))

    def __mul__(self, o):
        return mul(self, _lift(o))

    def __rmul__(self, o):
        return mul(_lift(o), self)

    def __truediv__(self, o):
        return div(self, _lift(o))

    def __pow__(self, o):
        return power(self, _lift(o))

    def __neg__(self):
        return neg(self)


def _lift(x) -> Expr:
    if isinstance(x, Expr):
        return x
    return const(x)


# ---------------------------------------------------------------------------
# raw constructors (no simplification; the parser uses these)


def const(v: float) -> Expr:
    v = float(v)
    if not math.isfinite(v):
        raise ExprError(f"non-finite constant {v!r}")
    return Expr("const", value=v)


def sym(name: str) -> Expr:
    return Expr("sym", name=name)


def raw(kind: str, *children: Expr, name: str = "") -> Expr:
    return Expr(kind, name=name, children=children)


ZERO = const(0.0)
ONE = const(1.0)


def _is_const(e: Expr, v: float | None = None) -> bool:
    return e.kind == "const" and (v is None or e.value == v)


# ---------------------------------------------------------------------------
# simplifying constructors


def add(*terms: Expr) -> Expr:
    flat: list[Expr] = []
    for t in terms:
        if t.kind == "add":
            flat.extend(t.children)
        else:
            flat.append(t)
    c = 0.0
    rest = []
    for t in flat:
        if t.kind == "const":
            c += t.value
        else:
            rest.append(t)
    if c != 0.0:
        rest.append(const(c))
    if not rest:
        return ZERO
    if len(rest) == 1:
        return rest[0]
    return Expr("add", children=tuple(rest))


def mul(*factors: Expr) -> Expr:
    flat: list[Expr] = []
    for f in factors:
        if f.kind == "mul":
            flat.extend(f.children)
        else:
            flat.append(f)
    c = 1.0
    sign = 1.0
    rest = []
    for f in flat:
        if f.kind == "const":
            c *= f.value
        elif f.kind == "neg":
            sign = -sign
            rest.append(f.children[0])
        else:
            rest.append(f)
    c *= sign
    if c == 0.0:
        return ZERO
    if not rest:
        return const(c)
    body = rest[0] if len(rest) == 1 else Expr("mul", children=tuple(rest))
    if c == 1.0:
        return body
    if c == -1.0:
        return Expr("neg", children=(body,))
    if body.kind == "mul":
        return Expr("mul", children=(const(c),) + body.children)
    return Expr("mul", children=(const(c), body))


def neg(a: Expr) -> Expr:
    if a.kind == "const":
        return const(-a.value)
    if a.kind == "neg":
        return a.children[0]
    return Expr("neg", children=(a,))


def sub(a: Expr, b: Expr) -> Expr:
    return add(a, neg(b))


def div(a: Expr, b: Expr) -> Expr:
    if _is_const(b, 1.0):
        return a
    if _is_const(a, 0.0):
        return ZERO
    if a.kind == "const" and b.kind == "const" and b.value != 0.0:
        return const(a.value / b.value)
    if b.kind == "const" and b.value != 0.0 and a.kind == "mul" and a.children[0].kind == "const":
        # fold the coefficient: (c*x)/d -> (c/d)*x
        return mul(const(a.children[0].value / b.value), *a.children[1:])
    return Expr("div", children=(a, b))


def power(b: Expr, e: Expr) -> Expr:
    if _is_const(e, 0.0):
        return ONE
    if _is_const(e, 1.0):
        return b
    if _is_const(b, 1.0):
        return ONE
    if b.kind == "const" and e.kind == "const":
        try:
            return const(_pow(b.value, e.value))
        except (ValueError, OverflowError, ZeroDivisionError):
            pass
    return Expr("pow", children=(b, e))


def func(name: str, a: Expr) -> Expr:
    if name not in FUNCTIONS:
        raise ExprError(f"unknown function {name!r}")
    if a.kind == "const":
        try:
            return const(_FUNCS[name](a.value))
        except (ValueError, OverflowError):
            pass
    return Expr("func", name=name, children=(a,))


# ---------------------------------------------------------------------------
# numeric kernels shared by the tree walker and compiled code


def _pow(b: float, e: float) -> float:
    return math.pow(b, e)


_FUNCS: dict[str, Callable[[float], float]] = {
    "sin": math.sin,
    "cos": math.cos,
    "exp": math.exp,
    "log": math.log,
    "sqrt": math.sqrt,
}


# ---------------------------------------------------------------------------
# parsing

_TOKEN = re.compile(
    r"\s*(?:"
    r"(?P<num>(?:[0-9]+(?:\.[0-9]*)?|\.[0-9]+)(?:[eE][+-]?[0-9]+)?)"
    r"|(?P<id>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^()])"
    r")"
)


@dataclass(frozen=True)
class _Tok:
    kind: str  # num, id, op, eof
    text: str
    pos: int  # character offset


def _tokenize(src: str) -> list[_Tok]:
    toks = []
    i = 0
    n = len(src)
    while True:
        while i < n and src[i].isspace():
            i += 1
        if i >= n:
            toks.append(_Tok("eof", "", n))
            return toks
        m = _TOKEN.match(src, i)
        if m is None or m.end() == i:
            raise ExprSyntaxError(
                f"unexpected character {src[i]!r}", _byte_offset(src, i),
                {"number", "symbol", "function", "(", "-"},
            )
        kind = m.lastgroup
        toks.append(_Tok(kind, m.group(kind), m.start(kind)))
        i = m.end()


def _byte_offset(src: str, i: int) -> int:
    return len(src[:i].encode("utf-8"))


class _Parser:
    def __init__(self, src: str, symbols: re.Pattern):
        self.src = src
        self.symbols = symbols
        self.toks = _tokenize(src)
        self.i = 0

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def take(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def fail(self, tok: _Tok, expected: set[str], what: str | None = None):
        found = "end of input" if tok.kind == "eof" else repr(tok.text)
        raise ExprSyntaxError(what or f"unexpected {found}", _byte_offset(self.src, tok.pos), expected)

    def parse(self) -> Expr:
        e = self.expr()
        tok = self.peek()
        if tok.kind != "eof":
            self.fail(tok, {"+", "-", "*", "/", "^", "end of input"})
        return e

    def expr(self) -> Expr:
        terms = [self.term()]
        while self.peek().kind == "op" and self.peek().text in "+-":
            op = self.take().text
            t = self.term()
            terms.append(t if op == "+" else raw("neg", t))
        return terms[0] if len(terms) == 1 else raw("add", *terms)

    def term(self) -> Expr:
        factors = [self.factor()]
        while self.peek().kind == "op" and self.peek().text in "*/":
            op = self.take().text
            f = self.factor()
            if op == "*":
                factors.append(f)
            else:
                left = factors[0] if len(factors) == 1 else raw("mul", *factors)
                factors = [raw("div", left, f)]
        return factors[0] if len(factors) == 1 else raw("mul", *factors)

    def factor(self) -> Expr:
        base = self.atom()
        if self.peek().kind == "op" and self.peek().text == "^":
            self.take()
            return raw("pow", base, self.factor())
        return base

    def atom(self) -> Expr:
        tok = self.take()
        if tok.kind == "num":
            return const(float(tok.text))
        if tok.kind == "id":
            nxt = self.peek()
            if nxt.kind == "op" and nxt.text == "(":
                if tok.text not in FUNCTIONS:
                    raise UnknownFunction(
                        f"unknown function {tok.text!r}", _byte_offset(self.src, tok.pos), set(FUNCTIONS)
                    )
                self.take()
                arg = self.expr()
                close = self.take()
                if not (close.kind == "op" and close.text == ")"):
                    self.fail(close, {")", "+", "-", "*", "/", "^"})
                return raw("func", arg, name=tok.text)
            if self.symbols.fullmatch(tok.text) is None:
                raise MalformedSymbol(
                    f"malformed symbol `{tok.text}`", _byte_offset(self.src, tok.pos), {"symbol"}
                )
            return sym(tok.text)
        if tok.kind == "op" and tok.text == "(":
            e = self.expr()
            close = self.take()
            if not (close.kind == "op" and close.text == ")"):
                self.fail(close, {")", "+", "-", "*", "/", "^"})
            return e
        if tok.kind == "op" and tok.text == "-":
            return raw("neg", self.atom())
        self.fail(tok, {"number", "symbol", "function", "(", "-"})


def parse(source: str, symbols: re.Pattern = LAGRANGIAN_SYMBOLS) -> Expr:
    """Parse ``source`` into an expression tree.

    Grammar (whitespace insignificant)::

        expr   := term (('+'|'-') term)*
        term   := factor (('*'|'/') factor)*
        factor := atom ('^' factor)?
        atom   := number | symbol | func '(' expr ')' | '(' expr ')' | '-' atom

    Note that unary minus binds tighter than ``^``: ``-q1^2`` is ``(-q1)^2``.
    ``symbols`` is the regular expression accepted symbol names must match.
    """
    return _Parser(source, symbols).parse()


# ---------------------------------------------------------------------------
# printing


def _num(v: float) -> str:
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


_PAREN_FOR = {
    "add": ("term", "factor", "atom"),
    "mul": ("factor", "atom"),
    "div": ("factor", "atom"),
    "pow": ("atom",),
}


def _fmt(e: Expr, ctx: str) -> str:
    k = e.kind
    if k == "const":
        return _num(e.value) if e.value >= 0 else "-" + _num(-e.value)
    if k == "sym":
        return e.name
    if k == "func":
        return f"{e.name}({_fmt(e.children[0], 'expr')})"
    if k == "neg":
        return "-" + _fmt(e.children[0], "atom")
    if k == "add":
        parts = []
        for j, c in enumerate(e.children):
            if j > 0 and c.kind == "neg":
                inner = c.children[0]
                s = _fmt(inner, "term") if inner.kind != "add" else "(" + _fmt(inner, "expr") + ")"
                parts.append(" - " + s)
            else:
                s = "(" + _fmt(c, "expr") + ")" if c.kind == "add" else _fmt(c, "term")
                parts.append(s if j == 0 else " + " + s)
        s = "".join(parts)
    elif k == "mul":
        first = e.children[0]
        head = _fmt(first, "term") if first.kind == "div" else _fmt(first, "factor")
        s = "*".join([head] + [_fmt(c, "factor") for c in e.children[1:]])
    elif k == "div":
        a, b = e.children
        left = _fmt(a, "term") if a.kind in ("div", "mul") else _fmt(a, "factor")
        s = f"{left}/{_fmt(b, 'factor')}"
    elif k == "pow":
        b, x = e.children
        s = f"{_fmt(b, 'atom')}^{_fmt(x, 'factor')}"
    else:  # pragma: no cover
        raise ExprError(f"bad node kind {k!r}")
    if ctx in _PAREN_FOR[k]:
        return "(" + s + ")"
    return s


def to_string(e: Expr) -> str:
    return _fmt(e, "expr")


# ---------------------------------------------------------------------------
# differentiation


def differentiate(e: Expr, wrt: str) -> Expr:
    """Exact partial derivative of ``e`` with respect to the symbol ``wrt``."""
    if wrt not in e.symbols:
        return ZERO
    k = e.kind
    if k == "sym":
        return ONE
    ch = e.children
    if k == "add":
        return add(*(differentiate(c, wrt) for c in ch))
    if k == "neg":
        return neg(differentiate(ch[0], wrt))
    if k == "mul":
        terms = []
        for j, c in enumerate(ch):
            dc = differentiate(c, wrt)
            if _is_const(dc, 0.0):
                continue
            terms.append(mul(*ch[:j], dc, *ch[j + 1:]))
        return add(*terms)
    if k == "div":
        a, b = ch
        da = differentiate(a, wrt)
        db = differentiate(b, wrt)
        if _is_const(db, 0.0):
            return div(da, b)
        return div(sub(mul(da, b), mul(a, db)), power(b, const(2.0)))
    if k == "pow":
        b, x = ch
        db = differentiate(b, wrt)
        if wrt not in x.symbols:
            if x.kind == "const":
                return mul(x, power(b, const(x.value - 1.0)), db)
            return mul(x, power(b, sub(x, ONE)), db)
        dx = differentiate(x, wrt)
        return mul(e, add(mul(dx, func("log", b)), div(mul(x, db), b)))
    if k == "func":
        a = ch[0]
        da = differentiate(a, wrt)
        n = e.name
        if n == "sin":
            return mul(func("cos", a), da)
        if n == "cos":
            return neg(mul(func("sin", a), da))
        if n == "exp":
            return mul(e, da)
        if n == "log":
            return div(da, a)
        if n == "sqrt":
            return div(da, mul(const(2.0), e))
    raise ExprError(f"cannot differentiate node {k!r}")  # pragma: no cover


def rename(e: Expr, mapping: Mapping[str, str]) -> Expr:
    """Rename symbols; unmapped symbols are kept."""
    if not (e.symbols & mapping.keys()):
        return e
    if e.kind == "sym":
        return sym(mapping[e.name])
    return Expr(e.kind, e.value, e.name, tuple(rename(c, mapping) for c in e.children))


def substitute(e: Expr, values: Mapping[str, float]) -> Expr:
    """Replace symbols by constants and re-simplify."""
    if not (e.symbols & values.keys()):
        return e
    if e.kind == "sym":
        return const(values[e.name])
    ch = [substitute(c, values) for c in e.children]
    return _rebuild(e, ch)


def _rebuild(e: Expr, ch: list[Expr]) -> Expr:
    k = e.kind
    if k == "add":
        return add(*ch)
    if k == "mul":
        return mul(*ch)
    if k == "neg":
        return neg(ch[0])
    if k == "div":
        return div(ch[0], ch[1])
    if k == "pow":
        return power(ch[0], ch[1])
    if k == "func":
        return func(e.name, ch[0])
    return e


# ---------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True)
class Binding:
    """Evaluation point ``(t, q, qd)`` for Lagrangian expressions."""

    t: float
    q: tuple[float, ...]
    qd: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "q", tuple(float(x) for x in self.q))
        object.__setattr__(self, "qd", tuple(float(x) for x in self.qd))
        if len(self.q) != len(self.qd):
            raise ExprError("binding q and qd lengths differ")
        vals = (self.t,) + self.q + self.qd
        if not all(math.isfinite(v) for v in vals):
            raise ExprError("binding entries must be finite")

    @property
    def n(self) -> int:
        return len(self.q)

    def env(self) -> dict[str, float]:
        d = {"t": float(self.t)}
        for k, v in enumerate(self.q, 1):
            d[f"q{k}"] = v
        for k, v in enumerate(self.qd, 1):
            d[f"qd{k}"] = v
        return d


def evaluate(e: Expr, at: Binding | Mapping[str, float]) -> float:
    """Evaluate in IEEE double precision, children left to right."""
    env = at.env() if isinstance(at, Binding) else at
    return _eval(e, env)


def _eval(e: Expr, env: Mapping[str, float]) -> float:
    k = e.kind
    if k == "const":
        return e.value
    if k == "sym":
        try:
            return env[e.name]
        except KeyError:
            raise ExprError(f"unbound symbol {e.name!r}") from None
    if k == "add":
        it = iter(e.children)
        acc = _eval(next(it), env)
        for c in it:
            acc = acc + _eval(c, env)
        return _finite(acc, e)
    if k == "mul":
        it = iter(e.children)
        acc = _eval(next(it), env)
        for c in it:
            acc = acc * _eval(c, env)
        return _finite(acc, e)
    if k == "neg":
        return -_eval(e.children[0], env)
    if k == "div":
        a = _eval(e.children[0], env)
        b = _eval(e.children[1], env)
        if b == 0.0:
            raise DomainError("division by zero", e)
        return _finite(a / b, e)
    if k == "pow":
        b = _eval(e.children[0], env)
        x = _eval(e.children[1], env)
        if b < 0.0 and not float(x).is_integer():
            raise DomainError("non-integer power of a negative base", e)
        if b == 0.0 and x < 0.0:
            raise DomainError("negative power of zero", e)
        try:
            return _finite(_pow(b, x), e)
        except OverflowError:
            raise DomainError("overflow", e) from None
    if k == "func":
        a = _eval(e.children[0], env)
        if e.name == "log" and a <= 0.0:
            raise DomainError("log of a nonpositive value", e)
        if e.name == "sqrt" and a < 0.0:
            raise DomainError("sqrt of a negative value", e)
        try:
            return _finite(_FUNCS[e.name](a), e)
        except OverflowError:
            raise DomainError("overflow", e) from None
    raise ExprError(f"bad node kind {k!r}")  # pragma: no cover


def _finite(v: float, e: Expr) -> float:
    if not math.isfinite(v):
        raise DomainError("non-finite result", e)
    return v


# ---------------------------------------------------------------------------
# compilation


def _codegen(e: Expr) -> str:
    k = e.kind
    if k == "const":
        return repr(e.value) if e.value >= 0 else f"({e.value!r})"
    if k == "sym":
        return e.name
    if k == "add":
        return "(" + " + ".join(_codegen(c) for c in e.children) + ")"
    if k == "mul":
        return "(" + " * ".join(_codegen(c) for c in e.children) + ")"
    if k == "neg":
        return f"(-{_codegen(e.children[0])})"
    if k == "div":
        return f"({_codegen(e.children[0])} / {_codegen(e.children[1])})"
    if k == "pow":
        return f"_pow({_codegen(e.children[0])}, {_codegen(e.children[1])})"
    if k == "func":
        return f"_{e.name}({_codegen(e.children[0])})"
    raise ExprError(f"bad node kind {k!r}")  # pragma: no cover


class CompiledExprs:
    """Many expressions evaluated by one generated Python function.

    ``params`` names the positional arguments of the generated function and
    ``symbol_source`` maps each symbol to a Python expression over those
    parameters, e.g. ``{"q1": "q[0]"}``.
    """

    def __init__(self, exprs: Sequence[Expr], params: Sequence[str], symbol_source: Mapping[str, str]):
        self.exprs = tuple(exprs)
        used = frozenset().union(*(e.symbols for e in self.exprs)) if self.exprs else frozenset()
        missing = used - symbol_source.keys()
        if missing:
            raise ExprError(f"unbound symbols {sorted(missing)}")
        lines = [f"def _f({', '.join(params)}):"]
        for s in sorted(used):
            lines.append(f"    {s} = {symbol_source[s]}")
        body = ", ".join(_codegen(e) for e in self.exprs)
        lines.append(f"    return ({body}{',' if len(self.exprs) == 1 else ''})")
        ns = {"_pow": _pow, **{f"_{n}": f for n, f in _FUNCS.items()}}
        exec(compile("\n".join(lines), "<hamfold-expr>", "exec"), ns)
        self._f = ns["_f"]
        self.params = tuple(params)
        self.symbol_source = dict(symbol_source)

    def __call__(self, *args) -> tuple[float, ...]:
        try:
            out = self._f(*args)
        except (ValueError, ZeroDivisionError, OverflowError):
            self._diagnose(args)
            raise  # pragma: no cover - _diagnose always raises
        for v in out:
            if not math.isfinite(v):
                self._diagnose(args)
        return out

    def _diagnose(self, args):
        env_src = "{" + ", ".join(f"{s!r}: {src}" for s, src in self.symbol_source.items()) + "}"
        ns = {}
        try:
            env = eval(f"lambda {', '.join(self.params)}: {env_src}", ns)(*args)
        except (IndexError, TypeError):
            env = {}
        for e in self.exprs:
            _eval(e, env)
        raise DomainError("non-finite result")


def compile_exprs(exprs: Sequence[Expr], params: Sequence[str], symbol_source: Mapping[str, str]) -> CompiledExprs:
    return CompiledExprs(exprs, params, symbol_source)


def lagrangian_sources(n: int) -> dict[str, str]:
    """Symbol sources for generated functions with signature ``(t, q, qd)``."""
    src = {"t": "t"}
    for k in range(1, n + 1):
        src[f"q{k}"] = f"q[{k - 1}]"
        src[f"qd{k}"] = f"qd[{k - 1}]"
    return src


def symbol_index(name: str) -> int:
    """Trailing positive integer of a symbol name (``qd12`` -> 12)."""
    m = re.search(r"([0-9]+)$", name)
    if m is None:
        raise ExprError(f"symbol {name!r} has no index")
    return int(m.group(1))


def iter_nodes(e: Expr) -> Iterable[Expr]:
    yield e
    for c in e.children:
        yield from iter_nodes(c)
