import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from carnotgeo import exprparse as ep
from carnotgeo.errors import ArityError, DomainError, ExprSyntaxError, UnknownIdentifier


def test_parse_grammar_example():
    e = ep.parse("0.25*(x1^2+x2^2)", 3)
    assert ep.variables(e) == {0, 1}
    X = np.array([[2.0, 4.0, 7.0]])
    assert ep.evaluate(e, X)[0] == pytest.approx(5.0)


def test_syntax_error_offset():
    with pytest.raises(ExprSyntaxError) as info:
        ep.parse("x1*(", 2)
    assert info.value.offset == 4


def test_unknown_identifier_and_arity():
    with pytest.raises(UnknownIdentifier):
        ep.parse("x5", 3)
    with pytest.raises(UnknownIdentifier):
        ep.parse("foo(x1)", 3)
    with pytest.raises(ArityError):
        ep.parse("sin(x1, x2)", 3)
    with pytest.raises(ExprSyntaxError):
        ep.parse("   ", 3)


def test_precedence_and_associativity():
    X = np.array([[2.0, 3.0]])
    assert ep.evaluate(ep.parse("2^3^2", 2), X)[0] == 2.0**9
    assert ep.evaluate(ep.parse("-x1^2", 2), X)[0] == -4.0
    assert ep.evaluate(ep.parse("x1-x2-1", 2), X)[0] == -2.0
    assert ep.evaluate(ep.parse("x2/x1/2", 2), X)[0] == 0.75
    assert ep.evaluate(ep.parse("pi", 2), X)[0] == pytest.approx(np.pi)


def test_jet_examples():
    jet = ep.eval_jet(ep.parse("x1^2", 1), [3.0])
    assert jet.value == 9 and jet.grad[0] == 6 and jet.hess[0, 0] == 2
    jet = ep.eval_jet(ep.parse("sin(x1)*x2", 2), [0.0, 5.0])
    assert jet.value == 0 and np.allclose(jet.grad, [5.0, 0.0])


def test_domain_errors_strict_and_lenient():
    e = ep.parse("log(x1) + sqrt(x2) + 1/x1", 2)
    X = np.array([[-1.0, -1.0]])
    with pytest.raises(DomainError):
        ep.evaluate(e, X)
    assert not np.isfinite(ep.evaluate(e, X, strict=False)[0])


def _random_polynomial(rng, n, degree=4, terms=6):
    parts = []
    for _ in range(terms):
        powers = rng.multinomial(int(rng.integers(1, degree + 1)), [1 / n] * n)
        mono = "*".join(f"x{i + 1}^{p}" for i, p in enumerate(powers) if p)
        parts.append(f"({rng.uniform(-2, 2):.6f})*{mono}")
    return "+".join(parts)


def test_derivatives_match_central_differences(rng):
    n, step = 3, 1e-4
    for _ in range(5):
        e = ep.parse(_random_polynomial(rng, n), n)
        jet = ep.CompiledJet(e, n)
        X = rng.uniform(-1, 1, (100, n))
        _, grad, hess = jet(X)
        for k in range(n):
            dx = np.zeros(n)
            dx[k] = step
            fd = (ep.evaluate(e, X + dx) - ep.evaluate(e, X - dx)) / (2 * step)
            assert np.max(np.abs(fd - grad[:, k])) <= 1e-6
            gp = jet(X + dx, order=1)[1]
            gm = jet(X - dx, order=1)[1]
            assert np.max(np.abs((gp - gm) / (2 * step) - hess[:, k, :])) <= 1e-6


def test_substitute_composes():
    e = ep.parse("x1*x2", 2)
    f = ep.substitute(e, {0: ep.parse("x2+1", 2)})
    assert ep.evaluate(f, np.array([[5.0, 2.0]]))[0] == 6.0


# -- round trip of the printer --------------------------------------------
_leaf = st.one_of(
    st.integers(0, 2).map(ep.var),
    st.floats(-5, 5, allow_nan=False, allow_infinity=False).map(ep.Const),
)


def _combine(children):
    binary = st.tuples(children, children, st.sampled_from(["+", "-", "*", "/", "^"]))

    def build(t):
        a, b, op = t
        if op == "^":
            return ep.Pow(a, ep.Const(2.0))
        return {"+": ep.Add, "-": ep.Sub, "*": ep.Mul, "/": ep.Div}[op](a, b)

    unary = st.tuples(children, st.sampled_from(["neg", "sin", "exp"])).map(
        lambda t: ep.Neg(t[0]) if t[1] == "neg" else ep.Func(t[1], t[0])
    )
    return st.one_of(binary.map(build), unary)


expressions = st.recursive(_leaf, _combine, max_leaves=12)


@settings(max_examples=150, deadline=None)
@given(expressions)
def test_pretty_round_trip(e):
    text = ep.pretty(e)
    assert ep.pretty(ep.parse(text, 3)) == text
