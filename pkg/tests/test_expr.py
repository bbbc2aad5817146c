import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cosym.errors import DomainError, ExprSyntaxError, UnknownVariable
from cosym.expr import (
    FUNCTIONS,
    Binary,
    Const,
    DualNumber,
    Expression,
    Unary,
    Var,
    eval_value,
    eval_with_grad,
    parse,
    summands,
    to_source,
    variables,
)

VOCAB = ["x", "y", "z"]


@pytest.mark.parametrize(
    "src, expected",
    [
        ("1+2*3", 7.0),
        ("(1+2)*3", 9.0),
        ("2^3^2", 512.0),  # right associative
        ("-2^2", -4.0),  # power binds tighter than negation
        ("(-2)^2", 4.0),
        ("8/4/2", 1.0),  # left associative
        ("7-2-1", 4.0),
        ("2*-3", -6.0),
        ("2^-1", 0.5),
        ("--x", 3.0),
        ("1e-3*x", 0.003),
        ("x*y - z", 3.0 * 2.0 - 0.5),
        ("exp(0) + log(1) + sin(0) + cos(0) + sqrt(4) + tanh(0)", 4.0),
        ("cosh(0) - sinh(0)", 1.0),
    ],
)
def test_precedence_and_values(src, expected):
    assert eval_value(parse(src, VOCAB), {"x": 3.0, "y": 2.0, "z": 0.5}) == pytest.approx(expected, rel=1e-15)


def test_ast_shapes():
    assert parse("x + 2*y", VOCAB) == Binary("+", Var("x"), Binary("*", Const(2.0), Var("y")))
    assert parse("-3", VOCAB) == Const(-3.0)
    assert parse("-x", VOCAB) == Unary("neg", Var("x"))
    assert parse("-(3)", VOCAB) == Unary("neg", Const(3.0))
    assert parse("sin(x)^2", VOCAB) == Binary("^", Unary("sin", Var("x")), Const(2.0))


@pytest.mark.parametrize(
    "src, offset, expect_token",
    [
        ("1 + * 2", 4, "number"),
        ("1 +", 3, "number"),
        ("sin x", 4, "("),
        ("(1", 2, ")"),
        ("x y", 2, "end of input"),
        ("exp", 3, "("),
    ],
)
def test_syntax_errors_carry_offset_and_expectations(src, offset, expect_token):
    with pytest.raises(ExprSyntaxError) as info:
        parse(src, VOCAB)
    assert info.value.offset == offset
    assert expect_token in info.value.expected


def test_unrecognised_character():
    with pytest.raises(ExprSyntaxError) as info:
        parse("x + $", VOCAB)
    assert info.value.offset == 4


def test_unknown_variable_names_the_culprit():
    with pytest.raises(UnknownVariable) as info:
        parse("x + w", VOCAB)
    assert info.value.name == "w"


def test_vocabulary_cannot_shadow_functions():
    with pytest.raises(ValueError):
        parse("exp + 1", ["exp"])


@pytest.mark.parametrize(
    "src, x",
    [("log(x)", 0.0), ("log(x)", -1.0), ("1/x", 0.0), ("sqrt(x)", -1.0), ("x^0.5", -8.0), ("exp(x)", 1000.0),
     ("x^(-1)", 0.0)],
)
def test_domain_errors(src, x):
    with pytest.raises(DomainError) as info:
        eval_value(parse(src, VOCAB), {"x": x})
    assert info.value.subexpression


def test_negative_base_with_integer_exponent_is_fine():
    assert eval_value(parse("x^3", VOCAB), {"x": -2.0}) == -8.0


def test_sqrt_slope_at_zero_is_a_domain_error():
    with pytest.raises(DomainError):
        eval_with_grad(parse("sqrt(x)", VOCAB), {"x": 0.0})


def test_gradient_oracles():
    val, g = eval_with_grad(parse("x^2*y", VOCAB), {"x": 3.0, "y": 2.0})
    assert val == 18.0 and g == {"x": 12.0, "y": 9.0}
    val, g = eval_with_grad(parse("exp(x)*sin(y)", VOCAB), {"x": 0.0, "y": 0.0})
    assert (val, g["x"], g["y"]) == (0.0, 0.0, 1.0)
    _, g = eval_with_grad(parse("x^y", VOCAB), {"x": 2.0, "y": 3.0})
    assert g["x"] == pytest.approx(12.0) and g["y"] == pytest.approx(8 * math.log(2.0))


def test_active_subset_and_zero_entries():
    _, g = eval_with_grad(parse("x*y", VOCAB), {"x": 2.0, "y": 5.0, "z": 1.0}, active=["x", "z"])
    assert g == {"x": 5.0, "z": 0.0}


def test_missing_point_value():
    with pytest.raises(UnknownVariable):
        eval_value(parse("x + y", VOCAB), {"x": 1.0})


def test_variables_and_summands():
    ast = parse("x*y + 3 + (y - z)", VOCAB)
    assert variables(ast) == {"x", "y", "z"}
    assert len(summands(ast)) == 3
    assert len(summands(parse("x - y", VOCAB))) == 1


def test_expression_wrapper():
    e = Expression("x*y + 1", VOCAB)
    assert e.names == {"x", "y"} and not e.is_constant
    assert e.value({"x": 2.0, "y": 3.0}) == 7.0
    d = e.dual({"x": DualNumber.variable(2.0, 0, 2), "y": DualNumber.variable(3.0, 1, 2)})
    assert d.value == 7.0 and list(d.gradient(2)) == [3.0, 2.0]
    assert Expression("2*3", VOCAB).is_constant
    assert Expression.from_ast(e.ast).value({"x": 1.0, "y": 1.0}) == 2.0


def test_function_table():
    assert set(FUNCTIONS) >= {"exp", "log", "sin", "cos", "sqrt", "tanh"}


# ---------------------------------------------------------------------------
# property tests
# ---------------------------------------------------------------------------

_leaves = st.one_of(
    st.sampled_from([Var(v) for v in VOCAB]),
    st.floats(min_value=-50, max_value=50, allow_nan=False).map(lambda v: Const(round(v, 3))),
)


def _extend(children):
    return st.one_of(
        st.builds(Binary, st.sampled_from(["+", "-", "*", "/", "^"]), children, children),
        st.builds(Unary, st.sampled_from(["neg", *FUNCTIONS]), children),
    )


ASTS = st.recursive(_leaves, _extend, max_leaves=12)


@settings(max_examples=300, deadline=None)
@given(ASTS)
def test_printer_round_trip(ast):
    src = to_source(ast)
    again = parse(src, VOCAB)
    assert again == ast
    assert to_source(again) == src
    point = {"x": 0.7, "y": -1.3, "z": 2.1}
    try:
        expected = eval_value(ast, point)
    except DomainError:
        with pytest.raises(DomainError):
            eval_value(again, point)
        return
    got = eval_value(again, point)
    assert got == expected or (math.isnan(got) and math.isnan(expected))


_SMOOTH = st.recursive(
    st.sampled_from([Var("x"), Var("y"), Const(0.5), Const(2.0)]),
    lambda c: st.one_of(
        st.builds(Binary, st.sampled_from(["+", "-", "*"]), c, c),
        st.builds(Unary, st.sampled_from(["sin", "cos", "tanh"]), c),
    ),
    max_leaves=8,
)


@settings(max_examples=200, deadline=None)
@given(_SMOOTH, _SMOOTH, st.floats(-3, 3), st.floats(-3, 3))
def test_gradient_is_linear(f, g, a, b):
    point = {"x": 0.4, "y": -0.9}
    combo = Binary("+", Binary("*", Const(a), f), Binary("*", Const(b), g))
    _, gc = eval_with_grad(combo, point)
    _, gf = eval_with_grad(f, point)
    _, gg = eval_with_grad(g, point)
    for k in point:
        assert gc[k] == pytest.approx(a * gf[k] + b * gg[k], abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(_SMOOTH, st.floats(-2, 2), st.floats(-2, 2))
def test_gradient_matches_central_differences(ast, x, y):
    point = {"x": x, "y": y}
    _, g = eval_with_grad(ast, point)
    for k in point:
        h = 1e-6
        up, dn = dict(point), dict(point)
        up[k] += h
        dn[k] -= h
        fd = (eval_value(ast, up) - eval_value(ast, dn)) / (2 * h)
        assert abs(g[k] - fd) <= 1e-6 * max(1.0, abs(g[k]))


def test_dual_number_arithmetic():
    a = DualNumber.variable(2.0, 0, 2)
    b = DualNumber.variable(5.0, 1, 2)
    r = (a * b - a / b + 3.0) ** 2
    base = 2.0 * 5.0 - 2.0 / 5.0 + 3.0
    assert r.value == pytest.approx(base ** 2)
    np.testing.assert_allclose(r.gradient(2), [2 * base * (5.0 - 1 / 5.0), 2 * base * (2.0 + 2.0 / 25.0)])
