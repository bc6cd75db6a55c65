import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fbmax.expr import DomainError, ExprError, ExprSyntaxError, eval_expr, gradient, parse
from oracles import ref_eval

# fixed corpus; every entry is defined at CORPUS_POINT
CORPUS = [
    "1+2*3",
    "2*x1^2 + sin(x2)",
    "x1^3",
    "exp(0)",
    "-x1^2",
    "2^3^2",
    "(x1 - x2) / (1 + x3^2)",
    "sqrt(1 - x1^2 - x2^2)",
    "log(1 + x3) * cos(x2/1.25)",
    "abs(x2 - x1) + 0.5e-1",
    "1.25 - 0.25*cos(x2/1.25) - sqrt(1 - x1^2 - 0.0625*sin(x2/1.25)^2)",
    "(1 - x3/1.25)^2",
    "1 + 0.3*x1^2 + 0.2*x1^2*x2",
    "x1^0.5 + x2^(-2)",
    "--x1 - -x2",
    "exp(-x1*x1) / sqrt(2*3.141592653589793)",
    "x4 * x5 - x6 / x7",
    "sin(cos(exp(x1 / 4)))",
    "x1*x2*x3 - x1/x2/x3",
    "((((x1))))^2^0.5",
]
CORPUS_POINT = (0.3, 0.4, 0.25, 1.5, -2.0, 3.0, 0.75)


def test_precedence():
    assert eval_expr(parse("1+2*3"), []) == 7


def test_syntax_error_offset():
    with pytest.raises(ExprSyntaxError) as err:
        parse("x1 +")
    assert err.value.offset == 4


def test_sin_example():
    assert eval_expr(parse("2*x1^2 + sin(x2)"), [1, 0]) == 2


def test_exp_zero():
    assert eval_expr(parse("exp(0)"), []) == 1


def test_division_by_zero():
    with pytest.raises(DomainError) as err:
        eval_expr(parse("x1/x2"), [1, 0])
    assert "x2" in err.value.subexpression


def test_cube():
    assert eval_expr(parse("x1^3"), [2]) == 8


@pytest.mark.parametrize("src", ["sqrt(-1)", "log(0)", "log(-2)", "0^(-1)", "(-2)^0.5"])
def test_domain_errors(src):
    with pytest.raises(DomainError):
        eval_expr(parse(src), [])


@pytest.mark.parametrize("src", ["foo(1)", "y1", "x17", "x0", "sin 2", "(1", "1)", "", "3 $ 4"])
def test_rejected(src):
    with pytest.raises(ExprError):
        parse(src)


def test_variable_limit():
    with pytest.raises(ExprError):
        parse("x4", max_var=3)
    parse("x3", max_var=3)


def test_unary_binds_below_power():
    assert eval_expr(parse("-2^2"), []) == -4


def test_left_associative_power():
    assert eval_expr(parse("2^3^2"), []) == 64


def test_short_coordinates_rejected():
    with pytest.raises(ExprError):
        eval_expr(parse("x3"), [1, 2])


def test_gradient_square():
    g = gradient(parse("x1^2"), [3.0], h=1e-5)
    assert g[0] == pytest.approx(6.0, abs=1e-8)


def test_gradient_constant():
    assert np.all(gradient(parse("5"), [1.0, 2.0]) == 0)


def test_gradient_sin_against_cosine():
    assert gradient(parse("sin(x1)"), [0.0])[0] == pytest.approx(math.cos(0.0), abs=1e-9)


@pytest.mark.parametrize("src", CORPUS)
def test_corpus_zero_ulp(src):
    e = parse(src)
    assert eval_expr(e, CORPUS_POINT) == ref_eval(src, CORPUS_POINT)


@pytest.mark.parametrize("src", CORPUS)
def test_corpus_round_trip(src):
    e = parse(src)
    again = parse(e.serialize())
    assert again.ast == e.ast
    assert eval_expr(again, CORPUS_POINT) == eval_expr(e, CORPUS_POINT)


@pytest.mark.parametrize("src", CORPUS)
def test_compiled_matches_scalar(src):
    e = parse(src)
    pts = np.array([CORPUS_POINT, CORPUS_POINT])
    vals = e.compile()(pts)
    assert vals.shape == (2,)
    assert vals[0] == pytest.approx(eval_expr(e, CORPUS_POINT), rel=4e-16, abs=0)


def test_compiled_domain_error():
    f = parse("sqrt(x1)").compile()
    with pytest.raises(DomainError):
        f(np.array([[1.0], [-1.0]]))


def test_gradient_order_two():
    # analytic oracle: d/dx1 exp(x1) sin(x2) = exp(x1) sin(x2)
    e = parse("exp(x1)*sin(x2)")
    x = [0.3, 0.7]
    exact = math.exp(0.3) * math.sin(0.7)
    e1 = abs(gradient(e, x, h=1e-2)[0] - exact)
    e2 = abs(gradient(e, x, h=5e-3)[0] - exact)
    assert 4 * 0.7 <= e1 / e2 <= 4 * 1.3


# -- grammar-generated round trips --------------------------------------------

_leaf = st.one_of(
    st.floats(0, 1e3, allow_nan=False).map(repr),
    st.integers(1, 4).map(lambda k: f"x{k}"),
)


def _combine(children):
    return st.one_of(
        st.tuples(children, st.sampled_from("+-*/^"), children).map(lambda t: f"({t[0]}){t[1]}({t[2]})"),
        children.map(lambda c: f"-{c}"),
        st.tuples(st.sampled_from(["sin", "cos", "exp", "sqrt", "log", "abs"]), children).map(lambda t: f"{t[0]}({t[1]})"),
    )


expressions = st.recursive(_leaf, _combine, max_leaves=12)


@given(expressions)
def test_round_trip_structural(src):
    e = parse(src)
    assert parse(e.serialize()).ast == e.ast
    assert parse(parse(e.serialize()).serialize()).serialize() == e.serialize()


@given(expressions, st.lists(st.floats(-3, 3), min_size=4, max_size=4))
def test_reference_agreement(src, coords):
    e = parse(src)
    try:
        mine = eval_expr(e, coords)
    except (DomainError, OverflowError):
        return
    try:
        ref = ref_eval(e.serialize(), coords)
    except (ValueError, ZeroDivisionError, OverflowError):
        return
    assert mine == ref or (math.isnan(mine) and math.isnan(ref))
