import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import fd_derive, fd_derive2, random_smooth_pairs
from sdelab.expr import (
    Bin,
    Call,
    DomainError,
    Expr,
    Neg,
    Num,
    ParseError,
    Var,
    derive,
    derive2,
    eval_at,
    eval_many,
    grad_many,
    hess_many,
    parse,
    to_source,
    variables_used,
)


# ---------------------------------------------------------------------------
# parsing


def test_parse_sum_of_squares():
    e = parse("x1^2 + x2^2", 2)
    assert e.root == Bin("+", Bin("^", Var(1), Num(2)), Bin("^", Var(2), Num(2)))


def test_parse_negation():
    e = parse("-x1", 2)
    assert e.root == Neg(Var(1))


def test_variable_index_out_of_range():
    with pytest.raises(ParseError, match="out of range"):
        parse("x3", 2)
    with pytest.raises(ParseError, match="out of range"):
        parse("x0", 2)


def test_unknown_identifier_and_function():
    with pytest.raises(ParseError, match="unknown function"):
        parse("foo(x1)", 1)
    with pytest.raises(ParseError, match="unknown identifier"):
        parse("y1 + 2", 1)


def test_error_carries_position():
    with pytest.raises(ParseError) as exc:
        parse("x1 + + x2", 2)
    assert exc.value.line == 1
    assert exc.value.col == 6
    with pytest.raises(ParseError) as exc:
        parse("x1 +\n* x2", 2)
    assert exc.value.line == 2
    assert exc.value.col == 1


def test_trailing_input_rejected():
    with pytest.raises(ParseError, match="trailing"):
        parse("x1 x2", 2)


def test_arity_errors():
    with pytest.raises(ParseError, match="exactly 1"):
        parse("exp(x1, x2)", 2)
    with pytest.raises(ParseError, match="exactly 2"):
        parse("pow(x1)", 1)
    with pytest.raises(ParseError, match="at least 2"):
        parse("min(x1)", 1)


def test_power_is_right_associative():
    assert parse("2^3^2", 1) == parse("2^(3^2)", 1)
    assert eval_at(parse("2^3^2", 1), [0.0]) == 512.0


def test_unary_minus_binds_below_power():
    # documented quirk: -x1^2 is (-x1)^2
    assert parse("-x1^2", 1) == parse("(-x1)^2", 1)
    assert eval_at(parse("-x1^2", 1), [3.0]) == 9.0
    assert eval_at(parse("-(x1^2)", 1), [3.0]) == -9.0


def test_precedence_mul_over_add():
    e = parse("x1 + x2 * x1", 2)
    assert eval_at(e, [2.0, 3.0]) == 8.0


# ---------------------------------------------------------------------------
# round trip


def test_round_trip_examples():
    for src in [
        "x1^2 + x2^2",
        "-x1",
        "exp(-(x1^2 + x2^2))",
        "ln(norm2(x1, x2) + 1)",
        "min(x1, 2.5, max(x2, 0.1))",
        "pow(x1^2 + 1, 1.5) / (1 + x2^2)",
        "1e-3 * x1 - 2.75",
    ]:
        e = parse(src, 2)
        assert parse(to_source(e), 2) == e


_numbers = st.one_of(
    st.integers(min_value=0, max_value=10**9).map(float),
    st.floats(min_value=0.0, max_value=1e12, allow_nan=False),
)


def _asts():
    leaves = st.one_of(_numbers.map(Num), st.integers(1, 3).map(Var))

    def extend(children):
        unary = st.sampled_from(["exp", "ln", "sqrt", "abs", "sin", "cos"])
        return st.one_of(
            children.map(Neg),
            st.tuples(st.sampled_from("+-*/^"), children, children).map(
                lambda t: Bin(t[0], t[1], t[2])
            ),
            st.tuples(unary, children).map(lambda t: Call(t[0], [t[1]])),
            st.tuples(children, children).map(lambda t: Call("pow", list(t))),
            st.lists(children, min_size=2, max_size=3).map(lambda a: Call("min", a)),
            st.lists(children, min_size=2, max_size=3).map(lambda a: Call("max", a)),
            st.lists(children, min_size=1, max_size=3).map(lambda a: Call("norm2", a)),
        )

    return st.recursive(leaves, extend, max_leaves=12)


@settings(max_examples=150, deadline=None)
@given(_asts())
def test_round_trip_random_asts(root):
    e = Expr(root, 3)
    assert parse(to_source(e), 3) == e


# ---------------------------------------------------------------------------
# evaluation


def test_eval_examples():
    assert eval_at(parse("x1^2 + x2^2", 2), [3.0, 4.0]) == 25.0
    assert eval_at(parse("ln(norm2(x1, x2) + 1)", 2), [0.0, 0.0]) == 0.0
    assert eval_at(parse("norm2(x1, x2)", 2), [3.0, 4.0]) == 5.0


def test_domain_errors():
    with pytest.raises(DomainError):
        eval_at(parse("1/x1", 2), [0.0, 1.0])
    with pytest.raises(DomainError):
        eval_at(parse("ln(x1)", 1), [-1.0])
    with pytest.raises(DomainError):
        eval_at(parse("sqrt(x1)", 1), [-2.0])
    with pytest.raises(DomainError):
        eval_at(parse("x1^0.5", 1), [-1.0])
    with pytest.raises(DomainError):
        eval_at(parse("pow(x1, 1.5)", 1), [-1.0])


def test_integer_power_of_negative_base():
    assert eval_at(parse("x1^2", 1), [-3.0]) == 9.0
    assert eval_at(parse("x1^3", 1), [-2.0]) == -8.0
    assert eval_at(parse("x1^-2", 1), [-2.0]) == 0.25


def test_eval_many_marks_faults_as_nan():
    e = parse("ln(x1)", 1)
    out = eval_many(e, np.array([[1.0], [math.e], [-1.0], [0.0]]))
    assert out[0] == 0.0
    assert abs(out[1] - 1.0) < 1e-15
    assert math.isnan(out[2])
    assert math.isnan(out[3])


def test_eval_many_matches_eval_at():
    rng = np.random.default_rng(3)
    for e, _ in random_smooth_pairs(11, 10):
        X = rng.uniform(-1.2, 1.2, size=(40, 2))
        many = eval_many(e, X)
        for k in range(X.shape[0]):
            assert many[k] == pytest.approx(eval_at(e, X[k]), rel=1e-13, abs=1e-13)


def test_dimension_mismatch():
    e = parse("x1 + x2", 2)
    with pytest.raises(ValueError):
        eval_at(e, [1.0])
    with pytest.raises(ValueError):
        eval_many(e, np.zeros((4, 3)))


# ---------------------------------------------------------------------------
# derivatives


def test_derive_examples():
    assert derive(parse("x1^2 + x2^2", 2), [3.0, 4.0], 1) == 6.0
    assert derive2(parse("x1^2 * x2", 2), [2.0, 5.0], 1, 2) == 4.0
    got = derive(parse("exp(-(x1^2 + x2^2))", 2), [1.0, 0.0], 1)
    assert got == pytest.approx(-2.0 * math.exp(-1.0), rel=1e-14)


def test_derive_against_finite_differences():
    for e, x in random_smooth_pairs(17, 200):
        for j in (1, 2):
            ad = derive(e, x, j)
            fd = fd_derive(e, x, j)
            scale = max(1.0, abs(ad), abs(fd))
            assert abs(ad - fd) <= 1e-6 * scale, (to_source(e), x, j)


def test_derive2_against_finite_differences():
    for e, x in random_smooth_pairs(29, 200):
        for i, j in ((1, 1), (1, 2), (2, 2)):
            ad = derive2(e, x, i, j)
            fd = fd_derive2(e, x, i, j)
            scale = max(1.0, abs(ad), abs(fd))
            assert abs(ad - fd) <= 1e-4 * scale, (to_source(e), x, i, j)


def test_derive2_symmetry():
    for e, x in random_smooth_pairs(41, 50):
        assert derive2(e, x, 1, 2) == pytest.approx(derive2(e, x, 2, 1), abs=1e-12)


def test_batch_derivatives_match_scalar():
    rng = np.random.default_rng(5)
    for e, _ in random_smooth_pairs(53, 8):
        X = rng.uniform(-1.2, 1.2, size=(25, 2))
        g = grad_many(e, X)
        h = hess_many(e, X)
        for k in range(X.shape[0]):
            for j in (1, 2):
                assert g[k, j - 1] == pytest.approx(derive(e, X[k], j), rel=1e-12, abs=1e-12)
            for i in (1, 2):
                for j in (1, 2):
                    assert h[k, i - 1, j - 1] == pytest.approx(
                        derive2(e, X[k], i, j), rel=1e-12, abs=1e-12
                    )


def test_derivative_of_constant_is_zero():
    e = parse("3.5", 2)
    assert derive(e, [1.0, 2.0], 1) == 0.0
    assert derive2(e, [1.0, 2.0], 1, 2) == 0.0
    assert np.all(grad_many(e, np.ones((3, 2))) == 0.0)


# ---------------------------------------------------------------------------
# kinks: one-sided derivatives, ties to the first argument


def test_abs_kink_takes_right_derivative():
    assert derive(parse("abs(x1)", 1), [0.0], 1) == 1.0
    assert derive(parse("abs(x1)", 1), [-2.0], 1) == -1.0
    assert derive(parse("abs(x1)", 1), [2.0], 1) == 1.0


def test_min_max_tie_takes_first_argument():
    # at a tie both branches have value 0; the derivative reveals the branch
    assert derive(parse("min(x1, 2*x1)", 1), [0.0], 1) == 1.0
    assert derive(parse("max(x1, 2*x1)", 1), [0.0], 1) == 1.0
    # away from ties the active branch is differentiated
    assert derive(parse("min(x1, 2*x1)", 1), [1.0], 1) == 1.0
    assert derive(parse("min(x1, 2*x1)", 1), [-1.0], 1) == 2.0
    assert derive(parse("max(x1^2, 1 - x1)", 1), [2.0], 1) == 4.0


# ---------------------------------------------------------------------------
# misc


def test_variables_used():
    assert variables_used(parse("x1 * x3 + 2", 3)) == {1, 3}
    assert variables_used(parse("1 + 2", 3)) == set()


def test_expr_immutable_and_hashable():
    e = parse("x1 + 1", 1)
    with pytest.raises(AttributeError):
        e.dim = 5
    with pytest.raises(AttributeError):
        e.root.op = "*"
    assert hash(parse("x1 + 1", 1)) == hash(e)


def test_norm2_gradient_at_generic_point():
    e = parse("norm2(x1, x2)", 2)
    assert derive(e, [3.0, 4.0], 1) == pytest.approx(0.6, rel=1e-14)
    assert derive(e, [3.0, 4.0], 2) == pytest.approx(0.8, rel=1e-14)
