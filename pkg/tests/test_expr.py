from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qcx.expr import (
    Binary,
    Const,
    DomainError,
    EvaluationError,
    ExprSyntaxError,
    NAry,
    Norm,
    ScalarField,
    Unary,
    Var,
    eval_field,
    fd_gradient,
    fd_hessian,
    fd_hessian_batch,
    parse_expr,
    print_expr,
)


# -- parsing ------------------------------------------------------------------


def test_parse_negated_square():
    node = parse_expr("-x1^2", 2)
    assert node == Unary("neg", Binary("^", Var(0, "x1"), Const(2.0)))


def test_parse_single_variable():
    assert parse_expr("x1", 1) == Var(0, "x1")


def test_parse_min_has_two_children():
    node = parse_expr("min(1-x1, x1)", 1)
    assert isinstance(node, NAry) and node.op == "min" and len(node.args) == 2


def test_parse_norm_and_functions():
    node = parse_expr("norm2(x1, x2) + ln(abs(x1)) * exp(x2) / sqrt(2)", 2)
    assert isinstance(node, Binary)
    assert isinstance(parse_expr("norm2(x1, x2)", 2), Norm)


def test_precedence_power_binds_tighter_than_unary_minus():
    f = ScalarField.from_expr("-2^2", 1)
    assert eval_field(f, [0.0]) == -4.0
    g = ScalarField.from_expr("2^-1", 1)
    assert eval_field(g, [0.0]) == 0.5


def test_left_associativity():
    f = ScalarField.from_expr("8/4/2 - 1 - 1", 1)
    assert eval_field(f, [0.0]) == -1.0


def test_complex_mode_variables():
    node = parse_expr("x1^2 - y1^2", 1, complex_mode=True)
    assert node.right.left == Var(1, "y1")


@pytest.mark.parametrize("src", ["x1^", "(x1", "x1 +* x2", "foo(x1)", "x3", "", "1..2", "min()"])
def test_syntax_errors(src):
    with pytest.raises(ExprSyntaxError) as info:
        parse_expr(src, 2)
    assert info.value.offset >= 0


def test_variable_beyond_dimension_names_the_problem():
    with pytest.raises(ExprSyntaxError, match="exceeds the declared dimension"):
        parse_expr("x1 + x3", 2)


# grammar-valid sources for the round-trip property
_atoms = st.one_of(
    st.sampled_from(["x1", "x2", "x3"]),
    st.floats(min_value=0, max_value=1e6, allow_nan=False).map(repr),
    st.integers(min_value=0, max_value=99).map(str),
)


def _extend(inner):
    return st.one_of(
        st.tuples(inner, st.sampled_from(["+", "-", "*", "/", "^"]), inner).map(lambda t: f"{t[0]}{t[1]}{t[2]}"),
        inner.map(lambda s: f"-{s}"),
        inner.map(lambda s: f"({s})"),
        st.tuples(st.sampled_from(["exp", "ln", "abs", "sqrt"]), inner).map(lambda t: f"{t[0]}({t[1]})"),
        st.tuples(st.sampled_from(["min", "max", "norm2"]), st.lists(inner, min_size=1, max_size=3)).map(
            lambda t: f"{t[0]}({', '.join(t[1])})"),
    )


sources = st.recursive(_atoms, _extend, max_leaves=12)


@given(sources)
@settings(max_examples=300, deadline=None)
def test_print_parse_round_trip(src):
    node = parse_expr(src, 3)
    assert parse_expr(print_expr(node), 3) == node


@given(sources)
@settings(max_examples=100, deadline=None)
def test_printed_form_evaluates_identically(src):
    a = ScalarField.from_expr(src, 3)
    b = ScalarField.from_expr(print_expr(parse_expr(src, 3)), 3)
    p = np.array([[0.3, -0.7, 1.9]])
    va, vb = a.raw(p)[0], b.raw(p)[0]
    assert (np.isnan(va) and np.isnan(vb)) or va == vb


# -- evaluation ---------------------------------------------------------------


def test_eval_examples():
    assert eval_field(ScalarField.from_expr("-x1^2-x2^2", 2), [1, 1]) == -2.0
    assert eval_field(ScalarField.from_expr("ln(abs(x1))", 1), [1]) == 0.0
    assert eval_field(ScalarField.from_expr("exp(x1)", 1), [0]) == 1.0


def test_log_of_zero_is_minus_infinity():
    assert eval_field(ScalarField.from_expr("ln(abs(x1))", 1), [0.0]) == -math.inf


def test_non_real_intermediate_is_evaluation_error():
    with pytest.raises(EvaluationError):
        eval_field(ScalarField.from_expr("ln(x1)", 1), [-1.0])
    with pytest.raises(EvaluationError):
        eval_field(ScalarField.from_expr("sqrt(x1)", 1), [-1.0])


def test_point_outside_box_is_domain_error():
    f = ScalarField.from_expr("x1", 1, box=[[0, 1]])
    with pytest.raises(DomainError):
        eval_field(f, [2.0])


def test_min_max_norm_values():
    f = ScalarField.from_expr("min(1-x1, x1) + max(x1, 0) + norm2(3, 4)", 1)
    assert eval_field(f, [0.25]) == pytest.approx(0.25 + 0.25 + 5.0)


def test_evaluation_is_bit_identical_on_repeat():
    f = ScalarField.from_expr("exp(x1)*ln(1+x2^2) - x1/3", 2)
    p = [0.123456789, -2.5]
    assert eval_field(f, p) == eval_field(f, p)


def test_field_json_round_trip():
    f = ScalarField.from_expr("x1*x2", 2, box=[[-1, 1], ["-inf", "inf"]])
    g = ScalarField.from_json(f.to_json())
    assert g.dim == 2 and np.array_equal(g.box, f.box)
    assert eval_field(g, [0.5, 4.0]) == 2.0


# -- finite differences ---------------------------------------------------------


def test_gradient_examples():
    assert fd_gradient(ScalarField.from_expr("x1^2", 1), [3.0]) == pytest.approx([6.0], abs=1e-5)
    assert fd_gradient(ScalarField.from_expr("x1*x2", 2), [2.0, 5.0]) == pytest.approx([5.0, 2.0], abs=1e-5)


def test_gradient_of_exp_matches_analytic_derivative():
    f = ScalarField.from_expr("exp(x1)", 1)
    for x in (-1.0, 0.0, 0.7):
        assert abs(fd_gradient(f, [x])[0] - math.exp(x)) <= 1e-8 * max(1.0, math.exp(x))


def test_gradient_of_constant_is_zero():
    g = fd_gradient(ScalarField.from_expr("3.5", 3), [0.1, 2.0, -7.0])
    assert np.max(np.abs(g)) <= 1e-9


def test_hessian_examples():
    H = fd_hessian(ScalarField.from_expr("-x1^2", 2), [0, 0]).matrix
    assert np.allclose(H, [[-2, 0], [0, 0]], atol=1e-6)
    H = fd_hessian(ScalarField.from_expr("x1*x2", 2), [0, 0]).matrix
    assert np.allclose(H, [[0, 1], [1, 0]], atol=1e-6)
    f = ScalarField.from_expr("x1^2+x2^2+x3^2", 3)
    for p in ([0, 0, 0], [0.3, -0.9, 0.5]):
        assert np.allclose(fd_hessian(f, p).matrix, 2 * np.eye(3), atol=1e-6)


def test_hessian_estimate_metadata():
    est = fd_hessian(ScalarField.from_expr("x1^3", 1), [0.5])
    assert est.step > 0 and est.error_scale >= 0
    assert est.point.tolist() == [0.5]


_coef = st.floats(min_value=-3, max_value=3, allow_nan=False)


@given(st.lists(_coef, min_size=6, max_size=6), st.lists(st.floats(-1, 1), min_size=2, max_size=2))
@settings(max_examples=100, deadline=None)
def test_hessian_exact_for_quadratics(c, p):
    expr = f"{c[0]!r}*x1^2 + {c[1]!r}*x1*x2 + {c[2]!r}*x2^2 + {c[3]!r}*x1 + {c[4]!r}*x2 + {c[5]!r}"
    f = ScalarField.from_expr(expr, 2)
    H = fd_hessian(f, p).matrix
    expected = np.array([[2 * c[0], c[1]], [c[1], 2 * c[2]]])
    assert np.max(np.abs(H - expected)) <= 1e-6
    assert np.array_equal(H, H.T)


def test_batch_hessian_flags_points_outside_domain():
    f = ScalarField.from_expr("x1^2", 1, box=[[0, 1]])
    batch = fd_hessian_batch(f, np.array([[0.5], [0.99999999], [2.0]]))
    assert batch.status[0] == "ok"
    assert batch.status[1] != "ok" and batch.status[2] != "ok"


def test_batch_hessian_flags_evaluation_errors():
    f = ScalarField.from_expr("ln(x1)", 1)
    batch = fd_hessian_batch(f, np.array([[1.0], [0.0], [-1.0]]))
    assert batch.status[0] == "ok"
    assert batch.status[1] != "ok" and batch.status[2] != "ok"


def test_hessian_reports_truncation_error_scale():
    assert fd_hessian(ScalarField.from_expr("x1^2", 1), [0.3]).error_scale <= 1e-6
    assert fd_hessian(ScalarField.from_expr("exp(3*x1)", 1), [0.5]).error_scale > 0


def test_hessian_step_shrinks_near_clearance_edge():
    # -ln|x1| has curvature 1/x1^2; the step must scale with the distance to 0
    base = ScalarField.from_expr("-ln(abs(x1))", 1)
    f = base.with_hooks(clearance=lambda X: np.abs(np.asarray(X)[..., 0]))
    for x in (1e-2, 1e-3):
        est = fd_hessian(f, [x])
        assert est.step[0] <= 1e-4 * x
        assert est.matrix[0, 0] == pytest.approx(1 / x**2, rel=1e-6)
    assert fd_hessian(f, [0.5]).step[0] == pytest.approx(5e-5)
