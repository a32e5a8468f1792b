import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conformal_lab import expr as ex
from conformal_lab.expr import ExpressionDomainError, ExpressionSyntaxError, jet2, parse


def test_unterminated_call_reports_offset():
    with pytest.raises(ExpressionSyntaxError) as info:
        parse("exp(", 1)
    assert info.value.offset == 4
    assert "offset 4" in str(info.value)


def test_log_ball_factor_vanishes_at_origin():
    e = parse("log(1 - x1^2 - x2^2 - x3^2)", 3)
    assert e([0.0, 0.0, 0.0]) == 0.0


@pytest.mark.parametrize(
    "text, arity",
    [("x1 +", 1), ("abs(x1)", 1), ("foo(x1)", 1), ("x3", 2), ("x0", 1), ("1 2", 1), ("(x1", 1), ("x1)", 1), ("", 1)],
)
def test_rejects_malformed_input(text, arity):
    with pytest.raises(ex.ExpressionError):
        parse(text, arity)


def test_precedence_and_associativity():
    pt = np.array([[2.0, 3.0]])
    assert parse("2^3^2", 1)(pt[:, :1])[0] == 512.0
    assert parse("x1 - x2 - 1", 2)(pt)[0] == -2.0
    assert parse("x2 / x1 / 3", 2)(pt)[0] == pytest.approx(0.5)
    assert parse("1 + 2*x1^2", 1)(pt[:, :1])[0] == 9.0
    # unary minus binds tighter than '^' in this grammar
    assert parse("-x1^2", 1)(pt[:, :1])[0] == 4.0
    assert parse("-(x1^2)", 1)(pt[:, :1])[0] == -4.0


def test_constants_and_scientific_literals():
    assert parse("pi", 1)([0.0]) == pytest.approx(math.pi)
    assert parse("e", 1)([0.0]) == pytest.approx(math.e)
    assert parse("1.5e-3*x1", 1)([2.0]) == pytest.approx(3e-3)


def test_jet_of_square():
    j = jet2(parse("x1^2", 1), [3.0])
    assert j.value == 9.0
    np.testing.assert_array_equal(j.gradient, [6.0])
    np.testing.assert_array_equal(j.hessian, [[2.0]])


def test_jet_of_product():
    j = jet2(parse("x1*x2", 2), [2.0, 3.0])
    assert j.value == 6.0
    np.testing.assert_array_equal(j.gradient, [3.0, 2.0])
    np.testing.assert_array_equal(j.hessian, [[0.0, 1.0], [1.0, 0.0]])


def test_jet_of_exp():
    j = jet2(parse("exp(x1)", 1), [0.0])
    assert (j.value, j.gradient[0], j.hessian[0, 0]) == (1.0, 1.0, 1.0)


def test_sin_gradient_matches_central_difference():
    e, h, x = parse("sin(x1)", 1), 1e-4, 0.7
    fd = (e([x + h]) - e([x - h])) / (2 * h)
    assert abs(jet2(e, [x]).gradient[0] - fd) < 1e-8
    assert abs(jet2(e, [x]).gradient[0] - math.cos(x)) < 1e-12


def test_domain_errors_carry_point_index():
    pts = np.array([[0.5], [2.0], [-1.0]])
    with pytest.raises(ExpressionDomainError) as info:
        ex.evaluate(parse("log(x1)", 1), pts)
    assert info.value.point_index == 2
    with pytest.raises(ExpressionDomainError):
        ex.evaluate(parse("sqrt(x1 - 1)", 1), pts)
    with pytest.raises(ExpressionDomainError):
        ex.evaluate(parse("1/(x1 - 2)", 1), pts)


def test_non_integer_power_uses_positive_base():
    j = jet2(parse("x1^0.5", 1), [4.0])
    assert j.value == pytest.approx(2.0)
    assert j.gradient[0] == pytest.approx(0.25)
    assert j.hessian[0, 0] == pytest.approx(-1 / 32)


def test_hessian_is_exactly_symmetric(rng):
    e = parse("sin(x1*x2)*exp(x3) + tanh(x1 - x3)^3 / (2 + cos(x2))", 3)
    pts = rng.uniform(-1, 1, size=(64, 3))
    _, _, hess = ex.dense(ex.evaluate(e, pts), 64, 3)
    np.testing.assert_array_equal(hess, np.swapaxes(hess, 1, 2))


def test_batch_matches_single_points(rng):
    e = parse("x1^3*x2 - log(2 + x2^2) + sqrt(1 + x1^2)", 2)
    pts = rng.uniform(-1, 1, size=(10, 2))
    val, grad, hess = ex.dense(ex.evaluate(e, pts), 10, 2)
    for k in range(10):
        j = jet2(e, pts[k])
        assert j.value == val[k]
        np.testing.assert_array_equal(j.gradient, grad[k])
        np.testing.assert_array_equal(j.hessian, hess[k])


# ---------------------------------------------------------------------------
# Property tests
# ---------------------------------------------------------------------------

coeffs = st.lists(st.integers(-5, 5), min_size=4, max_size=4)
points = st.tuples(st.floats(-2, 2), st.floats(-2, 2))


@given(coeffs, points)
def test_polynomial_derivatives_match_hand_rules(c, p):
    a, b, cc, d = c
    text = f"{a}*x1^3 + {b}*x1^2*x2 + {cc}*x2^2 + {d}*x1"
    x, y = p
    j = jet2(parse(text, 2), [x, y])
    assert j.value == pytest.approx(a * x**3 + b * x**2 * y + cc * y**2 + d * x, abs=1e-9)
    np.testing.assert_allclose(j.gradient, [3 * a * x**2 + 2 * b * x * y + d, b * x**2 + 2 * cc * y], atol=1e-9)
    np.testing.assert_allclose(j.hessian, [[6 * a * x + 2 * b * y, 2 * b * x], [2 * b * x, 2 * cc]], atol=1e-9)


def _trig_expr(c):
    return f"{c[0]}*sin(x1 + {c[1]}*x2) + {c[2]}*exp(0.3*x1*x2) + {c[3]}*tanh(x2)"


@given(coeffs, points)
def test_second_derivatives_converge_like_central_differences(c, p):
    e = parse(_trig_expr(c), 2)
    x = np.array(p)
    hess = jet2(e, x).hessian
    errors = []
    for h in (1e-2, 5e-3):
        fd = np.empty((2, 2))
        for i in range(2):
            for k in range(2):
                ei, ek = np.eye(2)[i] * h, np.eye(2)[k] * h
                fd[i, k] = (e(x + ei + ek) - e(x + ei - ek) - e(x - ei + ek) + e(x - ei - ek)) / (4 * h * h)
        errors.append(np.abs(fd - hess).max())
    # second-order scheme: halving h cuts the error ~4x (or it is at rounding level)
    assert errors[1] <= max(0.3 * errors[0], 1e-6)


@given(coeffs, coeffs, st.floats(-3, 3), st.floats(-3, 3), points)
def test_derivatives_are_exactly_linear(c1, c2, a, b, p):
    f, g = _trig_expr(c1), _trig_expr(c2)
    combo = parse(f"{a!r}*({f}) + {b!r}*({g})", 2)
    jf, jg, jc = (jet2(e, p) for e in (parse(f, 2), parse(g, 2), combo))
    assert jc.value == a * jf.value + b * jg.value
    np.testing.assert_array_equal(jc.gradient, a * jf.gradient + b * jg.gradient)
    np.testing.assert_array_equal(jc.hessian, a * jf.hessian + b * jg.hessian)


@st.composite
def polynomials(draw):
    """Random polynomial of total degree <= 4 in n <= 5 variables, as (n, terms)."""
    n = draw(st.integers(1, 5))
    exps = st.lists(st.integers(0, 4), min_size=n, max_size=n).filter(lambda e: sum(e) <= 4)
    terms = draw(st.lists(st.tuples(st.integers(-9, 9), exps), min_size=1, max_size=6))
    point = draw(st.lists(st.floats(-1, 1), min_size=n, max_size=n))
    return n, terms, np.array(point)


def _monomial(c, e, x, d=()):
    """c * prod x_i^e_i differentiated once for each index in d."""
    e = list(e)
    for i in d:
        c, e[i] = c * e[i], e[i] - 1
        if c == 0:
            return 0.0
    return c * math.prod(x[i] ** e[i] for i in range(len(e)))


@given(polynomials())
def test_polynomial_jets_in_up_to_five_variables(poly):
    n, terms, x = poly
    text = " + ".join(
        f"({c})" + "".join(f"*x{i + 1}^{k}" for i, k in enumerate(e) if k) for c, e in terms
    )
    j = jet2(parse(text, n), x)
    grad = np.array([sum(_monomial(c, e, x, (i,)) for c, e in terms) for i in range(n)])
    hess = np.array([[sum(_monomial(c, e, x, (i, k)) for c, e in terms) for k in range(n)] for i in range(n)])
    scale = 1 + sum(abs(c) for c, _ in terms) * 16
    assert np.abs(j.gradient - grad).max() <= 1e-12 * scale
    assert np.abs(j.hessian - hess).max() <= 1e-12 * scale


@pytest.mark.parametrize(
    "text", ["exp(x1)", "log(x1)", "sin(x1)", "cos(x1)", "tanh(x1)", "sqrt(x1)", "x1^2.5", "1/x1", "x1^3"]
)
@pytest.mark.parametrize("x", [0.4, 1.3])
def test_gradient_shows_second_order_difference_convergence(text, x):
    e = parse(text, 1)
    exact = jet2(e, [x]).gradient[0]
    errs = {h: abs(exact - (e([x + h]) - e([x - h])) / (2 * h)) for h in (1e-2, 1e-3)}
    # error ≈ C h²: the fitted constant is bounded and consistent between the two steps
    c_big, c_small = errs[1e-2] / 1e-4, errs[1e-3] / 1e-6
    assert c_big < 50
    assert c_small < 50
    assert c_small == pytest.approx(c_big, rel=0.05, abs=1e-3)


leaf = st.one_of(
    st.sampled_from(["x1", "x2", "x3", "pi", "e"]),
    st.integers(0, 9).map(str),
    st.floats(0.1, 9.9, allow_nan=False).map(lambda v: f"{v:.3f}"),
)


def _compose(children):
    return st.one_of(
        st.tuples(children, st.sampled_from(["+", "-", "*", "/", "^"]), children).map(lambda t: f"({t[0]} {t[1]} {t[2]})"),
        st.tuples(st.sampled_from(["exp", "log", "sin", "cos", "tanh", "sqrt"]), children).map(lambda t: f"{t[0]}({t[1]})"),
        children.map(lambda s: f"-{s}"),
    )


@given(st.recursive(leaf, _compose, max_leaves=12))
def test_parse_print_round_trip(text):
    first = parse(text, 3)
    again = parse(first.to_text(), 3)
    assert again.tree == first.tree
    assert again.to_text() == first.to_text()
