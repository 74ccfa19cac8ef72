import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from geocaustic.expressions import ExpressionError, compile_expression


@pytest.mark.parametrize("text, x, expected", [
    ("1 + 2*x", 3.0, 7.0),
    ("x^2 - 3", 2.0, 1.0),
    ("-x^2", 3.0, -9.0),
    ("2^3^2", 0.0, 512.0),
    ("sin(pi/2) + cos(0) + tan(0)", 0.0, 2.0),
    ("exp(log(x)) + sqrt(x)", 4.0, 6.0),
    ("cosh(0) + sinh(0) + e", 0.0, 1.0 + math.e),
    ("(x + 1)/(x - 1)", 3.0, 2.0),
])
def test_evaluates_operators_functions_constants(text, x, expected):
    f = compile_expression(text, ("x",))
    assert float(f(x)) == pytest.approx(expected, rel=1e-14)


def test_broadcasts_over_arrays():
    f = compile_expression("u*v + 1", ("u", "v"))
    out = f(np.arange(3.0), 2.0)
    assert np.allclose(out, [1.0, 3.0, 5.0])
    g = compile_expression("2", ("u", "v"))
    assert np.shape(g(np.zeros(4), np.zeros(4))) == (4,)


@pytest.mark.parametrize("text, column", [
    ("1 +", 4),
    ("sin(x", 4),
    ("foo(x)", 1),
    ("x $ 2", 3),
    ("y + 1", 1),
])
def test_errors_report_a_column(text, column):
    with pytest.raises(ExpressionError) as info:
        compile_expression(text, ("x",))
    assert info.value.line == 1
    assert 1 <= info.value.column <= len(text) + 1
    assert info.value.column == column


@given(a=st.floats(-1e3, 1e3), b=st.floats(-1e3, 1e3))
def test_matches_python_arithmetic(a, b):
    f = compile_expression("a*b - (a + b)/2 + a^2", ("a", "b"))
    assert float(f(a, b)) == pytest.approx(a * b - (a + b) / 2 + a**2, rel=1e-12, abs=1e-9)
