import math

import numpy as np
import pytest

from dnplab.discretization import make_unit_square_mesh
from dnplab.expressions import Expression, ExpressionError, nodal


def test_arithmetic_and_functions():
    x1 = np.array([0.0, 0.5, 1.0])
    x2 = np.array([1.0, 0.25, 0.0])
    e = Expression("1 + x1**2 - 2*x2/4 + exp(x1)*sin(pi*x2) + sqrt(4) - log(e)")
    expected = 1 + x1**2 - x2 / 2 + np.exp(x1) * np.sin(np.pi * x2) + 2 - 1
    np.testing.assert_allclose(e(x1, x2), expected, rtol=1e-15)


def test_constant_broadcasts():
    x = np.linspace(0, 1, 5)
    out = Expression("3")(x, x)
    assert out.shape == (5,)
    assert np.all(out == 3.0)


def test_unary_minus_and_cos():
    assert Expression("-cos(0)")(0.0, 0.0) == -1.0
    assert Expression("+x2")(0.0, 2.5) == 2.5


@pytest.mark.parametrize("src", [
    "x3",
    "__import__('os')",
    "x1 if x2 else 0",
    "tan(x1)",
    "exp(x1, x2)",
    "x1 % 2",
    "'a'",
    "True",
    "x1[0]",
    "lambda: 1",
    "np.sin(x1)",
    "(1",
    "not x1",
])
def test_rejected_sources(src):
    with pytest.raises(ExpressionError):
        Expression(src)


def test_error_message_quotes_source():
    with pytest.raises(ExpressionError, match="'x3'"):
        Expression("x3 + 1")


def test_nodal_number_string_list():
    mesh = make_unit_square_mesh(2)
    assert np.all(nodal(mesh, 2) == 2.0)
    np.testing.assert_allclose(nodal(mesh, "x1 + 2*x2"), mesh.nodes[:, 0] + 2 * mesh.nodes[:, 1])
    vals = list(range(mesh.n_nodes))
    np.testing.assert_array_equal(nodal(mesh, vals), np.arange(mesh.n_nodes, dtype=float))


def test_nodal_errors():
    mesh = make_unit_square_mesh(2)
    with pytest.raises(ExpressionError, match="booleans"):
        nodal(mesh, True)
    with pytest.raises(ExpressionError, match="9 nodes"):
        nodal(mesh, [1.0, 2.0])
    with pytest.raises(ExpressionError, match="not finite"):
        nodal(mesh, "log(x1)")


def test_repr():
    assert repr(Expression("x1")) == "Expression('x1')"
    assert math.isclose(float(Expression("pi")(0, 0)), math.pi)
