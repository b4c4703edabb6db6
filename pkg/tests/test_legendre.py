import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.polynomial import Polynomial
from scipy.integrate import simpson

from drillstab.legendre import (
    bessel_gap,
    ell_coeff,
    ell_matrix,
    legendre_eval,
    legendre_table,
    monomial_coeffs,
    project,
)

X = np.linspace(0.0, 1.0, 1001)


def test_low_degree_values():
    assert np.all(legendre_eval(0, X) == 1.0)
    assert legendre_eval(2, 0.0) == pytest.approx(1.0)
    assert legendre_eval(2, 1.0) == pytest.approx(1.0)
    assert legendre_eval(2, 0.5) == pytest.approx(-0.5)


@pytest.mark.parametrize("k", range(21))
def test_endpoints_and_monomial_form(k):
    assert legendre_eval(k, 1.0) == pytest.approx(1.0, abs=1e-12)
    assert legendre_eval(k, 0.0) == pytest.approx((-1) ** k, abs=1e-12)
    if k <= 12:  # monomial form loses digits beyond this
        mono = Polynomial(monomial_coeffs(k))(X)
        assert np.max(np.abs(mono - legendre_eval(k, X))) < 1e-8


def test_domain_checked():
    with pytest.raises(ValueError):
        legendre_eval(1, 1.5)


def test_orthogonality():
    x = np.linspace(0, 1, 1001)
    N = 6
    T = legendre_table(N, x)
    gram = simpson(T[:, None, :] * T[None, :, :], x=x, axis=-1)
    assert np.allclose(gram, np.diag(1.0 / (2 * np.arange(N + 1) + 1)), atol=1e-8)
    # Gauss-Legendre reference for the exact integrals
    gx, gw = np.polynomial.legendre.leggauss(20)
    gx, gw = 0.5 * (gx + 1), 0.5 * gw
    G = legendre_table(N, gx)
    exact = (G * gw) @ G.T
    assert np.allclose(exact, np.diag(1.0 / (2 * np.arange(N + 1) + 1)), atol=1e-12)
    approx = project(T, x, N)
    assert np.allclose(approx, np.diag(1.0 / (2 * np.arange(N + 1) + 1)), atol=1e-4)  # trapezoid, O(dx^2)


def test_ell_values():
    assert ell_coeff(0, 1) == 2
    assert ell_coeff(1, 2) == 6
    assert all(ell_coeff(j, j) == 0 for j in range(8))
    assert ell_coeff(3, 1) == 0
    E = ell_matrix(5)
    assert np.all(np.triu(E) == 0)


@settings(max_examples=500, deadline=None)
@given(st.integers(0, 20), st.floats(0.0, 1.0))
def test_derivative_rule(k, x):
    """d/dx L_k = sum_j ell(j, k) L_j, the orientation used for the projection dynamics."""
    N = k
    table = legendre_table(N, np.array([x]))[:, 0]
    rhs = ell_matrix(N)[k] @ table
    lhs = Polynomial(np.polynomial.legendre.leg2poly(np.eye(N + 1)[k])).deriv()(2 * x - 1) * 2
    assert abs(lhs - rhs) < 1e-8 * max(1.0, abs(lhs))


def test_project_examples():
    x = np.linspace(0, 1, 2001)
    X = project(np.ones((2, x.size)), x, 3)
    assert np.allclose(X[0], [1, 1]) and np.allclose(X[1:], 0, atol=1e-6)
    X = project(np.vstack([legendre_eval(2, x), 0 * x]), x, 4)
    assert X[2, 0] == pytest.approx(0.2, abs=1e-6)
    assert np.allclose(np.delete(X[:, 0], 2), 0, atol=1e-5)
    X = project(np.vstack([x, 0 * x]), x, 2)
    assert X[0, 0] == pytest.approx(0.5)
    assert X[1, 0] == pytest.approx(1 / 6, abs=1e-6)


def test_project_under_resolved():
    with pytest.raises(ValueError, match="too coarse"):
        project(np.ones(5), np.linspace(0, 1, 5), 3)


def test_bessel_examples():
    x = np.linspace(0, 1, 4001)
    N = 3
    poly = np.vstack([legendre_eval(2, x) + 0.3 * x, 1 - x**3])
    assert abs(bessel_gap(poly, x, np.eye(2), N)) < 1e-6
    assert bessel_gap(np.vstack([x ** (N + 1), 0 * x]), x, np.eye(2), N) > 1e-6
    assert bessel_gap(poly, x, np.zeros((2, 2)), N) == 0.0
    with pytest.raises(ValueError):
        bessel_gap(poly, x, np.array([[1.0, 1.0], [0.0, 1.0]]), N)


coef = st.floats(-5, 5, allow_nan=False)


@settings(max_examples=1000, deadline=None)
@given(
    st.integers(0, 6),
    st.lists(coef, min_size=8, max_size=8),
    st.lists(coef, min_size=3, max_size=3),
    st.floats(0.0, 4.0),
)
def test_bessel_gap_nonnegative(N, c, r, freq):
    x = np.linspace(0, 1, 801)
    chi = np.vstack([
        c[0] + c[1] * x + c[2] * np.sin(freq * np.pi * x) + c[3] * np.exp(x),
        c[4] * np.cos(3 * x) + c[5] * x**5 + c[6] * np.abs(x - 0.4) + c[7],
    ])
    L = np.array([[r[0], 0.0], [r[1], r[2]]])
    R = L @ L.T
    # trapezoid error is O(dx^2) in the squared field and its slope
    dx = x[1] - x[0]
    scale = (np.abs(chi).max() + np.abs(np.gradient(chi, x, axis=1)).max()) ** 2
    tol = dx**2 * (N + 1) ** 2 * np.abs(R).max() * (1 + scale)
    assert bessel_gap(chi, x, R, N) >= -tol
