"""Shifted Legendre polynomials on [0, 1] and projections of sampled fields."""

from __future__ import annotations

from functools import lru_cache
from math import comb

import numpy as np
from scipy.integrate import trapezoid


@lru_cache(maxsize=None)
def monomial_coeffs(k: int) -> np.ndarray:
    """Coefficients ``a_l`` of ``L_k(x) = sum_l a_l x**l``."""
    if k < 0:
        raise ValueError("degree must be nonnegative")
    sign = (-1) ** k
    coeffs = np.array([sign * (-1) ** l * comb(k, l) * comb(k + l, l) for l in range(k + 1)], dtype=float)
    coeffs.setflags(write=False)
    return coeffs


def legendre_eval(k: int, x) -> np.ndarray:
    """Evaluate the degree-``k`` shifted Legendre polynomial.

    Uses the three-term recurrence of the classical polynomials at ``2x - 1``,
    which stays accurate for high degrees where the monomial form does not.
    """
    x = np.asarray(x, dtype=float)
    if np.any((x < 0) | (x > 1)):
        raise ValueError("Legendre basis is defined on [0, 1]")
    return legendre_table(k, x)[k]


def legendre_table(N: int, x) -> np.ndarray:
    """Values of ``L_0 .. L_N`` at ``x``, shape ``(N + 1,) + x.shape``."""
    x = np.asarray(x, dtype=float)
    t = 2.0 * x - 1.0
    out = np.empty((N + 1,) + x.shape)
    out[0] = 1.0
    if N >= 1:
        out[1] = t
    for n in range(1, N):
        out[n + 1] = ((2 * n + 1) * t * out[n] - n * out[n - 1]) / (n + 1)
    return out


def ell_coeff(j: int, k: int) -> int:
    """Coefficient of ``L_j`` in the expansion of ``d/dx L_k``."""
    if j > k:
        return 0
    return (2 * j + 1) * (1 - (-1) ** (j + k))


def ell_matrix(N: int) -> np.ndarray:
    """``E[k, j] = ell_coeff(j, k)``, so that ``L'(x) = E @ L(x)`` (strictly lower triangular)."""
    return np.array([[ell_coeff(j, k) for j in range(N + 1)] for k in range(N + 1)], dtype=float)


def _check_grid(x: np.ndarray, N: int) -> None:
    if x.ndim != 1 or x.size < 2 * (N + 1):
        raise ValueError(f"grid of {x.size} points is too coarse for order {N}; need >= {2 * (N + 1)}")


def project(chi, x, N: int) -> np.ndarray:
    """Projections ``X_k = int_0^1 chi(x) L_k(x) dx`` for ``k = 0..N``.

    ``chi`` has shape ``(n_x,)`` or ``(2, n_x)`` (or any leading shape).  The
    integral is the composite trapezoid rule on ``x``.  Returns shape
    ``(N + 1,) + chi.shape[:-1]``.
    """
    x = np.asarray(x, dtype=float)
    chi = np.asarray(chi, dtype=float)
    _check_grid(x, N)
    basis = legendre_table(N, x)
    prods = chi[None, ...] * basis.reshape((N + 1,) + (1,) * (chi.ndim - 1) + (x.size,))
    return trapezoid(prods, x, axis=-1)


def bessel_gap(chi, x, R, N: int) -> float:
    """``int chi^T R chi dx - sum_k (2k+1) X_k^T R X_k`` for a sampled 2-vector field."""
    R = np.asarray(R, dtype=float)
    if not np.allclose(R, R.T, atol=1e-12 * max(1.0, np.abs(R).max())):
        raise ValueError("R must be symmetric")
    chi = np.asarray(chi, dtype=float)
    x = np.asarray(x, dtype=float)
    full = trapezoid(np.einsum("ix,ij,jx->x", chi, R, chi), x)
    X = project(chi, x, N)
    weights = 2 * np.arange(N + 1) + 1
    return float(full - np.einsum("k,ki,ij,kj->", weights, X, R, X))
