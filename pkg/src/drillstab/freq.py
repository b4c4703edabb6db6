"""Frequency responses of the distributed and lumped torsional models (no bit torque)."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import solve_banded
from scipy.optimize import minimize_scalar

from .params import LumpedParams, PhysicalParams

SINGULAR_RTOL = 1e-12


class SingularFrequencyError(ArithmeticError):
    """The dynamic matrix is singular at the requested frequency."""

    def __init__(self, omega: float, model: str):
        super().__init__(f"{model} response is singular at omega={omega:g} rad/s")
        self.omega = omega
        self.model = model


def default_grid(n: int = 400, lo: float = 1e-2, hi: float = 1e2) -> np.ndarray:
    return np.logspace(np.log10(lo), np.log10(hi), n)


def _as_omega(omega) -> np.ndarray:
    w = np.atleast_1d(np.asarray(omega, dtype=float))
    if np.any(~(w > 0)):
        raise ValueError("frequencies must be > 0")
    return w


@dataclass(frozen=True)
class FrequencyResponse:
    omega: np.ndarray
    values: np.ndarray
    model: str = ""
    output: str = "angle"

    def __post_init__(self):
        if self.omega.ndim != 1 or self.omega.shape != self.values.shape:
            raise ValueError("omega and values must be 1-D arrays of equal length")
        if np.any(np.diff(self.omega) <= 0):
            raise ValueError("frequencies must be strictly increasing")

    @property
    def magnitude_db(self) -> np.ndarray:
        return 20.0 * np.log10(np.abs(self.values))

    @property
    def phase_deg(self) -> np.ndarray:
        """Unwrapped phase in degrees."""
        return np.degrees(np.unwrap(np.angle(self.values)))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["omega", "magnitude_db", "phase_deg"])
            for row in zip(self.omega, self.magnitude_db, self.phase_deg):
                w.writerow([f"{v:.10e}" for v in row])


def _output(values: np.ndarray, omega: np.ndarray, output: str) -> np.ndarray:
    if output == "angle":
        return values
    if output == "velocity":
        return 1j * omega * values
    raise ValueError(f"output must be 'angle' or 'velocity', got {output!r}")


# ---------------------------------------------------------------- lumped model

def lpm_matrices(lp: LumpedParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mass, damping and stiffness matrices of the two-inertia model."""
    M = np.diag([lp.I_r, lp.I_b])
    C = np.array([[lp.lambda_r + lp.d_r, -lp.lambda_r], [-lp.lambda_b, lp.lambda_b + lp.d_b]])
    K = np.array([[lp.k, -lp.k], [-lp.k, lp.k]])
    return M, C, K


def _lpm_at(lp: LumpedParams, s: complex) -> complex:
    M, C, K = lpm_matrices(lp)
    D = M * s * s + C * s + K
    if abs(np.linalg.det(D)) <= SINGULAR_RTOL * np.abs(D).max() ** 2:
        raise SingularFrequencyError(abs(s), "LPM")
    return complex(np.linalg.solve(D, np.array([1.0, 0.0]))[1])


def lpm_response(lp: LumpedParams, omega, output: str = "angle") -> FrequencyResponse:
    """Bit angle (or velocity) per unit top torque for the lumped model."""
    w = _as_omega(omega)
    h = np.array([_lpm_at(lp, 1j * x) for x in w])
    return FrequencyResponse(w, _output(h, w, output), "LPM", output)


def lpm_poles(lp: LumpedParams) -> np.ndarray:
    M, C, K = lpm_matrices(lp)
    A = np.block([[np.zeros((2, 2)), np.eye(2)], [-np.linalg.solve(M, K), -np.linalg.solve(M, C)]])
    return np.linalg.eigvals(A)


def lpm_residues(lp: LumpedParams) -> tuple[np.ndarray, np.ndarray]:
    """Poles and residues of the angle transfer (simple poles assumed).

    The transfer is ``b(s) / det(M s^2 + C s + K)`` with ``b(s) = k + lambda_b s``,
    so each residue is ``b(p) / det'(p)``.
    """
    M, C, K = lpm_matrices(lp)
    # det(M s^2 + C s + K) as a quartic in s
    a = [M[0, 0], C[0, 0], K[0, 0]]
    d = [M[1, 1], C[1, 1], K[1, 1]]
    b = [0.0, C[0, 1], K[0, 1]]
    c = [0.0, C[1, 0], K[1, 0]]
    det = np.polysub(np.polymul(a, d), np.polymul(b, c))
    num = -np.array(c)
    poles = np.roots(det)
    dd = np.polyder(det)
    res = np.polyval(num, poles) / np.polyval(dd, poles)
    return poles, res


@dataclass(frozen=True)
class Truncation:
    poles: np.ndarray
    residues: np.ndarray

    def __call__(self, s):
        s = np.asarray(s, dtype=complex)
        return sum(r / (s - p) for p, r in zip(self.poles, self.residues))


def lpm2_truncation(lp: LumpedParams) -> Truncation:
    """Two-pole reduction of the lumped transfer.

    The two poles of smallest ``|Re p|`` are kept.  A pole at the origin
    keeps its exact residue (the low-frequency asymptote).  The other kept
    residue is rescaled so the finite part of the response at ``s = 0`` is
    unchanged, absorbing the static contribution of the discarded modes.
    """
    poles, res = lpm_residues(lp)
    order = np.argsort(np.abs(poles.real), kind="stable")
    keep = order[:2]
    kp, kr = poles[keep].copy(), res[keep].copy()
    zero = np.abs(poles) < 1e-9 * np.abs(poles).max()
    if np.count_nonzero(zero[keep]) == 1:
        finite0 = np.sum(-res[~zero] / poles[~zero])
        j = int(np.flatnonzero(~zero[keep])[0])
        kr[j] = -finite0 * kp[j]
    elif not zero.any():
        dc = np.sum(-res / poles)
        kr = kr * dc / np.sum(-kr / kp)
    return Truncation(kp, kr)


def lpm2_response(lp: LumpedParams, omega, output: str = "angle") -> FrequencyResponse:
    w = _as_omega(omega)
    h = lpm2_truncation(lp)(1j * w)
    return FrequencyResponse(w, _output(np.asarray(h), w, output), "LPM2", output)


# ----------------------------------------------------------- distributed model

def _dpm_at(p: PhysicalParams, s: complex) -> complex:
    """Closed form in the basis ``cosh/sinh(lam (L - x))`` anchored at the bit.

    The bit condition fixes the ratio of the two coefficients, leaving
    ``H = 1 / (cosh(lam L) a + sinh(lam L) b)``.  Both hyperbolic functions are
    factored by ``exp(lam L)`` so no cancellation or overflow occurs when the
    damping makes ``Re(lam) L`` large.
    """
    GJ = p.G * p.J
    lam = np.sqrt((s * s + p.gamma_t * s) / p.c_t**2 + 0j)  # principal root, Re >= 0
    a = p.g * s + p.I_B * s * s
    b = p.g * p.I_B * s**3 / (GJ * lam) + GJ * lam
    e = np.exp(-2.0 * lam * p.L)
    den = 0.5 * ((1.0 + e) * a + (1.0 - e) * b)
    if abs(den) <= SINGULAR_RTOL * (abs(a) + abs(b)):
        raise SingularFrequencyError(abs(s), "DPM")
    return complex(np.exp(-lam * p.L) / den)


def dpm_response(p: PhysicalParams, omega, output: str = "angle") -> FrequencyResponse:
    """Bit angle (or velocity) per unit top torque for the damped wave model."""
    w = _as_omega(omega)
    h = np.array([_dpm_at(p, 1j * x) for x in w])
    return FrequencyResponse(w, _output(h, w, output), "DPM", output)


def _bvp_solve(p: PhysicalParams, s: complex, n: int) -> complex:
    """Second-order finite differences with ghost nodes for the Robin ends."""
    GJ = p.G * p.J
    h = p.L / n
    lam2 = (s * s + p.gamma_t * s) / p.c_t**2
    diag = np.full(n + 1, -2.0 - lam2 * h * h, dtype=complex)
    upper = np.ones(n, dtype=complex)
    lower = np.ones(n, dtype=complex)
    rhs = np.zeros(n + 1, dtype=complex)
    # ghost phi_{-1} = phi_1 - 2h phi'(0), phi'(0) = (g s phi_0 - 1)/GJ
    upper[0] = 2.0
    diag[0] -= 2.0 * h * p.g * s / GJ
    rhs[0] = -2.0 * h / GJ
    # ghost phi_{n+1} = phi_{n-1} + 2h phi'(L), phi'(L) = -I_B s^2 phi_n / GJ
    lower[-1] = 2.0
    diag[-1] -= 2.0 * h * p.I_B * s * s / GJ
    ab = np.zeros((3, n + 1), dtype=complex)
    ab[0, 1:] = upper
    ab[1] = diag
    ab[2, :-1] = lower
    return complex(solve_banded((1, 1), ab, rhs)[-1])


def dpm_bvp(p: PhysicalParams, omega, n: int = 8000) -> np.ndarray:
    """Independent finite-difference solution of the same boundary-value problem.

    Richardson extrapolation over ``n`` and ``2n`` cells removes the leading
    ``O(h^2)`` error.
    """
    w = _as_omega(omega)
    out = np.empty(w.size, dtype=complex)
    for i, x in enumerate(w):
        coarse = _bvp_solve(p, 1j * x, n)
        fine = _bvp_solve(p, 1j * x, 2 * n)
        out[i] = (4.0 * fine - coarse) / 3.0
    return out


# -------------------------------------------------------------------- metrics

def phase_crossings(resp: FrequencyResponse, level_deg: float = -180.0) -> int:
    """Number of times the unwrapped phase passes ``level_deg`` modulo 360."""
    ph = resp.phase_deg
    k = np.floor((ph - level_deg) / 360.0)
    return int(np.count_nonzero(np.diff(k)))


def resonance_peaks(resp: FrequencyResponse, refine=None) -> np.ndarray:
    """Frequencies of the local maxima of ``|H|`` on the grid.

    If ``refine`` maps a frequency to the complex response, each grid
    maximum is polished by a bounded scalar search between its neighbours.
    """
    m = np.abs(resp.values)
    idx = np.flatnonzero((m[1:-1] > m[:-2]) & (m[1:-1] > m[2:])) + 1
    if refine is None:
        return resp.omega[idx]
    peaks = []
    for i in idx:
        r = minimize_scalar(lambda x: -abs(refine(x)), bounds=(resp.omega[i - 1], resp.omega[i + 1]),
                            method="bounded", options={"xatol": 1e-9})
        peaks.append(r.x)
    return np.array(peaks)


def lpm_resonance(lp: LumpedParams, output: str = "angle") -> float:
    """First local maximum of the lumped response magnitude."""
    resp = lpm_response(lp, default_grid(2000), output)
    peaks = resonance_peaks(resp, refine=lambda x: lpm_response(lp, [x], output).values[0])
    if peaks.size == 0:
        raise ValueError("lumped response has no resonance peak on the grid")
    return float(peaks[0])


def rolloff_slope(resp: FrequencyResponse, n_tail: int = 20) -> float:
    """High-frequency slope in dB per decade from a fit over the last points."""
    lw = np.log10(resp.omega[-n_tail:])
    return float(np.polyfit(lw, resp.magnitude_db[-n_tail:], 1)[0])
