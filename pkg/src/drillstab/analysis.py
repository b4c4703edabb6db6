"""Certification drivers built on the LMI assemblies.

* :func:`mu_max` and :func:`kp_robustness_bound` are closed-form bounds;
* :func:`estimate_decay_rate` bisects the decay-rate LMI;
* :func:`stability_map` sweeps a (kp, ki) grid;
* :func:`practical_bound` runs the five-step practical-stability procedure
  and returns the ultimate bound ``X_bound``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import lmi, sdp
from .params import NormalizedParams, PiGains, TorqueModel

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-5
DEFAULT_FRACTION = 0.999
DEFAULT_V_MAX = 1e4
TAU0_BACKOFF = 1e-2
MAX_HALVINGS = 40
MAX_RELIABLE_ORDER = 8


class SingularCaseError(ValueError):
    """``c (g_tilde + kp) = 1``: the decay-rate bound is undefined."""


def mu_max(np_: NormalizedParams, kp: float) -> float:
    """Supremum of achievable decay rates, ``(c/2) log|(1+a)/(1-a)|`` with ``a = c(g_tilde + kp)``."""
    a = np_.c * (np_.g_tilde + kp)
    if a == 1.0:
        raise SingularCaseError("c (g_tilde + kp) = 1: decay-rate bound undefined")
    return 0.5 * np_.c * math.log(abs((1.0 + a) / (1.0 - a)))


def kp_robustness_bound(np_: NormalizedParams) -> float:
    """Largest proportional gain keeping the loop robust to small delays."""
    cg = np_.c * np_.g_tilde
    return (abs(1.0 + cg) - abs(1.0 - cg)) / (2.0 * np_.c)


def _check_order(N: int) -> None:
    if N > MAX_RELIABLE_ORDER:
        logger.warning("order N=%d > %d: solver accuracy degrades, treat results with care", N, MAX_RELIABLE_ORDER)


# ---------------------------------------------------------------- decay rate


@dataclass
class DecayReport:
    N: int
    mu: float
    mu_max: float
    iterations: int
    certified: bool
    message: str = ""
    log: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _corollary_status(N, np_, gains, mu, c_b) -> str:
    return sdp.solve_problem(lmi.build_corollary1(N, np_, gains, mu, c_b=c_b)).status


def estimate_decay_rate(
    N: int, np_: NormalizedParams, gains: PiGains, tol: float = DEFAULT_TOL, c_b: float = 0.03
) -> DecayReport:
    """Largest decay rate certified at order ``N`` by bisection on ``[0, mu_max]``.

    Anything other than a verified feasible answer counts as "not certified"
    for the bisection.  The feasibility indicator is assumed monotone; a
    final check at half the returned rate logs a violation if it fails.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    _check_order(N)
    upper = mu_max(np_, gains.kp)
    log: list[dict] = []
    status = _corollary_status(N, np_, gains, 0.0, c_b)
    log.append({"mu": 0.0, "status": status})
    if status != sdp.FEASIBLE or upper <= 0:
        return DecayReport(N, 0.0, upper, 0, False, f"not certified stable at order {N}", log)

    lo, hi = 0.0, upper
    it = 0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        status = _corollary_status(N, np_, gains, mid, c_b)
        log.append({"mu": mid, "status": status})
        it += 1
        if status == sdp.FEASIBLE:
            lo = mid
        else:
            hi = mid
    if lo > 0:
        probe = _corollary_status(N, np_, gains, 0.5 * lo, c_b)
        if probe != sdp.FEASIBLE:
            logger.warning("decay-rate indicator not monotone at N=%d: mu=%.3g fails below %.3g", N, 0.5 * lo, lo)
            log.append({"mu": 0.5 * lo, "status": probe, "monotonicity_violation": True})
    return DecayReport(N, lo, upper, it, True, "", log)


# ------------------------------------------------------------ stability map


@dataclass
class StabilityMap:
    """``stable[i, j]`` refers to ``(kp_grid[i], ki_grid[j])``.

    ``excluded`` marks cells without a unique equilibrium (``ki = 0``); they
    are never reported stable.
    """

    N: int
    fraction: float
    kp_grid: np.ndarray
    ki_grid: np.ndarray
    stable: np.ndarray
    excluded: np.ndarray
    status: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kp", "ki", "stable", "status"])
            for i, kp in enumerate(self.kp_grid):
                for j, ki in enumerate(self.ki_grid):
                    w.writerow([repr(float(kp)), repr(float(ki)), int(self.stable[i, j]), self.status[i, j]])


def _map_cell(args) -> str:
    N, np_, kp, ki, fraction, c_b = args
    if ki == 0:
        return "equilibrium not unique"
    try:
        bound = mu_max(np_, kp)
    except SingularCaseError:
        return "singular"
    if bound <= 0:
        return "unstable: mu_max <= 0"
    return _corollary_status(N, np_, PiGains(kp, ki), fraction * bound, c_b)


def stability_map(
    N: int,
    np_: NormalizedParams,
    kp_grid,
    ki_grid,
    fraction_of_mu_max: float = DEFAULT_FRACTION,
    c_b: float = 0.03,
    workers: int = 1,
) -> StabilityMap:
    """Certify every grid cell at decay rate ``fraction * mu_max(kp)``."""
    if not 0 < fraction_of_mu_max < 1:
        raise ValueError("fraction_of_mu_max must lie in (0, 1)")
    kp_grid = np.asarray(kp_grid, dtype=float)
    ki_grid = np.asarray(ki_grid, dtype=float)
    for name, g in (("kp", kp_grid), ("ki", ki_grid)):
        if g.ndim != 1 or np.any(np.diff(g) <= 0):
            raise ValueError(f"{name} grid must be one-dimensional and strictly increasing")
    _check_order(N)
    cells = [(N, np_, kp, ki, fraction_of_mu_max, c_b) for kp in kp_grid for ki in ki_grid]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_map_cell, cells))
    else:
        results = [_map_cell(c) for c in cells]
    status = np.array(results, dtype=object).reshape(kp_grid.size, ki_grid.size)
    stable = status == sdp.FEASIBLE
    excluded = status == "equilibrium not unique"
    return StabilityMap(N, fraction_of_mu_max, kp_grid, ki_grid, stable.astype(bool), excluded.astype(bool), status)


# ----------------------------------------------------- practical stability


def _w_matrix(N: int) -> np.ndarray:
    return np.diag(np.concatenate([[1.0, 1.0], 0.5 * np.repeat(2.0 * np.arange(N + 1) + 1.0, 2)]))


def epsilon1(PS: np.ndarray, S: np.ndarray, N: int) -> float:
    """Largest ``eps`` with ``P_N + S_N >= eps * W`` and ``S >= eps/2 * I``.

    ``W = diag(I_2, 1/2 * diag((2k+1) I_2))``.  ``PS`` is ``P_N + S_N``.
    """
    PS = np.asarray(PS, dtype=float)
    S = np.atleast_2d(np.asarray(S, dtype=float))
    n = 2 + 2 * (N + 1)
    if PS.shape != (n, n):
        raise ValueError(f"P_N + S_N must be {n}x{n} at order {N}, got {PS.shape}")
    PS = 0.5 * (PS + PS.T)
    S = 0.5 * (S + S.T)
    lam_s = np.linalg.eigvalsh(S)[0]
    w = 1.0 / np.sqrt(np.diag(_w_matrix(N)))
    lam_ps = np.linalg.eigvalsh(PS * np.outer(w, w))[0]
    if lam_ps <= 0 or lam_s <= 0:
        raise ValueError("epsilon1 requires P_N + S_N > 0 and S > 0")
    return float(min(lam_ps, 2.0 * lam_s))


@dataclass
class PracticalReport:
    N: int
    certified: bool
    tau0: float | None = None
    V_max: float | None = None
    eps_P: float | None = None
    eps1: float | None = None
    X_bound: float | None = None
    objective: str = "eps_P"
    message: str = ""
    trace: list[dict] = field(default_factory=list)
    values: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("values")
        return d


def _ps_matrix(values: dict, N: int) -> np.ndarray:
    S = np.asarray(values["S"])
    SN = np.kron(np.diag(2.0 * np.arange(N + 1) + 1.0), S)
    PS = np.array(values["P"], dtype=float)
    PS[2:, 2:] += SN
    return PS


def _bound_problem(N, np_, gains, omega0, torque, tau0, V_max, objective):
    c_b, T0 = torque.linearize(omega0)
    T_min, T_max = torque.sector_bounds()
    prob = lmi.build_theorem2(N, np_, gains, omega0, T0, T_min, T_max, tau0, V_max=V_max, c_b=c_b)
    if V_max is None:
        return prob
    PS = prob.constraint("PS").expr
    eps = prob.scalar("eps")
    n = PS.shape[0]
    if objective == "eps_P":
        lead = np.zeros((n, n))
        lead[0, 0] = 1.0
        prob.add("eps_P", PS - lmi._scalar_times(eps, lead), ">>", strict=True)
    elif objective == "eps1":
        W = _w_matrix(N)
        prob.add("eps1_PS", PS - lmi._scalar_times(eps, W), ">>", strict=True)
        S = sdp.Affine(np.zeros((2, 2)), {"S": prob.variables["S"].basis()})
        prob.add("eps1_S", S - lmi._scalar_times(eps, 0.5 * np.eye(2)), ">>", strict=True)
    else:
        raise ValueError(f"unknown objective {objective!r}")
    prob.maximize(eps)
    return prob


def practical_bound(
    N: int,
    np_: NormalizedParams,
    gains: PiGains,
    omega0: float,
    torque: TorqueModel,
    V_max: float = DEFAULT_V_MAX,
    tau0: float | None = None,
    objective: str = "eps_P",
    max_halvings: int = MAX_HALVINGS,
) -> PracticalReport:
    """Ultimate bound ``X_bound`` of the nonlinear closed loop at order ``N``.

    Steps: check the linear LMIs; start from ``tau0 = 2 mu_max (1 - 1e-2)``
    and halve until the practical LMI is feasible with a free level; freeze
    ``tau0``; fix ``V_max`` and maximize ``eps`` (``objective="eps_P"`` bounds
    the leading entry only, ``"eps1"`` bounds the full ``eps1`` quantity);
    return ``sqrt(V_max / eps1)``.

    Passing ``tau0`` skips the halving schedule and uses that value as is.
    """
    if objective not in ("eps_P", "eps1"):
        raise ValueError(f"unknown objective {objective!r}")
    _check_order(N)
    report = PracticalReport(N=N, certified=False, objective=objective)
    lin = sdp.solve_problem(lmi.build_theorem1(N, np_, gains, c_b=torque.c_b))
    report.trace.append({"step": 0, "check": "linear", "status": lin.status})
    if not lin.feasible:
        report.message = "practical stability not certified: linear LMIs infeasible at this order"
        return report

    if tau0 is None:
        t0 = 2.0 * mu_max(np_, gains.kp) * (1.0 - TAU0_BACKOFF)
        halvings = max_halvings
    else:
        if tau0 < 0:
            raise ValueError("tau0 must be nonnegative")
        t0, halvings = float(tau0), 0
    found = False
    for k in range(halvings + 1):
        r = sdp.solve_problem(_bound_problem(N, np_, gains, omega0, torque, t0, None, objective))
        report.trace.append({"step": 2, "tau0": t0, "status": r.status})
        if r.feasible:
            found = True
            break
        if k < halvings:
            t0 *= 0.5
    if not found:
        report.message = "practical stability not certified: no feasible tau0 found"
        return report
    report.tau0 = t0

    prob = _bound_problem(N, np_, gains, omega0, torque, t0, V_max, objective)
    r = sdp.solve_problem(prob)
    report.trace.append({"step": 4, "tau0": t0, "V_max": V_max, "status": r.status, "objective": r.objective})
    if not r.feasible:
        report.message = f"step 4 failed with status {r.status}"
        return report
    PS = _ps_matrix(r.values, N)
    eps1 = epsilon1(PS, r.values["S"], N)
    report.certified = True
    report.V_max = V_max
    report.eps_P = float(r.values["eps"]) if objective == "eps_P" else None
    report.eps1 = eps1
    report.X_bound = math.sqrt(V_max / eps1)
    report.values = r.values
    return report


def write_json(obj, path) -> None:
    """Write a report (anything with ``to_dict``) as JSON."""
    data = obj.to_dict() if hasattr(obj, "to_dict") else obj
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")
