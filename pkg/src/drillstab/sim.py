"""First-order simulator of the PI-controlled torsional drill pipe.

The pipe is advanced in Riemann coordinates ``chi = (phi_t + c phi_x,
phi_t - c phi_x)`` on a uniform grid of ``[0, 1]``::

    chi_t = diag(c, -c) chi_x - (gamma_t / 2) [[1, 1], [1, 1]] chi

``chi+`` travels toward ``x = 0`` and ``chi-`` toward ``x = 1``, so each is
upwinded from its own side and receives its inflow value from a boundary
law: the reflected characteristic of the PI boundary at ``x = 0`` and the
bit-velocity coupling ``phi_t(1) = z1`` at ``x = 1``.  The ODE state
``Z = (z1, z2)`` uses explicit Euler, except that the friction torque in
nonlinear mode is taken implicitly (a scalar monotone solve per step) so the
steep regularized sign does not force tiny steps.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import trapezoid
from scipy.optimize import brentq

from .legendre import project
from .lmi import StructuralMatrices
from .params import Equilibrium, NormalizedParams, PiGains, TorqueModel, equilibrium

DEFAULT_NX = 80
DEFAULT_NT = 9949
MAX_SNAPSHOTS = 4000


class CFLError(ValueError):
    pass


class SimulationDiverged(FloatingPointError):
    def __init__(self, step: int):
        super().__init__(f"non-finite state at step {step}")
        self.step = step


FieldSpec = Callable[[np.ndarray], np.ndarray] | np.ndarray | float


@dataclass
class InitialCondition:
    """Initial data: ``phi_x(x, 0)``, ``phi_t(x, 0)`` and ``Z(0)``.

    Fields may be callables of ``x``, arrays sampled on the simulation grid,
    or constants.  ``phi_x`` is the derivative of the angle profile ``phi^0``.
    """

    phi_x: FieldSpec
    phi_t: FieldSpec
    Z: tuple[float, float]
    label: str = "custom"

    def sample(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return _sample(self.phi_x, x), _sample(self.phi_t, x)


def _sample(spec: FieldSpec, x: np.ndarray) -> np.ndarray:
    if callable(spec):
        out = np.asarray(spec(x), dtype=float)
    else:
        out = np.asarray(spec, dtype=float)
    out = np.broadcast_to(out, x.shape).astype(float)
    return out


def preset(name: str, eq: Equilibrium) -> InitialCondition:
    """Initial conditions of the reference scenarios.

    ``"doubled"``: ``phi^0 = 4 (int_0^x phi_x_inf + 0.1 cos 2x)``,
    ``phi^1 = 2 Omega0``, ``Z(0) = 2 Z_inf``.  ``"sine-strong"`` /
    ``"sine-weak"``: ``phi^0 = (1 + a sin x) int_0^x phi_x_inf`` with
    ``a = 0.32`` / ``0.1``, ``phi^1 = Omega0``, ``Z(0) = Z_inf``.
    ``"zero"``: everything zero.  ``"equilibrium"``: the equilibrium itself.
    """
    w0 = eq.phi_t_inf
    if name == "doubled":
        return InitialCondition(
            phi_x=lambda x: 4.0 * (eq.phi_x(x) - 0.2 * np.sin(2.0 * x)),
            phi_t=2.0 * w0,
            Z=(2.0 * eq.z1_inf, 2.0 * eq.z2_inf),
            label=name,
        )
    if name in ("sine-strong", "sine-weak"):
        a = 0.32 if name == "sine-strong" else 0.1
        return InitialCondition(
            phi_x=lambda x: a * np.cos(x) * eq.phi_x_integral(x) + (1.0 + a * np.sin(x)) * eq.phi_x(x),
            phi_t=w0,
            Z=(eq.z1_inf, eq.z2_inf),
            label=name,
        )
    if name == "zero":
        return InitialCondition(0.0, 0.0, (0.0, 0.0), label=name)
    if name == "equilibrium":
        return InitialCondition(eq.phi_x, w0, (eq.z1_inf, eq.z2_inf), label=name)
    raise ValueError(f"unknown initial-condition preset {name!r}")


@dataclass
class SimConfig:
    """Discretization and scenario.

    ``n_x=None`` picks the finest grid with CFL number ``<= 1`` (at least
    ``DEFAULT_NX`` points); if even ``DEFAULT_NX`` points violate CFL the
    number of time steps is raised instead.
    """

    t_end: float
    omega0: float
    initial: InitialCondition | str = "equilibrium"
    mode: str = "linear"
    n_t: int = DEFAULT_NT
    n_x: int | None = None
    record_every: int | None = None

    def __post_init__(self):
        if self.mode not in ("linear", "nonlinear"):
            raise ValueError(f"mode must be 'linear' or 'nonlinear', got {self.mode!r}")
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if self.n_t < 1:
            raise ValueError("n_t must be positive")
        if self.n_x is not None and self.n_x < 2:
            raise ValueError("n_x must be at least 2")

    def resolve(self, c: float) -> tuple[int, int]:
        """``(n_x, n_t)`` actually used for wave speed ``c``."""
        n_t = self.n_t
        if self.n_x is not None:
            n_x = self.n_x
            if c * (self.t_end / n_t) * (n_x - 1) > 1.0 + 1e-12:
                raise CFLError(f"CFL number {c * self.t_end / n_t * (n_x - 1):.3f} > 1; raise n_t or lower n_x")
            return n_x, n_t
        n_x = int(math.floor(n_t / (c * self.t_end) + 1e-9)) + 1
        if n_x < DEFAULT_NX:
            n_x = DEFAULT_NX
            n_t = int(math.ceil(c * self.t_end * (n_x - 1) - 1e-9))
        return n_x, n_t


@dataclass
class SimState:
    chi_plus: np.ndarray
    chi_minus: np.ndarray
    Z: np.ndarray
    t: float

    @property
    def phi_t(self) -> np.ndarray:
        return 0.5 * (self.chi_plus + self.chi_minus)

    def phi_x(self, c: float) -> np.ndarray:
        return 0.5 * (self.chi_plus - self.chi_minus) / c


@dataclass
class Trajectory:
    """Decimated simulation record; arrays are indexed by snapshot."""

    x: np.ndarray
    t: np.ndarray
    chi_plus: np.ndarray
    chi_minus: np.ndarray
    Z: np.ndarray
    energy: np.ndarray
    phi_t0: np.ndarray
    phi_x1: np.ndarray
    mode: str
    omega0: float
    c: float
    dt: float
    n_t: int
    equilibrium: Equilibrium
    meta: dict = field(default_factory=dict)

    @property
    def n_x(self) -> int:
        return self.x.size

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0])

    def state(self, i: int) -> SimState:
        return SimState(self.chi_plus[i], self.chi_minus[i], self.Z[i], float(self.t[i]))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "energy", "z1", "z2", "phi_t0", "phi_x1"])
            for row in zip(self.t, self.energy, self.Z[:, 0], self.Z[:, 1], self.phi_t0, self.phi_x1):
                w.writerow([repr(float(v)) for v in row])

    def to_binary(self, path) -> None:
        """Full-field dump.

        Layout (little-endian): header of 4 float64 ``n_x, n_snapshots, dx,
        dt_snapshot``; then for each snapshot, row-major float64
        ``t, z1, z2, chi_plus[0:n_x], chi_minus[0:n_x]``.
        """
        n_s = self.t.size
        dt_snap = float(self.t[1] - self.t[0]) if n_s > 1 else self.dt
        header = np.array([self.n_x, n_s, self.dx, dt_snap], dtype="<f8")
        body = np.hstack([self.t[:, None], self.Z, self.chi_plus, self.chi_minus]).astype("<f8")
        with open(path, "wb") as fh:
            fh.write(header.tobytes())
            fh.write(np.ascontiguousarray(body).tobytes())


def read_binary(path) -> dict:
    raw = np.fromfile(path, dtype="<f8")
    n_x, n_s = int(raw[0]), int(raw[1])
    body = raw[4:].reshape(n_s, 3 + 2 * n_x)
    return {
        "dx": raw[2],
        "dt_snapshot": raw[3],
        "t": body[:, 0],
        "Z": body[:, 1:3],
        "chi_plus": body[:, 3 : 3 + n_x],
        "chi_minus": body[:, 3 + n_x :],
    }


def equilibrium_fields(eq: Equilibrium, x: np.ndarray, c: float) -> tuple[np.ndarray, np.ndarray]:
    px = eq.phi_x(x)
    return eq.phi_t_inf + c * px, eq.phi_t_inf - c * px


def energy_norm(state: SimState, eq: Equilibrium, np_: NormalizedParams, x: np.ndarray) -> float:
    """``||X - X_inf||_H`` with ``||X||^2 = z1^2 + z2^2 + c^2 ||phi_x||^2 + ||phi_t||^2``."""
    cp, cm = equilibrium_fields(eq, x, np_.c)
    dp = state.chi_plus - cp
    dm = state.chi_minus - cm
    dz = np.asarray(state.Z) - eq.Z
    field_part = 0.5 * trapezoid(dp**2 + dm**2, x)
    return float(math.sqrt(dz @ dz + field_part))


def _friction_step(rhs: float, h: float, torque: TorqueModel) -> float:
    """Solve ``z + h (c_b z + T_nl(z)) = rhs`` (monotone in ``z`` for small ``h``)."""
    denom = 1.0 + h * torque.c_b
    _, t_max = torque.sector_bounds()
    lo = (rhs - h * t_max) / denom
    hi = (rhs + h * t_max) / denom
    f = lambda z: z + h * (torque.c_b * z + float(torque.torque_nl(z))) - rhs  # noqa: E731
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    return brentq(f, lo, hi, xtol=1e-13, rtol=4 * np.finfo(float).eps)


def _max_monotone_step(np_: NormalizedParams, torque: TorqueModel) -> float:
    # steepest descent of |T_nl| away from zero
    slope = torque.T_sb * (torque.mu_sb - torque.mu_cb) * torque.gamma_b
    return 1.0 / (np_.alpha2 * max(slope - torque.c_b, 1e-300))


def simulate(
    np_: NormalizedParams,
    gains: PiGains,
    torque: TorqueModel,
    cfg: SimConfig,
) -> Trajectory:
    """Integrate the closed loop from ``cfg.initial`` to ``cfg.t_end``."""
    c, g2 = np_.c, 0.5 * np_.gamma_t
    c_b, T0 = torque.linearize(cfg.omega0)
    eq = equilibrium(np_, gains, cfg.omega0, T0, c_b)
    n_x, n_t = cfg.resolve(c)
    dt = cfg.t_end / n_t
    x = np.linspace(0.0, 1.0, n_x)
    dx = x[1] - x[0]
    nu = c * dt / dx
    if nu > 1.0 + 1e-12:
        raise CFLError(f"CFL number {nu:.3f} > 1")
    nonlinear = cfg.mode == "nonlinear"
    h = dt * np_.alpha2
    if nonlinear and dt >= _max_monotone_step(np_, torque):
        raise CFLError(f"time step {dt:.3g} too large for the implicit friction update")

    init = preset(cfg.initial, eq) if isinstance(cfg.initial, str) else cfg.initial
    px0, pt0 = init.sample(x)
    cp = pt0 + c * px0
    cm = pt0 - c * px0
    z1, z2 = map(float, init.Z)

    a = c * (np_.g_tilde + gains.kp)
    r0 = (1.0 - a) / (1.0 + a)
    k0 = 2.0 * c / (1.0 + a)

    def apply_boundaries(cp, cm, z1, z2):
        cp[-1] = 2.0 * z1 - cm[-1]
        cm[0] = r0 * cp[0] + k0 * (gains.kp * cfg.omega0 - gains.ki * z2)

    # the inflow values are dictated by the boundary laws, whatever the data says
    apply_boundaries(cp, cm, z1, z2)

    every = cfg.record_every or max(1, int(math.ceil((n_t + 1) / MAX_SNAPSHOTS)))
    n_rec = n_t // every + 1
    rec_t = np.empty(n_rec)
    rec_p = np.empty((n_rec, n_x))
    rec_m = np.empty((n_rec, n_x))
    rec_z = np.empty((n_rec, 2))
    cpi, cmi = equilibrium_fields(eq, x, c)

    def record(k, t):
        rec_t[k] = t
        rec_p[k] = cp
        rec_m[k] = cm
        rec_z[k] = (z1, z2)

    record(0, 0.0)
    k = 1
    for step in range(1, n_t + 1):
        phi_t0 = 0.5 * (cp[0] + cm[0])
        phi_x1 = 0.5 * (cp[-1] - cm[-1]) / c
        # damping is sampled at the foot of each characteristic, like the field itself
        damp = dt * g2 * (cp + cm)
        new_p = np.empty_like(cp)
        new_m = np.empty_like(cm)
        new_p[:-1] = (1.0 - nu) * (cp[:-1] - damp[:-1]) + nu * (cp[1:] - damp[1:])
        new_m[1:] = (1.0 - nu) * (cm[1:] - damp[1:]) + nu * (cm[:-1] - damp[:-1])
        if nonlinear:
            z1_new = _friction_step(z1 - dt * np_.alpha1 * phi_x1, h, torque)
        else:
            z1_new = z1 + dt * (-np_.alpha1 * phi_x1 - np_.alpha2 * (c_b * z1 + T0))
        z2 = z2 + dt * (phi_t0 - cfg.omega0)
        z1 = z1_new
        cp, cm = new_p, new_m
        apply_boundaries(cp, cm, z1, z2)
        if not (math.isfinite(z1) and math.isfinite(z2) and np.isfinite(cp[0]) and np.isfinite(cm[-1])):
            raise SimulationDiverged(step)
        if step % every == 0:
            record(k, step * dt)
            k += 1
    if not (np.all(np.isfinite(rec_p[:k])) and np.all(np.isfinite(rec_m[:k]))):
        raise SimulationDiverged(n_t)

    rec_t, rec_p, rec_m, rec_z = rec_t[:k], rec_p[:k], rec_m[:k], rec_z[:k]
    dz = rec_z - eq.Z
    energy = np.sqrt(np.sum(dz**2, axis=1) + 0.5 * trapezoid((rec_p - cpi) ** 2 + (rec_m - cmi) ** 2, x, axis=1))
    return Trajectory(
        x=x,
        t=rec_t,
        chi_plus=rec_p,
        chi_minus=rec_m,
        Z=rec_z,
        energy=energy,
        phi_t0=0.5 * (rec_p[:, 0] + rec_m[:, 0]),
        phi_x1=0.5 * (rec_p[:, -1] - rec_m[:, -1]) / c,
        mode=cfg.mode,
        omega0=cfg.omega0,
        c=c,
        dt=dt,
        n_t=n_t,
        equilibrium=eq,
        meta={"n_x": n_x, "n_t": n_t, "cfl": nu, "record_every": every, "initial": init.label},
    )


def projection_trace(traj: Trajectory, N: int, deviation: bool = True) -> np.ndarray:
    """Legendre projections of ``chi`` (or of ``chi - chi_inf``) per snapshot.

    Returns shape ``(n_snapshots, N + 1, 2)``.
    """
    if N > traj.n_x // 2 - 1:
        raise ValueError(f"order {N} is under-resolved on {traj.n_x} grid points")
    cp, cm = traj.chi_plus, traj.chi_minus
    if deviation:
        ep, em = equilibrium_fields(traj.equilibrium, traj.x, traj.c)
        cp, cm = cp - ep, cm - em
    chi = np.stack([cp, cm], axis=1)  # (n_s, 2, n_x)
    X = project(chi, traj.x, N)  # (N+1, n_s, 2)
    return np.transpose(X, (1, 0, 2))


def xi_trace(traj: Trajectory, N: int) -> tuple[np.ndarray, np.ndarray]:
    """Deviation vectors ``Z_N`` (length ``2 + 2(N+1)``) and ``xi_N`` per snapshot."""
    X = projection_trace(traj, N).reshape(traj.t.size, -1)
    eq = traj.equilibrium
    ZN = np.hstack([traj.Z - eq.Z, X])
    xi = np.hstack([ZN, (traj.phi_t0 - eq.phi_t_inf)[:, None], (traj.phi_x1 - eq.phi_x(1.0))[:, None]])
    return ZN, xi


def check_dynamics_identity(traj: Trajectory, sm: StructuralMatrices) -> float:
    """Worst residual of ``d/dt Z_N = D_N xi_N`` along a linear trajectory.

    The time derivative is a forward difference between consecutive
    snapshots, matching the explicit update of the ODE state; record every
    step (``record_every=1``) for the residual to reflect the scheme alone.
    """
    if traj.mode != "linear":
        raise ValueError("the projected dynamics identity holds for the linear closed loop only")
    if traj.t.size < 2:
        raise ValueError("need at least two snapshots")
    ZN, xi = xi_trace(traj, sm.N)
    dZ = np.diff(ZN, axis=0) / np.diff(traj.t)[:, None]
    pred = xi[:-1] @ sm.D_N.T
    return float(np.max(np.abs(dZ - pred)))


def boundary_trace_residual(traj: Trajectory, sm: StructuralMatrices) -> float:
    """Worst mismatch of ``chi(0) = G_N xi_N`` and ``chi(1) = H_N xi_N``."""
    _, xi = xi_trace(traj, sm.N)
    ep, em = equilibrium_fields(traj.equilibrium, traj.x, traj.c)
    chi0 = np.stack([traj.chi_plus[:, 0] - ep[0], traj.chi_minus[:, 0] - em[0]], axis=1)
    chi1 = np.stack([traj.chi_plus[:, -1] - ep[-1], traj.chi_minus[:, -1] - em[-1]], axis=1)
    r0 = np.abs(chi0 - xi @ sm.G_N.T).max()
    r1 = np.abs(chi1 - xi @ sm.H_N.T).max()
    return float(max(r0, r1))


def lyapunov_trace(traj: Trajectory, values: dict, N: int) -> np.ndarray:
    """``V_N`` along a trajectory for solved LMI variables ``P, R, S``."""
    ZN, _ = xi_trace(traj, N)
    P = np.asarray(values["P"])
    R = np.diag(np.asarray(values["R"]))
    S = np.diag(np.asarray(values["S"]))
    x = traj.x
    ep, em = equilibrium_fields(traj.equilibrium, x, traj.c)
    wp = S[0] + x * R[0]
    wm = S[1] + (1.0 - x) * R[1]
    integral = trapezoid(wp * (traj.chi_plus - ep) ** 2 + wm * (traj.chi_minus - em) ** 2, x, axis=1)
    return np.einsum("ti,ij,tj->t", ZN, P, ZN) + integral


def fit_decay_rate(t: np.ndarray, energy: np.ndarray, start_fraction: float = 0.25) -> float:
    """Least-squares exponential rate of ``energy`` over ``[start_fraction * t_end, t_end]``."""
    t = np.asarray(t)
    mask = (t >= start_fraction * t[-1]) & (energy > 0)
    slope = np.polyfit(t[mask], np.log(energy[mask]), 1)[0]
    return float(-slope)


def oscillation_stats(t: np.ndarray, signal: np.ndarray, start_fraction: float = 0.5) -> dict:
    """Dominant frequency (Hz) and peak-to-trough amplitude over the tail of ``signal``."""
    t = np.asarray(t)
    mask = t >= start_fraction * t[-1]
    s = np.asarray(signal)[mask]
    tt = t[mask]
    s0 = s - s.mean()
    spec = np.abs(np.fft.rfft(s0 * np.hanning(s0.size)))
    freqs = np.fft.rfftfreq(s0.size, d=float(tt[1] - tt[0]))
    k = int(np.argmax(spec[1:]) + 1)
    return {"frequency": float(freqs[k]), "amplitude": float(s.max() - s.min()), "mean": float(s.mean())}
