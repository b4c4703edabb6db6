"""Model constants, friction torque, PI gains and the closed-loop equilibrium.

Physical values are stored in SI units.  Normalized constants are always
recomputed from the physical values at full precision.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np


class ParameterError(ValueError):
    """Raised when a parameter set violates its invariants."""


class EquilibriumError(ValueError):
    """Raised when the closed loop has no unique equilibrium (ki == 0)."""


def _require_positive(obj: Any, names: tuple[str, ...]) -> None:
    for name in names:
        value = getattr(obj, name)
        if not value > 0:
            raise ParameterError(f"{type(obj).__name__}.{name} must be > 0, got {value!r}")


def _require_nonnegative(obj: Any, names: tuple[str, ...]) -> None:
    for name in names:
        value = getattr(obj, name)
        if not value >= 0:
            raise ParameterError(f"{type(obj).__name__}.{name} must be >= 0, got {value!r}")


@dataclass(frozen=True)
class PhysicalParams:
    """Distributed drill-string parameters (torsional and axial)."""

    L: float = 2000.0
    G: float = 79.3e9
    E: float = 200e9
    Gamma: float = 35e-4
    J: float = 1.19e-5
    I_B: float = 89.0
    M_B: float = 40_000.0
    rho: float = 8000.0
    g: float = 2000.0
    h: float = 200.0
    gamma_a: float = 0.69
    gamma_t: float = 0.27
    delta: float = 1.0

    def __post_init__(self):
        _require_positive(self, ("L", "G", "E", "Gamma", "J", "I_B", "M_B", "rho", "g", "h"))
        _require_nonnegative(self, ("gamma_a", "gamma_t", "delta"))

    @property
    def c_t(self) -> float:
        """Torsional wave speed sqrt(G/rho) in m/s."""
        return math.sqrt(self.G / self.rho)

    @property
    def c_a(self) -> float:
        return math.sqrt(self.E / self.rho)


@dataclass(frozen=True)
class LumpedParams:
    """Two-inertia lumped model of the drill string."""

    I_r: float = 2122.0
    I_b: float = 374.0
    k: float = 1111.0
    lambda_r: float = 425.0
    lambda_b: float = 23.2
    d_r: float = 425.0
    d_b: float = 50.0

    def __post_init__(self):
        _require_positive(self, tuple(f.name for f in dataclasses.fields(self)))


@dataclass(frozen=True)
class TorqueModel:
    """Bit-rock friction torque with exponentially decaying static friction.

    ``eps_sign`` is the width of the ``tanh`` surrogate used for ``sign``.
    """

    gamma_b: float = 0.9
    mu_cb: float = 0.5
    mu_sb: float = 0.8
    c_b: float = 0.03
    T_sb: float = 15_145.0
    eps_sign: float = 1e-3

    def __post_init__(self):
        _require_positive(self, ("gamma_b", "T_sb", "eps_sign"))
        _require_nonnegative(self, ("c_b",))
        if not 0 < self.mu_cb <= self.mu_sb:
            raise ParameterError(
                f"friction coefficients must satisfy 0 < mu_cb <= mu_sb, got {self.mu_cb}, {self.mu_sb}"
            )

    def _magnitude(self, theta):
        return self.T_sb * (self.mu_cb + (self.mu_sb - self.mu_cb) * np.exp(-self.gamma_b * np.abs(theta)))

    def torque_nl(self, theta):
        """Nonlinear friction torque with the regularized sign."""
        return self._magnitude(theta) * np.tanh(np.asarray(theta, dtype=float) / self.eps_sign)

    def torque_nl_exact(self, theta):
        """Nonlinear friction torque with the exact (discontinuous) sign."""
        return self._magnitude(theta) * np.sign(theta)

    def torque_total(self, theta):
        return self.c_b * np.asarray(theta, dtype=float) + self.torque_nl(theta)

    def linearize(self, omega0: float) -> tuple[float, float]:
        """Return ``(c_b, T0)`` of the affine torque model around ``omega0``."""
        if not omega0 > 0:
            raise ParameterError(f"linearization requires omega0 > 0, got {omega0!r}")
        return self.c_b, float(self._magnitude(omega0))

    def sector_bounds(self) -> tuple[float, float]:
        """Infimum and supremum of ``|T_nl(theta)|`` over ``theta != 0``."""
        return self.T_sb * self.mu_cb, self.T_sb * self.mu_sb


def torque_nl(m: TorqueModel, theta):
    return m.torque_nl(theta)


def torque_total(m: TorqueModel, theta):
    return m.torque_total(theta)


def linearize_torque(m: TorqueModel, omega0: float) -> tuple[float, float]:
    return m.linearize(omega0)


def sector_bounds(m: TorqueModel) -> tuple[float, float]:
    return m.sector_bounds()


@dataclass(frozen=True)
class NormalizedParams:
    """Constants of the torsional model on the unit interval.

    Attributes
    ----------
    c : normalized wave speed ``c_t / L`` (1/s)
    alpha1 : ``G J / (L I_B)``
    alpha2 : ``1 / I_B``
    g_tilde : ``g / (G J)``
    gamma_t : distributed damping (1/s)
    I_B : bottom-hole inertia, kept for the ``c_b / I_B`` entry
    c_a, beta1, beta2, h_tilde : axial constants, stored but unused
    """

    c: float
    alpha1: float
    alpha2: float
    g_tilde: float
    gamma_t: float
    I_B: float
    c_a: float = float("nan")
    beta1: float = float("nan")
    beta2: float = float("nan")
    h_tilde: float = float("nan")

    def __post_init__(self):
        _require_positive(self, ("c", "alpha1", "alpha2", "I_B"))
        _require_nonnegative(self, ("g_tilde", "gamma_t"))


def normalize(p: PhysicalParams) -> NormalizedParams:
    GJ = p.G * p.J
    EG = p.E * p.Gamma
    return NormalizedParams(
        c=p.c_t / p.L,
        alpha1=GJ / (p.L * p.I_B),
        alpha2=1.0 / p.I_B,
        g_tilde=p.g / GJ,
        gamma_t=p.gamma_t,
        I_B=p.I_B,
        c_a=p.c_a / p.L,
        beta1=EG / (p.L * p.M_B),
        beta2=p.delta / p.M_B,
        h_tilde=p.h / EG,
    )


@dataclass(frozen=True)
class PiGains:
    kp: float = 1e-3
    ki: float = 10.0


@dataclass(frozen=True)
class Equilibrium:
    """Closed-loop equilibrium.

    ``phi_x_inf(x) = slope * x + intercept``; ``phi_t_inf`` equals ``omega0``.
    """

    slope: float
    intercept: float
    phi_t_inf: float
    z1_inf: float
    z2_inf: float

    def phi_x(self, x):
        return self.slope * np.asarray(x, dtype=float) + self.intercept

    def phi_x_integral(self, x):
        """Antiderivative of ``phi_x_inf`` vanishing at ``x = 0``."""
        x = np.asarray(x, dtype=float)
        return 0.5 * self.slope * x**2 + self.intercept * x

    @property
    def Z(self) -> np.ndarray:
        return np.array([self.z1_inf, self.z2_inf])


def equilibrium(np_: NormalizedParams, gains: PiGains, omega0: float, T0: float, c_b: float = 0.03) -> Equilibrium:
    """Unique equilibrium of the PI closed loop with affine torque ``c_b*theta + T0``."""
    if gains.ki == 0:
        raise EquilibriumError("equilibrium not unique: ki must be nonzero")
    slope = np_.gamma_t * omega0 / np_.c**2
    phi_x1 = -c_b / (np_.alpha1 * np_.I_B) * omega0 - np_.alpha2 / np_.alpha1 * T0
    intercept = phi_x1 - slope
    z2 = (intercept - np_.g_tilde * omega0) / gains.ki
    return Equilibrium(slope=slope, intercept=intercept, phi_t_inf=omega0, z1_inf=omega0, z2_inf=z2)


@dataclass(frozen=True)
class ModelConfig:
    """Full parameter set; defaults reproduce the reference drilling rig."""

    physical: PhysicalParams = field(default_factory=PhysicalParams)
    lumped: LumpedParams = field(default_factory=LumpedParams)
    torque: TorqueModel = field(default_factory=TorqueModel)
    gains: PiGains = field(default_factory=PiGains)

    @property
    def normalized(self) -> NormalizedParams:
        return normalize(self.physical)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name: f.type for f in dataclasses.fields(cls)}
        unknown = set(data) - set(known)
        if unknown:
            raise ParameterError(f"unknown config sections: {sorted(unknown)}")
        kwargs = {}
        defaults = cls()
        for name in known:
            section = getattr(defaults, name)
            values = data.get(name, {})
            fields = {f.name for f in dataclasses.fields(section)}
            bad = set(values) - fields
            if bad:
                raise ParameterError(f"unknown keys in [{name}]: {sorted(bad)}")
            kwargs[name] = dataclasses.replace(section, **{k: float(v) for k, v in values.items()})
        return cls(**kwargs)

    def with_overrides(self, overrides: dict[str, Any]) -> "ModelConfig":
        """Apply dotted ``section.key`` overrides."""
        data = self.to_dict()
        for key, value in overrides.items():
            section, _, name = key.partition(".")
            if section not in data or not name:
                raise ParameterError(f"bad override key {key!r}")
            data[section][name] = value
        return ModelConfig.from_dict(data)


def load_config(path: str | Path) -> ModelConfig:
    with open(path) as fh:
        return ModelConfig.from_dict(json.load(fh))
