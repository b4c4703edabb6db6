"""Stability certificates and cross-checks for a PI-controlled torsional drill pipe."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .params import (  # noqa: E402
    EquilibriumError,
    LumpedParams,
    ModelConfig,
    ParameterError,
    PhysicalParams,
    PiGains,
    TorqueModel,
    equilibrium,
    load_config,
    normalize,
)

__all__ = [
    "EquilibriumError",
    "LumpedParams",
    "ModelConfig",
    "ParameterError",
    "PhysicalParams",
    "PiGains",
    "TorqueModel",
    "__version__",
    "equilibrium",
    "load_config",
    "normalize",
]
