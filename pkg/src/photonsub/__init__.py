"""Cascaded Rydberg-superatom photon subtraction: master equation, trajectories and statistics."""

__version__ = "0.1.0"

from .model import (ChainConfig, ConfigError, MicroscopicParams, PulseSpec, SolverOptions,  # noqa: E402
                    SuperatomParams, FITTED_PARAMS)

__all__ = ["ChainConfig", "ConfigError", "MicroscopicParams", "PulseSpec", "SolverOptions",
           "SuperatomParams", "FITTED_PARAMS", "__version__"]
