"""Pseudo-spectral simulation and variational diagnostics for 2D Navier-Stokes
vorticity driven by degenerate subordinated-Brownian noise."""

from .spectral import ModelConfig, VorticityField, WavenumberLattice
from .levy import NoisePath, SubordinatorConfig, SubordinatorPath, sample_noise_increments, sample_subordinator
from .integrator import StoppingClock, TrajectoryRecord, advance_clock, simulate, simulate_ensemble
from ._kernels import USE_NUMBA

__version__ = "0.1.0"

__all__ = [
    "ModelConfig",
    "VorticityField",
    "WavenumberLattice",
    "NoisePath",
    "SubordinatorConfig",
    "SubordinatorPath",
    "sample_noise_increments",
    "sample_subordinator",
    "StoppingClock",
    "TrajectoryRecord",
    "advance_clock",
    "simulate",
    "simulate_ensemble",
    "USE_NUMBA",
    "__version__",
]
