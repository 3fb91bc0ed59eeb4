"""Stochastic magnetostrophic convection on the periodic torus.

Pseudo-spectral solvers for the forced rotating MHD system and its
active-scalar limit, with tools for the constitutive multipliers, bracket
spanning, Wasserstein diagnostics and moment checks.
"""

from .errors import BlowUp, InternalConsistencyError, InvalidArgument, NumericalDegeneracy
from .noise import NoiseConfig, NoiseEntry, default_noise
from .spectral import Grid, PhysParams, SpectralScalar, SpectralVector, make_grid
from .dynamics import FullState, LimitState, StepConfig, run_coupled, run_ensemble, step_full, step_limit

__version__ = "0.1.0"

__all__ = [
    "BlowUp",
    "InternalConsistencyError",
    "InvalidArgument",
    "NumericalDegeneracy",
    "NoiseConfig",
    "NoiseEntry",
    "default_noise",
    "Grid",
    "PhysParams",
    "SpectralScalar",
    "SpectralVector",
    "make_grid",
    "FullState",
    "LimitState",
    "StepConfig",
    "run_coupled",
    "run_ensemble",
    "step_full",
    "step_limit",
]
