"""Synthetic trial generator with known truth."""

from cea_engine.simulation.config import (
    ArmSimConfig,
    CovariateGenerator,
    MissingnessMechanism,
    SimConfig,
    SizeLaw,
)
from cea_engine.simulation.generator import SimTruth, generate, replicate_seeds, truncation_shift

__all__ = [
    'ArmSimConfig',
    'CovariateGenerator',
    'MissingnessMechanism',
    'SimConfig',
    'SizeLaw',
    'SimTruth',
    'generate',
    'replicate_seeds',
    'truncation_shift',
]
