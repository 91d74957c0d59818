"""Multilevel and single-level multiple imputation of missing outcomes."""

from cea_engine.imputation.spec import RESPONSES, ImputationSpec, Strategy
from cea_engine.imputation.design import Design, build_design
from cea_engine.imputation.gibbs import GibbsSampler, ImputerState, RetainedDraw
from cea_engine.imputation.engine import (
    CompletedSet,
    arm_seed,
    gibbs_run,
    impute_single_level,
    impute_trial,
    imputation_spread,
)

__all__ = [
    'RESPONSES',
    'ImputationSpec',
    'Strategy',
    'Design',
    'build_design',
    'GibbsSampler',
    'ImputerState',
    'RetainedDraw',
    'CompletedSet',
    'arm_seed',
    'gibbs_run',
    'impute_single_level',
    'impute_trial',
    'imputation_spread',
]
