"""Missingness screening and complete-case comparator."""

from cea_engine.diagnostics.missingness import (
    MissingnessModelResult,
    ScreeningReport,
    fit_missingness_logistic,
    screen_auxiliaries,
    screen_outcome_association,
)
from cea_engine.diagnostics.complete_case import CompleteCaseResult, complete_case_analysis

__all__ = [
    'MissingnessModelResult',
    'ScreeningReport',
    'fit_missingness_logistic',
    'screen_auxiliaries',
    'screen_outcome_association',
    'CompleteCaseResult',
    'complete_case_analysis',
]
