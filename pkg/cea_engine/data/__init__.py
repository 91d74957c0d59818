"""Trial data package: data model, CSV I/O and preprocessing filters."""

from cea_engine.data.models import (
    Arm,
    ClusterInfo,
    CovariateDef,
    CovariateSchema,
    MissingnessMask,
    Participant,
    TrialDataset,
    anova_components,
    combine_arms,
    empirical_icc,
)
from cea_engine.data.csv_io import load_csv, save_csv
from cea_engine.data.preprocess import filter_positive_costs, split_by_arm

__all__ = [
    'Arm',
    'ClusterInfo',
    'CovariateDef',
    'CovariateSchema',
    'MissingnessMask',
    'Participant',
    'TrialDataset',
    'anova_components',
    'combine_arms',
    'empirical_icc',
    'load_csv',
    'save_csv',
    'filter_positive_costs',
    'split_by_arm',
]
