"""
Design matrices for the imputation model.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from cea_engine.data.models import TrialDataset
from cea_engine.exceptions import ConsistencyError, DegenerateDesignError
from cea_engine.imputation.spec import ImputationSpec


@dataclass(frozen=True)
class Design:
    """
    Predictors and responses of one arm.

    Attributes:
        X: (n, p) predictors, intercept first.
        Y: (n, 2) responses (log cost, QALY); NaN where missing.
        names: Predictor column names.
        codes: Cluster index per row.
        cluster_ids: Cluster id per code.
    """
    X: np.ndarray
    Y: np.ndarray
    names: Tuple[str, ...]
    codes: np.ndarray
    cluster_ids: Tuple[str, ...]

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.Y)

    @property
    def n_clusters(self) -> int:
        return len(self.cluster_ids)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.X.shape


def build_design(d: TrialDataset, spec: ImputationSpec) -> Design:
    """
    Assemble predictors (intercept + auxiliaries [+ cluster size]) and the
    (log cost, QALY) responses.

    Raises:
        SchemaError: An auxiliary is not a declared covariate.
        ConsistencyError: An auxiliary value is missing or an observed cost is not positive.
        DegenerateDesignError: The predictor columns are collinear.
    """
    spec.validate(d.schema)
    columns: List[np.ndarray] = [np.ones(len(d))]
    names = list(spec.predictor_names)
    if spec.auxiliaries:
        aux = d.covariate_matrix(list(spec.auxiliaries))
        bad = [name for name, col in zip(spec.auxiliaries, aux.T) if np.isnan(col).any()]
        if bad:
            raise ConsistencyError(f"Auxiliary covariates have missing values: {bad}")
        columns.extend(aux.T)
    if spec.cluster_size:
        columns.append(d.cluster_sizes())
    X = np.column_stack(columns)

    cost = d.costs()
    if np.any(cost[~np.isnan(cost)] <= 0):
        raise ConsistencyError("Observed costs must be positive before imputation on the log scale")
    with np.errstate(divide="ignore", invalid="ignore"):
        Y = np.column_stack([np.log(cost), d.qalys()])

    _check_rank(X, names)
    codes, ids = d.cluster_codes()
    return Design(X=X, Y=Y, names=tuple(names), codes=codes, cluster_ids=tuple(ids))


def _check_rank(X: np.ndarray, names: List[str]):
    """Raise naming every column that adds no rank to the columns before it."""
    if X.shape[0] < X.shape[1]:
        raise DegenerateDesignError(f"Design has {X.shape[1]} predictors but only {X.shape[0]} rows", names)
    scale = np.abs(X).max(axis=0)
    scaled = X / np.where(scale > 0, scale, 1.0)
    dependent = []
    rank = 0
    for j in range(X.shape[1]):
        new_rank = np.linalg.matrix_rank(scaled[:, : j + 1])
        if new_rank == rank:
            dependent.append(names[j])
        rank = new_rank
    if dependent:
        raise DegenerateDesignError(f"Collinear imputation predictors: {dependent}", dependent)
