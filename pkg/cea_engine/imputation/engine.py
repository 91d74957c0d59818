"""
Multiple imputation of missing costs and QALYs.

Each arm is imputed separately; the K retained Gibbs states become K
completed datasets in which only the originally missing cells differ.
"""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import yaml

from cea_engine.data.csv_io import load_csv, save_csv
from cea_engine.data.models import Arm, CovariateSchema, TrialDataset, combine_arms
from cea_engine.data.preprocess import split_by_arm
from cea_engine.exceptions import ConfigurationError, ConsistencyError
from cea_engine.imputation.design import build_design
from cea_engine.imputation.gibbs import GibbsSampler, ImputerState
from cea_engine.imputation.spec import ImputationSpec
from cea_engine.utils import logger

MANIFEST_NAME = "imputation.yaml"


@dataclass(frozen=True)
class CompletedSet:
    """K completed datasets with the spec and the Gibbs iterations they came from."""
    datasets: Tuple[TrialDataset, ...]
    spec: ImputationSpec
    draw_indices: Tuple[int, ...] = ()
    states: Tuple[ImputerState, ...] = ()

    def __post_init__(self):
        if any(not d.is_complete() for d in self.datasets):
            raise ConsistencyError("Completed datasets must not contain missing outcomes")

    @property
    def k(self) -> int:
        return len(self.datasets)

    def __iter__(self):
        return iter(self.datasets)

    def __getitem__(self, index) -> TrialDataset:
        return self.datasets[index]

    def save(self, directory, provenance: Optional[Sequence[str]] = None):
        """Write ``completed_01.csv`` ... ``completed_K.csv`` plus a small YAML manifest."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for i, dataset in enumerate(self.datasets, start=1):
            save_csv(dataset, directory / f"completed_{i:02d}.csv", provenance=provenance)
        manifest = {
            "spec": {**asdict(self.spec), "auxiliaries": list(self.spec.auxiliaries),
                     "responses": list(self.spec.responses)},
            "draw_indices": [int(i) for i in self.draw_indices],
            "schema": self.datasets[0].schema.to_mapping() if self.datasets else {},
        }
        with open(directory / MANIFEST_NAME, "w", encoding="utf-8") as f:
            yaml.safe_dump(manifest, f, sort_keys=True)
        logger.info("Saved %d completed datasets to %s", self.k, directory)

    @classmethod
    def load(cls, directory, schema: Optional[CovariateSchema] = None) -> "CompletedSet":
        directory = Path(directory)
        manifest_path = directory / MANIFEST_NAME
        if not manifest_path.exists():
            raise ConfigurationError(f"No {MANIFEST_NAME} in {directory}")
        with open(manifest_path, "r", encoding="utf-8") as f:
            manifest = yaml.safe_load(f) or {}
        if schema is None:
            schema = CovariateSchema.from_mapping(manifest.get("schema"))
        files = sorted(p for p in os.listdir(directory) if p.startswith("completed_") and p.endswith(".csv"))
        datasets = tuple(load_csv(directory / name, schema) for name in files)
        spec_values = dict(manifest.get("spec") or {})
        spec_values["responses"] = tuple(spec_values.get("responses") or ImputationSpec.responses)
        return cls(datasets=datasets, spec=ImputationSpec(**spec_values),
                   draw_indices=tuple(manifest.get("draw_indices") or ()))


def gibbs_run(d: TrialDataset, spec: ImputationSpec, rng: Optional[np.random.Generator] = None) -> CompletedSet:
    """
    Impute one arm with the Gibbs sampler.

    Args:
        d (TrialDataset): One arm; observed costs positive.
        spec (ImputationSpec): Imputation model and chain settings.
        rng (np.random.Generator): Random stream; seeded from ``spec.seed`` when None.

    Returns:
        CompletedSet: ``spec.k`` completed datasets. Costs are imputed on the
        log scale and exponentiated; observed cells are copied from ``d``.

    Raises:
        DegenerateDesignError: Collinear predictors.
        ImputationError: A covariance draw is not positive definite.
    """
    if len(d.arms) != 1:
        raise ConsistencyError("Imputation runs on one arm at a time; use impute_trial for both arms")
    design = build_design(d, spec)
    missing = design.missing
    if not missing.any():
        logger.info("No missing outcomes in the %s arm; returning %d copies", d.arms[0].label, spec.k)
        return CompletedSet(datasets=tuple(d for _ in range(spec.k)), spec=spec)

    logger.info("Imputing %d cost and %d QALY cells (%s, %d clusters, %d burn-in, spacing %d)",
                int(missing[:, 0].sum()), int(missing[:, 1].sum()), spec.describe(), design.n_clusters,
                spec.burn_in, spec.spacing)
    draws = GibbsSampler(design, spec, rng).run()
    cost, qaly = d.costs(), d.qalys()
    datasets = []
    for draw in draws:
        completed_cost = np.where(missing[:, 0], np.exp(draw.responses[:, 0]), cost)
        completed_qaly = np.where(missing[:, 1], draw.responses[:, 1], qaly)
        datasets.append(d.with_outcomes(completed_cost, completed_qaly))
    return CompletedSet(datasets=tuple(datasets), spec=spec,
                        draw_indices=tuple(draw.iteration for draw in draws),
                        states=tuple(draw.state for draw in draws))


def impute_single_level(d: TrialDataset, spec: ImputationSpec,
                        rng: Optional[np.random.Generator] = None) -> CompletedSet:
    """Single-level imputation (cluster effects fixed at zero)."""
    if spec.multilevel:
        raise ConfigurationError("impute_single_level needs a spec with multilevel=false")
    return gibbs_run(d, spec, rng)


def arm_seed(seed: int, key: int, arm: Arm) -> np.random.SeedSequence:
    """Independent stream for one (strategy, arm) pair derived from the master seed."""
    return np.random.SeedSequence([int(seed), int(key), int(arm)])


def impute_trial(d: TrialDataset, specs: Mapping[Arm, ImputationSpec], seed: int, key: int = 0,
                 executor=None) -> CompletedSet:
    """
    Impute both arms separately and merge them into K two-arm datasets.

    Args:
        d (TrialDataset): Two-arm dataset.
        specs: Imputation spec per arm; both must share ``k``.
        seed (int): Master seed.
        key (int): Strategy index mixed into the per-arm seeds.
        executor: Optional ``concurrent.futures`` executor running the arms concurrently.
    """
    control, intervention = split_by_arm(d)
    spec_c, spec_t = specs[Arm.CONTROL], specs[Arm.INTERVENTION]
    if spec_c.k != spec_t.k:
        raise ConfigurationError("Both arms must use the same number of imputations")

    def run(arm_data: Tuple[Arm, TrialDataset, ImputationSpec]) -> CompletedSet:
        arm, data, spec = arm_data
        return gibbs_run(data, spec, np.random.default_rng(arm_seed(seed, key, arm)))

    jobs = [(Arm.CONTROL, control, spec_c), (Arm.INTERVENTION, intervention, spec_t)]
    results = list(executor.map(run, jobs)) if executor is not None else [run(job) for job in jobs]
    merged = tuple(combine_arms(a, b) for a, b in zip(results[0].datasets, results[1].datasets))
    return CompletedSet(datasets=merged, spec=spec_c, draw_indices=results[0].draw_indices)


def imputation_spread(completed: CompletedSet, original: TrialDataset, outcome: str = "cost") -> float:
    """
    Across-imputation variance of cluster means of the imputed outcome,
    averaged over clusters that have at least one missing cell.
    """
    if outcome not in ("cost", "qaly"):
        raise ConfigurationError(f"outcome must be 'cost' or 'qaly', got {outcome!r}")
    frame = original.frame
    has_missing = frame.groupby("cluster_id", sort=False)[outcome].apply(lambda s: s.isna().any())
    clusters = has_missing[has_missing].index
    if len(clusters) == 0:
        return 0.0
    means = pd.DataFrame({i: c.frame.groupby("cluster_id", sort=False)[outcome].mean()
                          for i, c in enumerate(completed.datasets)})
    return float(means.loc[clusters].var(axis=1, ddof=1).mean())
