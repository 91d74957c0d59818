"""
Trial data model

In-memory representation of a two-arm cluster-randomized cost-effectiveness
dataset. A ``TrialDataset`` wraps a private pandas frame (one row per
participant) together with the cluster table and the covariate schema. It is
never mutated after construction; every transformation returns a new dataset.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Dict, Iterator, List, Mapping, Optional, Tuple

import numpy as np
import pandas as pd

from cea_engine.exceptions import ConsistencyError, SchemaError

MANDATORY_COLUMNS = ("cluster_id", "arm", "cost", "qaly")
COVARIATE_KINDS = ("continuous", "binary", "ordinal")


class Arm(IntEnum):
    """Treatment arm, encoded 0/1 in files."""
    CONTROL = 0
    INTERVENTION = 1

    @classmethod
    def parse(cls, value) -> "Arm":
        text = str(value).strip().lower()
        aliases = {"0": cls.CONTROL, "control": cls.CONTROL,
                   "1": cls.INTERVENTION, "intervention": cls.INTERVENTION, "treatment": cls.INTERVENTION}
        if text not in aliases:
            raise SchemaError(f"Unknown arm label: {value!r}")
        return aliases[text]

    @property
    def label(self) -> str:
        return self.name.lower()


@dataclass(frozen=True)
class CovariateDef:
    name: str
    kind: str = "continuous"

    def __post_init__(self):
        if self.kind not in COVARIATE_KINDS:
            raise SchemaError(f"Covariate {self.name}: kind must be one of {COVARIATE_KINDS}, got {self.kind!r}")
        if self.name in MANDATORY_COLUMNS:
            raise SchemaError(f"Covariate name clashes with a mandatory column: {self.name}")


@dataclass(frozen=True)
class CovariateSchema:
    """Names and kinds of the baseline covariates carried by a dataset."""
    covariates: Tuple[CovariateDef, ...] = ()

    @classmethod
    def from_mapping(cls, mapping: Optional[Mapping[str, str]]) -> "CovariateSchema":
        """Build from a ``{name: kind}`` section."""
        if not mapping:
            return cls()
        if not isinstance(mapping, Mapping):
            raise SchemaError("Schema section must map covariate names to kinds")
        return cls(tuple(CovariateDef(str(name), str(kind)) for name, kind in mapping.items()))

    @property
    def names(self) -> List[str]:
        return [c.name for c in self.covariates]

    def kind_of(self, name: str) -> str:
        for c in self.covariates:
            if c.name == name:
                return c.kind
        raise SchemaError(f"Covariate not in schema: {name}")

    def to_mapping(self) -> Dict[str, str]:
        return {c.name: c.kind for c in self.covariates}

    def __contains__(self, name) -> bool:
        return name in self.names


@dataclass(frozen=True)
class Participant:
    cluster_id: str
    arm: Arm
    cost: Optional[float]
    qaly: Optional[float]
    covariates: Mapping[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class ClusterInfo:
    """A randomized cluster; ``size`` is the number randomized (pre-filter rows)."""
    cluster_id: str
    size: int
    arm: Arm


@dataclass(frozen=True)
class MissingnessMask:
    r_cost: np.ndarray
    r_qaly: np.ndarray

    def totals(self) -> Dict[str, int]:
        return {"cost_missing": int((self.r_cost == 0).sum()), "qaly_missing": int((self.r_qaly == 0).sum())}


class TrialDataset:
    """
    Immutable two-arm cluster-randomized CEA dataset.

    Example:
        >>> d = TrialDataset.from_frame(frame, schema)
        >>> control, intervention = split_by_arm(d)
    """

    def __init__(self, frame: pd.DataFrame, clusters: Mapping[str, ClusterInfo], schema: CovariateSchema):
        frame = frame.reset_index(drop=True).copy()
        frame["cluster_id"] = frame["cluster_id"].astype(str)
        frame["arm"] = frame["arm"].astype(int)
        frame["cost"] = frame["cost"].astype(float)
        frame["qaly"] = frame["qaly"].astype(float)
        for name in schema.names:
            frame[name] = frame[name].astype(float)
        self._frame = frame[list(MANDATORY_COLUMNS) + schema.names]
        self._clusters = dict(clusters)
        self._schema = schema
        self._validate()

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, schema: CovariateSchema = CovariateSchema(),
                   sizes: Optional[Mapping[str, int]] = None) -> "TrialDataset":
        """Build a dataset; cluster sizes default to the row counts of ``frame``."""
        missing = [c for c in MANDATORY_COLUMNS + tuple(schema.names) if c not in frame.columns]
        if missing:
            raise SchemaError(f"Missing columns: {missing}")
        frame = frame.copy()
        frame["cluster_id"] = frame["cluster_id"].astype(str)
        grouped = frame.groupby("cluster_id", sort=False)["arm"]
        n_arms, first_arm, counts = grouped.nunique(), grouped.first(), grouped.size()
        clusters = {}
        for cluster_id in counts.index:
            if n_arms[cluster_id] > 1:
                raise ConsistencyError(f"Cluster {cluster_id} has rows in both arms")
            size = int(sizes[cluster_id]) if sizes is not None and cluster_id in sizes else int(counts[cluster_id])
            clusters[cluster_id] = ClusterInfo(cluster_id, size, Arm(int(first_arm[cluster_id])))
        return cls(frame, clusters, schema)

    def _validate(self):
        unknown = set(self._frame["cluster_id"]) - set(self._clusters)
        if unknown:
            raise ConsistencyError(f"Rows reference unknown clusters: {sorted(unknown)[:5]}")
        declared = self._frame["cluster_id"].map(lambda c: int(self._clusters[c].arm))
        conflicting = self._frame.loc[declared != self._frame["arm"], "cluster_id"]
        if len(conflicting):
            raise ConsistencyError(f"Cluster {conflicting.iloc[0]} has rows in both arms")
        if (self._frame["cost"] < 0).any():
            raise ConsistencyError("Costs must be non-negative")

    # --- Accessors ---
    @property
    def frame(self) -> pd.DataFrame:
        """A copy of the participant table."""
        return self._frame.copy()

    @property
    def schema(self) -> CovariateSchema:
        return self._schema

    @property
    def clusters(self) -> Dict[str, ClusterInfo]:
        return dict(self._clusters)

    @property
    def cluster_ids(self) -> List[str]:
        """Cluster ids in order of first appearance."""
        return list(pd.unique(self._frame["cluster_id"]))

    @property
    def participants(self) -> Iterator[Participant]:
        names = self._schema.names
        for row in self._frame.itertuples(index=False):
            values = row._asdict()
            yield Participant(
                cluster_id=values["cluster_id"],
                arm=Arm(values["arm"]),
                cost=None if np.isnan(values["cost"]) else float(values["cost"]),
                qaly=None if np.isnan(values["qaly"]) else float(values["qaly"]),
                covariates={n: float(values[n]) for n in names},
            )

    @property
    def mask(self) -> MissingnessMask:
        return MissingnessMask(
            r_cost=self._frame["cost"].notna().to_numpy(dtype=int),
            r_qaly=self._frame["qaly"].notna().to_numpy(dtype=int),
        )

    @property
    def arms(self) -> List[Arm]:
        return sorted(Arm(a) for a in set(self._frame["arm"]))

    def __len__(self) -> int:
        return len(self._frame)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TrialDataset):
            return NotImplemented
        return (self._schema == other._schema and self._clusters == other._clusters
                and self._frame.equals(other._frame))

    def __repr__(self) -> str:
        return f"TrialDataset(rows={len(self)}, clusters={len(self._clusters)}, covariates={self._schema.names})"

    def costs(self) -> np.ndarray:
        return self._frame["cost"].to_numpy(dtype=float)

    def qalys(self) -> np.ndarray:
        return self._frame["qaly"].to_numpy(dtype=float)

    def covariate_matrix(self, names: List[str]) -> np.ndarray:
        for name in names:
            if name not in self._schema:
                raise SchemaError(f"Covariate not in schema: {name}")
        return self._frame[names].to_numpy(dtype=float)

    def cluster_codes(self) -> Tuple[np.ndarray, List[str]]:
        """Integer cluster index per row and the matching id list."""
        codes, uniques = pd.factorize(self._frame["cluster_id"], sort=False)
        return codes.astype(int), [str(u) for u in uniques]

    def cluster_sizes(self) -> np.ndarray:
        """Randomized cluster size per row."""
        return self._frame["cluster_id"].map(lambda c: self._clusters[c].size).to_numpy(dtype=float)

    def is_complete(self) -> bool:
        return bool(self._frame[["cost", "qaly"]].notna().all().all())

    # --- Derived datasets ---
    def subset(self, rows: np.ndarray) -> "TrialDataset":
        """Rows selected by a boolean mask; clusters without rows are dropped, sizes kept."""
        frame = self._frame[np.asarray(rows, dtype=bool)]
        kept = set(frame["cluster_id"])
        return TrialDataset(frame, {k: v for k, v in self._clusters.items() if k in kept}, self._schema)

    def complete_cases(self) -> "TrialDataset":
        """Drop every row with a missing outcome."""
        return self.subset(self._frame[["cost", "qaly"]].notna().all(axis=1).to_numpy())

    def with_outcomes(self, cost: np.ndarray, qaly: np.ndarray) -> "TrialDataset":
        """Copy with outcome columns replaced (row order unchanged)."""
        frame = self._frame.copy()
        frame["cost"] = np.asarray(cost, dtype=float)
        frame["qaly"] = np.asarray(qaly, dtype=float)
        return TrialDataset(frame, self._clusters, self._schema)

    def missing_summary(self) -> pd.DataFrame:
        """Missing n and percentage per outcome and arm."""
        rows = []
        for arm in self.arms:
            part = self._frame[self._frame["arm"] == int(arm)]
            for outcome in ("cost", "qaly"):
                missing = int(part[outcome].isna().sum())
                rows.append({"arm": arm.label, "outcome": outcome, "total_n": len(part),
                             "missing_n": missing, "missing_pct": round(100.0 * missing / max(len(part), 1), 1)})
        return pd.DataFrame(rows)


def combine_arms(first: TrialDataset, second: TrialDataset) -> TrialDataset:
    """Concatenate two datasets that share a schema (e.g. completed arms)."""
    if first.schema != second.schema:
        raise SchemaError("Cannot combine datasets with different covariate schemas")
    overlap = set(first.clusters) & set(second.clusters)
    if overlap:
        raise ConsistencyError(f"Clusters present in both datasets: {sorted(overlap)[:5]}")
    frame = pd.concat([first.frame, second.frame], ignore_index=True)
    return TrialDataset(frame, {**first.clusters, **second.clusters}, first.schema)


def empirical_icc(values: np.ndarray, clusters: np.ndarray) -> float:
    """One-way ANOVA intra-cluster correlation (unbalanced-design n0 correction)."""
    values = np.asarray(values, dtype=float)
    codes, _ = pd.factorize(np.asarray(clusters), sort=False)
    return anova_components(values, codes)[2]


def anova_components(values: np.ndarray, codes: np.ndarray) -> Tuple[float, float, float]:
    """Between variance, within variance and ICC from a one-way ANOVA."""
    groups = pd.Series(values).groupby(codes)
    sizes = groups.size().to_numpy(dtype=float)
    means = groups.mean().to_numpy()
    n, g = len(values), len(sizes)
    if g < 2 or n <= g:
        return 0.0, float(np.var(values)), 0.0
    grand = values.mean()
    msb = float(np.sum(sizes * (means - grand) ** 2) / (g - 1))
    msw = float(np.sum((values - means[codes]) ** 2) / (n - g))
    n0 = (n - np.sum(sizes ** 2) / n) / (g - 1)
    between = max((msb - msw) / n0, 0.0)
    total = between + msw
    return between, msw, (between / total if total > 0 else 0.0)
