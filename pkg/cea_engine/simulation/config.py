"""
Simulation configuration.

A ``simulation`` YAML section describes the covariates shared by both arms
and, per arm, the number of clusters, the cluster-size law, the true model
parameters, optional covariate effects and the missingness mechanism of each
outcome.

Example:
    simulation:
      seed: 7
      covariates:
        epd: {kind: continuous, mean: 10, sd: 5}
        eth: {kind: binary, p: 0.2}
      arms:
        control:
          clusters: 40
          size: {law: uniform, low: 5, high: 40}
          params: {kind: gamma, beta1: 270, gamma1: 0.02, alpha: 1.0e-5, sigma_q_sq: 1.0e-4,
                   dispersion: 0.6, sigma_u_sq: 5000, sigma_w_sq: 1.0e-6, rho: 0.2}
          missingness:
            cost: {mechanism: mcar, rate: 0.3}
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from cea_engine.configs.settings import read_sections
from cea_engine.data.models import Arm, CovariateDef, CovariateSchema
from cea_engine.exceptions import CeaEngineError, NumericalError, SimulationError
from cea_engine.glmm.densities import ArmParams, ClusterEffectCov, CostDistribution, CostKind

SIZE_LAWS = ("fixed", "uniform", "informative")
MECHANISMS = ("none", "mcar", "mar")


def _known(cls, mapping: Mapping) -> dict:
    names = {f.name for f in fields(cls)}
    unknown = set(mapping) - names
    if unknown:
        raise SimulationError(f"{cls.__name__}: unknown keys {sorted(unknown)}")
    return dict(mapping)


@dataclass(frozen=True)
class CovariateGenerator:
    """Distribution of one baseline covariate."""
    name: str
    kind: str = "continuous"
    mean: float = 0.0
    sd: float = 1.0
    p: float = 0.5
    levels: Tuple[float, ...] = (1.0, 2.0, 3.0, 4.0, 5.0)

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(float(v) for v in self.levels))
        try:
            CovariateDef(self.name, self.kind)
        except CeaEngineError as e:
            raise SimulationError(str(e)) from e
        if self.sd < 0 or not 0 <= self.p <= 1 or not self.levels:
            raise SimulationError(f"Invalid generator for covariate {self.name}")

    @property
    def expectation(self) -> float:
        if self.kind == "continuous":
            return self.mean
        if self.kind == "binary":
            return self.p
        return float(np.mean(self.levels))

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "continuous":
            return rng.normal(self.mean, self.sd, n)
        if self.kind == "binary":
            return (rng.random(n) < self.p).astype(float)
        return rng.choice(np.asarray(self.levels), size=n)


@dataclass(frozen=True)
class SizeLaw:
    """Cluster sizes: ``fixed`` n, ``uniform`` on [low, high], or ``informative`` (linked to u)."""
    law: str = "fixed"
    n: int = 20
    low: int = 1
    high: int = 40
    strength: float = 1.0

    def __post_init__(self):
        if self.law not in SIZE_LAWS:
            raise SimulationError(f"Cluster size law must be one of {SIZE_LAWS}, got {self.law!r}")
        if self.n < 1 or self.low < 1 or self.high < self.low:
            raise SimulationError("Cluster sizes must be positive with low <= high")
        if not 0 <= self.strength <= 1:
            raise SimulationError("Informative size strength must lie in [0, 1]")


@dataclass(frozen=True)
class MissingnessMechanism:
    """``mcar`` with a rate, or ``mar`` with a logit on covariates and standardized cluster size."""
    mechanism: str = "none"
    rate: float = 0.0
    intercept: float = 0.0
    slopes: Dict[str, float] = field(default_factory=dict)
    size_slope: float = 0.0

    def __post_init__(self):
        if self.mechanism not in MECHANISMS:
            raise SimulationError(f"Missingness mechanism must be one of {MECHANISMS}, got {self.mechanism!r}")
        if not 0 <= self.rate < 1:
            raise SimulationError(f"Missingness rate must lie in [0, 1), got {self.rate}")

    @classmethod
    def from_mapping(cls, mapping: Optional[Mapping]) -> "MissingnessMechanism":
        values = _known(cls, mapping or {})
        values["slopes"] = {str(k): float(v) for k, v in (values.get("slopes") or {}).items()}
        return cls(**values)


@dataclass(frozen=True)
class ArmSimConfig:
    clusters: int
    params: ArmParams
    size: SizeLaw = field(default_factory=SizeLaw)
    cost_effects: Dict[str, float] = field(default_factory=dict)
    qaly_effects: Dict[str, float] = field(default_factory=dict)
    missing_cost: MissingnessMechanism = field(default_factory=MissingnessMechanism)
    missing_qaly: MissingnessMechanism = field(default_factory=MissingnessMechanism)

    def __post_init__(self):
        if self.clusters < 2:
            raise SimulationError(f"Each arm needs at least 2 clusters, got {self.clusters}")

    @classmethod
    def from_mapping(cls, mapping: Mapping) -> "ArmSimConfig":
        mapping = dict(mapping or {})
        params = mapping.get("params") or {}
        try:
            kind = CostKind.parse(params.get("kind", "normal"))
            arm_params = ArmParams(
                beta1=float(params["beta1"]), gamma1=float(params["gamma1"]), alpha=float(params.get("alpha", 0.0)),
                sigma_q_sq=float(params["sigma_q_sq"]),
                cost_dist=CostDistribution(kind, float(params["dispersion"]), bool(params.get("literal", False))),
                cluster_cov=ClusterEffectCov(float(params.get("sigma_u_sq", 0.0)),
                                             float(params.get("sigma_w_sq", 0.0)), float(params.get("rho", 0.0))),
            )
        except KeyError as e:
            raise SimulationError(f"Missing true parameter {e}") from e
        except (NumericalError, TypeError, ValueError) as e:
            raise SimulationError(f"Invalid true parameters: {e}") from e
        missing = mapping.get("missingness") or {}
        return cls(
            clusters=int(mapping.get("clusters", 0)),
            params=arm_params,
            size=SizeLaw(**_known(SizeLaw, mapping.get("size") or {})),
            cost_effects={str(k): float(v) for k, v in (mapping.get("cost_effects") or {}).items()},
            qaly_effects={str(k): float(v) for k, v in (mapping.get("qaly_effects") or {}).items()},
            missing_cost=MissingnessMechanism.from_mapping(missing.get("cost")),
            missing_qaly=MissingnessMechanism.from_mapping(missing.get("qaly")),
        )


@dataclass(frozen=True)
class SimConfig:
    control: ArmSimConfig
    intervention: ArmSimConfig
    covariates: Tuple[CovariateGenerator, ...] = ()
    seed: int = 20121

    def __post_init__(self):
        names = [c.name for c in self.covariates]
        if len(set(names)) != len(names):
            raise SimulationError(f"Duplicate covariate names: {names}")
        for arm in (self.control, self.intervention):
            mechanisms = (arm.missing_cost, arm.missing_qaly)
            referenced = set(arm.cost_effects) | set(arm.qaly_effects)
            referenced |= {k for m in mechanisms for k in m.slopes}
            unknown = referenced - set(names)
            if unknown:
                raise SimulationError(f"Effects or slopes reference unknown covariates: {sorted(unknown)}")

    def arm(self, arm: Arm) -> ArmSimConfig:
        return self.control if arm is Arm.CONTROL else self.intervention

    @property
    def schema(self) -> CovariateSchema:
        return CovariateSchema(tuple(CovariateDef(c.name, c.kind) for c in self.covariates))

    @classmethod
    def from_mapping(cls, mapping: Mapping) -> "SimConfig":
        """Build from the ``simulation`` section (or a mapping that contains it)."""
        mapping = dict(mapping or {})
        if "simulation" in mapping:
            mapping = dict(mapping["simulation"] or {})
        arms = mapping.get("arms") or {}
        if "control" not in arms or "intervention" not in arms:
            raise SimulationError("simulation.arms needs 'control' and 'intervention' entries")
        covariates = []
        for name, spec in (mapping.get("covariates") or {}).items():
            spec = dict(spec or {})
            if "levels" in spec:
                spec["levels"] = tuple(spec["levels"])
            covariates.append(CovariateGenerator(name=str(name), **_known(CovariateGenerator, spec)))
        return cls(
            control=ArmSimConfig.from_mapping(arms["control"]),
            intervention=ArmSimConfig.from_mapping(arms["intervention"]),
            covariates=tuple(covariates),
            seed=int(mapping.get("seed", 20121)),
        )

    @classmethod
    def from_file(cls, path) -> "SimConfig":
        return cls.from_mapping(read_sections(path))
