"""
Imputation model specification and the missing-data strategies it encodes.
"""
from __future__ import annotations

from dataclasses import dataclass, fields, replace
from enum import Enum
from typing import Mapping, Optional, Tuple

from cea_engine.data.models import Arm, CovariateSchema
from cea_engine.exceptions import ConfigurationError, SchemaError

RESPONSES = ("log_cost", "qaly")


class Strategy(str, Enum):
    """Missing-data strategies: complete cases, single-level and multilevel MI (optionally with cluster size)."""
    CC = "cc"
    SL = "sl"
    SL_C = "sl_c"
    ML = "ml"
    ML_C = "ml_c"

    @classmethod
    def parse(cls, value) -> "Strategy":
        if isinstance(value, Strategy):
            return value
        try:
            return cls(str(value).strip().lower().replace("-", "_"))
        except ValueError as e:
            raise ConfigurationError(f"Unknown missing-data strategy: {value!r}") from e

    @property
    def imputes(self) -> bool:
        return self is not Strategy.CC

    @property
    def multilevel(self) -> bool:
        return self in (Strategy.ML, Strategy.ML_C)

    @property
    def cluster_size(self) -> bool:
        return self in (Strategy.SL_C, Strategy.ML_C)

    @property
    def label(self) -> str:
        return self.value.upper().replace("_", "-")


@dataclass(frozen=True)
class ImputationSpec:
    """
    Declarative imputation model for one arm.

    The responses are always (log cost, QALY). Predictors are an intercept,
    the auxiliary covariates and, when ``cluster_size`` is set, the
    randomized cluster size.
    """
    auxiliaries: Tuple[str, ...] = ()
    cluster_size: bool = False
    multilevel: bool = True
    k: int = 5
    burn_in: int = 1000
    spacing: int = 500
    seed: int = 20121
    responses: Tuple[str, ...] = RESPONSES

    def __post_init__(self):
        object.__setattr__(self, "auxiliaries", tuple(str(a) for a in self.auxiliaries))
        if tuple(self.responses) != RESPONSES:
            raise ConfigurationError(f"Responses are fixed as {RESPONSES}")
        if int(self.k) < 2:
            raise ConfigurationError(f"Number of imputations k must be at least 2, got {self.k}")
        if int(self.burn_in) < 0 or int(self.spacing) < 1:
            raise ConfigurationError("burn_in must be >= 0 and spacing >= 1")
        if len(set(self.auxiliaries)) != len(self.auxiliaries):
            raise ConfigurationError(f"Duplicate auxiliaries: {list(self.auxiliaries)}")

    @classmethod
    def from_mapping(cls, mapping: Optional[Mapping], arm: Optional[Arm] = None) -> "ImputationSpec":
        """
        Build from an ``imputation`` section.

        ``auxiliaries`` is either a list used for both arms or a mapping
        ``{control: [...], intervention: [...]}``; ``imputations`` is
        accepted as an alias of ``k``.
        """
        values = dict(mapping or {})
        if "imputations" in values:
            values.setdefault("k", values.pop("imputations"))
        aux = values.get("auxiliaries") or ()
        if isinstance(aux, Mapping):
            aux = aux.get(arm.label, ()) if arm is not None else ()
        if isinstance(aux, str):
            aux = [a.strip() for a in aux.split("+") if a.strip()]
        values["auxiliaries"] = tuple(aux or ())
        names = {f.name for f in fields(cls)}
        try:
            return cls(**{k: v for k, v in values.items() if k in names})
        except TypeError as e:
            raise ConfigurationError(f"Invalid imputation section: {e}") from e

    def for_strategy(self, strategy) -> "ImputationSpec":
        """The spec with (multilevel, cluster_size) set by an SL/SL-C/ML/ML-C strategy."""
        strategy = Strategy.parse(strategy)
        if not strategy.imputes:
            raise ConfigurationError("Complete-case analysis has no imputation model")
        return replace(self, multilevel=strategy.multilevel, cluster_size=strategy.cluster_size)

    def with_seed(self, seed: int) -> "ImputationSpec":
        return replace(self, seed=int(seed))

    def validate(self, schema: CovariateSchema):
        """Every auxiliary must be a declared covariate."""
        unknown = [a for a in self.auxiliaries if a not in schema]
        if unknown:
            raise SchemaError(f"Auxiliaries not in the covariate schema: {unknown}")

    @property
    def predictor_names(self) -> Tuple[str, ...]:
        return ("intercept",) + self.auxiliaries + (("cluster_size",) if self.cluster_size else ())

    def describe(self) -> str:
        """Short label in the style ``epd+eco+eth+n_i``."""
        parts = list(self.auxiliaries) + (["n_i"] if self.cluster_size else [])
        level = "ML" if self.multilevel else "SL"
        return f"{level}: {'+'.join(parts) if parts else 'intercept only'}"
