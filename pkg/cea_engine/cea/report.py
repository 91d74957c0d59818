"""
Cost-effectiveness summaries: increments, incremental net benefit (INB) and
INB curves over a willingness-to-pay grid.

The arms are estimated independently, so the covariance of the increments is
the sum of the per-arm covariances. Intervals use the standard Normal for
complete-data fits and Student-t with the smallest pooled df after multiple
imputation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from cea_engine.exceptions import ConfigurationError
from cea_engine.glmm.fit import ArmFit
from cea_engine.pooling.rubin import PooledEstimate
from cea_engine.utils import write_table

CURVE_COLUMNS = ["lambda", "inb", "se", "ci_low", "ci_high"]


@dataclass(frozen=True)
class ArmSummary:
    """Mean cost and QALY of one arm with their covariance and reference df."""
    mean_cost: float
    mean_qaly: float
    cov: np.ndarray
    df: float = math.inf
    corr_cq: float = float("nan")

    @classmethod
    def from_fit(cls, fit: ArmFit) -> "ArmSummary":
        return cls(fit.mean_cost, fit.mean_qaly, np.asarray(fit.cov_means), math.inf, fit.correlation_cq)

    @classmethod
    def from_pooled(cls, pooled: PooledEstimate, corr_cq: float = float("nan")) -> "ArmSummary":
        if len(pooled.point) != 2:
            raise ConfigurationError("A pooled arm summary needs the (mean cost, mean QALY) pair")
        return cls(float(pooled.point[0]), float(pooled.point[1]), np.asarray(pooled.total_cov),
                   float(np.min(pooled.df)), corr_cq)

    @classmethod
    def coerce(cls, value) -> "ArmSummary":
        if isinstance(value, ArmSummary):
            return value
        if isinstance(value, ArmFit):
            return cls.from_fit(value)
        if isinstance(value, PooledEstimate):
            return cls.from_pooled(value)
        raise ConfigurationError(f"Cannot summarize {type(value).__name__} as an arm estimate")

    @property
    def se_cost(self) -> float:
        return math.sqrt(max(self.cov[0, 0], 0.0))

    @property
    def se_qaly(self) -> float:
        return math.sqrt(max(self.cov[1, 1], 0.0))


@dataclass(frozen=True)
class Increments:
    delta_c: float
    delta_q: float
    cov: np.ndarray
    df: float = math.inf

    @property
    def se_c(self) -> float:
        return math.sqrt(max(self.cov[0, 0], 0.0))

    @property
    def se_q(self) -> float:
        return math.sqrt(max(self.cov[1, 1], 0.0))


@dataclass(frozen=True)
class InbPoint:
    lam: float
    inb: float
    se: float
    ci_low: float
    ci_high: float

    def as_row(self) -> dict:
        return {"lambda": self.lam, "inb": self.inb, "se": self.se, "ci_low": self.ci_low, "ci_high": self.ci_high}


def increments(fit_control, fit_treat) -> Increments:
    """Treatment minus control; covariances add because the arms are independent."""
    control, treat = ArmSummary.coerce(fit_control), ArmSummary.coerce(fit_treat)
    return Increments(
        delta_c=treat.mean_cost - control.mean_cost,
        delta_q=treat.mean_qaly - control.mean_qaly,
        cov=np.asarray(treat.cov) + np.asarray(control.cov),
        df=min(control.df, treat.df),
    )


def _quantile(level: float, df: float) -> float:
    if not 0 < level < 1:
        raise ConfigurationError(f"Confidence level must lie in (0, 1), got {level}")
    upper = 0.5 + level / 2
    return float(stats.norm.ppf(upper) if math.isinf(df) else stats.t.ppf(upper, df))


def inb(inc: Increments, lam: float, level: float = 0.95) -> InbPoint:
    """
    INB(lambda) = lambda * delta_q - delta_c with a symmetric interval.

    Raises:
        ConfigurationError: Negative lambda or level outside (0, 1).
    """
    if lam < 0:
        raise ConfigurationError(f"Willingness to pay must be non-negative, got {lam}")
    value = lam * inc.delta_q - inc.delta_c
    var = lam ** 2 * inc.cov[1, 1] + inc.cov[0, 0] - 2 * lam * inc.cov[0, 1]
    se = math.sqrt(max(var, 0.0))
    half = _quantile(level, inc.df) * se
    return InbPoint(lam=float(lam), inb=float(value), se=se, ci_low=float(value - half), ci_high=float(value + half))


def inb_curve(inc: Increments, lambda_grid: Sequence[float], level: float = 0.95) -> List[InbPoint]:
    grid = np.asarray(list(lambda_grid), dtype=float)
    if grid.size == 0:
        raise ConfigurationError("Willingness-to-pay grid is empty")
    if np.any(grid < 0) or np.any(np.diff(grid) <= 0):
        raise ConfigurationError("Willingness-to-pay grid must be non-negative and ascending")
    return [inb(inc, float(lam), level) for lam in grid]


def curve_frame(curve: Sequence[InbPoint]) -> pd.DataFrame:
    return pd.DataFrame([p.as_row() for p in curve], columns=CURVE_COLUMNS)


@dataclass(frozen=True)
class CeaSummary:
    """Arm summaries, increments, INB at the reference threshold and the INB curve."""
    control: ArmSummary
    intervention: ArmSummary
    increments: Increments
    reference: InbPoint
    curve: List[InbPoint] = field(default_factory=list)
    strategy: str = ""
    dist: str = ""

    @classmethod
    def build(cls, fit_control, fit_treat, lambda_grid: Sequence[float], level: float = 0.95,
              reference_lambda: float = 20000.0, strategy: str = "", dist: str = "") -> "CeaSummary":
        control, treat = ArmSummary.coerce(fit_control), ArmSummary.coerce(fit_treat)
        inc = increments(control, treat)
        return cls(control=control, intervention=treat, increments=inc, reference=inb(inc, reference_lambda, level),
                   curve=inb_curve(inc, lambda_grid, level), strategy=strategy, dist=dist)

    def arm_table(self) -> pd.DataFrame:
        """One row per arm: mean cost, SE, mean QALYs, SE, corr(c, q)."""
        rows = []
        for label, arm in (("control", self.control), ("intervention", self.intervention)):
            rows.append({"strategy": self.strategy, "dist": self.dist, "arm": label,
                         "mean_cost": arm.mean_cost, "se_cost": arm.se_cost,
                         "mean_qaly": arm.mean_qaly, "se_qaly": arm.se_qaly, "corr_cq": arm.corr_cq})
        return pd.DataFrame(rows)

    def increment_row(self) -> dict:
        """Incremental cost and QALYs with SEs and the INB at the reference threshold."""
        inc, ref = self.increments, self.reference
        return {"strategy": self.strategy, "dist": self.dist,
                "delta_c": inc.delta_c, "se_delta_c": inc.se_c, "delta_q": inc.delta_q, "se_delta_q": inc.se_q,
                "lambda": ref.lam, "inb": ref.inb, "se_inb": ref.se, "ci_low": ref.ci_low, "ci_high": ref.ci_high}

    def curve_frame(self) -> pd.DataFrame:
        return curve_frame(self.curve)

    def write_curve_csv(self, path, provenance: Optional[Sequence[str]] = None):
        write_table(self.curve_frame(), path, provenance)
