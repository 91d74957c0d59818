"""
Parameter records and conditional densities of the bivariate cost/QALY model.

Conditional on cluster effects (u, w), cost has mean mu_C = beta1 + u and one
of three laws; QALY given cost is Normal with mean gamma1 + alpha * c + w and
variance sigma_q_sq.

Dispersion conventions:
    normal     variance sigma_c^2
    gamma      shape eta, rate eta / mu_C (so the CV is 1/sqrt(eta))
    lognormal  log C ~ N(log mu_C - log(1+eta)/2, log(1+eta)) so E[C] = mu_C
               and CV = sqrt(eta); with ``literal`` the location is mu_C itself.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np
from scipy import stats

from cea_engine.exceptions import ConfigurationError, LikelihoodEvaluationError


class CostKind(str, Enum):
    NORMAL = "normal"
    LOGNORMAL = "lognormal"
    GAMMA = "gamma"

    @classmethod
    def parse(cls, value) -> "CostKind":
        if isinstance(value, CostKind):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError as e:
            raise ConfigurationError(f"Unknown cost distribution: {value!r}") from e

    @property
    def positive(self) -> bool:
        """Whether the law lives on the positive half-line."""
        return self is not CostKind.NORMAL

    @property
    def short(self) -> str:
        return {"normal": "N", "lognormal": "L", "gamma": "G"}[self.value]


@dataclass(frozen=True)
class CostDistribution:
    kind: CostKind
    dispersion: float
    literal: bool = False

    def __post_init__(self):
        if not np.isfinite(self.dispersion) or self.dispersion <= 0:
            raise LikelihoodEvaluationError(f"Cost dispersion must be positive, got {self.dispersion}")

    @property
    def log_scale_variance(self) -> float:
        """Variance of log C for the Lognormal law."""
        return math.log1p(self.dispersion)


@dataclass(frozen=True)
class ClusterEffectCov:
    sigma_u_sq: float
    sigma_w_sq: float
    rho: float

    def __post_init__(self):
        if not (self.sigma_u_sq >= 0 and self.sigma_w_sq >= 0):
            raise LikelihoodEvaluationError("Cluster effect variances must be non-negative")
        if not (np.isfinite(self.rho) and abs(self.rho) <= 1):
            raise LikelihoodEvaluationError(f"Cluster effect correlation must lie in [-1, 1], got {self.rho}")

    @property
    def matrix(self) -> np.ndarray:
        cov = self.rho * math.sqrt(self.sigma_u_sq * self.sigma_w_sq)
        return np.array([[self.sigma_u_sq, cov], [cov, self.sigma_w_sq]])

    def factor(self) -> np.ndarray:
        """Lower-triangular L with L @ L.T equal to the covariance (valid when singular)."""
        sd_u, sd_w = math.sqrt(self.sigma_u_sq), math.sqrt(self.sigma_w_sq)
        return np.array([[sd_u, 0.0], [self.rho * sd_w, sd_w * math.sqrt(max(1.0 - self.rho ** 2, 0.0))]])


@dataclass(frozen=True)
class ArmParams:
    beta1: float
    gamma1: float
    alpha: float
    sigma_q_sq: float
    cost_dist: CostDistribution
    cluster_cov: ClusterEffectCov

    def __post_init__(self):
        if not (np.isfinite(self.sigma_q_sq) and self.sigma_q_sq > 0):
            raise LikelihoodEvaluationError(f"sigma_q_sq must be positive, got {self.sigma_q_sq}")
        if self.cost_dist.kind.positive and not self.cost_dist.literal and not self.beta1 > 0:
            raise LikelihoodEvaluationError(f"beta1 must be positive for {self.cost_dist.kind.value} costs")

    @property
    def kind(self) -> CostKind:
        return self.cost_dist.kind

    def with_cluster_cov(self, cluster_cov: ClusterEffectCov) -> "ArmParams":
        return replace(self, cluster_cov=cluster_cov)

    def conditional_cost_mean(self, u):
        """E[C | u] under the fitted law."""
        mu = self.beta1 + np.asarray(u, dtype=float)
        if self.cost_dist.literal and self.kind is CostKind.LOGNORMAL:
            return np.exp(mu + 0.5 * self.cost_dist.log_scale_variance)
        return mu

    def conditional_cost_variance(self, u):
        """Var[C | u] under the fitted law."""
        mean = self.conditional_cost_mean(u)
        eta = self.cost_dist.dispersion
        if self.kind is CostKind.NORMAL:
            return np.full_like(np.asarray(mean, dtype=float), eta)
        if self.kind is CostKind.GAMMA:
            return mean ** 2 / eta
        return mean ** 2 * eta

    @property
    def mean_cost(self) -> float:
        return float(self.conditional_cost_mean(0.0))

    @property
    def mean_qaly(self) -> float:
        return self.gamma1 + self.alpha * self.mean_cost


def cost_loglik(c: float, mu_c: float, dist: CostDistribution) -> float:
    """
    Log density of one cost given its conditional mean.

    Raises:
        LikelihoodEvaluationError: If mu_c is not positive for a positive law
            (returns -inf only for c outside the support at valid parameters).
    """
    kind = dist.kind
    if kind is CostKind.NORMAL:
        return float(stats.norm.logpdf(c, loc=mu_c, scale=math.sqrt(dist.dispersion)))
    if not dist.literal and not mu_c > 0:
        raise LikelihoodEvaluationError(f"Conditional mean cost must be positive, got {mu_c}")
    if not c > 0:
        return -math.inf
    if kind is CostKind.GAMMA:
        eta = dist.dispersion
        return float(stats.gamma.logpdf(c, a=eta, scale=mu_c / eta))
    s2 = dist.log_scale_variance
    location = mu_c if dist.literal else math.log(mu_c) - 0.5 * s2
    return float(stats.lognorm.logpdf(c, s=math.sqrt(s2), scale=math.exp(location)))


def qaly_cond_loglik(q: float, c: float, params: ArmParams, u: float, w: float) -> float:
    """Normal log density of a QALY given cost and cluster effects (u enters only through c)."""
    mean = params.gamma1 + params.alpha * c + w
    return float(-0.5 * math.log(2 * math.pi * params.sigma_q_sq) - (q - mean) ** 2 / (2 * params.sigma_q_sq))
