"""
Rubin's rules for combining estimates across imputed datasets.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from cea_engine.exceptions import PoolingError


@dataclass(frozen=True)
class EstimateDraw:
    """Estimate vector and its covariance from one completed dataset."""
    estimate: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        estimate = np.atleast_1d(np.asarray(self.estimate, dtype=float))
        covariance = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if estimate.ndim != 1 or covariance.shape != (len(estimate), len(estimate)):
            raise PoolingError(f"Covariance shape {covariance.shape} does not match estimate length {len(estimate)}")
        object.__setattr__(self, "estimate", estimate)
        object.__setattr__(self, "covariance", covariance)

    @property
    def dim(self) -> int:
        return len(self.estimate)


@dataclass(frozen=True)
class PooledEstimate:
    point: np.ndarray
    total_cov: np.ndarray
    within: np.ndarray
    between: np.ndarray
    df: np.ndarray
    k: int

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.total_cov))

    @property
    def fraction_missing_info(self) -> np.ndarray:
        """Per-component share of the total variance due to missing data, (1 + 1/K) B / T."""
        b = (1 + 1 / self.k) * np.diag(self.between)
        t = np.diag(self.total_cov)
        return np.divide(b, t, out=np.zeros_like(t), where=t > 0)


def _rubin_df(k: int, w: np.ndarray, b_inflated: np.ndarray) -> np.ndarray:
    df = np.full(len(w), math.inf)
    positive = b_inflated > 0
    df[positive] = (k - 1) * (1 + w[positive] / b_inflated[positive]) ** 2
    return df


def pool(draws: Sequence[EstimateDraw], complete_data_df: Optional[float] = None) -> PooledEstimate:
    """
    Combine K estimates with Rubin's rules.

    Args:
        draws: One ``EstimateDraw`` per completed dataset (K >= 2).
        complete_data_df: When given, apply the Barnard-Rubin small-sample
            degrees of freedom with this complete-data df.

    Returns:
        PooledEstimate: Q-bar, T = W + (1 + 1/K) B, W, B and per-component df
        (infinite where B is zero).

    Raises:
        PoolingError: Fewer than two draws or inconsistent dimensions.
    """
    draws = list(draws)
    k = len(draws)
    if k < 2:
        raise PoolingError(f"Pooling needs at least two imputations, got {k}")
    dims = {d.dim for d in draws}
    if len(dims) != 1:
        raise PoolingError(f"Inconsistent estimate dimensions: {sorted(dims)}")

    estimates = np.stack([d.estimate for d in draws])
    point = estimates.mean(axis=0)
    within = np.mean([d.covariance for d in draws], axis=0)
    centered = estimates - point
    between = centered.T @ centered / (k - 1)
    total = within + (1 + 1 / k) * between

    w = np.diag(within)
    b_inflated = (1 + 1 / k) * np.diag(between)
    df = _rubin_df(k, w, b_inflated)
    if complete_data_df is not None:
        if complete_data_df <= 0:
            raise PoolingError("complete_data_df must be positive")
        t = w + b_inflated
        gamma = np.divide(b_inflated, t, out=np.zeros_like(t), where=t > 0)
        observed = (complete_data_df + 1) / (complete_data_df + 3) * complete_data_df * (1 - gamma)
        df = np.where(np.isinf(df), observed, 1 / (1 / df + 1 / observed))
    return PooledEstimate(point=point, total_cov=total, within=within, between=between, df=df, k=k)
