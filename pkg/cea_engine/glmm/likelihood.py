"""
Marginal likelihood of the bivariate cluster random-effects model.

Each cluster's contribution integrates the product of its rows' conditional
densities over the bivariate Normal cluster effects (u, w). The integral is
evaluated on a tensor-product Gauss-Hermite grid after the change of
variables (u, w) = sqrt(2) L x with L L^T the effect covariance. Row products
are evaluated through per-cluster sufficient statistics, which is exact for
all three cost laws.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.special import gammaln, logsumexp

from cea_engine.exceptions import ConsistencyError
from cea_engine.glmm.densities import ArmParams, CostKind
from cea_engine.glmm.quadrature import QuadratureRule
from cea_engine.utils import logger

LOG_PI = math.log(math.pi)
LOG_2PI = math.log(2 * math.pi)


@dataclass(frozen=True)
class ClusterStats:
    """Sufficient statistics per cluster (arrays of length G)."""
    n: np.ndarray
    s_c: np.ndarray
    s_cc: np.ndarray
    s_logc: np.ndarray
    s_loglogc: np.ndarray
    s_q: np.ndarray
    s_qq: np.ndarray
    s_qc: np.ndarray
    all_positive: bool

    @classmethod
    def from_arrays(cls, cost, qaly, codes=None) -> "ClusterStats":
        """
        Aggregate complete rows by cluster.

        Args:
            cost, qaly: Row values (no missing entries).
            codes: Integer cluster index per row; a single cluster when None.
        """
        cost = np.asarray(cost, dtype=float)
        qaly = np.asarray(qaly, dtype=float)
        if cost.shape != qaly.shape or cost.ndim != 1 or len(cost) == 0:
            raise ConsistencyError("Cost and QALY vectors must be non-empty and of equal length")
        if np.isnan(cost).any() or np.isnan(qaly).any():
            raise ConsistencyError("Likelihood evaluation requires complete rows")
        codes = np.zeros(len(cost), dtype=int) if codes is None else np.asarray(codes, dtype=int)
        positive = bool(np.all(cost > 0))
        logc = np.log(np.where(cost > 0, cost, 1.0))
        frame = pd.DataFrame({
            "n": 1.0, "c": cost, "cc": cost ** 2, "lc": logc, "llc": logc ** 2,
            "q": qaly, "qq": qaly ** 2, "qc": qaly * cost,
        })
        sums = frame.groupby(codes, sort=True).sum()
        return cls(
            n=sums["n"].to_numpy(), s_c=sums["c"].to_numpy(), s_cc=sums["cc"].to_numpy(),
            s_logc=sums["lc"].to_numpy(), s_loglogc=sums["llc"].to_numpy(),
            s_q=sums["q"].to_numpy(), s_qq=sums["qq"].to_numpy(), s_qc=sums["qc"].to_numpy(),
            all_positive=positive,
        )

    @property
    def n_clusters(self) -> int:
        return len(self.n)

    def expand(self, ndim: int) -> "ClusterStats":
        """Reshape every statistic to (G, 1, ..., 1) for broadcasting against node grids."""
        shape = (-1,) + (1,) * ndim
        return ClusterStats(*(getattr(self, f).reshape(shape) for f in
                              ("n", "s_c", "s_cc", "s_logc", "s_loglogc", "s_q", "s_qq", "s_qc")),
                            all_positive=self.all_positive)


def _cost_part(stats: ClusterStats, params: ArmParams, u):
    dist = params.cost_dist
    eta = dist.dispersion
    n = stats.n
    mu = params.beta1 + u
    if dist.kind is CostKind.NORMAL:
        return -0.5 * n * math.log(2 * math.pi * eta) - (stats.s_cc - 2 * mu * stats.s_c + n * mu ** 2) / (2 * eta)
    if not stats.all_positive:
        return np.full(np.broadcast(n, mu).shape, -np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        if dist.kind is CostKind.GAMMA:
            value = (n * (eta * math.log(eta) - gammaln(eta)) - n * eta * np.log(mu)
                     + (eta - 1) * stats.s_logc - eta * stats.s_c / mu)
        else:
            s2 = dist.log_scale_variance
            location = mu if dist.literal else np.log(mu) - 0.5 * s2
            value = (-stats.s_logc - 0.5 * n * math.log(2 * math.pi * s2)
                     - (stats.s_loglogc - 2 * location * stats.s_logc + n * location ** 2) / (2 * s2))
    if dist.literal and dist.kind is CostKind.LOGNORMAL:
        return value
    # nodes with beta1 + u <= 0 lie outside the support of positive laws
    return np.where(mu > 0, value, -np.inf)


def _qaly_part(stats: ClusterStats, params: ArmParams, w):
    g, a, s2 = params.gamma1, params.alpha, params.sigma_q_sq
    n = stats.n
    s_r = stats.s_q - n * g - a * stats.s_c
    s_rr = (stats.s_qq + n * g ** 2 + a ** 2 * stats.s_cc - 2 * g * stats.s_q
            - 2 * a * stats.s_qc + 2 * g * a * stats.s_c)
    return -0.5 * n * math.log(2 * math.pi * s2) - (s_rr - 2 * w * s_r + n * w ** 2) / (2 * s2)


def conditional_loglik(stats: ClusterStats, params: ArmParams, u, w):
    """Joint log density of each cluster's rows given cluster effects (u, w)."""
    return _cost_part(stats, params, u) + _qaly_part(stats, params, w)


def _grid_loglik(stats: ClusterStats, params: ArmParams, rule: QuadratureRule) -> np.ndarray:
    L = params.cluster_cov.factor()
    x = rule.nodes
    root2 = math.sqrt(2.0)
    u = (root2 * L[0, 0] * x).reshape(1, -1, 1)
    w = root2 * (L[1, 0] * x.reshape(1, -1, 1) + L[1, 1] * x.reshape(1, 1, -1))
    s = stats.expand(2)
    values = _cost_part(s, params, u) + _qaly_part(s, params, w)
    log_w = rule.log_weights
    values = values + log_w.reshape(1, -1, 1) + log_w.reshape(1, 1, -1)
    if params.kind.positive and not params.cost_dist.literal:
        outside = int(np.sum(params.beta1 + u <= 0))
        if outside:
            logger.debug("%d quadrature nodes fall outside the cost support and are dropped", outside)
    return logsumexp(values, axis=(1, 2)) - LOG_PI


def _standardized_h(stats3: ClusterStats, params: ArmParams, L: np.ndarray, z: np.ndarray) -> np.ndarray:
    # z: (G, m, 2) standard-normal coordinates of (u, w)
    u = L[0, 0] * z[..., 0]
    w = L[1, 0] * z[..., 0] + L[1, 1] * z[..., 1]
    s = ClusterStats(*(getattr(stats3, f)[..., 0] for f in
                       ("n", "s_c", "s_cc", "s_logc", "s_loglogc", "s_q", "s_qq", "s_qc")),
                     all_positive=stats3.all_positive)
    return conditional_loglik(s, params, u, w) - 0.5 * np.sum(z ** 2, axis=-1)


def _posterior_modes(stats: ClusterStats, params: ArmParams, L: np.ndarray, max_iter: int = 30,
                     step: float = 1e-3):
    """Vectorized damped Newton for the mode and curvature of each cluster's integrand."""
    G = stats.n_clusters
    s3 = stats.expand(2)
    z = np.zeros((G, 2))
    e1, e2 = np.array([step, 0.0]), np.array([0.0, step])
    offsets = np.stack([np.zeros(2), e1, -e1, e2, -e2, e1 + e2, e1 - e2, -e1 + e2, -e1 - e2])

    def derivatives(z):
        h = _standardized_h(s3, params, L, z[:, None, :] + offsets[None, :, :])
        grad = np.stack([(h[:, 1] - h[:, 2]) / (2 * step), (h[:, 3] - h[:, 4]) / (2 * step)], axis=1)
        h11 = (h[:, 1] - 2 * h[:, 0] + h[:, 2]) / step ** 2
        h22 = (h[:, 3] - 2 * h[:, 0] + h[:, 4]) / step ** 2
        h12 = (h[:, 5] - h[:, 6] - h[:, 7] + h[:, 8]) / (4 * step ** 2)
        hess = np.stack([np.stack([h11, h12], -1), np.stack([h12, h22], -1)], -2)
        return h[:, 0], grad, hess

    for _ in range(max_iter):
        value, grad, hess = derivatives(z)
        if np.max(np.abs(grad)) < 1e-8:
            break
        neg = -hess
        det = neg[:, 0, 0] * neg[:, 1, 1] - neg[:, 0, 1] ** 2
        pd_ok = (neg[:, 0, 0] > 0) & (det > 0)
        direction = np.where(pd_ok[:, None], np.linalg.solve(np.where(pd_ok[:, None, None], neg, np.eye(2)),
                                                            grad[..., None])[..., 0], grad)
        t = np.ones(G)
        for _ in range(20):
            trial = z + t[:, None] * direction
            improved = _standardized_h(s3, params, L, trial[:, None, :])[:, 0] >= value
            if improved.all():
                break
            t = np.where(improved, t, 0.5 * t)
        accept = _standardized_h(s3, params, L, (z + t[:, None] * direction)[:, None, :])[:, 0] >= value
        z = np.where(accept[:, None], z + t[:, None] * direction, z)

    _, _, hess = derivatives(z)
    scale = np.empty_like(hess)
    for g in range(G):
        try:
            scale[g] = np.linalg.cholesky(np.linalg.inv(-hess[g]))
        except np.linalg.LinAlgError:
            scale[g] = np.eye(2)
    return z, scale


def _adaptive_loglik(stats: ClusterStats, params: ArmParams, rule: QuadratureRule) -> np.ndarray:
    L = params.cluster_cov.factor()
    modes, scale = _posterior_modes(stats, params, L)
    x = rule.nodes
    t = np.stack(np.meshgrid(x, x, indexing="ij"), axis=-1).reshape(-1, 2)
    log_w = (rule.log_weights[:, None] + rule.log_weights[None, :]).reshape(-1)
    z = modes[:, None, :] + math.sqrt(2.0) * np.einsum("gij,mj->gmi", scale, t)
    h = _standardized_h(stats.expand(2), params, L, z)
    log_det = np.log(scale[:, 0, 0]) + np.log(scale[:, 1, 1])
    return log_det - LOG_PI + logsumexp(h + np.sum(t ** 2, axis=1)[None, :] + log_w[None, :], axis=1)


def marginal_loglik_by_cluster(stats: ClusterStats, params: ArmParams, rule: QuadratureRule,
                               adaptive: bool = False) -> np.ndarray:
    """Marginal log-likelihood contribution of every cluster."""
    if adaptive:
        return _adaptive_loglik(stats, params, rule)
    return _grid_loglik(stats, params, rule)


def total_loglik(stats: ClusterStats, params: ArmParams, rule: QuadratureRule, adaptive: bool = False) -> float:
    return float(np.sum(marginal_loglik_by_cluster(stats, params, rule, adaptive)))


def cluster_marginal_loglik(cost, qaly, params: ArmParams, rule: QuadratureRule, adaptive: bool = False) -> float:
    """
    Marginal log-likelihood of one cluster's complete rows.

    Args:
        cost, qaly: The cluster's row values.
        params (ArmParams): Model parameters.
        rule (QuadratureRule): Gauss-Hermite rule used on each effect axis.
        adaptive (bool): Centre and scale the grid on the cluster's posterior mode.
    """
    stats = ClusterStats.from_arrays(cost, qaly)
    return float(marginal_loglik_by_cluster(stats, params, rule, adaptive)[0])
