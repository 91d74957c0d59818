import math

import numpy as np
import pytest
from scipy import stats

from cea_engine.exceptions import ConsistencyError
from cea_engine.glmm.densities import (
    ArmParams,
    ClusterEffectCov,
    CostDistribution,
    CostKind,
    cost_loglik,
    qaly_cond_loglik,
)
from cea_engine.glmm.fit import pack, unpack
from cea_engine.glmm.likelihood import ClusterStats, cluster_marginal_loglik, total_loglik
from cea_engine.glmm.optimizer import numerical_gradient
from cea_engine.glmm.quadrature import gauss_hermite

COST = np.array([1.2, 0.7, 1.9])
QALY = np.array([0.41, 0.38, 0.47])


def params(kind=CostKind.NORMAL, dispersion=0.3, sigma_u_sq=0.4, sigma_w_sq=0.002, rho=0.4, beta1=1.1):
    return ArmParams(beta1=beta1, gamma1=0.35, alpha=0.04, sigma_q_sq=0.003,
                     cost_dist=CostDistribution(kind, dispersion),
                     cluster_cov=ClusterEffectCov(sigma_u_sq, sigma_w_sq, rho))


def joint_normal(n, p):
    """Mean and covariance of the stacked (costs, QALYs) of one n-row cluster under Normal costs."""
    # latent vector (u, w, e_c[0..n), e_q[0..n))
    A = np.zeros((2 * n, 2 + 2 * n))
    A[:n, 0] = 1.0
    A[:n, 2:2 + n] = np.eye(n)
    A[n:, 0] = p.alpha
    A[n:, 1] = 1.0
    A[n:, 2:2 + n] = p.alpha * np.eye(n)
    A[n:, 2 + n:] = np.eye(n)
    latent = np.zeros((2 + 2 * n, 2 + 2 * n))
    latent[:2, :2] = p.cluster_cov.matrix
    latent[2:2 + n, 2:2 + n] = p.cost_dist.dispersion * np.eye(n)
    latent[2 + n:, 2 + n:] = p.sigma_q_sq * np.eye(n)
    mean = np.r_[np.full(n, p.beta1), np.full(n, p.gamma1 + p.alpha * p.beta1)]
    return mean, A @ latent @ A.T


def closed_form_normal(cost, qaly, p):
    """Exact log-likelihood of one cluster under Normal costs: (c, q) is jointly Normal."""
    mean, cov = joint_normal(len(cost), p)
    return stats.multivariate_normal(mean, cov).logpdf(np.r_[cost, qaly])


@pytest.mark.parametrize("kind", list(CostKind))
def test_zero_variance_reduces_to_row_sum(kind):
    p = params(kind, sigma_u_sq=0.0, sigma_w_sq=0.0, rho=0.0)
    expected = sum(cost_loglik(c, p.beta1, p.cost_dist) + qaly_cond_loglik(q, c, p, 0.0, 0.0)
                   for c, q in zip(COST, QALY))
    assert cluster_marginal_loglik(COST, QALY, p, gauss_hermite(5)) == pytest.approx(expected, abs=1e-10)


def test_normal_matches_closed_form():
    p = params()
    value = cluster_marginal_loglik(COST, QALY, p, gauss_hermite(30))
    assert value == pytest.approx(closed_form_normal(COST, QALY, p), abs=1e-6)


def test_adaptive_matches_closed_form():
    p = params()
    value = cluster_marginal_loglik(COST, QALY, p, gauss_hermite(10), adaptive=True)
    assert value == pytest.approx(closed_form_normal(COST, QALY, p), abs=1e-5)


def test_total_is_sum_over_clusters():
    p = params(CostKind.GAMMA, dispersion=3.0)
    rule = gauss_hermite(20)
    cost = np.r_[COST, COST * 1.5]
    qaly = np.r_[QALY, QALY + 0.02]
    codes = np.repeat([0, 1], 3)
    total = total_loglik(ClusterStats.from_arrays(cost, qaly, codes), p, rule)
    parts = cluster_marginal_loglik(COST, QALY, p, rule) + cluster_marginal_loglik(COST * 1.5, QALY + 0.02, p, rule)
    assert total == pytest.approx(parts, rel=1e-12)


def test_order_increase_converges():
    p = params(CostKind.LOGNORMAL, dispersion=0.2, sigma_u_sq=0.01)
    values = [cluster_marginal_loglik(COST, QALY, p, gauss_hermite(k)) for k in (20, 40, 70)]
    assert abs(values[2] - values[1]) < 1e-6
    assert all(math.isfinite(v) for v in values)


def test_gradient_in_beta1_vanishes_at_profile_maximum():
    # for Normal costs without cluster effects, the beta1 maximizer is the cost mean
    rule = gauss_hermite(5)
    mean = float(COST.mean())

    def ll(beta1):
        return cluster_marginal_loglik(COST, QALY, params(beta1=beta1, sigma_u_sq=0.0, sigma_w_sq=0.0), rule)

    h = 1e-5
    # the QALY part conditions on the observed cost and does not move with beta1
    assert (ll(mean + h) - ll(mean - h)) / (2 * h) == pytest.approx(0.0, abs=1e-6)
    assert ll(mean) > ll(mean + 0.1)


def test_non_positive_costs_have_no_gamma_support():
    p = params(CostKind.GAMMA, dispersion=2.0)
    value = cluster_marginal_loglik(np.array([1.0, 0.0]), np.array([0.4, 0.4]), p, gauss_hermite(10))
    assert value == -math.inf


def test_stats_reject_missing_rows():
    with pytest.raises(ConsistencyError):
        ClusterStats.from_arrays([1.0, np.nan], [0.3, 0.4])


def random_normal_case(seed, clusters=3):
    """Parameters and data drawn from the Normal-cost model itself."""
    rng = np.random.default_rng(seed)
    p = ArmParams(beta1=rng.uniform(0.5, 2.0), gamma1=rng.uniform(0.2, 0.6), alpha=rng.uniform(-0.05, 0.05),
                  sigma_q_sq=rng.uniform(2e-3, 5e-3),
                  cost_dist=CostDistribution(CostKind.NORMAL, rng.uniform(0.2, 1.0)),
                  cluster_cov=ClusterEffectCov(rng.uniform(0.05, 0.5), rng.uniform(5e-4, 3e-3),
                                               rng.uniform(-0.8, 0.8)))
    L = p.cluster_cov.factor()
    cost, qaly, codes = [], [], []
    for g in range(clusters):
        u, w = L @ rng.standard_normal(2)
        n = int(rng.integers(1, 5))
        c = p.beta1 + u + math.sqrt(p.cost_dist.dispersion) * rng.standard_normal(n)
        q = p.gamma1 + p.alpha * c + w + math.sqrt(p.sigma_q_sq) * rng.standard_normal(n)
        cost.append(c)
        qaly.append(q)
        codes.append(np.full(n, g))
    return p, np.concatenate(cost), np.concatenate(qaly), np.concatenate(codes)


def closed_form_total(cost, qaly, codes, p):
    return sum(closed_form_normal(cost[codes == g], qaly[codes == g], p) for g in np.unique(codes))


@pytest.mark.parametrize("seed", range(50))
def test_normal_matches_closed_form_on_random_parameters(seed):
    p, cost, qaly, codes = random_normal_case(seed)
    value = total_loglik(ClusterStats.from_arrays(cost, qaly, codes), p, gauss_hermite(30))
    assert value == pytest.approx(closed_form_total(cost, qaly, codes, p), abs=1e-8)


@pytest.mark.parametrize("seed", range(100, 110))
def test_quadrature_gradient_matches_closed_form_gradient(seed):
    p, cost, qaly, codes = random_normal_case(seed)
    clusters = ClusterStats.from_arrays(cost, qaly, codes)
    rule = gauss_hermite(30)
    theta = pack({"beta1": p.beta1, "gamma1": p.gamma1, "alpha": p.alpha, "sigma_q_sq": p.sigma_q_sq,
                  "dispersion": p.cost_dist.dispersion, "sigma_u_sq": p.cluster_cov.sigma_u_sq,
                  "sigma_w_sq": p.cluster_cov.sigma_w_sq, "rho": p.cluster_cov.rho})

    def quadrature(t):
        return total_loglik(clusters, unpack(t, CostKind.NORMAL, False), rule)

    def exact(t):
        return closed_form_total(cost, qaly, codes, unpack(t, CostKind.NORMAL, False))

    grad = numerical_gradient(quadrature, theta, 1e-4)

    # mean parameters: d/dmu of the joint Normal log-density is Sigma^-1 (x - mu)
    p0 = unpack(theta, CostKind.NORMAL, False)
    d_beta1 = d_gamma1 = 0.0
    for g in np.unique(codes):
        c, q = cost[codes == g], qaly[codes == g]
        n = len(c)
        mean, cov = joint_normal(n, p0)
        score = np.linalg.solve(cov, np.r_[c, q] - mean)
        d_beta1 += score[:n].sum() + p0.alpha * score[n:].sum()
        d_gamma1 += score[n:].sum()
    assert grad[0] == pytest.approx(d_beta1, rel=1e-5, abs=1e-6)
    assert grad[1] == pytest.approx(d_gamma1, rel=1e-5, abs=1e-6)

    h = 1e-5
    for j in range(2, len(theta)):
        step = np.zeros_like(theta)
        step[j] = h
        central = (exact(theta + step) - exact(theta - step)) / (2 * h)
        assert grad[j] == pytest.approx(central, rel=1e-5, abs=1e-6)
