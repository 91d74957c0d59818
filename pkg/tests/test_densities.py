import math

import numpy as np
import pytest
from scipy import integrate

from cea_engine.exceptions import ConfigurationError, LikelihoodEvaluationError
from cea_engine.glmm.densities import (
    ArmParams,
    ClusterEffectCov,
    CostDistribution,
    CostKind,
    cost_loglik,
    qaly_cond_loglik,
)


def make_params(kind=CostKind.GAMMA, dispersion=2.0, literal=False, beta1=300.0):
    return ArmParams(beta1=beta1, gamma1=0.5, alpha=1e-4, sigma_q_sq=0.01,
                     cost_dist=CostDistribution(kind, dispersion, literal),
                     cluster_cov=ClusterEffectCov(900.0, 0.002, 0.3))


def test_gamma_shape_one_is_exponential():
    assert cost_loglik(1.0, 1.0, CostDistribution(CostKind.GAMMA, 1.0)) == pytest.approx(-1.0)


def test_gamma_shape_two():
    value = cost_loglik(2.0, 1.0, CostDistribution(CostKind.GAMMA, 2.0))
    assert value == pytest.approx(math.log(8.0) - 4.0)


def test_normal_cost_density():
    value = cost_loglik(3.0, 1.0, CostDistribution(CostKind.NORMAL, 4.0))
    assert value == pytest.approx(-0.5 * math.log(2 * math.pi * 4.0) - 0.5)


def test_lognormal_targets_the_mean():
    dist = CostDistribution(CostKind.LOGNORMAL, 0.5)
    mean, _ = integrate.quad(lambda c: c * math.exp(cost_loglik(c, 200.0, dist)), 0, np.inf, limit=200)
    assert mean == pytest.approx(200.0, rel=1e-5)


def test_lognormal_literal_location():
    dist = CostDistribution(CostKind.LOGNORMAL, 0.5, literal=True)
    params = make_params(CostKind.LOGNORMAL, 0.5, literal=True, beta1=5.0)
    assert params.mean_cost == pytest.approx(math.exp(5.0 + 0.5 * math.log1p(0.5)))
    # a literal location may be negative
    assert math.isfinite(cost_loglik(1.0, -0.5, dist))


def test_positive_laws_outside_support():
    dist = CostDistribution(CostKind.GAMMA, 2.0)
    assert cost_loglik(0.0, 10.0, dist) == -math.inf
    with pytest.raises(LikelihoodEvaluationError):
        cost_loglik(5.0, 0.0, dist)


def test_invalid_dispersion_raises():
    with pytest.raises(LikelihoodEvaluationError):
        CostDistribution(CostKind.NORMAL, 0.0)


def test_cluster_covariance_factor():
    cc = ClusterEffectCov(4.0, 9.0, -0.25)
    L = cc.factor()
    assert np.allclose(L @ L.T, cc.matrix)
    assert cc.matrix[0, 1] == pytest.approx(-1.5)


def test_cluster_covariance_rejects_bad_rho():
    with pytest.raises(LikelihoodEvaluationError):
        ClusterEffectCov(1.0, 1.0, 1.5)


def test_qaly_density_at_its_mean():
    params = make_params()
    c, w = 250.0, 0.01
    q = params.gamma1 + params.alpha * c + w
    value = qaly_cond_loglik(q, c, params, u=123.0, w=w)
    assert value == pytest.approx(-0.5 * math.log(2 * math.pi * params.sigma_q_sq))


def test_marginal_means():
    params = make_params()
    assert params.mean_cost == pytest.approx(300.0)
    assert params.mean_qaly == pytest.approx(0.5 + 1e-4 * 300.0)


def test_conditional_variances():
    gamma = make_params(CostKind.GAMMA, 2.0)
    lognormal = make_params(CostKind.LOGNORMAL, 0.25)
    assert gamma.conditional_cost_variance(0.0) == pytest.approx(300.0 ** 2 / 2.0)
    assert lognormal.conditional_cost_variance(0.0) == pytest.approx(300.0 ** 2 * 0.25)


def test_parse_cost_kind():
    assert CostKind.parse(" Gamma ") is CostKind.GAMMA
    assert CostKind.LOGNORMAL.short == "L"
    with pytest.raises(ConfigurationError):
        CostKind.parse("weibull")
