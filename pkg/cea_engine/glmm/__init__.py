from cea_engine.glmm.quadrature import QuadratureRule, gauss_hermite
from cea_engine.glmm.densities import (
    ArmParams,
    ClusterEffectCov,
    CostDistribution,
    CostKind,
    cost_loglik,
    qaly_cond_loglik,
)
from cea_engine.glmm.likelihood import (
    ClusterStats,
    cluster_marginal_loglik,
    marginal_loglik_by_cluster,
    total_loglik,
)
from cea_engine.glmm.optimizer import NewtonResult, newton_maximize
from cea_engine.glmm.fit import ArmFit, FitOptions, fit_arm, fit_arrays, implied_correlation

__all__ = [
    "QuadratureRule",
    "gauss_hermite",
    "ArmParams",
    "ClusterEffectCov",
    "CostDistribution",
    "CostKind",
    "cost_loglik",
    "qaly_cond_loglik",
    "ClusterStats",
    "cluster_marginal_loglik",
    "marginal_loglik_by_cluster",
    "total_loglik",
    "NewtonResult",
    "newton_maximize",
    "ArmFit",
    "FitOptions",
    "fit_arm",
    "fit_arrays",
    "implied_correlation",
]
