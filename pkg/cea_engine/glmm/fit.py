"""
Per-arm maximum-likelihood fit of the bivariate cluster random-effects model.

The fit maximizes the quadrature marginal log-likelihood on an unconstrained
vector

    [beta1, gamma1, alpha, log sigma_q_sq, log dispersion,
     log sigma_u_sq, log sigma_w_sq, atanh rho]

after rescaling cost and QALY to unit scale. It runs Newton-Raphson from a
moment-based start and a perturbed start, keeps the better converged
solution, and derives the covariance of (mean cost, mean QALY) from the
inverse observed information by the delta method.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import statsmodels.api as sm
from statsmodels.tools.numdiff import approx_fprime

from cea_engine.data.models import TrialDataset, anova_components
from cea_engine.exceptions import (
    ConfigurationError,
    ConsistencyError,
    ConvergenceError,
    NumericalError,
    SingularInformationError,
)
from cea_engine.glmm.densities import ArmParams, ClusterEffectCov, CostDistribution, CostKind
from cea_engine.glmm.likelihood import ClusterStats, total_loglik
from cea_engine.glmm.optimizer import NewtonResult, newton_maximize
from cea_engine.glmm.quadrature import gauss_hermite
from cea_engine.utils import logger

PARAM_NAMES = ("beta1", "gamma1", "alpha", "log_sigma_q_sq", "log_dispersion",
               "log_sigma_u_sq", "log_sigma_w_sq", "atanh_rho")
VARIANCE_COMPONENTS = (5, 6, 7)
START_KEYS = ("beta1", "gamma1", "alpha", "sigma_q_sq", "dispersion", "sigma_u_sq", "sigma_w_sq", "rho")
RHO_BOUND = 1 - 1e-10


@dataclass(frozen=True)
class FitOptions:
    """Options of the per-arm fit; ``start`` overrides starting values (original units)."""
    quadrature_order: int = 70
    adaptive: bool = False
    lognormal_literal: bool = False
    gradient_tolerance: float = 1e-6
    relative_tolerance: float = 1e-10
    max_iterations: int = 200
    hessian_step: float = 1e-4
    start: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not 1 <= int(self.quadrature_order) <= 200:
            raise ConfigurationError("quadrature_order must lie in [1, 200]")
        if self.gradient_tolerance <= 0 or self.relative_tolerance <= 0 or self.hessian_step <= 0:
            raise ConfigurationError("Tolerances and the Hessian step must be positive")
        if self.max_iterations < 1:
            raise ConfigurationError("max_iterations must be at least 1")
        unknown = set(self.start) - set(START_KEYS)
        if unknown:
            raise ConfigurationError(f"Unknown starting-value overrides: {sorted(unknown)}")

    @classmethod
    def from_mapping(cls, mapping: Optional[dict]) -> "FitOptions":
        """Create options from a ``fit`` section, ignoring unrelated keys."""
        mapping = dict(mapping or {})
        if "adaptive_quadrature" in mapping:
            mapping.setdefault("adaptive", mapping.pop("adaptive_quadrature"))
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in mapping.items() if k in names})

    @classmethod
    def from_config(cls, config) -> "FitOptions":
        return cls(
            quadrature_order=int(config.quadrature_order),
            adaptive=bool(config.adaptive_quadrature),
            lognormal_literal=bool(config.lognormal_literal),
            gradient_tolerance=float(config.gradient_tolerance),
            relative_tolerance=float(config.relative_tolerance),
            max_iterations=int(config.max_iterations),
            hessian_step=float(config.hessian_step),
        )


@dataclass(frozen=True)
class ArmFit:
    params: ArmParams
    mean_cost: float
    mean_qaly: float
    cov_means: np.ndarray
    loglik: float
    converged: bool
    correlation_cq: float
    n_clusters: int = 0
    n_rows: int = 0
    iterations: int = 0
    start_logliks: Tuple[float, ...] = ()

    @property
    def kind(self) -> CostKind:
        return self.params.kind

    @property
    def se_cost(self) -> float:
        return math.sqrt(max(self.cov_means[0, 0], 0.0))

    @property
    def se_qaly(self) -> float:
        return math.sqrt(max(self.cov_means[1, 1], 0.0))

    def icc_cost(self) -> float:
        """Implied intra-cluster correlation of cost."""
        var_c, _ = _cost_moments(self.params)
        return self.params.cluster_cov.sigma_u_sq / var_c if var_c > 0 else 0.0

    def icc_qaly(self) -> float:
        """Share of the conditional QALY variance due to clusters."""
        cc = self.params.cluster_cov
        return cc.sigma_w_sq / (cc.sigma_w_sq + self.params.sigma_q_sq)

    def param_table(self) -> pd.DataFrame:
        p = self.params
        rows = [("beta1", p.beta1), ("gamma1", p.gamma1), ("alpha", p.alpha), ("sigma_q_sq", p.sigma_q_sq),
                ("dispersion", p.cost_dist.dispersion), ("sigma_u_sq", p.cluster_cov.sigma_u_sq),
                ("sigma_w_sq", p.cluster_cov.sigma_w_sq), ("rho", p.cluster_cov.rho)]
        return pd.DataFrame(rows, columns=["parameter", "estimate"])


class _Scaling:
    """Maps between original units and the unit-scale data the optimizer sees."""

    def __init__(self, cost: np.ndarray, qaly: np.ndarray, kind: CostKind, literal: bool):
        self.kind = kind
        self.literal = literal and kind is CostKind.LOGNORMAL
        self.a = float(np.sqrt(np.mean(cost ** 2))) or 1.0
        self.q_center = float(np.mean(qaly))
        sd = float(np.std(qaly))
        self.b = sd if sd > 0 else 1.0

    def data(self, cost, qaly):
        return cost / self.a, (qaly - self.q_center) / self.b

    def jacobian_term(self, n_rows: int) -> float:
        return -n_rows * (math.log(self.a) + math.log(self.b))

    def to_external(self, p: ArmParams) -> ArmParams:
        a, b = self.a, self.b
        cc = p.cluster_cov
        if self.literal:
            beta1, sigma_u_sq = p.beta1 + math.log(a), cc.sigma_u_sq
        else:
            beta1, sigma_u_sq = a * p.beta1, a * a * cc.sigma_u_sq
        disp = p.cost_dist.dispersion * (a * a if self.kind is CostKind.NORMAL else 1.0)
        return ArmParams(
            beta1=beta1, gamma1=self.q_center + b * p.gamma1, alpha=b * p.alpha / a,
            sigma_q_sq=b * b * p.sigma_q_sq,
            cost_dist=CostDistribution(self.kind, disp, self.literal),
            cluster_cov=ClusterEffectCov(sigma_u_sq, b * b * cc.sigma_w_sq, cc.rho),
        )

    def to_internal_values(self, values: Dict[str, float]) -> Dict[str, float]:
        a, b = self.a, self.b
        out = dict(values)
        if "beta1" in out:
            out["beta1"] = out["beta1"] - math.log(a) if self.literal else out["beta1"] / a
        if "sigma_u_sq" in out and not self.literal:
            out["sigma_u_sq"] = out["sigma_u_sq"] / (a * a)
        if "dispersion" in out and self.kind is CostKind.NORMAL:
            out["dispersion"] = out["dispersion"] / (a * a)
        if "gamma1" in out:
            out["gamma1"] = (out["gamma1"] - self.q_center) / b
        if "alpha" in out:
            out["alpha"] = out["alpha"] * a / b
        for key in ("sigma_q_sq", "sigma_w_sq"):
            if key in out:
                out[key] = out[key] / (b * b)
        return out


def pack(values: Dict[str, float]) -> np.ndarray:
    rho = float(np.clip(values["rho"], -0.99, 0.99))
    return np.array([
        values["beta1"], values["gamma1"], values["alpha"], math.log(values["sigma_q_sq"]),
        math.log(values["dispersion"]), math.log(values["sigma_u_sq"]), math.log(values["sigma_w_sq"]),
        math.atanh(rho),
    ])


def unpack(theta: np.ndarray, kind: CostKind, literal: bool) -> ArmParams:
    """Unconstrained vector to model parameters (raises on invalid values)."""
    with np.errstate(over="raise"):
        try:
            exps = np.exp(theta[3:7])
        except FloatingPointError as e:
            raise NumericalError("Variance parameter overflow") from e
    rho = float(np.clip(np.tanh(theta[7]), -RHO_BOUND, RHO_BOUND))
    return ArmParams(
        beta1=float(theta[0]), gamma1=float(theta[1]), alpha=float(theta[2]), sigma_q_sq=float(exps[0]),
        cost_dist=CostDistribution(kind, float(exps[1]), literal),
        cluster_cov=ClusterEffectCov(float(exps[2]), float(exps[3]), rho),
    )


def _moment_start(cost, qaly, codes, kind: CostKind, literal: bool) -> Dict[str, float]:
    """Moment-based starting values on the internal scale."""
    level = np.log(cost) if literal else cost
    beta1 = float(np.mean(level))
    ols = sm.OLS(qaly, sm.add_constant(cost, has_constant="add")).fit()
    gamma1, alpha = (float(v) for v in ols.params)
    resid = qaly - ols.fittedvalues
    between_c, within_c, _ = anova_components(level, codes)
    between_q, within_q, _ = anova_components(np.asarray(resid), codes)
    within_c = max(within_c, 1e-8)
    within_q = max(within_q, 1e-8)
    if kind is CostKind.NORMAL:
        dispersion = within_c
    elif kind is CostKind.GAMMA:
        dispersion = beta1 ** 2 / within_c
    elif literal:
        dispersion = math.expm1(within_c)
    else:
        dispersion = within_c / beta1 ** 2
    mean_c = pd.Series(level).groupby(codes).mean()
    mean_r = pd.Series(np.asarray(resid)).groupby(codes).mean()
    rho = float(np.corrcoef(mean_c, mean_r)[0, 1]) if len(mean_c) > 2 else 0.0
    return {
        "beta1": beta1, "gamma1": gamma1, "alpha": alpha, "sigma_q_sq": within_q,
        "dispersion": max(dispersion, 1e-6), "sigma_u_sq": max(between_c, 0.01 * within_c),
        "sigma_w_sq": max(between_q, 0.01 * within_q),
        "rho": float(np.clip(np.nan_to_num(rho), -0.5, 0.5)),
    }


def _perturbed_start(start: Dict[str, float], kind: CostKind) -> Dict[str, float]:
    """Doubles every dispersion-type quantity (halves the Gamma shape) and halves alpha."""
    out = dict(start)
    for key in ("sigma_q_sq", "sigma_u_sq", "sigma_w_sq"):
        out[key] = 2.0 * start[key]
    out["dispersion"] = start["dispersion"] / 2.0 if kind is CostKind.GAMMA else 2.0 * start["dispersion"]
    out["alpha"] = 0.5 * start["alpha"]
    return out


def _cost_moments(params: ArmParams, order: int = 30) -> Tuple[float, float]:
    """Var(C) and Cov(C, w) implied by the model, integrating over u."""
    cc = params.cluster_cov
    sd_u = math.sqrt(cc.sigma_u_sq)
    rule = gauss_hermite(order)
    u = math.sqrt(2.0) * sd_u * rule.nodes
    weights = rule.weights / math.sqrt(math.pi)
    if params.kind.positive and not params.cost_dist.literal:
        weights = np.where(params.beta1 + u > 0, weights, 0.0)
        weights = weights / weights.sum()
    m = params.conditional_cost_mean(u)
    v = params.conditional_cost_variance(u)
    mean_m = float(np.sum(weights * m))
    var_c = float(np.sum(weights * v) + np.sum(weights * (m - mean_m) ** 2))
    cov_cw = 0.0
    if sd_u > 0:
        cov_mu = float(np.sum(weights * (m - mean_m) * u))
        cov_cw = cc.rho * math.sqrt(cc.sigma_w_sq) / sd_u * cov_mu
    return var_c, cov_cw


def implied_correlation(params: ArmParams) -> float:
    """Individual-level corr(C, Q) implied by the fitted model."""
    var_c, cov_cw = _cost_moments(params)
    a = params.alpha
    cov_cq = a * var_c + cov_cw
    var_q = a * a * var_c + params.cluster_cov.sigma_w_sq + params.sigma_q_sq + 2 * a * cov_cw
    if var_c <= 0 or var_q <= 0:
        return 0.0
    return float(np.clip(cov_cq / math.sqrt(var_c * var_q), -1.0, 1.0))


def _information_inverse(hessian: np.ndarray) -> np.ndarray:
    """Inverse observed information; flat variance-component directions are held at the boundary."""
    info = -np.asarray(hessian, dtype=float)
    keep = np.ones(len(info), dtype=bool)
    diag = np.diag(info)
    scale = max(np.max(np.abs(diag)), 1e-300)
    flat = np.abs(diag) < 1e-8 * scale
    if flat.any():
        if any(i not in VARIANCE_COMPONENTS for i in np.flatnonzero(flat)):
            raise SingularInformationError("Information matrix is singular in the mean parameters")
        keep &= ~flat
    for _ in range(len(VARIANCE_COMPONENTS) + 1):
        sub = info[np.ix_(keep, keep)]
        try:
            np.linalg.cholesky(sub)
            break
        except np.linalg.LinAlgError:
            # drop the weakest remaining variance component and retry
            candidates = [i for i in VARIANCE_COMPONENTS if keep[i]]
            if not candidates:
                raise SingularInformationError("Observed information matrix is not positive definite")
            weakest = min(candidates, key=lambda i: abs(info[i, i]))
            keep[weakest] = False
    else:
        raise SingularInformationError("Observed information matrix is not positive definite")
    if not keep.all():
        logger.warning("Variance components %s are at the boundary; treated as fixed for standard errors",
                       [PARAM_NAMES[i] for i in np.flatnonzero(~keep)])
    cov = np.zeros_like(info)
    cov[np.ix_(keep, keep)] = np.linalg.inv(info[np.ix_(keep, keep)])
    return cov


def fit_arrays(cost, qaly, codes, kind, opts: Optional[FitOptions] = None) -> ArmFit:
    """
    Fit one arm from complete row arrays.

    Args:
        cost, qaly: Outcome vectors without missing entries.
        codes: Integer cluster index per row.
        kind: Cost distribution (``CostKind`` or its name).
        opts (FitOptions): Quadrature and optimizer settings.

    Raises:
        ConsistencyError: Fewer than two clusters or rows, incomplete rows,
            or non-positive costs under a positive law.
        ConvergenceError: Neither starting point converged.
        SingularInformationError: The information matrix cannot be inverted.
    """
    opts = opts or FitOptions()
    kind = CostKind.parse(kind)
    literal = opts.lognormal_literal and kind is CostKind.LOGNORMAL
    cost = np.asarray(cost, dtype=float)
    qaly = np.asarray(qaly, dtype=float)
    codes = pd.factorize(np.asarray(codes), sort=False)[0]
    n_clusters = int(codes.max()) + 1 if len(codes) else 0
    if np.isnan(cost).any() or np.isnan(qaly).any():
        raise ConsistencyError("fit_arm requires complete rows")
    if len(cost) < 2 or n_clusters < 2:
        raise ConsistencyError(f"fit_arm needs at least 2 clusters and 2 rows, got {n_clusters} and {len(cost)}")
    if kind.positive and np.any(cost <= 0):
        raise ConsistencyError(f"{kind.value} costs must be positive; apply filter_positive_costs first")

    scaling = _Scaling(cost, qaly, kind, literal)
    c_int, q_int = scaling.data(cost, qaly)
    stats = ClusterStats.from_arrays(c_int, q_int, codes)
    rule = gauss_hermite(int(opts.quadrature_order))

    def objective(theta):
        return total_loglik(stats, unpack(theta, kind, literal), rule, opts.adaptive)

    first = _moment_start(c_int, q_int, codes, kind, literal)
    first.update(scaling.to_internal_values(opts.start))
    starts = [first, _perturbed_start(first, kind)]

    results: List[NewtonResult] = []
    for i, start in enumerate(starts):
        try:
            result = newton_maximize(objective, pack(start), opts.gradient_tolerance, opts.relative_tolerance,
                                     opts.max_iterations, opts.hessian_step)
        except NumericalError as e:
            logger.warning("Start %d failed for %s fit: %s", i + 1, kind.value, e)
            continue
        logger.debug("Start %d (%s): loglik=%.8f converged=%s after %d iterations (%s)", i + 1, kind.value,
                     result.value, result.converged, result.iterations, result.message)
        results.append(result)

    converged = [r for r in results if r.converged]
    if not converged:
        best = max(results, key=lambda r: r.value) if results else None
        diagnostics = {} if best is None else {
            "loglik": best.value, "iterations": best.iterations, "message": best.message,
            "max_abs_gradient": float(np.max(np.abs(best.gradient))),
            "theta": dict(zip(PARAM_NAMES, best.x.tolist())),
        }
        raise ConvergenceError(f"{kind.value} fit did not converge from either starting point", diagnostics)
    best = max(converged, key=lambda r: r.value)

    theta_cov = _information_inverse(best.hessian)

    def means(theta):
        p = scaling.to_external(unpack(theta, kind, literal))
        return np.array([p.mean_cost, p.mean_qaly])

    jac = np.atleast_2d(approx_fprime(best.x, means, epsilon=1e-6, centered=True))
    cov_means = jac @ theta_cov @ jac.T
    cov_means = 0.5 * (cov_means + cov_means.T)
    params = scaling.to_external(unpack(best.x, kind, literal))
    fit = ArmFit(
        params=params, mean_cost=params.mean_cost, mean_qaly=params.mean_qaly, cov_means=cov_means,
        loglik=best.value + scaling.jacobian_term(len(cost)), converged=True,
        correlation_cq=implied_correlation(params), n_clusters=n_clusters, n_rows=len(cost),
        iterations=best.iterations, start_logliks=tuple(r.value + scaling.jacobian_term(len(cost)) for r in results),
    )
    logger.info("Fitted %s model on %d rows / %d clusters: mean cost %.3f (SE %.3f), mean QALY %.5f (SE %.5f)",
                kind.value, fit.n_rows, fit.n_clusters, fit.mean_cost, fit.se_cost, fit.mean_qaly, fit.se_qaly)
    return fit


def fit_arm(dataset: TrialDataset, kind, opts: Optional[FitOptions] = None) -> ArmFit:
    """Fit the substantive model to one arm of complete (or completed) data."""
    if len(dataset.arms) != 1:
        raise ConsistencyError("fit_arm expects a single-arm dataset; use split_by_arm first")
    codes, _ = dataset.cluster_codes()
    return fit_arrays(dataset.costs(), dataset.qalys(), codes, kind, opts)
