"""
Screening of candidate auxiliary variables.

For each arm and outcome, the missingness indicator (1 = missing) is
regressed on covariates by logistic regression, with and without a cluster
random intercept, and the observed outcome value (log cost or QALY) is
regressed on the same covariates with a cluster random intercept. The report
lists covariates with p below a threshold; it never selects auxiliaries by
itself.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
import statsmodels.api as sm
from scipy import optimize, stats
from scipy.special import logsumexp
from statsmodels.tools.numdiff import approx_hess3

from cea_engine.data.models import Arm, TrialDataset
from cea_engine.data.preprocess import split_by_arm
from cea_engine.exceptions import ConfigurationError, ConsistencyError, NumericalError, SeparationError
from cea_engine.glmm.quadrature import gauss_hermite
from cea_engine.utils import logger

OUTCOMES = ("cost", "qaly")
CLUSTER_SIZE = "cluster_size"
TABLE_COLUMNS = ["variable", "estimate", "se", "z", "p"]


@dataclass(frozen=True)
class MissingnessModelResult:
    """
    One screening fit.

    Attributes:
        outcome: ``cost`` or ``qaly``.
        arm: Arm the fit was run on.
        random_intercept: Whether a cluster random intercept was included.
        coefficients: Table with variable, estimate, se, z, p.
        cluster_sd: Random-intercept SD (0 for plain fits).
        model: ``logistic`` for missingness fits, ``mixed_linear`` or ``ols``
            for outcome-value screens.
    """
    outcome: str
    arm: Arm
    random_intercept: bool
    coefficients: pd.DataFrame
    cluster_sd: float = 0.0
    model: str = "logistic"
    loglik: float = float("nan")
    n_obs: int = 0

    def p_value(self, variable: str) -> float:
        row = self.coefficients[self.coefficients["variable"] == variable]
        if row.empty:
            raise KeyError(variable)
        return float(row["p"].iloc[0])

    def to_frame(self) -> pd.DataFrame:
        frame = self.coefficients.copy()
        frame.insert(0, "cluster_sd", self.cluster_sd)
        frame.insert(0, "random_intercept", self.random_intercept)
        frame.insert(0, "model", self.model)
        frame.insert(0, "arm", self.arm.label)
        frame.insert(0, "outcome", self.outcome)
        return frame


def _coefficient_table(names, estimate, se) -> pd.DataFrame:
    estimate = np.asarray(estimate, dtype=float)
    se = np.asarray(se, dtype=float)
    z = np.divide(estimate, se, out=np.full_like(estimate, np.nan), where=se > 0)
    p = 2 * stats.norm.sf(np.abs(z))
    return pd.DataFrame({"variable": list(names), "estimate": estimate, "se": se, "z": z, "p": p},
                        columns=TABLE_COLUMNS)


def _predictors(d: TrialDataset, covariates: Sequence[str], include_cluster_size: bool) -> pd.DataFrame:
    X = pd.DataFrame(d.covariate_matrix(list(covariates)), columns=list(covariates))
    if X.isna().any().any():
        raise ConsistencyError(f"Covariates must be complete for screening: {X.columns[X.isna().any()].tolist()}")
    if include_cluster_size:
        sizes = d.cluster_sizes()
        sd = sizes.std()
        if sd > 0:
            X[CLUSTER_SIZE] = (sizes - sizes.mean()) / sd
        else:
            logger.warning("All clusters have the same size; cluster size left out of the screen")
    return X


def _check_separation(y: np.ndarray, X: pd.DataFrame):
    """Raise when a covariate (quasi-)completely separates missing from observed rows."""
    for name in X.columns:
        x = X[name].to_numpy()
        if np.ptp(x) == 0:
            continue
        x1, x0 = x[y == 1], x[y == 0]
        if x1.min() >= x0.max() or x1.max() <= x0.min():
            raise SeparationError(f"Covariate '{name}' separates missing from observed rows", covariate=name)


def _indicator(d: TrialDataset, outcome: str) -> np.ndarray:
    if outcome not in OUTCOMES:
        raise ConfigurationError(f"outcome must be one of {OUTCOMES}, got {outcome!r}")
    y = (d.mask.r_cost == 0 if outcome == "cost" else d.mask.r_qaly == 0).astype(float)
    if y.min() == y.max():
        state = "missing" if y[0] else "observed"
        raise ConsistencyError(f"{outcome} is {state} for every row; nothing to screen")
    return y


def _random_intercept_negloglik(theta, y, X, codes, n_clusters, nodes, log_weights):
    beta, log_sd = theta[:-1], theta[-1]
    eta = (X @ beta)[:, None] + math.sqrt(2.0) * math.exp(log_sd) * nodes[None, :]
    row = y[:, None] * eta - np.logaddexp(0.0, eta)
    per_cluster = np.zeros((n_clusters, len(nodes)))
    np.add.at(per_cluster, codes, row)
    return -float(np.sum(logsumexp(per_cluster + log_weights[None, :], axis=1) - 0.5 * math.log(math.pi)))


def fit_missingness_logistic(d: TrialDataset, outcome: str, covariates: Sequence[str] = (),
                             include_cluster_size: bool = False, random_intercept: bool = False,
                             quadrature_order: int = 30) -> MissingnessModelResult:
    """
    Logistic regression of an outcome's missingness indicator on covariates.

    Args:
        d (TrialDataset): One arm.
        outcome (str): ``cost`` or ``qaly``.
        covariates: Covariate names; complete.
        include_cluster_size (bool): Add the cluster size, standardized within the arm.
        random_intercept (bool): Integrate a Normal cluster intercept out by
            Gauss-Hermite quadrature of ``quadrature_order`` points.

    Raises:
        ConsistencyError: The outcome is observed (or missing) for every row.
        SeparationError: A covariate perfectly separates missing from observed rows.
    """
    if len(d.arms) != 1:
        raise ConsistencyError("Missingness models are fitted per arm")
    arm = d.arms[0]
    y = _indicator(d, outcome)
    X = _predictors(d, covariates, include_cluster_size)
    _check_separation(y, X)
    exog = sm.add_constant(X, has_constant="add")
    names = ["const"] + list(X.columns)

    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            plain = sm.Logit(y, exog).fit(disp=0, maxiter=200)
    except Exception as e:  # statsmodels raises PerfectSeparationError or LinAlgError here
        if "separation" in str(e).lower():
            raise SeparationError(f"Perfect separation in the {outcome} missingness model", covariate=None) from e
        raise NumericalError(f"Logistic fit failed for {outcome} missingness: {e}") from e

    if not random_intercept:
        result = MissingnessModelResult(outcome, arm, False, _coefficient_table(names, plain.params, plain.bse),
                                        loglik=float(plain.llf), n_obs=len(y))
        logger.debug("Missingness logistic (%s, %s): loglik %.4f", outcome, arm.label, result.loglik)
        return result

    rule = gauss_hermite(int(quadrature_order))
    codes, _ = d.cluster_codes()
    n_clusters = int(codes.max()) + 1
    args = (y, exog.to_numpy(dtype=float), codes, n_clusters, rule.nodes, rule.log_weights)
    start = np.r_[np.asarray(plain.params, dtype=float), math.log(0.5)]
    bounds = [(None, None)] * len(names) + [(-8.0, 3.0)]
    opt = optimize.minimize(_random_intercept_negloglik, start, args=args, method="L-BFGS-B", bounds=bounds)
    if not np.all(np.isfinite(opt.x)):
        raise NumericalError(f"Random-intercept logistic fit failed for {outcome}: {opt.message}")
    hess = approx_hess3(opt.x, lambda t: _random_intercept_negloglik(t, *args), epsilon=1e-4)
    p = len(names)
    try:
        cov = np.linalg.inv(hess)
    except np.linalg.LinAlgError:
        cov = None
    if cov is None or np.any(np.diag(cov)[:p] <= 0):
        # cluster SD at its lower bound: invert the fixed-effect block alone
        cov = np.linalg.pinv(hess[:p, :p])
    se = np.sqrt(np.clip(np.diag(cov)[:p], 0.0, None))
    cluster_sd = math.exp(opt.x[-1])
    if opt.x[-1] <= bounds[-1][0] + 1e-6:
        cluster_sd = 0.0
    result = MissingnessModelResult(outcome, arm, True, _coefficient_table(names, opt.x[:p], se),
                                    cluster_sd=cluster_sd, loglik=-float(opt.fun), n_obs=len(y))
    logger.debug("Random-intercept missingness logistic (%s, %s): cluster SD %.4f", outcome, arm.label, cluster_sd)
    return result


def screen_outcome_association(d: TrialDataset, outcome: str, covariates: Sequence[str] = (),
                               include_cluster_size: bool = False) -> MissingnessModelResult:
    """
    Regress the observed outcome (log cost or QALY) on covariates with a
    cluster random intercept; falls back to OLS when the mixed model fails.
    """
    if len(d.arms) != 1:
        raise ConsistencyError("Outcome screens are fitted per arm")
    if outcome not in OUTCOMES:
        raise ConfigurationError(f"outcome must be one of {OUTCOMES}, got {outcome!r}")
    arm = d.arms[0]
    values = d.costs() if outcome == "cost" else d.qalys()
    keep = ~np.isnan(values)
    if outcome == "cost":
        keep &= np.nan_to_num(values) > 0
    if keep.sum() <= len(covariates) + 2:
        raise ConsistencyError(f"Too few observed {outcome} values to screen")
    X = _predictors(d, covariates, include_cluster_size)
    exog = sm.add_constant(X, has_constant="add").loc[keep].reset_index(drop=True)
    endog = np.log(values[keep]) if outcome == "cost" else values[keep]
    codes, _ = d.cluster_codes()
    names = list(exog.columns)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            fit = sm.MixedLM(endog, exog, groups=codes[keep]).fit(reml=True)
        bse = np.asarray(fit.bse_fe)
        if not np.all(np.isfinite(bse)):
            raise ValueError("non-finite standard errors")
        cluster_sd = math.sqrt(max(float(fit.cov_re.iloc[0, 0]), 0.0))
        return MissingnessModelResult(outcome, arm, True, _coefficient_table(names, fit.fe_params, bse),
                                      cluster_sd=cluster_sd, model="mixed_linear", loglik=float(fit.llf),
                                      n_obs=int(keep.sum()))
    except (ValueError, np.linalg.LinAlgError) as e:
        logger.warning("Mixed model screen for %s (%s) failed (%s); using OLS", outcome, arm.label, e)
    fit = sm.OLS(endog, exog).fit()
    return MissingnessModelResult(outcome, arm, False, _coefficient_table(names, fit.params, fit.bse),
                                  model="ols", loglik=float(fit.llf), n_obs=int(keep.sum()))


@dataclass
class ScreeningReport:
    """All screening fits of a dataset with the p-value threshold used for candidates."""
    results: List[MissingnessModelResult] = field(default_factory=list)
    threshold: float = 0.1
    skipped: List[str] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        if not self.results:
            return pd.DataFrame(columns=["outcome", "arm", "model", "random_intercept", "cluster_sd"] + TABLE_COLUMNS)
        return pd.concat([r.to_frame() for r in self.results], ignore_index=True)

    def candidates(self) -> Dict[str, List[str]]:
        """Covariates with p < threshold in any fit, per arm (advisory only)."""
        out: Dict[str, List[str]] = {}
        for r in self.results:
            table = r.coefficients
            flagged = table.loc[(table["variable"] != "const") & (table["p"] < self.threshold), "variable"]
            names = out.setdefault(r.arm.label, [])
            names.extend(v for v in flagged if v not in names)
        return {arm: sorted(names) for arm, names in out.items()}

    def to_text(self) -> str:
        lines = []
        for r in self.results:
            mode = "random intercept" if r.random_intercept else "no cluster effect"
            target = "missingness" if r.model == "logistic" else "observed value"
            lines.append(f"[{r.arm.label}] {r.outcome} {target} ({r.model}, {mode}"
                         + (f", cluster SD {r.cluster_sd:.3f})" if r.random_intercept else ")"))
            lines.append(f"  {'variable':<16}{'estimate':>12}{'SE':>12}{'z':>9}{'p':>9}")
            for row in r.coefficients.itertuples(index=False):
                mark = " *" if row.variable != "const" and row.p < self.threshold else ""
                lines.append(f"  {row.variable:<16}{row.estimate:>12.4g}{row.se:>12.4g}{row.z:>9.3f}{row.p:>9.4f}{mark}")
        for note in self.skipped:
            lines.append(f"skipped: {note}")
        for arm, names in self.candidates().items():
            lines.append(f"candidate auxiliaries [{arm}] (p < {self.threshold}): {', '.join(names) or 'none'}")
        return "\n".join(lines)


def screen_auxiliaries(d: TrialDataset, covariates: Optional[Sequence[str]] = None,
                       include_cluster_size: bool = True, threshold: float = 0.1,
                       quadrature_order: int = 30, executor=None) -> ScreeningReport:
    """
    Run every outcome x arm x {plain, random-intercept} missingness fit plus
    the outcome-value screen.

    Args:
        d (TrialDataset): Two-arm dataset.
        covariates: Candidate covariates (all schema covariates when None).
        executor: Optional ``concurrent.futures`` executor for the fits.
    """
    covariates = list(d.schema.names if covariates is None else covariates)
    report = ScreeningReport(threshold=threshold)
    jobs = []
    for arm_data in split_by_arm(d):
        arm = arm_data.arms[0]
        for outcome in OUTCOMES:
            mask = arm_data.mask.r_cost if outcome == "cost" else arm_data.mask.r_qaly
            if mask.min() == mask.max():
                report.skipped.append(f"{arm.label} {outcome}: no missing values" if mask.min() == 1
                                      else f"{arm.label} {outcome}: no observed values")
            else:
                for ri in (False, True):
                    jobs.append(("logistic", arm_data, outcome, ri))
            if mask.max() == 1:
                jobs.append(("value", arm_data, outcome, True))

    def run(job):
        kind, data, outcome, ri = job
        try:
            if kind == "logistic":
                return fit_missingness_logistic(data, outcome, covariates, include_cluster_size, ri,
                                                quadrature_order)
            return screen_outcome_association(data, outcome, covariates, include_cluster_size)
        except (SeparationError, ConsistencyError) as e:
            return f"{data.arms[0].label} {outcome} {kind}{' RI' if ri else ''}: {e}"

    outputs = list(executor.map(run, jobs)) if executor is not None else [run(job) for job in jobs]
    for item in outputs:
        if isinstance(item, MissingnessModelResult):
            report.results.append(item)
        else:
            logger.warning("Screening fit skipped: %s", item)
            report.skipped.append(item)
    logger.info("Screened %d covariates in %d fits", len(covariates) + int(include_cluster_size), len(report.results))
    return report
