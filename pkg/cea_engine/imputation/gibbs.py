"""
Gibbs sampler for the bivariate Normal imputation model.

Responses (log cost, QALY) are regressed on the design predictors with an
optional cluster random intercept pair:

    y_ij = B' x_ij + b_i + e_ij,   e_ij ~ N(0, Omega1),   b_i ~ N(0, Omega2)

Priors: flat on B, inverse-Wishart(3, I) on Omega1 and Omega2. The sampler
works on standardized responses and predictors; retained states are mapped
back to the original (log cost, QALY) scale.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from scipy.stats import invwishart

from cea_engine.exceptions import ConsistencyError, ImputationError
from cea_engine.imputation.design import Design
from cea_engine.imputation.spec import ImputationSpec
from cea_engine.utils import logger

PRIOR_DF = 3  # dimension + 1


@dataclass(frozen=True)
class ImputerState:
    """
    One state of the chain on the original response scale.

    Attributes:
        fixed_coefficients: (p, 2) coefficients of (log cost, QALY) on the predictors.
        level1_cov: Residual covariance.
        level2_cov: Cluster-effect covariance (None for single-level models).
        cluster_effects: (G, 2) cluster intercepts (zeros for single-level models).
        current_missing_values: Values at the missing cells, row-major over (row, response).
        iteration: Gibbs iteration the state belongs to.
    """
    fixed_coefficients: np.ndarray
    level1_cov: np.ndarray
    level2_cov: Optional[np.ndarray]
    cluster_effects: np.ndarray
    current_missing_values: np.ndarray
    iteration: int


@dataclass(frozen=True)
class RetainedDraw:
    iteration: int
    state: ImputerState
    responses: np.ndarray  # (n, 2) completed (log cost, QALY)


class GibbsSampler:
    """
    Full-conditional Gibbs sampler over missing responses, cluster effects,
    fixed coefficients and the two covariance matrices.

    The inverse-Wishart(3, I) priors on Omega1 and Omega2 apply to the
    standardized responses (each centered on its observed mean and divided by
    its observed SD), not to the original log-cost and QALY scales. On the
    original scale the prior scale matrix is diag(sd_logcost^2, sd_qaly^2).

    Args:
        design (Design): Predictors and responses of one arm.
        spec (ImputationSpec): Chain lengths and the multilevel flag.
        rng (np.random.Generator): Random stream; seeded from ``spec.seed`` when None.

    Raises:
        ConsistencyError: A response has no observed value, or a multilevel
            model has fewer than two clusters.
    """

    def __init__(self, design: Design, spec: ImputationSpec, rng: Optional[np.random.Generator] = None):
        self.design = design
        self.spec = spec
        self.multilevel = spec.multilevel
        self.rng = rng if rng is not None else np.random.default_rng(np.random.SeedSequence(spec.seed))

        Y = design.Y
        missing = np.isnan(Y)
        if missing.all(axis=0).any():
            raise ConsistencyError("Each response needs at least one observed value")
        if self.multilevel and design.n_clusters < 2:
            raise ConsistencyError("Multilevel imputation needs at least two clusters")
        self.missing = missing
        self.y_mean = np.nanmean(Y, axis=0)
        sd = np.nanstd(Y, axis=0)
        self.y_sd = np.where(sd > 0, sd, 1.0)

        X = design.X
        self.x_mean = np.r_[0.0, X[:, 1:].mean(axis=0)]
        x_sd = np.r_[1.0, X[:, 1:].std(axis=0)]
        self.x_sd = np.where(x_sd > 0, x_sd, 1.0)
        self.X = (X - self.x_mean) / self.x_sd
        self.n, self.p = self.X.shape
        self.codes = design.codes
        self.G = design.n_clusters
        self.cluster_n = np.bincount(self.codes, minlength=self.G).astype(float)

        xtx_inv = np.linalg.inv(self.X.T @ self.X)
        self.xtx_inv = 0.5 * (xtx_inv + xtx_inv.T)
        self.xtx_inv_chol = np.linalg.cholesky(self.xtx_inv)
        self.proj = self.xtx_inv @ self.X.T

        # missing cells start at the observed means, i.e. 0 on the standardized scale
        self.Y = np.where(missing, 0.0, (Y - self.y_mean) / self.y_sd)
        self.b = np.zeros((self.G, 2))
        self.omega1 = np.eye(2)
        self.omega2 = 0.1 * np.eye(2) if self.multilevel else None
        self.B = self.proj @ self.Y

    # --- Full conditionals ---
    def _draw_missing(self):
        mu = self.X @ self.B + self.b[self.codes]
        om = self.omega1
        both = self.missing.all(axis=1)
        only_cost = self.missing[:, 0] & ~self.missing[:, 1]
        only_qaly = self.missing[:, 1] & ~self.missing[:, 0]
        if both.any():
            chol = np.linalg.cholesky(om)
            z = self.rng.standard_normal((int(both.sum()), 2))
            self.Y[both] = mu[both] + z @ chol.T
        for target, given, rows in ((0, 1, only_cost), (1, 0, only_qaly)):
            if not rows.any():
                continue
            slope = om[target, given] / om[given, given]
            mean = mu[rows, target] + slope * (self.Y[rows, given] - mu[rows, given])
            var = om[target, target] - slope * om[target, given]
            self.Y[rows, target] = mean + np.sqrt(var) * self.rng.standard_normal(int(rows.sum()))

    def _draw_cluster_effects(self):
        resid = self.Y - self.X @ self.B
        sums = np.zeros((self.G, 2))
        np.add.at(sums, self.codes, resid)
        om1_inv = np.linalg.inv(self.omega1)
        om2_inv = np.linalg.inv(self.omega2)
        precision = om2_inv[None, :, :] + self.cluster_n[:, None, None] * om1_inv[None, :, :]
        cov = np.linalg.inv(precision)
        mean = np.einsum("gij,jk,gk->gi", cov, om1_inv, sums)
        chol = np.linalg.cholesky(cov)
        z = self.rng.standard_normal((self.G, 2))
        self.b = mean + np.einsum("gij,gj->gi", chol, z)

    def _draw_coefficients(self):
        target = self.Y - self.b[self.codes]
        b_hat = self.proj @ target
        z = self.rng.standard_normal((self.p, 2))
        self.B = b_hat + self.xtx_inv_chol @ z @ np.linalg.cholesky(self.omega1).T

    def _draw_level1_cov(self):
        resid = self.Y - self.X @ self.B - self.b[self.codes]
        scale = np.eye(2) + resid.T @ resid
        self.omega1 = np.atleast_2d(invwishart.rvs(df=PRIOR_DF + self.n, scale=scale, random_state=self.rng))

    def _draw_level2_cov(self):
        scale = np.eye(2) + self.b.T @ self.b
        self.omega2 = np.atleast_2d(invwishart.rvs(df=PRIOR_DF + self.G, scale=scale, random_state=self.rng))

    def step(self, iteration: int):
        """One Gibbs cycle."""
        try:
            self._draw_missing()
            if self.multilevel:
                self._draw_cluster_effects()
            self._draw_coefficients()
            self._draw_level1_cov()
            if self.multilevel:
                self._draw_level2_cov()
        except np.linalg.LinAlgError as e:
            raise ImputationError(f"Covariance left the positive-definite cone at iteration {iteration}: {e}",
                                  iteration) from e
        for name, cov in (("level-1", self.omega1), ("level-2", self.omega2)):
            if cov is not None and not (np.all(np.isfinite(cov)) and np.linalg.eigvalsh(cov)[0] > 0):
                raise ImputationError(f"Non positive-definite {name} covariance at iteration {iteration}",
                                      iteration)

    def run(self) -> List[RetainedDraw]:
        """Burn in, then retain every ``spacing``-th state ``k`` times."""
        spec = self.spec
        total = spec.burn_in + spec.spacing * spec.k
        retained = []
        for iteration in range(1, total + 1):
            self.step(iteration)
            if iteration > spec.burn_in and (iteration - spec.burn_in) % spec.spacing == 0:
                retained.append(RetainedDraw(iteration, self.snapshot(iteration), self.responses()))
                logger.debug("Retained Gibbs state %d/%d at iteration %d", len(retained), spec.k, iteration)
        return retained

    # --- Original-scale views ---
    def responses(self) -> np.ndarray:
        return self.y_mean + self.Y * self.y_sd

    def snapshot(self, iteration: int) -> ImputerState:
        s = self.y_sd
        scaled = self.B / self.x_sd[:, None]
        intercept = self.B[0] - (self.x_mean[1:, None] * scaled[1:]).sum(axis=0)
        coefficients = np.vstack([intercept, scaled[1:]]) * s
        coefficients[0] += self.y_mean
        scale = np.outer(s, s)
        return ImputerState(
            fixed_coefficients=coefficients,
            level1_cov=self.omega1 * scale,
            level2_cov=None if self.omega2 is None else self.omega2 * scale,
            cluster_effects=self.b * s,
            current_missing_values=self.responses()[self.missing],
            iteration=iteration,
        )
