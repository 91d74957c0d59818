"""
Synthetic cluster-randomized cost-effectiveness trials with known truth.

Per arm: cluster effects (u, w) are bivariate Normal; costs follow the
configured law with conditional mean beta1 + u (plus optional centered
covariate effects); QALYs are Normal with mean gamma1 + alpha * c + w; and
the missingness mechanisms mask outcomes using fully observed quantities only.
For positive cost laws cluster effects with beta1 + u <= 0 are redrawn, and
``SimTruth.true_means`` reports the means of that truncated law.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np
import pandas as pd
from scipy import stats
from scipy.special import expit

from cea_engine.data.models import Arm, TrialDataset
from cea_engine.exceptions import SimulationError
from cea_engine.glmm.densities import ArmParams, CostKind
from cea_engine.simulation.config import ArmSimConfig, MissingnessMechanism, SimConfig, SizeLaw
from cea_engine.utils import logger, write_table

MAX_REDRAWS = 1000


@dataclass(frozen=True, eq=False)
class SimTruth:
    """
    Ground truth of a simulated trial.

    Attributes:
        params: True parameters per arm.
        clusters: One row per cluster: cluster_id, arm, u, w, size.
        rows: One row per participant: cluster_id, arm, cost_full, qaly_full,
            r_cost, r_qaly (before and after masking).
    """
    params: Dict[Arm, ArmParams]
    clusters: pd.DataFrame
    rows: pd.DataFrame
    seed: int = 0

    def true_means(self, arm: Arm) -> Tuple[float, float]:
        """Marginal (mean cost, mean QALY) under the cluster-effect law actually sampled."""
        p = self.params[arm]
        du, dw = truncation_shift(p)
        return p.mean_cost + du, p.mean_qaly + p.alpha * du + dw

    @property
    def true_increments(self) -> Tuple[float, float]:
        c0, q0 = self.true_means(Arm.CONTROL)
        c1, q1 = self.true_means(Arm.INTERVENTION)
        return c1 - c0, q1 - q0

    def to_frame(self) -> pd.DataFrame:
        """Per-row truth sidecar: row data joined with the cluster effects."""
        effects = self.clusters[["cluster_id", "u", "w", "size"]]
        return self.rows.merge(effects, on="cluster_id", how="left", sort=False)

    def write_csv(self, path, provenance=None):
        write_table(self.to_frame(), path, provenance)


def replicate_seeds(seed: int, n: int) -> List[int]:
    """``n`` independent 63-bit seeds derived from ``seed``."""
    children = np.random.SeedSequence(int(seed)).spawn(int(n))
    return [int(child.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1)) for child in children]


def _truncates(params: ArmParams) -> bool:
    return params.kind.positive and not params.cost_dist.literal and params.cluster_cov.sigma_u_sq > 0


def truncation_shift(params: ArmParams) -> Tuple[float, float]:
    """
    E[u] and E[w] of cluster effects redrawn until beta1 + u > 0.

    u is Normal(0, sigma_u^2) truncated below at -beta1, so
    E[u] = sigma_u * phi(a) / Phi(a) with a = beta1 / sigma_u, and w moves with
    it through the regression E[w | u] = rho * sigma_w / sigma_u * u. Both are
    zero for the Normal and literal Lognormal laws, which are not truncated.
    """
    if not _truncates(params):
        return 0.0, 0.0
    cov = params.cluster_cov
    sd_u, sd_w = math.sqrt(cov.sigma_u_sq), math.sqrt(cov.sigma_w_sq)
    a = params.beta1 / sd_u
    du = sd_u * math.exp(stats.norm.logpdf(a) - stats.norm.logcdf(a))
    return du, cov.rho * sd_w / sd_u * du


def _cluster_effects(rng: np.random.Generator, params: ArmParams, g: int) -> np.ndarray:
    L = params.cluster_cov.factor()
    effects = rng.standard_normal((g, 2)) @ L.T
    if _truncates(params):
        bad = params.beta1 + effects[:, 0] <= 0
        if bad.any():
            logger.warning("Redrawing %d cluster effects with beta1 + u <= 0 (true means include the truncation)",
                           int(bad.sum()))
        for _ in range(MAX_REDRAWS):
            if not bad.any():
                break
            effects[bad] = rng.standard_normal((int(bad.sum()), 2)) @ L.T
            bad = params.beta1 + effects[:, 0] <= 0
    return effects


def _sizes(rng: np.random.Generator, law: SizeLaw, u: np.ndarray, sigma_u: float) -> np.ndarray:
    g = len(u)
    if law.law == "fixed":
        return np.full(g, law.n, dtype=int)
    if law.law == "uniform":
        return rng.integers(law.low, law.high + 1, size=g)
    quantile = stats.norm.cdf(u / sigma_u) if sigma_u > 0 else np.full(g, 0.5)
    mix = law.strength * quantile + (1 - law.strength) * rng.random(g)
    return law.low + np.rint((law.high - law.low) * mix).astype(int)


def _costs(rng: np.random.Generator, params: ArmParams, mean: np.ndarray) -> np.ndarray:
    dist = params.cost_dist
    if dist.kind is CostKind.NORMAL:
        return mean + math.sqrt(dist.dispersion) * rng.standard_normal(len(mean))
    if dist.kind is CostKind.GAMMA:
        return rng.gamma(dist.dispersion, mean / dist.dispersion)
    s2 = dist.log_scale_variance
    location = mean if dist.literal else np.log(mean) - 0.5 * s2
    return np.exp(location + math.sqrt(s2) * rng.standard_normal(len(mean)))


def _mask(rng: np.random.Generator, mechanism: MissingnessMechanism, covariates: pd.DataFrame,
          sizes: np.ndarray) -> np.ndarray:
    """Boolean array, True where the outcome is masked."""
    n = len(sizes)
    u = rng.random(n)
    if mechanism.mechanism == "none":
        return np.zeros(n, dtype=bool)
    if mechanism.mechanism == "mcar":
        return u < mechanism.rate
    logit = np.full(n, float(mechanism.intercept))
    for name, slope in mechanism.slopes.items():
        logit += slope * covariates[name].to_numpy()
    sd = sizes.std()
    if sd > 0:
        logit += mechanism.size_slope * (sizes - sizes.mean()) / sd
    return u < expit(logit)


def _simulate_arm(rng: np.random.Generator, arm: Arm, cfg: ArmSimConfig, config: SimConfig):
    params = cfg.params
    effects = _cluster_effects(rng, params, cfg.clusters)
    sizes = _sizes(rng, cfg.size, effects[:, 0], math.sqrt(params.cluster_cov.sigma_u_sq))
    prefix = "c" if arm is Arm.CONTROL else "t"
    ids = [f"{prefix}{i + 1:03d}" for i in range(cfg.clusters)]
    clusters = pd.DataFrame({"cluster_id": ids, "arm": int(arm), "u": effects[:, 0], "w": effects[:, 1],
                             "size": sizes})

    codes = np.repeat(np.arange(cfg.clusters), sizes)
    n = len(codes)
    covariates = pd.DataFrame({c.name: c.draw(rng, n) for c in config.covariates}, index=range(n))
    expectations = {c.name: c.expectation for c in config.covariates}

    cost_mean = params.beta1 + effects[codes, 0]
    for name, effect in cfg.cost_effects.items():
        cost_mean = cost_mean + effect * (covariates[name].to_numpy() - expectations[name])
    if params.kind.positive and not params.cost_dist.literal:
        floor = 1e-6 * abs(params.beta1)
        clipped = int(np.sum(cost_mean <= floor))
        if clipped:
            logger.warning("%d conditional cost means clipped to stay positive", clipped)
        cost_mean = np.maximum(cost_mean, floor)
    cost = _costs(rng, params, cost_mean)
    if np.any(cost < 0):
        raise SimulationError(f"{int(np.sum(cost < 0))} simulated {arm.label} costs are negative; "
                              "raise beta1 relative to the cost and cluster SDs")

    qaly_mean = params.gamma1 + params.alpha * cost + effects[codes, 1]
    for name, effect in cfg.qaly_effects.items():
        qaly_mean = qaly_mean + effect * (covariates[name].to_numpy() - expectations[name])
    qaly = qaly_mean + math.sqrt(params.sigma_q_sq) * rng.standard_normal(n)

    row_sizes = sizes[codes].astype(float)
    miss_cost = _mask(rng, cfg.missing_cost, covariates, row_sizes)
    miss_qaly = _mask(rng, cfg.missing_qaly, covariates, row_sizes)

    frame = pd.DataFrame({"cluster_id": np.asarray(ids)[codes], "arm": int(arm),
                          "cost": np.where(miss_cost, np.nan, cost), "qaly": np.where(miss_qaly, np.nan, qaly)})
    for name in covariates.columns:
        frame[name] = covariates[name].to_numpy()
    rows = pd.DataFrame({"cluster_id": frame["cluster_id"], "arm": int(arm), "cost_full": cost, "qaly_full": qaly,
                         "r_cost": (~miss_cost).astype(int), "r_qaly": (~miss_qaly).astype(int)})
    return frame, clusters, rows


def generate(cfg: SimConfig, seed: int = None) -> Tuple[TrialDataset, SimTruth]:
    """
    Simulate a two-arm trial.

    Args:
        cfg (SimConfig): Truth, designs and missingness mechanisms.
        seed (int): Overrides ``cfg.seed`` (e.g. one of ``replicate_seeds``).

    Returns:
        (TrialDataset, SimTruth): The masked dataset and its ground truth.
    """
    seed = cfg.seed if seed is None else int(seed)
    streams = np.random.SeedSequence(seed).spawn(2)
    frames, clusters, rows = [], [], []
    for arm, stream in zip((Arm.CONTROL, Arm.INTERVENTION), streams):
        frame, arm_clusters, arm_rows = _simulate_arm(np.random.default_rng(stream), arm, cfg.arm(arm), cfg)
        frames.append(frame)
        clusters.append(arm_clusters)
        rows.append(arm_rows)
    frame = pd.concat(frames, ignore_index=True)
    dataset = TrialDataset.from_frame(frame, cfg.schema)
    truth = SimTruth(params={Arm.CONTROL: cfg.control.params, Arm.INTERVENTION: cfg.intervention.params},
                     clusters=pd.concat(clusters, ignore_index=True), rows=pd.concat(rows, ignore_index=True),
                     seed=seed)
    totals = dataset.mask.totals()
    logger.info("Simulated %d rows in %d clusters (seed %d): %d costs and %d QALYs masked", len(dataset),
                len(dataset.clusters), seed, totals["cost_missing"], totals["qaly_missing"])
    return dataset, truth
