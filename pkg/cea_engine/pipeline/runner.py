"""
Batch pipeline: load -> impute -> fit per imputation -> pool -> CEA report.

``CeaPipeline`` holds the engine settings and the YAML sections of a run
file and exposes each stage separately, so the ``run`` command and the
individual subcommands go through the same code and file formats.
"""
from __future__ import annotations

import json
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
import scipy
import statsmodels
from tqdm import tqdm

import cea_engine
from cea_engine.cea.report import ArmSummary, CeaSummary
from cea_engine.configs.settings import EngineConfig, read_sections
from cea_engine.data.csv_io import load_csv
from cea_engine.data.models import Arm, CovariateSchema, TrialDataset
from cea_engine.data.preprocess import filter_positive_costs, split_by_arm
from cea_engine.exceptions import CeaEngineError, ConsistencyError
from cea_engine.glmm.densities import CostKind
from cea_engine.glmm.fit import FitOptions, fit_arm
from cea_engine.imputation.engine import CompletedSet, impute_trial
from cea_engine.imputation.spec import ImputationSpec, Strategy
from cea_engine.pipeline.manifest import RunManifest
from cea_engine.pooling.rubin import EstimateDraw, pool
from cea_engine.utils import hashstr, logger, write_table

FIT_COLUMNS = ["strategy", "dist", "arm", "imputation", "mean_cost", "mean_qaly", "var_cost", "cov_cq",
               "var_qaly", "corr_cq", "loglik", "converged"]
ARM_COLUMNS = ["strategy", "dist", "arm", "mean_cost", "se_cost", "mean_qaly", "se_qaly", "corr_cq",
               "var_cost", "cov_cq", "var_qaly", "df", "k"]
INCREMENT_COLUMNS = ["strategy", "dist", "delta_c", "se_delta_c", "delta_q", "se_delta_q", "lambda", "inb",
                     "se_inb", "ci_low", "ci_high"]


@contextmanager
def stage(name: str):
    """Tag engine errors raised inside the block with the pipeline stage."""
    try:
        yield
    except CeaEngineError as e:
        if not getattr(e, "stage", None):
            e.stage = name
        raise


def pool_fits(fits: pd.DataFrame) -> pd.DataFrame:
    """
    Pool per-imputation arm estimates with Rubin's rules.

    A group with a single row (complete-case analysis) passes through with
    infinite degrees of freedom; corr(c, q) is averaged across imputations.
    """
    rows = []
    for (strategy, dist, arm), group in fits.groupby(["strategy", "dist", "arm"], sort=False):
        if len(group) == 1:
            r = group.iloc[0]
            point = np.array([r["mean_cost"], r["mean_qaly"]], dtype=float)
            cov = np.array([[r["var_cost"], r["cov_cq"]], [r["cov_cq"], r["var_qaly"]]], dtype=float)
            df = float("inf")
        else:
            pooled = pool([EstimateDraw([r.mean_cost, r.mean_qaly], [[r.var_cost, r.cov_cq], [r.cov_cq, r.var_qaly]])
                           for r in group.itertuples(index=False)])
            point, cov, df = pooled.point, pooled.total_cov, float(np.min(pooled.df))
        rows.append({
            "strategy": strategy, "dist": dist, "arm": arm,
            "mean_cost": float(point[0]), "se_cost": float(np.sqrt(cov[0, 0])),
            "mean_qaly": float(point[1]), "se_qaly": float(np.sqrt(cov[1, 1])),
            "corr_cq": float(group["corr_cq"].mean()),
            "var_cost": float(cov[0, 0]), "cov_cq": float(cov[0, 1]), "var_qaly": float(cov[1, 1]),
            "df": df, "k": len(group),
        })
    return pd.DataFrame(rows, columns=ARM_COLUMNS)


def _arm_summary(row) -> ArmSummary:
    cov = np.array([[row["var_cost"], row["cov_cq"]], [row["cov_cq"], row["var_qaly"]]], dtype=float)
    return ArmSummary(float(row["mean_cost"]), float(row["mean_qaly"]), cov, float(row["df"]), float(row["corr_cq"]))


def summarize(arm_rows: pd.DataFrame, lambda_grid: Sequence[float], level: float = 0.95,
              reference_lambda: float = 20000.0) -> List[CeaSummary]:
    """One ``CeaSummary`` per (strategy, dist) pair of an arm-estimates table."""
    summaries = []
    for (strategy, dist), group in arm_rows.groupby(["strategy", "dist"], sort=False):
        by_arm = {row["arm"]: row for _, row in group.iterrows()}
        if set(by_arm) != {Arm.CONTROL.label, Arm.INTERVENTION.label}:
            raise ConsistencyError(f"{strategy}/{dist}: arm estimates need one control and one intervention row")
        summaries.append(CeaSummary.build(_arm_summary(by_arm["control"]), _arm_summary(by_arm["intervention"]),
                                          lambda_grid, level, reference_lambda, strategy=strategy, dist=dist))
    return summaries


def write_reports(summaries: Sequence[CeaSummary], out, provenance: Optional[Sequence[str]] = None):
    """Write ``increments.csv`` and one INB-curve CSV per (strategy, dist)."""
    out = Path(out)
    rows = pd.DataFrame([s.increment_row() for s in summaries], columns=INCREMENT_COLUMNS)
    write_table(rows, out / "increments.csv", provenance)
    for s in summaries:
        s.write_curve_csv(out / f"inb_curve_{s.strategy}_{s.dist}.csv", provenance)


class CeaPipeline:
    """
    Stages of a cost-effectiveness run sharing one configuration.

    Args:
        config (EngineConfig): Engine settings (overlaid with the run file).
        sections (dict): YAML sections of the run file (``schema``, ``fit``,
            ``imputation``, ...).
        executor: Executor used for arms and imputations; the package-wide
            thread pool by default.
        progress (bool): Show a tqdm bar over strategy x distribution cells.
    """

    def __init__(self, config: Optional[EngineConfig] = None, sections: Optional[dict] = None,
                 executor=None, progress: bool = True, spec_text: str = ""):
        self.config = config or EngineConfig()
        self.sections = sections or {}
        self.config.overlay(self.sections)
        self.executor = executor if executor is not None else cea_engine.executor
        self.progress = progress
        self.spec_hash = hashstr(spec_text) if spec_text else "none"

    @classmethod
    def from_spec(cls, path: Optional[str] = None, **kwargs) -> "CeaPipeline":
        if not path:
            return cls(**kwargs)
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
        return cls(sections=read_sections(path), spec_text=text, **kwargs)

    # --- Settings ---
    @property
    def schema(self) -> CovariateSchema:
        return CovariateSchema.from_mapping(self.sections.get("schema"))

    @property
    def configured_schema(self) -> Optional[CovariateSchema]:
        """The run file's schema, or None when it declares none (readers then use their own)."""
        return self.schema if self.sections.get("schema") else None

    @property
    def fit_options(self) -> FitOptions:
        start = (self.sections.get("fit") or {}).get("start") or {}
        return replace(FitOptions.from_config(self.config), start=dict(start))

    def provenance(self, seed: int) -> List[str]:
        settings = json.dumps(self.config.get_safe_config(), sort_keys=True)
        return [
            f"cea-engine {cea_engine.__version__}",
            f"seed: {seed}",
            f"spec: {self.spec_hash}",
            f"config: {hashstr(settings)}",
            f"modules: numpy {np.__version__}, scipy {scipy.__version__}, pandas {pd.__version__}, "
            f"statsmodels {statsmodels.__version__}",
        ]

    def imputation_specs(self, strategy: Strategy, seed: int) -> Dict[Arm, ImputationSpec]:
        section = self.sections.get("imputation") or {}
        specs = {}
        for arm in Arm:
            spec = ImputationSpec.from_mapping(section, arm)
            specs[arm] = replace(spec, k=int(self.config.imputations), burn_in=int(self.config.burn_in),
                                 spacing=int(self.config.spacing), seed=int(seed)).for_strategy(strategy)
        return specs

    # --- Stages ---
    def load(self, path) -> TrialDataset:
        """Load a trial CSV and drop rows with an observed cost of zero."""
        d, _ = filter_positive_costs(load_csv(path, self.schema))
        return d

    def impute(self, d: TrialDataset, strategy, seed: int) -> CompletedSet:
        strategy = Strategy.parse(strategy)
        specs = self.imputation_specs(strategy, seed)
        for arm, spec in specs.items():
            logger.info("%s imputation model for %s: %s", strategy.label, arm.label, spec.describe())
        return impute_trial(d, specs, seed, key=RunManifest.strategy_key(strategy), executor=self.executor)

    def fit_datasets(self, datasets: Sequence[TrialDataset], strategy, kind) -> pd.DataFrame:
        """Fit both arms of every dataset; one row per (imputation, arm)."""
        strategy, kind = Strategy.parse(strategy), CostKind.parse(kind)
        opts = self.fit_options
        jobs = []
        for i, dataset in enumerate(datasets):
            for arm_data in split_by_arm(dataset):
                jobs.append((i, arm_data))

        def run(job):
            i, arm_data = job
            return i, arm_data.arms[0], fit_arm(arm_data, kind, opts)

        rows = []
        numbered = len(datasets) > 1 or strategy.imputes
        for i, arm, fit in self.executor.map(run, jobs):
            rows.append({
                "strategy": strategy.value, "dist": kind.value, "arm": arm.label,
                "imputation": i + 1 if numbered else 0,
                "mean_cost": fit.mean_cost, "mean_qaly": fit.mean_qaly,
                "var_cost": float(fit.cov_means[0, 0]), "cov_cq": float(fit.cov_means[0, 1]),
                "var_qaly": float(fit.cov_means[1, 1]), "corr_cq": fit.correlation_cq,
                "loglik": fit.loglik, "converged": fit.converged,
            })
        return pd.DataFrame(rows, columns=FIT_COLUMNS)

    def analysis_datasets(self, d: TrialDataset, strategy, seed: int, out=None, provenance=None):
        """Complete cases for ``cc``; otherwise the K completed datasets (saved under ``out`` when given)."""
        strategy = Strategy.parse(strategy)
        if not strategy.imputes:
            return [d.complete_cases()]
        completed = self.impute(d, strategy, seed)
        if out is not None:
            completed.save(Path(out) / "imputations" / strategy.value, provenance)
        return list(completed.datasets)

    def run(self, manifest: RunManifest) -> List[CeaSummary]:
        """
        Run every strategy x distribution cell and write the result tables.

        Writes ``arm_estimates.csv``, ``increments.csv``,
        ``inb_curve_<strategy>_<dist>.csv``, ``fits/<strategy>_<dist>.csv`` and
        ``imputations/<strategy>/completed_XX.csv`` under ``manifest.out``.
        """
        out = Path(manifest.out)
        provenance = self.provenance(manifest.seed)
        with stage("load"):
            d = self.load(manifest.input_path)

        fits = []
        bar = tqdm(total=len(manifest.cells()), desc="cells", disable=not self.progress)
        for strategy in manifest.strategies:
            with stage(f"impute[{strategy.value}]"):
                datasets = self.analysis_datasets(d, strategy, manifest.seed, out, provenance)
            for kind in manifest.dists:
                with stage(f"fit[{strategy.value}/{kind.value}]"):
                    table = self.fit_datasets(datasets, strategy, kind)
                write_table(table, out / "fits" / f"{strategy.value}_{kind.value}.csv", provenance)
                fits.append(table)
                bar.update(1)
        bar.close()

        with stage("pool"):
            arm_rows = pool_fits(pd.concat(fits, ignore_index=True))
        write_table(arm_rows, out / "arm_estimates.csv", provenance)
        with stage("cea"):
            summaries = summarize(arm_rows, manifest.lambda_grid, manifest.level, manifest.reference_lambda)
        write_reports(summaries, out, provenance)
        logger.info("Run complete: %d cells written to %s", len(summaries), out)
        return summaries
