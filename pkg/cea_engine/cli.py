"""
Command-line entry point.

Subcommands:
    run        full pipeline over strategy x distribution cells
    simulate   write a synthetic trial CSV and its truth sidecar
    diagnose   screen candidate auxiliaries against missingness
    impute     write K completed datasets for one strategy
    fit        fit both arms of complete or completed data
    pool       combine per-imputation fits into arm estimates
    cea        increments, INB and INB curves from arm estimates

Exit codes: 0 success, 2 input error, 3 numerical failure.
"""
import argparse
import sys
from pathlib import Path
from typing import List, Optional

import pandas as pd

import cea_engine
from cea_engine.configs.settings import read_sections
from cea_engine.data.csv_io import save_csv
from cea_engine.diagnostics import screen_auxiliaries
from cea_engine.exceptions import CeaEngineError, InputError, NumericalError
from cea_engine.glmm.densities import CostKind
from cea_engine.imputation.engine import CompletedSet
from cea_engine.imputation.spec import Strategy
from cea_engine.pipeline.manifest import RunManifest, parse_lambda_grid
from cea_engine.pipeline.runner import CeaPipeline, pool_fits, stage, summarize, write_reports
from cea_engine.simulation import SimConfig, generate, replicate_seeds
from cea_engine.utils import logger, read_table, set_level, write_table

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3


def _add_common(parser, inputs: str = "?"):
    parser.add_argument("--input", nargs=inputs, required=inputs != "?", help="Input file(s) or directory")
    parser.add_argument("--spec", help="YAML run file with schema/fit/imputation/report sections")
    parser.add_argument("--seed", type=int, help="Master seed (defaults to the configured seed)")
    parser.add_argument("--out", required=True, help="Output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cea-engine", description="Cost-effectiveness analysis of cluster "
                                     "randomized trials with missing outcomes")
    parser.add_argument("--version", action="version", version=f"%(prog)s {cea_engine.__version__}")
    parser.add_argument("--log-level", default=None, help="Logging level (DEBUG, INFO, WARNING)")
    parser.add_argument("--no-progress", action="store_true", help="Hide progress bars")
    sub = parser.add_subparsers(dest="command", required=True)

    strategies = [s.value for s in Strategy]
    dists = [d.value for d in CostKind]

    p = sub.add_parser("run", help="Full pipeline")
    _add_common(p, inputs=None)
    p.add_argument("--strategy", nargs="+", choices=strategies, help="Missing-data strategies (default all)")
    p.add_argument("--dist", nargs="+", choices=dists, help="Cost distributions (default all)")
    p.add_argument("--lambda-grid", help="start:stop:step or comma list")

    p = sub.add_parser("simulate", help="Generate a synthetic trial")
    _add_common(p)
    p.add_argument("--replicates", type=int, default=1, help="Number of datasets (derived sub-seeds)")

    p = sub.add_parser("diagnose", help="Screen candidate auxiliary variables")
    _add_common(p, inputs=None)
    p.add_argument("--covariates", nargs="*", help="Covariates to screen (default: all in the schema)")

    p = sub.add_parser("impute", help="Multiple imputation for one strategy")
    _add_common(p, inputs=None)
    p.add_argument("--strategy", required=True, choices=[s for s in strategies if s != "cc"])

    p = sub.add_parser("fit", help="Fit both arms of a trial CSV (cc) or a completed-data directory")
    _add_common(p, inputs=None)
    p.add_argument("--strategy", required=True, choices=strategies)
    p.add_argument("--dist", nargs="+", choices=dists, required=True)

    p = sub.add_parser("pool", help="Pool per-imputation fits into arm estimates")
    _add_common(p, inputs="+")

    p = sub.add_parser("cea", help="Increments and INB curves from arm estimates")
    _add_common(p, inputs=None)
    p.add_argument("--lambda-grid", help="start:stop:step or comma list")
    return parser


def cmd_run(args, pipeline: CeaPipeline) -> int:
    manifest = RunManifest.from_values(args.input, args.out, spec=args.spec, strategies=args.strategy,
                                       dists=args.dist, lambda_grid=args.lambda_grid, seed=args.seed,
                                       defaults=pipeline.config)
    summaries = pipeline.run(manifest)
    for s in summaries:
        row = s.increment_row()
        print(f"{s.strategy:>5} {s.dist:>9}  dC={row['delta_c']:.3f}  dQ={row['delta_q']:.5f}  "
              f"INB({row['lambda']:.0f})={row['inb']:.2f} [{row['ci_low']:.2f}, {row['ci_high']:.2f}]")
    return EXIT_OK


def cmd_simulate(args, pipeline: CeaPipeline) -> int:
    with stage("simulate"):
        if not args.spec:
            raise InputError("simulate needs --spec with a 'simulation' section")
        cfg = SimConfig.from_mapping(read_sections(args.spec))
        seed = cfg.seed if args.seed is None else args.seed
        seeds = [seed] if args.replicates == 1 else replicate_seeds(seed, args.replicates)
        out = Path(args.out)
        for i, s in enumerate(seeds, start=1):
            dataset, truth = generate(cfg, s)
            suffix = "" if len(seeds) == 1 else f"_{i:03d}"
            provenance = pipeline.provenance(s)
            save_csv(dataset, out / f"trial{suffix}.csv", provenance)
            truth.write_csv(out / f"truth{suffix}.csv", provenance)
    return EXIT_OK


def cmd_diagnose(args, pipeline: CeaPipeline) -> int:
    with stage("diagnose"):
        d = pipeline.load(args.input)
        report = screen_auxiliaries(d, args.covariates, include_cluster_size=True,
                                    threshold=float(pipeline.config.screening_threshold),
                                    quadrature_order=int(pipeline.config.screening_quadrature_order),
                                    executor=pipeline.executor)
    out = Path(args.out)
    write_table(report.to_frame(), out / "screening.csv", pipeline.provenance(pipeline.config.seed))
    text = report.to_text()
    (out / "screening.txt").write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def cmd_impute(args, pipeline: CeaPipeline) -> int:
    seed = pipeline.config.seed if args.seed is None else args.seed
    provenance = pipeline.provenance(seed)
    with stage("load"):
        d = pipeline.load(args.input)
    with stage(f"impute[{args.strategy}]"):
        pipeline.analysis_datasets(d, args.strategy, seed, args.out, provenance)
    return EXIT_OK


def cmd_fit(args, pipeline: CeaPipeline) -> int:
    seed = pipeline.config.seed if args.seed is None else args.seed
    strategy = Strategy.parse(args.strategy)
    with stage("load"):
        if strategy.imputes:
            datasets = list(CompletedSet.load(args.input, pipeline.configured_schema).datasets)
        else:
            datasets = [pipeline.load(args.input).complete_cases()]
    for dist in args.dist:
        with stage(f"fit[{strategy.value}/{dist}]"):
            table = pipeline.fit_datasets(datasets, strategy, dist)
        write_table(table, Path(args.out) / "fits" / f"{strategy.value}_{dist}.csv", pipeline.provenance(seed))
    return EXIT_OK


def cmd_pool(args, pipeline: CeaPipeline) -> int:
    seed = pipeline.config.seed if args.seed is None else args.seed
    with stage("pool"):
        fits = pd.concat([read_table(path) for path in args.input], ignore_index=True)
        arm_rows = pool_fits(fits)
    write_table(arm_rows, Path(args.out) / "arm_estimates.csv", pipeline.provenance(seed))
    return EXIT_OK


def cmd_cea(args, pipeline: CeaPipeline) -> int:
    seed = pipeline.config.seed if args.seed is None else args.seed
    grid = parse_lambda_grid(args.lambda_grid) if args.lambda_grid else pipeline.config.lambda_grid()
    with stage("cea"):
        summaries = summarize(read_table(args.input), grid, float(pipeline.config.confidence_level),
                              float(pipeline.config.reference_lambda))
    write_reports(summaries, args.out, pipeline.provenance(seed))
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "simulate": cmd_simulate,
    "diagnose": cmd_diagnose,
    "impute": cmd_impute,
    "fit": cmd_fit,
    "pool": cmd_pool,
    "cea": cmd_cea,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.log_level:
        set_level(args.log_level)
    try:
        pipeline = CeaPipeline.from_spec(args.spec, progress=not args.no_progress)
        if args.seed is not None:
            pipeline.config.set("seed", args.seed)
        return COMMANDS[args.command](args, pipeline)
    except InputError as e:
        logger.error("Input error in stage %s: %s", getattr(e, "stage", args.command), e)
        return EXIT_INPUT
    except NumericalError as e:
        logger.error("Numerical failure in stage %s: %s", getattr(e, "stage", args.command), e)
        return EXIT_NUMERICAL
    except CeaEngineError as e:
        logger.error("Error in stage %s: %s", getattr(e, "stage", args.command), e)
        return EXIT_INPUT
    except OSError as e:
        logger.error("I/O error in %s: %s", args.command, e)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
