from cea_engine.pipeline.manifest import RunManifest, parse_lambda_grid
from cea_engine.pipeline.runner import (
    ARM_COLUMNS,
    FIT_COLUMNS,
    INCREMENT_COLUMNS,
    CeaPipeline,
    pool_fits,
    stage,
    summarize,
    write_reports,
)

__all__ = [
    'RunManifest',
    'parse_lambda_grid',
    'ARM_COLUMNS',
    'FIT_COLUMNS',
    'INCREMENT_COLUMNS',
    'CeaPipeline',
    'pool_fits',
    'stage',
    'summarize',
    'write_reports',
]
