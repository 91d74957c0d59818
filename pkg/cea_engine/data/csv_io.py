"""
CSV ingestion and serialization for trial datasets.

Files are UTF-8, comma-separated, header first. Mandatory columns are
``cluster_id``, ``arm``, ``cost`` and ``qaly``; further columns follow the
covariate schema. An empty cell is a missing value. Leading lines that start
with ``#`` are provenance comments and are skipped on load.
"""
import io
import os
from typing import Iterable, Optional

import numpy as np
import pandas as pd

from cea_engine.data.models import MANDATORY_COLUMNS, Arm, CovariateSchema, TrialDataset
from cea_engine.exceptions import DataParseError, SchemaError
from cea_engine.utils import logger


def _strip_provenance(text: str) -> str:
    lines = text.splitlines(keepends=True)
    start = 0
    while start < len(lines) and lines[start].startswith("#"):
        start += 1
    return "".join(lines[start:])


def _to_float(cell: str) -> float:
    try:
        return float(cell)
    except ValueError:
        return np.nan


def _parse_numeric(raw: pd.Series, column: str, allow_missing: bool) -> np.ndarray:
    text = raw.str.strip()
    empty = text == ""
    # Python float parsing round-trips the repr written by save_csv exactly
    values = pd.Series([np.nan if e else _to_float(t) for t, e in zip(text, empty)], index=raw.index, dtype=float)
    bad = ~empty & (values.isna() | ~np.isfinite(values.fillna(0.0)))
    if bad.any():
        row = int(bad.idxmax())
        # +2: header line and 1-based numbering
        raise DataParseError(f"Malformed numeric value {raw[row]!r} at row {row + 2}, column '{column}'",
                             row=row + 2, column=column)
    if empty.any() and not allow_missing:
        row = int(empty.idxmax())
        raise DataParseError(f"Missing value at row {row + 2}, column '{column}'", row=row + 2, column=column)
    return values.to_numpy(dtype=float)


def load_csv(path, schema: CovariateSchema = CovariateSchema(), allow_missing_covariates: bool = False) -> TrialDataset:
    """
    Load a trial CSV into a ``TrialDataset``.

    Args:
        path: File path.
        schema (CovariateSchema): Declared covariates; the header must contain
            exactly the mandatory columns plus these names.
        allow_missing_covariates (bool): Accept empty covariate cells (not
            allowed for analysis).

    Returns:
        TrialDataset: Rows in file order; cluster sizes are the row counts.

    Raises:
        DataParseError: Malformed numeric cell (names row and column).
        SchemaError: Header mismatch or unknown arm label.
        ConsistencyError: A cluster appears in both arms.
    """
    if not os.path.exists(path):
        raise SchemaError(f"Input file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        text = _strip_provenance(f.read())
    raw = pd.read_csv(io.StringIO(text), dtype=str, keep_default_na=False, skipinitialspace=False)
    header = [c.strip() for c in raw.columns]
    raw.columns = header

    expected = list(MANDATORY_COLUMNS) + schema.names
    missing = [c for c in expected if c not in header]
    extra = [c for c in header if c not in expected]
    if missing or extra:
        raise SchemaError(f"Header mismatch in {path}: missing {missing}, unexpected {extra}")

    frame = pd.DataFrame({"cluster_id": raw["cluster_id"].str.strip()})
    if (frame["cluster_id"] == "").any():
        row = int((frame["cluster_id"] == "").idxmax())
        raise DataParseError(f"Empty cluster_id at row {row + 2}", row=row + 2, column="cluster_id")
    arms = []
    for i, label in enumerate(raw["arm"]):
        try:
            arms.append(int(Arm.parse(label)))
        except SchemaError as e:
            raise SchemaError(f"{e} at row {i + 2}") from e
    frame["arm"] = arms
    frame["cost"] = _parse_numeric(raw["cost"], "cost", allow_missing=True)
    frame["qaly"] = _parse_numeric(raw["qaly"], "qaly", allow_missing=True)
    for name in schema.names:
        values = _parse_numeric(raw[name], name, allow_missing=allow_missing_covariates)
        if schema.kind_of(name) == "binary" and not np.all(np.isin(values[~np.isnan(values)], (0.0, 1.0))):
            raise DataParseError(f"Binary covariate '{name}' must be 0/1", column=name)
        frame[name] = values
    if (frame["cost"] < 0).any():
        row = int((frame["cost"] < 0).idxmax())
        raise DataParseError(f"Negative cost at row {row + 2}", row=row + 2, column="cost")

    dataset = TrialDataset.from_frame(frame, schema)
    mask = dataset.mask.totals()
    logger.info("Loaded %s: %d rows, %d clusters, %d missing costs, %d missing QALYs",
                path, len(dataset), len(dataset.clusters), mask["cost_missing"], mask["qaly_missing"])
    return dataset


def _format_cell(value) -> str:
    if value is None or (isinstance(value, float) and np.isnan(value)):
        return ""
    return repr(float(value))


def save_csv(dataset: TrialDataset, path, provenance: Optional[Iterable[str]] = None) -> None:
    """
    Write a dataset in the standard CSV layout.

    Floats are written as shortest round-trip decimals so that loading the
    file reproduces every value bit-exactly; missing values are empty cells.
    Cluster sizes are not stored: they are recomputed from row counts on load,
    so only pre-filter datasets round-trip their sizes.
    """
    frame = dataset.frame
    out = pd.DataFrame({"cluster_id": frame["cluster_id"], "arm": frame["arm"].astype(int).astype(str)})
    for column in ["cost", "qaly"] + dataset.schema.names:
        out[column] = [_format_cell(v) for v in frame[column]]
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        for line in provenance or []:
            f.write(f"# {line}\n")
        out.to_csv(f, index=False, lineterminator="\n")
    logger.debug("Saved %d rows to %s", len(out), path)
