"""
Result tables on disk: CSV with optional ``#`` provenance lines on top.
"""
import io
import os

import pandas as pd


def write_table(frame: pd.DataFrame, path, provenance=None):
    """Write ``frame`` as CSV; floats use the shortest round-trip representation."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        for line in provenance or []:
            f.write(f"# {line}\n")
        frame.to_csv(f, index=False, lineterminator="\n")


def read_table(path) -> pd.DataFrame:
    """Read a table written by ``write_table``, skipping its provenance lines."""
    with open(path, "r", encoding="utf-8") as f:
        lines = [line for line in f if not line.startswith("#")]
    return pd.read_csv(io.StringIO("".join(lines)), float_precision="round_trip")
