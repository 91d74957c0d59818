import hashlib

from cea_engine.utils.logging import logger, set_level
from cea_engine.utils.tables import read_table, write_table


def hashstr(input_string, length=8):
    """Short stable md5 digest used for provenance headers."""
    digest = hashlib.md5(str(input_string).encode()).hexdigest()
    return digest[:length]


__all__ = ["logger", "set_level", "hashstr", "read_table", "write_table"]
