from cea_engine.cea.report import (
    CURVE_COLUMNS,
    ArmSummary,
    CeaSummary,
    Increments,
    InbPoint,
    curve_frame,
    inb,
    inb_curve,
    increments,
)

__all__ = [
    'CURVE_COLUMNS',
    'ArmSummary',
    'CeaSummary',
    'Increments',
    'InbPoint',
    'curve_frame',
    'inb',
    'inb_curve',
    'increments',
]
