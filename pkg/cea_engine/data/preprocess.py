"""
Preprocessing filters applied before analysis.
"""
from typing import Tuple

import numpy as np

from cea_engine.data.models import Arm, TrialDataset
from cea_engine.exceptions import ConsistencyError
from cea_engine.utils import logger


def filter_positive_costs(dataset: TrialDataset) -> Tuple[TrialDataset, int]:
    """
    Remove rows whose observed cost is zero or negative.

    Rows with a missing cost are retained and cluster sizes keep their
    randomized (pre-filter) values. Applying the filter twice is a no-op.

    Returns:
        Tuple[TrialDataset, int]: The filtered dataset and the number of rows removed.
    """
    costs = dataset.costs()
    drop = ~np.isnan(costs) & (costs <= 0)
    removed = int(drop.sum())
    if removed == 0:
        return dataset, 0
    arms = dataset.frame["arm"].to_numpy()[drop]
    logger.info("Excluding %d zero-cost rows (%d control, %d intervention)",
                removed, int((arms == Arm.CONTROL).sum()), int((arms == Arm.INTERVENTION).sum()))
    return dataset.subset(~drop), removed


def split_by_arm(dataset: TrialDataset) -> Tuple[TrialDataset, TrialDataset]:
    """
    Partition rows and clusters by arm.

    Returns:
        Tuple[TrialDataset, TrialDataset]: (control, intervention).

    Raises:
        ConsistencyError: If either arm has no rows.
    """
    arm = dataset.frame["arm"].to_numpy()
    parts = []
    for value in (Arm.CONTROL, Arm.INTERVENTION):
        rows = arm == int(value)
        if not rows.any():
            raise ConsistencyError(f"The {value.label} arm has no rows")
        parts.append(dataset.subset(rows))
    return parts[0], parts[1]
