"""False discovery rate control with e-values."""

from .core import (
    Calibrator,
    EvidenceError,
    EvidenceVector,
    Kind,
    KindMismatchError,
    PowerCalibrator,
    TableCalibrator,
    Weights,
    calibrate_p_to_e,
    e_to_p,
    harmonic_sum,
    truncate,
    truncation_grid,
)
from .procedures import (
    TestOutcome,
    bh,
    by,
    cbh,
    cbh_level,
    e_bh,
    is_self_consistent,
    post_selection_e_bh,
    structured_e_bh,
    weighted_e_bh,
)
from .boosting import (
    BoostResult,
    CalibratorNull,
    EmpiricalNull,
    LogNormalLR,
    apply_boost,
    boost_factor,
    boost_factor_quantile,
    tail_mass_decreasing,
)

__version__ = "0.1.0"
