"""DMD models corrected online by an ensemble Kalman filter."""

from .dmd import (
    DmdModel,
    SnapshotPair,
    SvdTruncation,
    build_snapshots,
    delay_embed,
    fit_exact_dmd,
    fit_tdmd,
    predict,
)
from .model import (
    DmdEnkfConfig,
    DmdEnkfModel,
    assimilate,
    detect_and_respin,
    encode_mu,
    forecast,
    spin_up,
)

__all__ = [
    "DmdModel",
    "SnapshotPair",
    "SvdTruncation",
    "build_snapshots",
    "delay_embed",
    "fit_exact_dmd",
    "fit_tdmd",
    "predict",
    "DmdEnkfConfig",
    "DmdEnkfModel",
    "assimilate",
    "detect_and_respin",
    "encode_mu",
    "forecast",
    "spin_up",
]
