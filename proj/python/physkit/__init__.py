"""Python bindings for the physkit C++ core."""

from ._physkit import (
    ContractError,
    EstimationError,
    ParseError,
    PhysError,
    cli,
    dds_forward,
    dwt,
    estimate_hr,
    gen_clip,
    idwt,
    metrics,
    signal_stats,
    stationarity_report,
)

__all__ = [
    "ContractError",
    "EstimationError",
    "ParseError",
    "PhysError",
    "cli",
    "dds_forward",
    "dwt",
    "estimate_hr",
    "gen_clip",
    "idwt",
    "metrics",
    "signal_stats",
    "stationarity_report",
]
