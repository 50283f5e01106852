"""Normalized convolution for sparse depth completion."""

from ._nconv import (
    CONFIDENCE_SCALE,
    DEPTH_SCALE,
    Error,
    FormatError,
    Net,
    RangeError,
    ShapeError,
    TrainingDiverged,
    conf_error_pearson,
    depth_metrics,
    gaussian_kernel,
    gradcheck_network,
    nconv_forward,
    normalized_average,
    read_pgm16,
    synthetic_set,
    write_pgm16,
)

__all__ = [
    "CONFIDENCE_SCALE",
    "DEPTH_SCALE",
    "Error",
    "FormatError",
    "Net",
    "RangeError",
    "ShapeError",
    "TrainingDiverged",
    "conf_error_pearson",
    "depth_metrics",
    "gaussian_kernel",
    "gradcheck_network",
    "nconv_forward",
    "normalized_average",
    "read_pgm16",
    "synthetic_set",
    "write_pgm16",
]
