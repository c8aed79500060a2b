"""millwear: tool-condition monitoring for single-axis milling vibration data.

Pipeline: segment raw acceleration recordings into in-cut intervals, extract
spectral and statistical features over moving windows, train classical
worn/not-worn classifiers, and evaluate them under tool-life-cycle-aware
splits.  A synthetic generator provides labeled data with known ground
truth.
"""

__version__ = "0.1.0"

from .errors import (
    ConvergenceError,
    DataError,
    FormatError,
    LengthError,
    MillwearError,
    ParameterError,
    ShapeError,
    TrainingError,
)

__all__ = [
    "__version__",
    "MillwearError",
    "ParameterError",
    "LengthError",
    "DataError",
    "ShapeError",
    "FormatError",
    "TrainingError",
    "ConvergenceError",
]
