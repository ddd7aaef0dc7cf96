from .motion import associate, classify_motion, select_constraints
from .surrogate import (
    DetectionLoss,
    DetectorSurrogate,
    DimensionMismatch,
    StereoImagePair,
    detect,
    fit_surrogate,
    load_default,
    loss_and_gradient,
    render,
)

__all__ = [
    "DetectionLoss",
    "DetectorSurrogate",
    "DimensionMismatch",
    "StereoImagePair",
    "associate",
    "classify_motion",
    "detect",
    "fit_surrogate",
    "load_default",
    "loss_and_gradient",
    "render",
    "select_constraints",
]
