"""Homography estimation guided by video-coding motion vectors."""
from .errors import (DegenerateConfiguration, DimensionMismatch, EmptyMask, FormatError,
                     ImageTooSmall, MvHomoError, ParamOutOfRange, PointAtInfinity,
                     VersionError, WindowTooLarge)
from .motion_coding import MotionVectorField, RDParams, estimate_motion
from .pipeline import EstimateResult, PipelineConfig, estimate_homography

__version__ = "0.1.0"

__all__ = [
    "DegenerateConfiguration", "DimensionMismatch", "EmptyMask", "FormatError",
    "ImageTooSmall", "MvHomoError", "ParamOutOfRange", "PointAtInfinity",
    "VersionError", "WindowTooLarge", "MotionVectorField", "RDParams",
    "estimate_motion", "EstimateResult", "PipelineConfig", "estimate_homography",
]
