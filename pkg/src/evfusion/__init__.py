"""Evidential late fusion of 3D and 2D object detections."""

from .errors import (
    CalibrationError,
    ConfigError,
    DegenerateOpinionError,
    DimensionError,
    FusionError,
    InvalidEvidenceError,
    ParseError,
    TotalConflictError,
)
from .estimator import LateFusionDetector
from .evidence import Opinion, combine_opinions, conflict, evidence_from_opinion, opinion_from_evidence
from .geometry import Box2D, Box3D, Calibration
from .matching import Detection2D, Detection3D
from .pipeline import FusedDetection, Frame, PipelineConfig, fuse_frame, train

__version__ = "0.1.0"
