"""Quality-weighted fusion of multi-site PPG for heart-rate estimation."""

__version__ = "0.1.0"

from .core import (AlignedSet, BeatSeries, BeatTemplate, EcgSignal, HrSeries, PipelineError,
                   QualityTrace, Signal, Site, validate_aligned_set)
from .pipeline import Estimator, PipelineConfig, estimate_hr, reference_hr

__all__ = [
    "AlignedSet", "BeatSeries", "BeatTemplate", "EcgSignal", "Estimator", "HrSeries",
    "PipelineConfig", "PipelineError", "QualityTrace", "Signal", "Site", "estimate_hr",
    "reference_hr", "validate_aligned_set",
]
