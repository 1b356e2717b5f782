"""Differentially private eye-movement feature release and privacy-utility evaluation."""

from .dp import (
    FeatureRange,
    PrivacyReceipt,
    SanitizerParams,
    estimate_ranges,
    sanitize_dataset,
    sanitize_series,
    subsample,
)
from .features import (
    FeatureCatalogue,
    FeatureDataset,
    FeatureSeries,
    build_wordbook,
    default_catalogue,
    extract_features,
    read_feature_csv,
    write_feature_csv,
)
from .ingest import DetectionConfig, EventSequence, GazeRecording, detect_events, parse_gaze_csv
from .synth import SynthSpec, generate

__version__ = "0.1.0"

__all__ = [
    "DetectionConfig",
    "EventSequence",
    "FeatureCatalogue",
    "FeatureDataset",
    "FeatureRange",
    "FeatureSeries",
    "GazeRecording",
    "PrivacyReceipt",
    "SanitizerParams",
    "SynthSpec",
    "build_wordbook",
    "default_catalogue",
    "detect_events",
    "estimate_ranges",
    "extract_features",
    "generate",
    "parse_gaze_csv",
    "read_feature_csv",
    "sanitize_dataset",
    "sanitize_series",
    "subsample",
    "write_feature_csv",
]
