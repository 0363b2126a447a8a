"""Track resampling, smoothing, windowing, splitting and dataset persistence."""

from .dataset_io import read_dataset, read_samples, write_dataset, write_samples
from .kalman import SmoothedTrack, kalman_smooth, linear_filter, resample_10hz
from .split import DatasetSplit, assign_objects, base_object_id, split_by_object
from .windows import (
    FEATURE_DIM,
    HISTORY,
    HORIZONS,
    FeatureStats,
    Sample,
    SampleSet,
    build_features,
    check_feature_ranges,
    extract_windows,
    window_count,
)

__all__ = [
    "DatasetSplit",
    "FEATURE_DIM",
    "FeatureStats",
    "HISTORY",
    "HORIZONS",
    "Sample",
    "SampleSet",
    "SmoothedTrack",
    "assign_objects",
    "base_object_id",
    "build_features",
    "check_feature_ranges",
    "extract_windows",
    "kalman_smooth",
    "linear_filter",
    "read_dataset",
    "read_samples",
    "resample_10hz",
    "split_by_object",
    "window_count",
    "write_dataset",
    "write_samples",
]
