"""Deep feature-ensemble fault detection for multivariate process data.

A bank of statistical detectors turns raw measurements into a feature
integration matrix; stacked transformation layers (sliding-window
singular values, PCA, autoencoder codes) refine it; a 1-norm detection
index with an empirical control limit flags faults.
"""

from .autoencoder import TrainConfig, TrainingDivergedError, Variant
from .datasets import (
    ProcessDataset,
    SyntheticConfig,
    attach_onset_labels,
    generate_synthetic,
    load_csv,
    write_csv,
)
from .detectors import DetectorBank, DetectorBankConfig, fit_detector_bank
from .ensemble import FeatureMatrix, build_feature_matrix
from .evaluation import (
    ExperimentGrid,
    ExperimentReport,
    ScenarioSpec,
    far,
    fdr,
    format_report,
    read_grid,
    run_experiment,
    write_report,
)
from .pipeline import (
    DetectionResult,
    DetectionSummary,
    FenetModel,
    PipelineConfig,
    detect,
    fit,
    load,
    read_pipeline_config,
    save,
    write_pipeline_config,
)
from .transform import LayerConfig, TransformLayer, apply_layer, fit_layer

__version__ = "0.1.0"

__all__ = [
    "DetectionResult",
    "DetectionSummary",
    "DetectorBank",
    "DetectorBankConfig",
    "ExperimentGrid",
    "ExperimentReport",
    "FeatureMatrix",
    "FenetModel",
    "LayerConfig",
    "PipelineConfig",
    "ProcessDataset",
    "ScenarioSpec",
    "SyntheticConfig",
    "TrainConfig",
    "TrainingDivergedError",
    "TransformLayer",
    "Variant",
    "apply_layer",
    "attach_onset_labels",
    "build_feature_matrix",
    "detect",
    "far",
    "fdr",
    "fit",
    "fit_detector_bank",
    "fit_layer",
    "format_report",
    "generate_synthetic",
    "load",
    "load_csv",
    "read_grid",
    "read_pipeline_config",
    "run_experiment",
    "save",
    "write_csv",
    "write_pipeline_config",
    "write_report",
    "__version__",
]
