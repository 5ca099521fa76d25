"""Parameter-varying model order reduction of grid-based LPV systems by
eigenvalue-trajectory tracking, clustering and balanced truncation."""
from .benchmark import BenchmarkSpec, GroundTruth, generate
from .model import (GridLpvModel, LtiSnapshot, ModelError, ReducedLpvModel, interpolate,
                    load_model, save_model)
from .pipeline import ConfigError, PipelineConfig, PipelineResult, StageError, reduce_model
from .validation import pointwise_gap, validate

__version__ = "0.1.0"

__all__ = [
    "BenchmarkSpec", "ConfigError", "GridLpvModel", "GroundTruth", "LtiSnapshot", "ModelError",
    "PipelineConfig", "PipelineResult", "ReducedLpvModel", "StageError", "generate",
    "interpolate", "load_model", "pointwise_gap", "reduce_model", "save_model", "validate",
]
