from .configs import (
    AccuracyLevel,
    CriterionConfig,
    CriterionKind,
    DecodeConfig,
    ExperimentConfig,
    LabelMode,
    LMConfig,
    MedConfig,
    NUConfig,
    PostMode,
    SmoothConfig,
    SynthConfig,
    TopologyConfig,
    TopologyKind,
    TrainConfig,
)
from .reports import (
    Detection,
    EerResult,
    EpochStats,
    MetricsReport,
    RocPoint,
    TimingReport,
    TrainingReport,
)
from .requests import EerRequest
from .responses import (
    DetectionView,
    EerResponse,
    ErrorResponse,
    HealthResponse,
    ModelResponse,
    SpotResponse,
)

__all__ = [
    "AccuracyLevel",
    "CriterionConfig",
    "CriterionKind",
    "DecodeConfig",
    "ExperimentConfig",
    "LabelMode",
    "LMConfig",
    "MedConfig",
    "NUConfig",
    "PostMode",
    "SmoothConfig",
    "SynthConfig",
    "TopologyConfig",
    "TopologyKind",
    "TrainConfig",
    "Detection",
    "EerResult",
    "EpochStats",
    "MetricsReport",
    "RocPoint",
    "TimingReport",
    "TrainingReport",
    "EerRequest",
    "DetectionView",
    "EerResponse",
    "HealthResponse",
    "ModelResponse",
    "SpotResponse",
    "ErrorResponse",
]
