from datetime import datetime
from typing import List, Optional

from pydantic import BaseModel

from .reports import RocPoint


class HealthResponse(BaseModel):
    """Response model for health check"""

    status: str
    app_name: str
    version: str
    model_loaded: bool
    timestamp: datetime


class ModelResponse(BaseModel):
    """Summary of the loaded keyword spotter"""

    topology: str
    label_mode: str
    criterion: str
    num_classes: int
    num_parameters: int
    subsample: int
    keywords: List[str]
    modes: List[str]


class DetectionView(BaseModel):
    keyword: str
    start_frame: int
    end_frame: int
    score: float


class SpotResponse(BaseModel):
    """Response model for keyword spotting on one uploaded utterance"""

    utt_id: str
    mode: str
    frames: int
    detections: List[DetectionView]
    filler_weight: Optional[float] = None


class EerResponse(BaseModel):
    eer: float
    roc: List[RocPoint]


class ErrorResponse(BaseModel):
    """Body of every failed request; `error` names the KwsError class for 400s"""

    error: str
    status_code: int
    detail: Optional[str] = None
