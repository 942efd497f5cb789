from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator


class EpochStats(BaseModel):
    """Summary of one training epoch"""

    epoch: int
    criterion: str
    loss: float
    frames: int
    utterances: int
    skipped: int = 0
    learning_rate: float


class Detection(BaseModel):
    """Keyword hit inside one utterance (frames at the decoder's frame rate)"""

    model_config = ConfigDict(frozen=True)

    utt_id: str = ""
    keyword: int
    start_frame: int
    end_frame: int
    score: float

    @model_validator(mode="after")
    def _check_span(self):
        if self.start_frame > self.end_frame:
            raise ValueError("detection starts after it ends")
        if self.score != self.score or self.score in (float("inf"), float("-inf")):
            raise ValueError("detection score must be finite")
        return self


class RocPoint(BaseModel):
    threshold: float
    far: float
    frr: float


class EerResult(BaseModel):
    eer: float = Field(ge=0.0, le=1.0)
    roc: List[RocPoint]


class MetricsReport(BaseModel):
    """Evaluation result of one post-processing mode; written byte-stable (no timing inside)"""

    mode: str
    eer: float = Field(ge=0.0, le=1.0)
    faf: float = Field(ge=0.0)
    positives: int
    negatives: int
    detections: int
    roc: List[RocPoint]


class TimingReport(BaseModel):
    """Real-time factors per post-processing mode"""

    rtf: Dict[str, float]
    audio_seconds: float


class TrainingReport(BaseModel):
    criterion: str
    topology: str
    epochs: List[EpochStats]
    denominator_states: Optional[int] = None
    denominator_arcs: Optional[int] = None
