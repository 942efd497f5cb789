from enum import Enum
from typing import FrozenSet, List, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator


class TopologyKind(str, Enum):
    """Per-unit hidden state topologies"""
    HMM5 = "hmm5"
    CTC = "ctc"
    HMM_PB = "hmm_pb"
    HMM_BP = "hmm_bp"
    HMM_BPB = "hmm_bpb"
    MONO = "mono"


class CriterionKind(str, Enum):
    CE = "ce"
    CTC = "ctc"
    LF_MMI = "lf_mmi"
    LF_BMMI = "lf_bmmi"
    LF_SMBR = "lf_smbr"


class LabelMode(str, Enum):
    """How transcripts become label sequences"""
    PHONE = "phone"      # plain phone expansion
    SUBWORD = "subword"  # phones with wb between words
    WORD = "word"        # keywords as units, filler for everything else


class PostMode(str, Enum):
    SMOOTH = "smooth"
    KWFILLER = "kwfiller"
    MED = "med"
    CASCADE = "cascade"  # smoothing pre-selection, kw-filler verification


class AccuracyLevel(str, Enum):
    PHONE = "phone"
    STATE = "state"


class TopologyConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: TopologyKind = TopologyKind.HMM_BP
    self_loop: float = Field(default=0.5, gt=0.0, lt=1.0)
    label_mode: LabelMode = LabelMode.PHONE

    @model_validator(mode="after")
    def _check_mode(self):
        if self.label_mode != LabelMode.PHONE and self.kind != TopologyKind.CTC:
            raise ValueError("subword/word label modes need the ctc topology")
        return self


class LMConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    order: int = Field(default=2, ge=1, le=3)
    max_ngrams: Optional[int] = Field(default=None, ge=1)


class CriterionConfig(BaseModel):
    """Training objective and its hyperparameters"""

    model_config = ConfigDict(frozen=True)

    kind: CriterionKind = CriterionKind.LF_BMMI
    kappa: float = Field(default=1.0, ge=0.0)
    boost: float = Field(default=0.1, ge=0.0)
    cew: float = Field(default=0.7, ge=0.0, le=1.0)
    tolerance: int = Field(default=2, ge=0)
    subsample: int = Field(default=3, ge=1)
    accuracy: AccuracyLevel = AccuracyLevel.PHONE


class NUConfig(BaseModel):
    """Non-uniform gradient weights for keyword false rejections/alarms"""

    model_config = ConfigDict(frozen=True)

    alpha: float = Field(default=2.5, ge=1.0)
    beta: float = Field(default=2.5, ge=1.0)
    keyword_units: FrozenSet[int] = frozenset()


class TrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    epochs: int = Field(default=6, ge=0)
    ce_epochs: int = Field(default=2, ge=0)
    learning_rate: float = Field(default=0.05, ge=0.0)
    batch_size: int = Field(default=8, ge=1)
    hidden: List[int] = Field(default_factory=lambda: [64, 64])
    context: int = Field(default=2, ge=0)
    halve_on_plateau: bool = True
    use_nu: bool = False
    init_scale: float = Field(default=0.1, gt=0.0)


class SmoothConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    w_s: int = Field(default=3, ge=1)
    w_m: int = Field(default=10, ge=1)


class DecodeConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    filler_weight: float = -1.0
    sweep_weights: List[float] = Field(
        default_factory=lambda: [0.0, -0.5, -1.0, -2.0, -3.0, -4.0, -6.0, -8.0]
    )
    blank_skip: Optional[float] = Field(default=None, gt=0.0, le=1.0)
    prior_floor: float = Field(default=1e-6, gt=0.0)
    cascade_offset: float = -1.0


class MedConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    h_node: float = Field(default=0.01, gt=0.0, le=1.0)
    spike: float = Field(default=0.5, gt=0.0, le=1.0)
    floor: float = Field(default=1e-4, gt=0.0, lt=0.1)
    posterior_scale: float = Field(default=0.0, ge=0.0)
    merge_repeats: bool = True


class SynthConfig(BaseModel):
    """Synthetic corpus generator settings"""

    model_config = ConfigDict(frozen=True)

    num_phones: int = Field(default=12, ge=2)
    feature_dim: int = Field(default=13, ge=1)
    mean_scale: float = Field(default=1.5, ge=0.0)
    noise_sigma: float = Field(default=1.0, ge=0.0)
    min_duration: int = Field(default=6, ge=1)
    max_duration: int = Field(default=15, ge=1)
    lexicon_size: int = Field(default=60, ge=2)
    keyword_count: int = Field(default=5, ge=1)
    keyword_min_phones: int = Field(default=3, ge=1)
    keyword_max_phones: int = Field(default=12, ge=1)
    word_min_phones: int = Field(default=2, ge=1)
    word_max_phones: int = Field(default=5, ge=1)
    max_words: int = Field(default=4, ge=1)
    positive_fraction: float = Field(default=0.5, ge=0.0, le=1.0)
    train_utterances: int = Field(default=2000, ge=1)
    dev_utterances: int = Field(default=200, ge=1)
    test_utterances: int = Field(default=300, ge=1)
    seed: int = 17

    @model_validator(mode="after")
    def _check_ranges(self):
        if self.min_duration > self.max_duration:
            raise ValueError("min_duration must not exceed max_duration")
        if self.keyword_min_phones > self.keyword_max_phones:
            raise ValueError("keyword_min_phones must not exceed keyword_max_phones")
        if self.word_min_phones > self.word_max_phones:
            raise ValueError("word_min_phones must not exceed word_max_phones")
        if self.keyword_count >= self.lexicon_size:
            raise ValueError("keyword_count must be smaller than lexicon_size")
        return self


class ExperimentConfig(BaseModel):
    """Everything one gen-data/train/decode/eval run needs"""

    model_config = ConfigDict(frozen=True)

    seed: int = 17
    threads: int = Field(default=1, ge=1)
    workdir: str = "exp"
    frame_shift_ms: float = Field(default=10.0, gt=0.0)
    post: PostMode = PostMode.KWFILLER
    synth: SynthConfig = Field(default_factory=SynthConfig)
    topology: TopologyConfig = Field(default_factory=TopologyConfig)
    lm: LMConfig = Field(default_factory=LMConfig)
    criterion: CriterionConfig = Field(default_factory=CriterionConfig)
    nu: NUConfig = Field(default_factory=NUConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    smooth: SmoothConfig = Field(default_factory=SmoothConfig)
    decode: DecodeConfig = Field(default_factory=DecodeConfig)
    med: MedConfig = Field(default_factory=MedConfig)

    @model_validator(mode="after")
    def _check_criterion(self):
        is_ctc = self.topology.kind == TopologyKind.CTC
        if is_ctc != (self.criterion.kind == CriterionKind.CTC):
            raise ValueError("the ctc criterion and the ctc topology go together")
        if self.post == PostMode.MED and not is_ctc:
            raise ValueError("med post-processing needs a ctc model")
        return self

    def with_overrides(
        self,
        seed: Optional[int] = None,
        threads: Optional[int] = None,
        criterion: Optional[str] = None,
        topology: Optional[str] = None,
        post: Optional[str] = None,
    ) -> "ExperimentConfig":
        """Return a re-validated copy with command-line overrides applied"""
        data = self.model_dump(mode="json")
        if seed is not None:
            data["seed"] = seed
            data["synth"]["seed"] = seed
        if threads is not None:
            data["threads"] = threads
        if criterion is not None:
            data["criterion"]["kind"] = criterion
        if topology is not None:
            data["topology"]["kind"] = topology
        if post is not None:
            data["post"] = post
        return ExperimentConfig.model_validate(data)
