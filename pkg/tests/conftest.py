from typing import Sequence

import numpy as np
import pytest

from kwspot.dependencies import set_decoder_service
from kwspot.models.configs import (
    CriterionConfig,
    CriterionKind,
    DecodeConfig,
    ExperimentConfig,
    LabelMode,
    SynthConfig,
    TopologyConfig,
    TopologyKind,
    TrainConfig,
)
from kwspot.topology import Topology, build_topology
from kwspot.units import LabelSequence, Lexicon, UnitInventory


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def lexicon():
    return Lexicon(entries={
        "go": ("g", "ow"),
        "up": ("ah", "p"),
        "hi": ("hh", "ay"),
        "cat": ("k", "ae", "t"),
    })


@pytest.fixture
def phones():
    return ["g", "ow", "ah", "p", "hh", "ay", "k", "ae", "t"]


@pytest.fixture
def make_topology():
    """Factory: topology of a kind over plain phone units (blank added for CTC)"""

    def make(kind: TopologyKind, phones: Sequence[str] = ("a", "b"), self_loop: float = 0.5) -> Topology:
        inventory = UnitInventory.for_mode(list(phones), LabelMode.PHONE, ctc=kind == TopologyKind.CTC)
        return build_topology(kind, inventory, self_loop)

    return make


@pytest.fixture
def labels():
    def make(*units: int) -> LabelSequence:
        return LabelSequence(units=tuple(units))

    return make


def tiny_synth(**overrides) -> SynthConfig:
    values = dict(
        num_phones=4,
        feature_dim=3,
        mean_scale=3.0,
        noise_sigma=0.3,
        min_duration=3,
        max_duration=5,
        lexicon_size=8,
        keyword_count=2,
        keyword_min_phones=3,
        keyword_max_phones=3,
        word_min_phones=2,
        word_max_phones=3,
        max_words=2,
        train_utterances=12,
        dev_utterances=16,
        test_utterances=10,
        seed=5,
    )
    values.update(overrides)
    return SynthConfig(**values)


def tiny_experiment(workdir, **overrides) -> ExperimentConfig:
    """Small, fast experiment: HMM-BP with LF-bMMI unless overridden"""
    values = dict(
        seed=5,
        workdir=str(workdir),
        synth=tiny_synth(),
        topology=TopologyConfig(kind=TopologyKind.HMM_BP),
        criterion=CriterionConfig(kind=CriterionKind.LF_BMMI, subsample=2, tolerance=1),
        train=TrainConfig(epochs=2, ce_epochs=1, hidden=[8], batch_size=4, context=1),
        decode=DecodeConfig(sweep_weights=[0.0, -2.0, -6.0]),
    )
    values.update(overrides)
    return ExperimentConfig(**values)


@pytest.fixture
def tiny_config(tmp_path):
    return tiny_experiment(tmp_path / "exp")


@pytest.fixture(autouse=True)
def no_global_decoder():
    set_decoder_service(None)
    yield
    set_decoder_service(None)
