import numpy as np
import pytest
from numpy.testing import assert_array_equal

from kwspot.errors import DataError
from kwspot.synth import Utterance, gen_corpus, read_corpus, write_corpus
from tests.conftest import tiny_synth


def test_corpus_shape():
    corpus = gen_corpus(tiny_synth())
    assert len(corpus.phones) == 4
    assert len(corpus.keywords) == 2
    assert len(corpus.lexicon.entries) == 8
    assert [len(corpus.split(s)) for s in ("train", "dev", "test")] == [12, 16, 10]
    assert corpus.feature_dim == 3
    for kw in corpus.keywords:
        assert len(corpus.lexicon.pronunciation(kw[0])) == 3


def test_noise_free_frames_repeat_phone_means():
    corpus = gen_corpus(tiny_synth(noise_sigma=0.0))
    for utt in corpus.split("train"):
        # every phone lasts at least min_duration frames
        assert_array_equal(utt.features[0], utt.features[2])
        assert len(np.unique(utt.features, axis=0)) <= 4


def test_same_seed_same_corpus(tmp_path):
    first, second = gen_corpus(tiny_synth()), gen_corpus(tiny_synth())
    for a, b in zip(first.split("test"), second.split("test")):
        assert a.words == b.words
        assert_array_equal(a.features, b.features)

    write_corpus(first, tmp_path / "one")
    write_corpus(second, tmp_path / "two")
    files = sorted(p.relative_to(tmp_path / "one") for p in (tmp_path / "one").rglob("*") if p.is_file())
    assert files
    for rel in files:
        assert (tmp_path / "one" / rel).read_bytes() == (tmp_path / "two" / rel).read_bytes()


def test_different_seed_different_corpus():
    a = gen_corpus(tiny_synth(seed=1)).split("train")[0]
    b = gen_corpus(tiny_synth(seed=2)).split("train")[0]
    assert a.features.shape != b.features.shape or not np.array_equal(a.features, b.features)


def test_read_corpus(tmp_path):
    corpus = gen_corpus(tiny_synth())
    write_corpus(corpus, tmp_path)
    again = read_corpus(tmp_path)
    assert again.phones == corpus.phones
    assert again.keywords == corpus.keywords
    assert again.lexicon.entries == corpus.lexicon.entries
    for a, b in zip(corpus.split("dev"), again.split("dev")):
        assert (a.utt_id, a.words) == (b.utt_id, b.words)
        assert_array_equal(a.features, b.features)


def test_read_corpus_missing(tmp_path):
    with pytest.raises(DataError):
        read_corpus(tmp_path)


def test_read_corpus_selected_splits(tmp_path):
    write_corpus(gen_corpus(tiny_synth()), tmp_path)
    corpus = read_corpus(tmp_path, splits=["test"])
    assert list(corpus.splits) == ["test"]
    with pytest.raises(DataError):
        corpus.split("train")


def test_utterance_contains():
    utt = Utterance("u", ["a", "kw", "b"], np.zeros((3, 1)))
    assert utt.contains(("kw",))
    assert utt.contains(("kw", "b"))
    assert not utt.contains(("b", "a"))
