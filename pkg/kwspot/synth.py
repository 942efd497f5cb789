"""
Synthetic keyword-spotting corpus: Gaussian phone features over random word sequences.
"""
import logging
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from kwspot.errors import DataError
from kwspot.formats import read_sdkf, write_sdkf
from kwspot.models.configs import SynthConfig
from kwspot.units import (
    Lexicon,
    load_keywords,
    load_lexicon,
    load_transcripts,
    write_keywords,
    write_lexicon,
    write_transcripts,
)

logger = logging.getLogger(__name__)

SPLITS = ("train", "dev", "test")


class Utterance:
    def __init__(self, utt_id: str, words: Sequence[str], features: np.ndarray):
        self.utt_id = utt_id
        self.words = list(words)
        self.features = features

    @property
    def num_frames(self) -> int:
        return int(self.features.shape[0])

    def contains(self, keyword: Sequence[str]) -> bool:
        n = len(keyword)
        return any(tuple(self.words[i:i + n]) == tuple(keyword) for i in range(len(self.words) - n + 1))

    def __repr__(self) -> str:
        return f"Utterance({self.utt_id!r}, words={len(self.words)}, frames={self.num_frames})"


class Corpus:
    """Lexicon, keyword list, phone set and the train/dev/test utterances"""

    def __init__(self, phones: Sequence[str], lexicon: Lexicon, keywords: Sequence[Tuple[str, ...]],
                 splits: Dict[str, List[Utterance]]):
        self.phones = list(phones)
        self.lexicon = lexicon
        self.keywords = [tuple(k) for k in keywords]
        self.splits = splits

    def split(self, name: str) -> List[Utterance]:
        try:
            return self.splits[name]
        except KeyError:
            raise DataError(f"corpus has no {name!r} split") from None

    @property
    def feature_dim(self) -> int:
        for utts in self.splits.values():
            if utts:
                return int(utts[0].features.shape[1])
        raise DataError("corpus holds no utterances")

    def __repr__(self) -> str:
        sizes = ", ".join(f"{k}={len(v)}" for k, v in self.splits.items())
        return f"Corpus(phones={len(self.phones)}, keywords={len(self.keywords)}, {sizes})"


def _draw_pronunciation(rng: np.random.Generator, phones: List[str], lo: int, hi: int) -> Tuple[str, ...]:
    length = int(rng.integers(lo, hi + 1))
    return tuple(phones[i] for i in rng.integers(0, len(phones), size=length))


def _make_lexicon(rng: np.random.Generator, cfg: SynthConfig, phones: List[str]):
    entries: Dict[str, Tuple[str, ...]] = {}
    seen = set()
    keywords: List[Tuple[str, ...]] = []

    def add(word: str, lo: int, hi: int) -> None:
        for _ in range(1000):
            pron = _draw_pronunciation(rng, phones, lo, hi)
            if pron not in seen:
                seen.add(pron)
                entries[word] = pron
                return
        raise DataError(f"cannot draw a distinct pronunciation for {word}")

    for k in range(cfg.keyword_count):
        word = f"kw{k:02d}"
        add(word, cfg.keyword_min_phones, cfg.keyword_max_phones)
        keywords.append((word,))
    for w in range(cfg.lexicon_size - cfg.keyword_count):
        add(f"w{w:03d}", cfg.word_min_phones, cfg.word_max_phones)
    return Lexicon(entries=entries), keywords


def _utterance(rng: np.random.Generator, cfg: SynthConfig, utt_id: str, fillers: List[str],
               keywords: List[Tuple[str, ...]], lexicon: Lexicon, means: Dict[str, np.ndarray]) -> Utterance:
    n_words = int(rng.integers(1, cfg.max_words + 1))
    words = [fillers[i] for i in rng.integers(0, len(fillers), size=n_words)]
    if rng.random() < cfg.positive_fraction:
        kw = keywords[int(rng.integers(0, len(keywords)))]
        pos = int(rng.integers(0, len(words) + 1))
        words[pos:pos] = list(kw)
    frames = []
    for word in words:
        for phone in lexicon.pronunciation(word):
            d = int(rng.integers(cfg.min_duration, cfg.max_duration + 1))
            frames.append(means[phone] + cfg.noise_sigma * rng.standard_normal((d, cfg.feature_dim)))
    # stored as float32 on disk; keep the in-memory copy identical
    return Utterance(utt_id, words, np.vstack(frames).astype(np.float32).astype(np.float64))


def gen_corpus(cfg: SynthConfig) -> Corpus:
    """
    Generate a corpus from one seeded random stream

    Each phone gets a fixed Gaussian mean; an utterance is 1..max_words random
    non-keyword words, and with probability positive_fraction a keyword is
    inserted at a random position. Every phone lasts U[min, max] frames of
    mean + sigma * noise.
    """
    rng = np.random.default_rng(cfg.seed)
    phones = [f"p{i:02d}" for i in range(cfg.num_phones)]
    means = {p: cfg.mean_scale * rng.standard_normal(cfg.feature_dim) for p in phones}
    lexicon, keywords = _make_lexicon(rng, cfg, phones)
    keyword_words = {w for k in keywords for w in k}
    fillers = [w for w in lexicon.entries if w not in keyword_words]
    sizes = {"train": cfg.train_utterances, "dev": cfg.dev_utterances, "test": cfg.test_utterances}
    splits = {
        name: [_utterance(rng, cfg, f"{name}_{i:05d}", fillers, keywords, lexicon, means) for i in range(sizes[name])]
        for name in SPLITS
    }
    corpus = Corpus(phones, lexicon, keywords, splits)
    logger.info(f"Generated {corpus}")
    return corpus


def write_corpus(corpus: Corpus, root: Union[str, Path]) -> None:
    """lexicon.txt, keywords.txt, phones.txt and per split a transcript file plus one SDKF file per utterance"""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    write_lexicon(corpus.lexicon, root / "lexicon.txt")
    write_keywords(corpus.keywords, root / "keywords.txt")
    (root / "phones.txt").write_text("\n".join(corpus.phones) + "\n", encoding="utf-8")
    for name, utts in corpus.splits.items():
        split_dir = root / name
        (split_dir / "feats").mkdir(parents=True, exist_ok=True)
        write_transcripts({u.utt_id: u.words for u in utts}, split_dir / "text")
        for u in utts:
            write_sdkf(u.features, split_dir / "feats" / f"{u.utt_id}.sdkf")
    logger.info(f"Wrote corpus to {root}")


def read_corpus(root: Union[str, Path], splits: Sequence[str] = SPLITS) -> Corpus:
    root = Path(root)
    if not (root / "lexicon.txt").exists():
        raise DataError(f"{root} holds no corpus (lexicon.txt missing)")
    lexicon = load_lexicon(root / "lexicon.txt")
    keywords = load_keywords(root / "keywords.txt")
    phones = (root / "phones.txt").read_text(encoding="utf-8").split()
    loaded: Dict[str, List[Utterance]] = {}
    for name in splits:
        text = root / name / "text"
        if not text.exists():
            continue
        loaded[name] = [
            Utterance(utt_id, words, read_sdkf(root / name / "feats" / f"{utt_id}.sdkf"))
            for utt_id, words in sorted(load_transcripts(text).items())
        ]
    return Corpus(phones, lexicon, keywords, loaded)
