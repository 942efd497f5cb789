import logging
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, model_validator

from kwspot.errors import DataError, LexiconError, MissingSpecialUnit, UnknownUnit, UnknownWord
from kwspot.models.configs import LabelMode

logger = logging.getLogger(__name__)


class SpecialUnit(str, Enum):
    BLANK = "<blank>"
    WB = "<wb>"
    FILLER = "<filler>"


class LabelKind(str, Enum):
    WORD = "word"
    SUBWORD = "subword"


class UnitInventory(BaseModel):
    """Phones (or word units) followed by special units, with dense ids"""

    model_config = ConfigDict(frozen=True)

    phones: Tuple[str, ...]
    specials: Tuple[SpecialUnit, ...] = ()

    @model_validator(mode="after")
    def _check_symbols(self):
        if not self.phones:
            raise ValueError("inventory needs at least one phone")
        if len(set(self.phones)) != len(self.phones):
            raise ValueError("duplicate phone symbols")
        if len(set(self.specials)) != len(self.specials):
            raise ValueError("duplicate special units")
        clash = set(self.phones) & {s.value for s in SpecialUnit}
        if clash:
            raise ValueError(f"phone symbols collide with special units: {sorted(clash)}")
        return self

    @classmethod
    def for_mode(cls, symbols: Sequence[str], mode: LabelMode, ctc: bool) -> "UnitInventory":
        """
        Build the inventory a label mode needs

        Args:
            symbols: phones (phone/subword mode) or keyword words (word mode)
            mode: label mapping in use
            ctc: whether a CTC topology consumes the labels (adds blank)
        """
        specials: List[SpecialUnit] = []
        if mode == LabelMode.SUBWORD:
            specials.append(SpecialUnit.WB)
        elif mode == LabelMode.WORD:
            specials.append(SpecialUnit.FILLER)
        if ctc:
            specials.append(SpecialUnit.BLANK)
        return cls(phones=tuple(symbols), specials=tuple(specials))

    @property
    def total_units(self) -> int:
        return len(self.phones) + len(self.specials)

    @property
    def symbols(self) -> Tuple[str, ...]:
        return self.phones + tuple(s.value for s in self.specials)

    @property
    def phone_ids(self) -> range:
        return range(len(self.phones))

    def id_of(self, symbol: str) -> int:
        try:
            return self.symbol_table()[symbol]
        except KeyError:
            raise UnknownUnit(symbol) from None

    def symbol_of(self, unit: int) -> str:
        if not 0 <= unit < self.total_units:
            raise UnknownUnit(unit)
        return self.symbols[unit]

    def has(self, special: SpecialUnit) -> bool:
        return special in self.specials

    def special_id(self, special: SpecialUnit) -> int:
        if special not in self.specials:
            raise MissingSpecialUnit(special.value)
        return len(self.phones) + self.specials.index(special)

    def blank_id(self) -> Optional[int]:
        return self.special_id(SpecialUnit.BLANK) if self.has(SpecialUnit.BLANK) else None

    def is_phone(self, unit: int) -> bool:
        return 0 <= unit < len(self.phones)

    def symbol_table(self) -> Dict[str, int]:
        return {s: i for i, s in enumerate(self.symbols)}


class Lexicon(BaseModel):
    """Single-pronunciation lexicon: word -> phone symbols"""

    model_config = ConfigDict(frozen=True)

    entries: Dict[str, Tuple[str, ...]]

    @model_validator(mode="after")
    def _check_entries(self):
        for word, pron in self.entries.items():
            if not pron:
                raise ValueError(f"empty pronunciation for {word!r}")
        return self

    def pronunciation(self, word: str) -> Tuple[str, ...]:
        try:
            return self.entries[word]
        except KeyError:
            raise UnknownWord(word) from None

    def check(self, inventory: UnitInventory) -> None:
        """Raise UnknownUnit if any pronunciation uses a phone missing from the inventory"""
        known = set(inventory.phones)
        for pron in self.entries.values():
            for phone in pron:
                if phone not in known:
                    raise UnknownUnit(phone)

    def phones(self) -> List[str]:
        seen: Dict[str, None] = {}
        for pron in self.entries.values():
            for phone in pron:
                seen.setdefault(phone, None)
        return sorted(seen)


class LabelSequence(BaseModel):
    """Non-empty, blank-free sequence of unit ids"""

    model_config = ConfigDict(frozen=True)

    units: Tuple[int, ...]
    kind: LabelKind = LabelKind.SUBWORD

    @model_validator(mode="after")
    def _check_units(self):
        if not self.units:
            raise ValueError("label sequence must not be empty")
        return self

    def __len__(self) -> int:
        return len(self.units)

    def symbols(self, inventory: UnitInventory) -> List[str]:
        return [inventory.symbol_of(u) for u in self.units]

    @classmethod
    def from_symbols(
        cls, symbols: Sequence[str], inventory: UnitInventory, kind: LabelKind = LabelKind.SUBWORD
    ) -> "LabelSequence":
        units = tuple(inventory.id_of(s) for s in symbols)
        blank = inventory.blank_id()
        if blank is not None and blank in units:
            raise DataError("blank is inserted by topology compilation, not by transcripts")
        return cls(units=units, kind=kind)


def expand_keyword(words: Sequence[str], lexicon: Lexicon, inventory: UnitInventory) -> LabelSequence:
    """Concatenate the pronunciations of a keyword phrase"""
    phones: List[str] = []
    for word in words:
        phones.extend(lexicon.pronunciation(word))
    return LabelSequence.from_symbols(phones, inventory, LabelKind.SUBWORD)


def apply_label_map(
    transcript: Sequence[str],
    mode: LabelMode,
    keywords: Iterable[str],
    lexicon: Lexicon,
    inventory: UnitInventory,
) -> LabelSequence:
    """
    Map a word transcript onto the label units a criterion consumes

    Word mode keeps keywords as word units and collapses every maximal run of
    non-keywords into one filler. Subword mode expands words to phones and puts
    wb between adjacent words. Phone mode expands without boundaries.

    Args:
        transcript: words of one utterance
        mode: label mapping
        keywords: keyword words (word mode units)
        lexicon: pronunciations
        inventory: target units; must hold filler (word) or wb (subword)

    Returns:
        Mapped label sequence
    """
    if not transcript:
        raise DataError("empty transcript")

    if mode == LabelMode.WORD:
        filler = inventory.special_id(SpecialUnit.FILLER)
        keyword_set = set(keywords)
        units: List[int] = []
        for word in transcript:
            if word in keyword_set:
                units.append(inventory.id_of(word))
            elif not units or units[-1] != filler:
                units.append(filler)
        return LabelSequence(units=tuple(units), kind=LabelKind.WORD)

    if mode == LabelMode.SUBWORD:
        wb = inventory.special_id(SpecialUnit.WB)
        units = []
        for i, word in enumerate(transcript):
            if i > 0:
                units.append(wb)
            units.extend(inventory.id_of(p) for p in lexicon.pronunciation(word))
        return LabelSequence(units=tuple(units), kind=LabelKind.SUBWORD)

    return expand_keyword(transcript, lexicon, inventory)


def strip_boundaries(labels: LabelSequence, inventory: UnitInventory) -> LabelSequence:
    """Drop wb units, leaving the plain phone concatenation"""
    if not inventory.has(SpecialUnit.WB):
        return labels
    wb = inventory.special_id(SpecialUnit.WB)
    return LabelSequence(units=tuple(u for u in labels.units if u != wb), kind=labels.kind)


def segment_phones(labels: LabelSequence, lexicon: Lexicon, inventory: UnitInventory) -> List[str]:
    """
    Re-segment a boundary-free phone sequence into lexicon words

    The segmentation with the fewest words wins; among those the one whose
    word list sorts first. wb units are stripped before segmenting.

    Raises:
        LexiconError: when no concatenation of lexicon words spells the phones
    """
    phones = tuple(strip_boundaries(labels, inventory).symbols(inventory))
    by_pron: Dict[Tuple[str, ...], str] = {}
    for word in sorted(lexicon.entries):
        by_pron.setdefault(lexicon.entries[word], word)
    longest = max(len(p) for p in by_pron) if by_pron else 0

    # best[i]: segmentation of phones[:i]
    best: List[Optional[List[str]]] = [None] * (len(phones) + 1)
    best[0] = []
    for end in range(1, len(phones) + 1):
        for start in range(max(0, end - longest), end):
            word = by_pron.get(phones[start:end])
            if word is None or best[start] is None:
                continue
            candidate = best[start] + [word]
            current = best[end]
            if current is None or (len(candidate), candidate) < (len(current), current):
                best[end] = candidate
    if best[-1] is None:
        raise LexiconError(f"no lexicon segmentation of {' '.join(phones)}")
    return best[-1]


# File formats

def load_lexicon(path) -> Lexicon:
    """Read `word<TAB>phone phone ...` lines; a repeated word is an error"""
    entries: Dict[str, Tuple[str, ...]] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        if "\t" not in line:
            raise LexiconError(f"{path}:{lineno}: expected word<TAB>phones")
        word, pron = line.split("\t", 1)
        phones = tuple(pron.split())
        if not phones:
            raise LexiconError(f"{path}:{lineno}: empty pronunciation for {word!r}")
        if word in entries:
            raise LexiconError(f"{path}:{lineno}: multiple pronunciations for {word!r}")
        entries[word] = phones
    return Lexicon(entries=entries)


def write_lexicon(lexicon: Lexicon, path) -> None:
    lines = [f"{word}\t{' '.join(pron)}" for word, pron in lexicon.entries.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_keywords(path) -> List[Tuple[str, ...]]:
    """One keyword phrase per line"""
    phrases = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        words = tuple(line.split())
        if words:
            phrases.append(words)
    return phrases


def write_keywords(keywords: Sequence[Sequence[str]], path) -> None:
    Path(path).write_text("".join(" ".join(k) + "\n" for k in keywords), encoding="utf-8")


def load_transcripts(path) -> Dict[str, List[str]]:
    """Read `utt_id<TAB>word word ...` lines"""
    transcripts: Dict[str, List[str]] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        if "\t" not in line:
            raise DataError(f"{path}:{lineno}: expected utt_id<TAB>words")
        utt_id, words = line.split("\t", 1)
        transcripts[utt_id] = words.split()
    return transcripts


def write_transcripts(transcripts: Dict[str, Sequence[str]], path) -> None:
    lines = [f"{utt}\t{' '.join(words)}" for utt, words in transcripts.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
