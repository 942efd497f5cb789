import logging
from typing import List, Sequence, Set, Tuple

from kwspot.models.configs import ExperimentConfig, LabelMode, TopologyKind
from kwspot.synth import Corpus
from kwspot.topology import Topology, build_topology
from kwspot.units import (
    LabelKind,
    LabelSequence,
    Lexicon,
    SpecialUnit,
    UnitInventory,
    apply_label_map,
    expand_keyword,
)

logger = logging.getLogger(__name__)


class KwsSystem:
    """Unit inventory, topology and label mapping of one experiment"""

    def __init__(self, config: ExperimentConfig, phones: Sequence[str], lexicon: Lexicon,
                 keywords: Sequence[Tuple[str, ...]]):
        self.config = config
        self.lexicon = lexicon
        self.keywords = [tuple(k) for k in keywords]
        self.mode = config.topology.label_mode
        self.is_ctc = config.topology.kind == TopologyKind.CTC
        self.keyword_words = sorted({w for k in self.keywords for w in k})

        if self.mode == LabelMode.WORD:
            symbols = self.keyword_words
        else:
            symbols = list(phones)
        self.inventory = UnitInventory.for_mode(symbols, self.mode, self.is_ctc)
        if self.mode != LabelMode.WORD:
            lexicon.check(self.inventory)
        self.topology: Topology = build_topology(config.topology.kind, self.inventory, config.topology.self_loop)
        self.keyword_labels: List[LabelSequence] = [self.keyword_label(k) for k in self.keywords]
        self.keyword_names = [" ".join(k) for k in self.keywords]
        logger.info(f"System: {config.topology.kind.value} topology, {self.mode.value} labels, "
                    f"{self.inventory.total_units} units, {self.topology.num_classes} classes")

    @classmethod
    def from_corpus(cls, config: ExperimentConfig, corpus: Corpus) -> "KwsSystem":
        return cls(config, corpus.phones, corpus.lexicon, corpus.keywords)

    def labels(self, words: Sequence[str]) -> LabelSequence:
        return apply_label_map(words, self.mode, self.keyword_words, self.lexicon, self.inventory)

    def keyword_label(self, keyword: Sequence[str]) -> LabelSequence:
        if self.mode == LabelMode.WORD:
            return LabelSequence(units=tuple(self.inventory.id_of(w) for w in keyword), kind=LabelKind.WORD)
        if self.mode == LabelMode.SUBWORD:
            return apply_label_map(keyword, self.mode, self.keyword_words, self.lexicon, self.inventory)
        return expand_keyword(keyword, self.lexicon, self.inventory)

    def keyword_units(self) -> Set[int]:
        """Units that make up keywords (word boundaries excluded)"""
        units = {u for kw in self.keyword_labels for u in kw.units}
        if self.inventory.has(SpecialUnit.WB):
            units.discard(self.inventory.special_id(SpecialUnit.WB))
        return units

    def edit_units(self) -> List[int]:
        """Units a CTC peak lattice can hold (everything but blank)"""
        blank = self.inventory.blank_id()
        return [u for u in range(self.inventory.total_units) if u != blank]

    def boundary_unit(self):
        return self.inventory.special_id(SpecialUnit.WB) if self.inventory.has(SpecialUnit.WB) else None
