"""
Phone n-gram language model and the lattice-free denominator graph.

Probabilities are estimated with interpolated Witten-Bell smoothing and kept
in ARPA form (log10 probability per listed n-gram, log10 backoff per context),
so an exported and re-imported model scores exactly like the original text.
"""
import logging
import math
from collections import Counter
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from kwspot.errors import ConfigError, EmptyCorpus, FormatError, GraphError, UnknownUnit
from kwspot.lattice import Lattice
from kwspot.models.configs import TopologyKind
from kwspot.topology import Topology
from kwspot.units import LabelSequence, UnitInventory

logger = logging.getLogger(__name__)

BOS = -1
EOS = -2
BOS_SYMBOL = "<s>"
EOS_SYMBOL = "</s>"
LOG10_ZERO = -99.0
LN10 = math.log(10.0)

NGram = Tuple[int, ...]


class NGramModel:
    """Backoff phone language model over unit ids (plus sentence start/end)"""

    def __init__(
        self,
        order: int,
        vocab: Sequence[int],
        names: Dict[int, str],
        probs: Dict[NGram, float],
        backoffs: Dict[NGram, float],
        counts: Optional[Dict[NGram, int]] = None,
    ):
        self.order = order
        self.vocab = tuple(vocab)
        self.names = dict(names)
        self.probs = probs          # log10 P(last | prefix)
        self.backoffs = backoffs    # log10 backoff weight of a context
        self.counts = counts or {}
        self._cache: Dict[Tuple[NGram, int], float] = {}

    @property
    def targets(self) -> Tuple[int, ...]:
        return self.vocab + (EOS,)

    def count(self, ngram: Sequence[int]) -> int:
        return self.counts.get(tuple(ngram), 0)

    def num_ngrams(self) -> int:
        return len(self.probs)

    def state(self, history: Sequence[int]) -> NGram:
        """Longest listed suffix of the history that can serve as a context"""
        h = tuple(history)[-(self.order - 1):] if self.order > 1 else ()
        while h and h not in self.probs:
            h = h[1:]
        return h

    def log10_prob(self, word: int, history: Sequence[int]) -> float:
        h = self.state(history)
        key = (h, word)
        if key not in self._cache:
            self._cache[key] = self._lookup(word, h)
        return self._cache[key]

    def _lookup(self, word: int, h: NGram) -> float:
        while True:
            ngram = h + (word,)
            if ngram in self.probs:
                return self.probs[ngram]
            if not h:
                raise UnknownUnit(self.names.get(word, word))
            weight = self.backoffs.get(h, 0.0)
            rest = self._lookup(word, h[1:])
            return weight + rest

    def log_prob(self, word: int, history: Sequence[int]) -> float:
        """Natural-log conditional probability"""
        return self.log10_prob(word, history) * LN10

    def __repr__(self) -> str:
        return f"NGramModel(order={self.order}, vocab={len(self.vocab)}, ngrams={self.num_ngrams()})"


def _sentences(transcripts: Iterable[LabelSequence], keep: Optional[set]) -> List[List[int]]:
    out = []
    for seq in transcripts:
        units = [u for u in seq.units if keep is None or u in keep]
        out.append([BOS] + units + [EOS])
    return out


def _witten_bell(order: int, counts: Counter, vocab: Tuple[int, ...]):
    """Interpolated Witten-Bell conditional probabilities, natural domain"""
    targets = vocab + (EOS,)
    context_total: Counter = Counter()
    context_types: Counter = Counter()
    for ngram, c in counts.items():
        context_total[ngram[:-1]] += c
        context_types[ngram[:-1]] += 1
    uniform = 1.0 / len(targets)

    memo: Dict[Tuple[NGram, int], float] = {}

    def prob(word: int, h: NGram) -> float:
        key = (h, word)
        if key in memo:
            return memo[key]
        if not h:
            total, types = context_total[()], context_types[()]
            p = (counts.get((word,), 0) + types * uniform) / (total + types)
        elif context_total[h] == 0:
            p = prob(word, h[1:])
        else:
            total, types = context_total[h], context_types[h]
            p = (counts.get(h + (word,), 0) + types * prob(word, h[1:])) / (total + types)
        memo[key] = p
        return p

    def backoff(h: NGram) -> float:
        total, types = context_total[h], context_types[h]
        if total == 0:
            return 1.0
        return types / (total + types)

    return targets, prob, backoff, context_total


def train_ngram(
    transcripts: Sequence[LabelSequence],
    order: int,
    inventory: Optional[UnitInventory] = None,
    max_ngrams: Optional[int] = None,
) -> NGramModel:
    """
    Estimate an interpolated Witten-Bell phone n-gram model

    Args:
        transcripts: training label sequences
        order: 1, 2 or 3
        inventory: when given, every phone of the inventory joins the vocabulary and
            special units are left out of the counts
        max_ngrams: optional cap on the number of listed n-grams of order >= 2

    Returns:
        NGramModel in ARPA form
    """
    if order not in (1, 2, 3):
        raise ConfigError(f"order must be 1, 2 or 3, got {order}")
    if not transcripts:
        raise EmptyCorpus("cannot train a language model on an empty corpus")

    keep = set(inventory.phone_ids) if inventory is not None else None
    sentences = _sentences(transcripts, keep)
    counts: Counter = Counter()
    for sent in sentences:
        for i in range(1, len(sent)):
            for k in range(1, order + 1):
                if i - k + 1 < 0:
                    break
                counts[tuple(sent[i - k + 1:i + 1])] += 1

    seen = {u for sent in sentences for u in sent if u >= 0}
    vocab = tuple(sorted(seen | keep)) if keep is not None else tuple(sorted(seen))
    if inventory is not None:
        names = {u: inventory.symbol_of(u) for u in vocab}
    else:
        names = {u: str(u) for u in vocab}
    names[BOS], names[EOS] = BOS_SYMBOL, EOS_SYMBOL

    targets, prob, backoff, context_total = _witten_bell(order, counts, vocab)

    probs: Dict[NGram, float] = {}
    backoffs: Dict[NGram, float] = {}
    probs[(BOS,)] = LOG10_ZERO
    for w in targets:
        probs[(w,)] = math.log10(prob(w, ()))
    for k in range(2, order + 1):
        for ngram in sorted(g for g in counts if len(g) == k):
            probs[ngram] = math.log10(prob(ngram[-1], ngram[:-1]))
    for ngram in list(probs):
        if len(ngram) < order and context_total[ngram] > 0:
            backoffs[ngram] = math.log10(backoff(ngram))

    model = NGramModel(order, vocab, names, probs, backoffs, dict(counts))
    if max_ngrams is not None:
        model = prune_to(model, max_ngrams)
    logger.info(f"Trained {order}-gram phone LM: {len(vocab)} phones, {model.num_ngrams()} n-grams")
    return model


def prune_to(model: NGramModel, max_ngrams: int) -> NGramModel:
    """
    Drop the rarest highest-order n-grams until at most max_ngrams of order >= 2 remain,
    then renormalize the affected backoff weights
    """
    probs = dict(model.probs)
    higher = [g for g in probs if len(g) >= 2]
    excess = len(higher) - max_ngrams
    if excess <= 0:
        return model
    contexts = {g[:-1] for g in probs if len(g) >= 2}
    candidates = sorted(
        (g for g in higher if g not in contexts),
        key=lambda g: (-len(g), model.count(g), g),
    )
    for g in candidates[:excess]:
        del probs[g]

    pruned = NGramModel(model.order, model.vocab, model.names, probs, {}, model.counts)
    backoffs: Dict[NGram, float] = {}
    for h in sorted((g for g in probs if len(g) < model.order), key=len):
        listed = [g[-1] for g in probs if len(g) == len(h) + 1 and g[:-1] == h]
        if not listed and h not in model.backoffs:
            continue
        num = 1.0 - sum(10.0 ** probs[h + (w,)] for w in listed)
        den = 1.0 - sum(10.0 ** pruned._lookup(w, h[1:]) for w in listed)
        if num > 0 and den > 0:
            backoffs[h] = math.log10(num / den)
    result = NGramModel(model.order, model.vocab, model.names, probs, backoffs, model.counts)
    logger.info(f"Pruned LM to {result.num_ngrams()} n-grams")
    return result


def score_sequence(model: NGramModel, seq: LabelSequence) -> float:
    """Natural-log probability of a sentence, end-of-sentence term included"""
    vocab = set(model.vocab)
    history: List[int] = [BOS]
    total = 0.0
    for u in seq.units:
        if u not in vocab:
            raise UnknownUnit(model.names.get(u, u))
        total += model.log_prob(u, history)
        history.append(u)
    return total + model.log_prob(EOS, history)


def perplexity(model: NGramModel, corpus: Sequence[LabelSequence]) -> float:
    total = sum(score_sequence(model, seq) for seq in corpus)
    tokens = sum(len(seq) + 1 for seq in corpus)
    return math.exp(-total / tokens)


def _format_ngram(model: NGramModel, ngram: NGram) -> str:
    return " ".join(model.names[u] for u in ngram)


def export_arpa(model: NGramModel) -> str:
    """ARPA text: log10 probabilities, backoffs in the third column"""
    by_order: Dict[int, List[NGram]] = {k: [] for k in range(1, model.order + 1)}
    for ngram in model.probs:
        by_order[len(ngram)].append(ngram)
    lines = ["\\data\\"]
    lines += [f"ngram {k}={len(by_order[k])}" for k in range(1, model.order + 1)]
    for k in range(1, model.order + 1):
        lines += ["", f"\\{k}-grams:"]
        for ngram in by_order[k]:
            row = f"{model.probs[ngram]:.7f}\t{_format_ngram(model, ngram)}"
            if ngram in model.backoffs:
                row += f"\t{model.backoffs[ngram]:.7f}"
            lines.append(row)
    lines += ["", "\\end\\", ""]
    return "\n".join(lines)


def import_arpa(text: str, inventory: UnitInventory) -> NGramModel:
    """Parse ARPA text written by export_arpa (symbols resolved through the inventory)"""
    ids = {BOS_SYMBOL: BOS, EOS_SYMBOL: EOS}
    probs: Dict[NGram, float] = {}
    backoffs: Dict[NGram, float] = {}
    order = 0
    section = None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line == "\\data\\" or line.startswith("ngram "):
            continue
        if line == "\\end\\":
            break
        if line.startswith("\\") and line.endswith("-grams:"):
            section = int(line[1:line.index("-")])
            order = max(order, section)
            continue
        if section is None:
            raise FormatError(f"line {lineno}: n-gram entry outside a section")
        parts = line.split("\t")
        if len(parts) not in (2, 3):
            raise FormatError(f"line {lineno}: expected prob<TAB>ngram[<TAB>backoff]")
        ngram = tuple(ids[s] if s in ids else inventory.id_of(s) for s in parts[1].split())
        if len(ngram) != section:
            raise FormatError(f"line {lineno}: {len(ngram)}-gram in the {section}-gram section")
        probs[ngram] = float(parts[0])
        if len(parts) == 3:
            backoffs[ngram] = float(parts[2])
    if not order:
        raise FormatError("no n-gram sections found")
    vocab = tuple(sorted(g[0] for g in probs if len(g) == 1 and g[0] >= 0))
    names = {u: inventory.symbol_of(u) for u in vocab}
    names[BOS], names[EOS] = BOS_SYMBOL, EOS_SYMBOL
    return NGramModel(order, vocab, names, probs, backoffs)


def build_denominator_graph(model: NGramModel, topology: Topology) -> Lattice:
    """
    Compose the phone LM with the topology into an explicit lattice

    Every graph state is either the start state or a template state of an
    instance (LM state after the phone, phone). Arc weights add the LM
    log-probability at phone entries and the topology transitions.
    """
    if topology.kind == TopologyKind.CTC:
        raise GraphError("ctc models are trained with ctc_loss, not a denominator graph")
    for u in model.vocab:
        topology.template(u)

    instances: Dict[Tuple[NGram, int], int] = {}
    order: List[Tuple[NGram, int]] = []
    next_state = 1

    def instance(h: NGram, v: int) -> int:
        nonlocal next_state
        key = (model.state(h + (v,)), v)
        if key not in instances:
            instances[key] = next_state
            order.append(key)
            next_state += len(topology.template(v).states)
        return instances[key]

    arcs = []
    start = model.state((BOS,))
    for v in model.vocab:
        tmpl = topology.template(v)
        base = instance(start, v)
        lm = model.log_prob(v, start)
        for k, logp in tmpl.entry:
            arcs.append((0, base + k, tmpl.states[k].output_class, lm + logp))

    finals: Dict[int, float] = {}
    done = 0
    while done < len(order):
        h, v = order[done]
        done += 1
        tmpl = topology.template(v)
        base = instances[(h, v)]
        for src, dst, logp in tmpl.transitions:
            arcs.append((base + src, base + dst, tmpl.states[dst].output_class, logp))
        end = model.log_prob(EOS, h)
        for j, logp in tmpl.exit:
            finals[base + j] = logp + end
        for w in model.vocab:
            nxt_tmpl = topology.template(w)
            nxt = instance(h, w)
            lm = model.log_prob(w, h)
            repeated = w == v and tmpl.repeat_exit is not None
            exits = tmpl.repeat_exit if repeated else tmpl.exit
            entries = nxt_tmpl.repeat_entry if repeated and nxt_tmpl.repeat_entry is not None else nxt_tmpl.entry
            for j, exit_logp in exits:
                for k, entry_logp in entries:
                    arcs.append((base + j, nxt + k, nxt_tmpl.states[k].output_class, exit_logp + lm + entry_logp))

    graph = Lattice.from_arcs(next_state, arcs, finals)
    logger.info(f"Denominator graph: {graph.num_states} states, {graph.num_arcs} arcs "
                f"({len(order)} LM-state/phone instances)")
    return graph
