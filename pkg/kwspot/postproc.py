"""
Test-time keyword decisions: posterior smoothing, keyword-filler decoding and
minimum-edit-distance search over CTC peak lattices.
"""
import logging
import math
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from pydantic import BaseModel, ConfigDict, field_validator

from kwspot.errors import DataError, EmptyDev, GraphError, UncoveredPhone
from kwspot.lattice import Lattice, ScoreKind, ScoreMatrix, viterbi_arcs
from kwspot.models.configs import MedConfig, SmoothConfig
from kwspot.models.reports import Detection
from kwspot.topology import Topology, expand_unit_graph
from kwspot.units import LabelSequence, SpecialUnit, UnitInventory

logger = logging.getLogger(__name__)

CONFIDENCE_FLOOR = 1e-12


class ThresholdTable(BaseModel):
    """Per-keyword thresholds T(k) and the shared offset T_0 (log domain)"""

    model_config = ConfigDict(frozen=True)

    thresholds: Dict[int, float]
    offset: float = 0.0

    @field_validator("thresholds")
    @classmethod
    def _check_range(cls, value: Dict[int, float]) -> Dict[int, float]:
        for k, t in value.items():
            if not 0.0 < t <= 1.0:
                raise ValueError(f"threshold of keyword {k} outside (0, 1]: {t}")
        return value

    def margin(self, keyword: int, log_score: float) -> float:
        """log score - log T(k); the keyword is accepted when this reaches the offset"""
        return log_score - math.log(self.thresholds[keyword])

    def accepts(self, keyword: int, log_score: float) -> bool:
        return self.margin(keyword, log_score) >= self.offset

    def with_offset(self, offset: float) -> "ThresholdTable":
        return ThresholdTable(thresholds=self.thresholds, offset=offset)


# Posterior smoothing

def unit_posteriors(log_posteriors: ScoreMatrix, topology: Topology) -> ScoreMatrix:
    """Sum label-class posteriors into unit posteriors (T x total units)"""
    post = np.exp(log_posteriors.values) @ topology.unit_matrix()
    return ScoreMatrix(np.clip(post, 0.0, 1.0), ScoreKind.POSTERIOR)


def smooth_posteriors(scores: ScoreMatrix, cfg: SmoothConfig) -> ScoreMatrix:
    """
    Centered mean over w_s frames (truncated at the edges), then a trailing max over w_m frames
    """
    x = scores.values
    T = x.shape[0]
    if T == 0 or (cfg.w_s == 1 and cfg.w_m == 1):
        return ScoreMatrix(x.copy(), ScoreKind.POSTERIOR)

    half = cfg.w_s // 2
    t = np.arange(T)
    lo = np.clip(t - half, 0, T)
    hi = np.clip(t - half + cfg.w_s, 0, T)
    csum = np.vstack([np.zeros((1, x.shape[1])), np.cumsum(x, axis=0)])
    mean = (csum[hi] - csum[lo]) / (hi - lo)[:, None]
    if cfg.w_s == 1:
        mean = x.copy()

    if cfg.w_m == 1:
        return ScoreMatrix(mean, ScoreKind.POSTERIOR)
    padded = np.vstack([np.repeat(mean[:1], cfg.w_m - 1, axis=0), mean])
    peak = sliding_window_view(padded, cfg.w_m, axis=0).max(axis=-1)
    return ScoreMatrix(peak, ScoreKind.POSTERIOR)


def keyword_confidence(smoothed: ScoreMatrix, keyword_units: Sequence[int]) -> np.ndarray:
    """Per-frame geometric mean of the keyword's unit posteriors"""
    if not len(keyword_units):
        raise DataError("keyword has no units")
    cols = np.maximum(smoothed.values[:, list(keyword_units)], CONFIDENCE_FLOOR)
    return np.exp(np.log(cols).mean(axis=1))


def smoothing_scores(
    log_posteriors: ScoreMatrix,
    keywords: Sequence[LabelSequence],
    topology: Topology,
    cfg: SmoothConfig,
) -> List[Tuple[float, int]]:
    """Best log confidence of every keyword and the frame where it peaks"""
    smoothed = smooth_posteriors(unit_posteriors(log_posteriors, topology), cfg)
    out = []
    for kw in keywords:
        conf = keyword_confidence(smoothed, kw.units)
        best = int(np.argmax(conf)) if len(conf) else 0
        out.append((float(np.log(conf[best])) if len(conf) else math.log(CONFIDENCE_FLOOR), best))
    return out


def smoothing_detections(
    log_posteriors: ScoreMatrix,
    keywords: Sequence[LabelSequence],
    topology: Topology,
    thresholds: ThresholdTable,
    cfg: SmoothConfig,
    utt_id: str = "",
) -> List[Detection]:
    """Accepted keywords; the span ends at the confidence peak and covers the max window"""
    detections = []
    for k, (log_conf, peak) in enumerate(smoothing_scores(log_posteriors, keywords, topology, cfg)):
        if thresholds.accepts(k, log_conf):
            detections.append(Detection(utt_id=utt_id, keyword=k, start_frame=max(0, peak - cfg.w_m + 1),
                                        end_frame=peak, score=log_conf))
    return detections


def estimate_thresholds(
    alignments: Sequence[Sequence[int]],
    log_posteriors: Sequence[ScoreMatrix],
    keywords: Sequence[LabelSequence],
    topology: Topology,
    offset: float = 0.0,
) -> ThresholdTable:
    """
    Per-keyword thresholds from a dev set

    Each phone's threshold is its mean posterior over the frames aligned to it;
    a keyword's threshold is the geometric mean over its phones.

    Raises:
        UncoveredPhone: a keyword phone never appears in the dev alignments
    """
    units = np.asarray(topology.class_units)
    blank = np.asarray(topology.class_is_blank)
    total_units = topology.inventory.total_units
    sums = np.zeros(total_units)
    counts = np.zeros(total_units)
    for ali, lp in zip(alignments, log_posteriors):
        ali = np.asarray(ali, dtype=np.int64)
        post = unit_posteriors(lp, topology).values
        labelled = ~blank[ali]
        aligned_units = units[ali][labelled]
        sums += np.bincount(aligned_units, weights=post[np.flatnonzero(labelled), aligned_units],
                            minlength=total_units)
        counts += np.bincount(aligned_units, minlength=total_units)

    table: Dict[int, float] = {}
    for k, kw in enumerate(keywords):
        logs = []
        for u in kw.units:
            if counts[u] == 0:
                raise UncoveredPhone(topology.inventory.symbol_of(u))
            logs.append(math.log(max(sums[u] / counts[u], CONFIDENCE_FLOOR)))
        table[k] = min(1.0, math.exp(sum(logs) / len(logs)))
    logger.info(f"Estimated thresholds for {len(table)} keywords")
    return ThresholdTable(thresholds=table, offset=offset)


# Keyword-filler decoding

def default_filler_units(inventory: UnitInventory) -> List[int]:
    units = list(inventory.phone_ids)
    for special in (SpecialUnit.WB, SpecialUnit.FILLER):
        if inventory.has(special):
            units.append(inventory.special_id(special))
    return units


def build_kwfiller_graph(
    keywords: Sequence[LabelSequence],
    inventory: UnitInventory,
    filler_weight: float,
    filler_units: Optional[Iterable[int]] = None,
) -> Lattice:
    """
    Unit-level keyword/filler network

    State 0 is a hub that is both initial and final. Each keyword is a chain
    leaving and re-entering the hub; its arcs are tagged with the keyword index
    and its first arc is marked as an entry. The filler is a self-loop on the
    hub per filler unit carrying `filler_weight`; an infinitely negative weight
    leaves the filler out. A CTC inventory also gets a free blank loop so
    leading and trailing silence can be absorbed.
    """
    if not keywords:
        raise GraphError("a keyword-filler graph needs at least one keyword")
    arcs = []
    next_state = 1
    for k, kw in enumerate(keywords):
        prev = 0
        for i, u in enumerate(kw.units):
            last = i == len(kw.units) - 1
            dst = 0 if last else next_state
            if not last:
                next_state += 1
            arcs.append((prev, dst, u, 0.0, k, i == 0))
            prev = dst
    if np.isfinite(filler_weight):
        units = default_filler_units(inventory) if filler_units is None else list(filler_units)
        for u in units:
            arcs.append((0, 0, u, float(filler_weight), -1, False))
    blank = inventory.blank_id()
    if blank is not None:
        arcs.append((0, 0, blank, 0.0, -1, False))
    return Lattice.from_arcs(next_state, arcs, {0: 0.0})


def compile_kwfiller_graph(
    keywords: Sequence[LabelSequence],
    topology: Topology,
    filler_weight: float,
    filler_units: Optional[Iterable[int]] = None,
) -> Lattice:
    """Keyword/filler network expanded to frame level through the topology"""
    unit_graph = build_kwfiller_graph(keywords, topology.inventory, filler_weight, filler_units)
    graph = expand_unit_graph(unit_graph, topology)
    logger.debug(f"Keyword-filler graph: {graph.num_states} states, {graph.num_arcs} arcs")
    return graph


def kwfiller_decode(
    graph: Lattice,
    scores: ScoreMatrix,
    utt_id: str = "",
    frame_index: Optional[Sequence[int]] = None,
) -> List[Detection]:
    """
    Viterbi through the keyword/filler graph

    Every maximal stretch of arcs from one keyword chain (a new entry arc starts
    a new stretch) becomes a detection scored by its log score per frame.
    `frame_index` maps decoded frames back to utterance frames when some
    frames were skipped.
    """
    if scores.T == 0:
        return []
    arcs, _ = viterbi_arcs(graph, scores)
    x = scores.values
    index = list(range(scores.T)) if frame_index is None else list(frame_index)
    detections: List[Detection] = []
    current: Optional[List] = None  # keyword, start, end, total score, frames

    def close():
        if current is not None:
            k, start, end, total, n = current
            detections.append(Detection(utt_id=utt_id, keyword=k, start_frame=index[start],
                                        end_frame=index[end], score=total / n))

    for t, a in enumerate(arcs):
        tag = int(graph.tags[a])
        contribution = float(graph.weight[a] + x[t, graph.unit[a]])
        if tag < 0:
            close()
            current = None
        elif current is None or bool(graph.entries[a]) or tag != current[0]:
            close()
            current = [tag, t, t, contribution, 1]
        else:
            current[2] = t
            current[3] += contribution
            current[4] += 1
    close()
    return detections


def phone_synchronous_frames(log_posteriors: ScoreMatrix, blank: int, blank_skip: float) -> np.ndarray:
    """Indices of frames whose blank posterior does not exceed blank_skip"""
    return np.flatnonzero(np.exp(log_posteriors.values[:, blank]) <= blank_skip)


def kwfiller_detections(
    graph: Lattice,
    scores: ScoreMatrix,
    utt_id: str = "",
    log_posteriors: Optional[ScoreMatrix] = None,
    blank: Optional[int] = None,
    blank_skip: Optional[float] = None,
) -> List[Detection]:
    """kwfiller_decode, optionally over the non-blank frames only"""
    if blank_skip is None or blank is None or log_posteriors is None:
        return kwfiller_decode(graph, scores, utt_id)
    keep = phone_synchronous_frames(log_posteriors, blank, blank_skip)
    if not len(keep):
        return []
    return kwfiller_decode(graph, ScoreMatrix(scores.values[keep], scores.kind), utt_id, keep.tolist())


def best_keyword_scores(detections: Sequence[Detection], num_keywords: int) -> List[Optional[float]]:
    best: List[Optional[float]] = [None] * num_keywords
    for d in detections:
        if best[d.keyword] is None or d.score > best[d.keyword]:
            best[d.keyword] = d.score
    return best


def cascade_detections(
    log_posteriors: ScoreMatrix,
    scores: ScoreMatrix,
    keywords: Sequence[LabelSequence],
    topology: Topology,
    thresholds: ThresholdTable,
    smooth: SmoothConfig,
    graph: Lattice,
    preselect_offset: float,
    utt_id: str = "",
    blank_skip: Optional[float] = None,
) -> List[Detection]:
    """
    Smoothing picks candidate keywords (with a relaxed offset); the keyword-filler
    search verifies them. Utterances without candidates are never decoded.
    """
    loose = thresholds.with_offset(preselect_offset)
    candidates = {
        k for k, (log_conf, _) in enumerate(smoothing_scores(log_posteriors, keywords, topology, smooth))
        if loose.accepts(k, log_conf)
    }
    if not candidates:
        return []
    found = kwfiller_detections(graph, scores, utt_id, log_posteriors, topology.inventory.blank_id(), blank_skip)
    return [d for d in found if d.keyword in candidates]


# CTC peak lattice and minimum edit distance search

class PeakColumn(BaseModel):
    """Candidate units (with posteriors) at one spike of a CTC posteriorgram"""

    model_config = ConfigDict(frozen=True)

    start_frame: int
    end_frame: int
    candidates: Tuple[Tuple[int, float], ...]

    @property
    def top(self) -> int:
        return self.candidates[0][0]


def build_ctc_peak_lattice(
    log_posteriors: ScoreMatrix,
    blank: int,
    cfg: Optional[MedConfig] = None,
) -> List[PeakColumn]:
    """
    One column per frame whose best non-blank posterior reaches the spike
    threshold, holding every non-blank unit at or above h_node. With
    merge_repeats, neighbouring columns led by the same unit become one.
    """
    cfg = cfg or MedConfig()
    post = np.exp(log_posteriors.values)
    non_blank = np.delete(np.arange(post.shape[1]), blank)
    columns: List[PeakColumn] = []
    for t in range(post.shape[0]):
        row = post[t, non_blank]
        if not len(row) or row.max() < cfg.spike:
            continue
        keep = np.flatnonzero(row >= cfg.h_node)
        order = sorted(keep.tolist(), key=lambda i: (-row[i], non_blank[i]))
        cands = tuple((int(non_blank[i]), float(row[i])) for i in order)
        col = PeakColumn(start_frame=t, end_frame=t, candidates=cands)
        if (cfg.merge_repeats and columns and columns[-1].end_frame == t - 1
                and columns[-1].top == col.top):
            prev = columns[-1]
            merged: Dict[int, float] = dict(prev.candidates)
            for u, p in cands:
                merged[u] = max(merged.get(u, 0.0), p)
            ordered = tuple(sorted(merged.items(), key=lambda c: (-c[1], c[0])))
            columns[-1] = PeakColumn(start_frame=prev.start_frame, end_frame=t, candidates=ordered)
        else:
            columns.append(col)
    return columns


class ConfusionMatrix:
    """
    Phone edit probabilities

    sub[i, j] is P(hypothesis unit j | reference unit i) (the diagonal holds
    match probabilities), deletion[i] is P(reference unit i is dropped) and
    insertion[j] is P(a hypothesis unit j is spurious). Rows of sub plus
    deletion sum to one for estimated matrices.
    """

    def __init__(self, units: Sequence[int], sub, deletion, insertion, floor: float = 1e-4,
                 boundary: Optional[int] = None):
        self.units = tuple(int(u) for u in units)
        self.index = {u: i for i, u in enumerate(self.units)}
        self.sub = np.asarray(sub, dtype=np.float64)
        self.deletion = np.asarray(deletion, dtype=np.float64)
        self.insertion = np.asarray(insertion, dtype=np.float64)
        self.floor = floor
        self.boundary = boundary
        K = len(self.units)
        if self.sub.shape != (K, K) or self.deletion.shape != (K,) or self.insertion.shape != (K,):
            raise DataError("confusion tables do not match the unit list")

    @classmethod
    def uniform_cost(cls, units: Sequence[int], boundary: Optional[int] = None) -> "ConfusionMatrix":
        """Match 1, every edit e^-1: -log score is the edit distance"""
        K = len(units)
        edit = math.exp(-1.0)
        sub = np.full((K, K), edit)
        np.fill_diagonal(sub, 1.0)
        return cls(units, sub, np.full(K, edit), np.full(K, edit), floor=edit, boundary=boundary)

    def is_normalized(self, tol: float = 1e-6) -> bool:
        return bool(np.all(np.abs(self.sub.sum(axis=1) + self.deletion - 1.0) <= tol))

    def log_sub(self, ref: int, hyp: int) -> float:
        if self.boundary is not None and (ref == self.boundary) != (hyp == self.boundary):
            return -math.inf
        if ref not in self.index or hyp not in self.index:
            return -math.inf
        return math.log(self.sub[self.index[ref], self.index[hyp]])

    def log_del(self, ref: int) -> float:
        return math.log(self.deletion[self.index[ref]]) if ref in self.index else -math.inf

    def log_ins(self, hyp: int) -> float:
        return math.log(self.insertion[self.index[hyp]]) if hyp in self.index else -math.inf

    def match(self, unit: int) -> float:
        return float(self.sub[self.index[unit], self.index[unit]])

    def to_dict(self, inventory: UnitInventory) -> dict:
        names = [inventory.symbol_of(u) for u in self.units]
        return {
            "floor": self.floor,
            "boundary": inventory.symbol_of(self.boundary) if self.boundary is not None else None,
            "substitution": {r: {h: float(self.sub[i, j]) for j, h in enumerate(names)} for i, r in enumerate(names)},
            "deletion": {r: float(self.deletion[i]) for i, r in enumerate(names)},
            "insertion": {h: float(self.insertion[j]) for j, h in enumerate(names)},
        }

    @classmethod
    def from_dict(cls, data: dict, inventory: UnitInventory) -> "ConfusionMatrix":
        names = list(data["deletion"])
        units = [inventory.id_of(n) for n in names]
        sub = [[data["substitution"][r][h] for h in names] for r in names]
        boundary = inventory.id_of(data["boundary"]) if data.get("boundary") else None
        return cls(units, sub, [data["deletion"][n] for n in names], [data["insertion"][n] for n in names],
                   data.get("floor", 1e-4), boundary)


def levenshtein_alignment(hyp: Sequence[int], ref: Sequence[int]) -> List[Tuple[Optional[int], Optional[int]]]:
    """
    Unit-cost alignment as (ref, hyp) pairs; None marks an insertion (ref) or deletion (hyp)

    Ties prefer match/substitution, then deletion, then insertion.
    """
    n, m = len(ref), len(hyp)
    D = np.zeros((n + 1, m + 1), dtype=np.int64)
    D[:, 0] = np.arange(n + 1)
    D[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            D[i, j] = min(D[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]), D[i - 1, j] + 1, D[i, j - 1] + 1)
    pairs: List[Tuple[Optional[int], Optional[int]]] = []
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and D[i, j] == D[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            pairs.append((ref[i - 1], hyp[j - 1]))
            i, j = i - 1, j - 1
        elif i > 0 and D[i, j] == D[i - 1, j] + 1:
            pairs.append((ref[i - 1], None))
            i -= 1
        else:
            pairs.append((None, hyp[j - 1]))
            j -= 1
    pairs.reverse()
    return pairs


def edit_distance(hyp: Sequence[int], ref: Sequence[int]) -> int:
    return sum(1 for r, h in levenshtein_alignment(hyp, ref) if r != h)


def greedy_ctc_decode(log_posteriors: ScoreMatrix, blank: int) -> List[int]:
    """Frame argmax, repeats collapsed, blanks removed"""
    best = np.argmax(log_posteriors.values, axis=1).tolist()
    out = []
    prev = None
    for u in best:
        if u != prev and u != blank:
            out.append(u)
        prev = u
    return out


def estimate_confusions(
    pairs: Sequence[Tuple[Sequence[int], Sequence[int]]],
    units: Sequence[int],
    floor: float = 1e-4,
    boundary: Optional[int] = None,
) -> ConfusionMatrix:
    """
    Relative edit frequencies from (hypothesis, reference) pairs

    Each row (substitutions plus deletion) and each insertion probability is
    floored as p -> floor + (1 - n * floor) * p for a distribution of n entries,
    which keeps it normalized.

    Raises:
        EmptyDev: no pairs to count
    """
    if not pairs:
        raise EmptyDev("no dev decodes to estimate confusions from")
    units = list(units)
    idx = {u: i for i, u in enumerate(units)}
    K = len(units)
    sub = np.zeros((K, K))
    dele = np.zeros(K)
    ins = np.zeros(K)
    hyp_count = np.zeros(K)
    for hyp, ref in pairs:
        for r, h in levenshtein_alignment(list(hyp), list(ref)):
            if h is not None and h in idx:
                hyp_count[idx[h]] += 1
            if r is None:
                if h in idx:
                    ins[idx[h]] += 1
            elif r in idx:
                if h is None:
                    dele[idx[r]] += 1
                elif h in idx:
                    sub[idx[r], idx[h]] += 1

    n_row = K + 1
    for i in range(K):
        total = sub[i].sum() + dele[i]
        if total == 0:
            sub[i, i], total = 1.0, 1.0
        sub[i] = floor + (1.0 - n_row * floor) * sub[i] / total
        dele[i] = floor + (1.0 - n_row * floor) * dele[i] / total
    rate = np.divide(ins, hyp_count, out=np.zeros(K), where=hyp_count > 0)
    insertion = floor + (1.0 - 2 * floor) * rate
    logger.info(f"Estimated confusions over {len(pairs)} dev utterances")
    return ConfusionMatrix(units, sub, dele, insertion, floor, boundary)


def med_thresholds(keywords: Sequence[LabelSequence], confusions: ConfusionMatrix, offset: float = 0.0) -> ThresholdTable:
    """T(k) = product of the keyword phones' match probabilities"""
    table = {k: float(np.prod([confusions.match(u) for u in kw.units])) for k, kw in enumerate(keywords)}
    return ThresholdTable(thresholds=table, offset=offset)


def _column_scores(column: PeakColumn, keyword: Sequence[int], confusions: ConfusionMatrix,
                   posterior_scale: float) -> Tuple[np.ndarray, float]:
    """Best substitution score per keyword position and the best insertion score of a column"""
    subs = np.full(len(keyword), -math.inf)
    ins = -math.inf
    for unit, post in column.candidates:
        bonus = posterior_scale * math.log(max(post, CONFIDENCE_FLOOR))
        ins = max(ins, confusions.log_ins(unit) + bonus)
        for j, ref in enumerate(keyword):
            subs[j] = max(subs[j], confusions.log_sub(ref, unit) + bonus)
    return subs, ins


def _med_table(columns: Sequence[PeakColumn], keyword: Sequence[int], confusions: ConfusionMatrix,
               posterior_scale: float, local: bool) -> Tuple[np.ndarray, np.ndarray]:
    n, m = len(columns), len(keyword)
    dels = np.array([confusions.log_del(u) for u in keyword])
    D = np.full((n + 1, m + 1), -math.inf)
    start = np.zeros((n + 1, m + 1), dtype=np.int64)
    D[0, 0] = 0.0
    for i in range(n + 1):
        if i > 0:
            subs, ins = _column_scores(columns[i - 1], keyword, confusions, posterior_scale)
            if local:
                D[i, 0], start[i, 0] = 0.0, i
            else:
                D[i, 0], start[i, 0] = D[i - 1, 0] + ins, 0
        for j in range(1, m + 1):
            best, origin = D[i, j - 1] + dels[j - 1], start[i, j - 1]
            if i > 0:
                cand = D[i - 1, j - 1] + subs[j - 1]
                if cand > best:
                    best, origin = cand, start[i - 1, j - 1]
                cand = D[i - 1, j] + ins
                if cand > best:
                    best, origin = cand, start[i - 1, j]
            D[i, j], start[i, j] = best, origin
    return D, start


def med_align(columns: Sequence[PeakColumn], keyword: Sequence[int], confusions: ConfusionMatrix,
              posterior_scale: float = 0.0) -> float:
    """Best log probability of editing the whole column sequence into the keyword"""
    D, _ = _med_table(columns, list(keyword), confusions, posterior_scale, local=False)
    return float(D[len(columns), len(keyword)])


def med_score(columns: Sequence[PeakColumn], keyword: Sequence[int], confusions: ConfusionMatrix,
              posterior_scale: float = 0.0) -> Tuple[float, int, int]:
    """
    Best keyword match against any stretch of columns

    Returns:
        (log score, first column, last column); the columns are -1 when the best
        match consumes no column
    """
    keyword = list(keyword)
    D, start = _med_table(columns, keyword, confusions, posterior_scale, local=True)
    ends = D[:, len(keyword)]
    end = int(np.argmax(ends))
    first = int(start[end, len(keyword)])
    if end == first:
        return float(ends[end]), -1, -1
    return float(ends[end]), first, end - 1


def med_search(
    columns: Sequence[PeakColumn],
    keywords: Sequence[LabelSequence],
    confusions: ConfusionMatrix,
    thresholds: ThresholdTable,
    utt_id: str = "",
    posterior_scale: float = 0.0,
) -> List[Detection]:
    """Best match of every keyword, kept when its log score clears log T(k) + T_0"""
    detections = []
    for k, kw in enumerate(keywords):
        score, first, last = med_score(columns, kw.units, confusions, posterior_scale)
        if first < 0 or not np.isfinite(score) or not thresholds.accepts(k, score):
            continue
        detections.append(Detection(utt_id=utt_id, keyword=k, start_frame=columns[first].start_frame,
                                    end_frame=columns[last].end_frame, score=score))
    return detections
