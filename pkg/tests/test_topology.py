import itertools
import math
import re

import numpy as np
import pytest

from kwspot.criteria import reference_states
from kwspot.errors import GraphError, Infeasible, MissingSpecialUnit
from kwspot.lattice import enumerate_paths
from kwspot.models.configs import LabelMode, TopologyKind
from kwspot.postproc import compile_kwfiller_graph
from kwspot.topology import build_topology, compile_sequence_graph, flat_start_alignment
from kwspot.units import UnitInventory

A, B = 0, 1
CTC_BLANK = 2


@pytest.mark.parametrize("kind, phones, expected", [
    (TopologyKind.CTC, ("a", "b", "c"), 4),
    (TopologyKind.HMM_PB, ("a", "b", "c"), 6),
    (TopologyKind.HMM_BP, ("a", "b", "c"), 6),
    (TopologyKind.HMM_BPB, ("a", "b", "c"), 6),
    (TopologyKind.HMM5, ("a", "b"), 6),
    (TopologyKind.MONO, ("a", "b", "c"), 3),
])
def test_output_class_counts(make_topology, kind, phones, expected):
    assert make_topology(kind, phones).num_classes == expected


def test_blank_only_for_ctc():
    with pytest.raises(MissingSpecialUnit):
        build_topology(TopologyKind.CTC, UnitInventory(phones=("a",)))
    with_blank = UnitInventory.for_mode(["a"], LabelMode.PHONE, ctc=True)
    with pytest.raises(GraphError):
        build_topology(TopologyKind.HMM_BP, with_blank)


@pytest.mark.parametrize("kind", [
    TopologyKind.HMM5, TopologyKind.HMM_PB, TopologyKind.HMM_BP, TopologyKind.HMM_BPB, TopologyKind.MONO,
])
def test_template_states_are_stochastic(make_topology, kind):
    topology = make_topology(kind, self_loop=0.3)
    for template in topology.templates.values():
        for mass in template.outgoing_mass():
            assert mass == pytest.approx(1.0)
        assert sum(math.exp(w) for _, w in template.entry) == pytest.approx(1.0)


def _languages(graph, T):
    return sorted(tuple(units) for units, _ in enumerate_paths(graph, T))


def test_ctc_single_label_two_frames(make_topology, labels):
    topology = make_topology(TopologyKind.CTC)
    graph = compile_sequence_graph(labels(A), topology)
    assert _languages(graph, 2) == sorted([(CTC_BLANK, A), (A, CTC_BLANK), (A, A)])


def test_ctc_no_room_for_blank(make_topology, labels):
    topology = make_topology(TopologyKind.CTC)
    graph = compile_sequence_graph(labels(A, B), topology)
    assert _languages(graph, 2) == [(A, B)]


def test_ctc_repeat_needs_separating_blank(make_topology, labels):
    topology = make_topology(TopologyKind.CTC)
    graph = compile_sequence_graph(labels(A, A), topology)
    assert _languages(graph, 2) == []
    assert topology.min_frames(labels(A, A)) == 3
    assert _languages(graph, 3) == [(A, CTC_BLANK, A)]


@pytest.mark.parametrize("units, T", [((A, B), 4), ((A, A), 4), ((A, B, A), 5)])
def test_hmm_bpb_simulates_ctc(make_topology, labels, units, T):
    ctc = compile_sequence_graph(labels(*units), make_topology(TopologyKind.CTC))
    bpb = compile_sequence_graph(labels(*units), make_topology(TopologyKind.HMM_BPB))

    def shared_blank(seq, blank_from):
        return tuple(-1 if u >= blank_from else u for u in seq)

    ctc_strings = {shared_blank(s, CTC_BLANK) for s in _languages(ctc, T)}
    bpb_strings = {shared_blank(s, 2) for s in _languages(bpb, T)}
    assert ctc_strings == bpb_strings


def test_sequence_graph_states_never_decrease(make_topology, labels):
    graph = compile_sequence_graph(labels(A, B, A), make_topology(TopologyKind.HMM_BPB))
    assert np.all(graph.dst >= graph.src)


def test_flat_start_hmm5_spreads_spare_frames(make_topology, labels):
    topology = make_topology(TopologyKind.HMM5)
    assert flat_start_alignment(labels(A), topology, 5) == [0, 0, 1, 1, 2]


def test_flat_start_infeasible(make_topology, labels):
    topology = make_topology(TopologyKind.HMM5)
    with pytest.raises(Infeasible):
        flat_start_alignment(labels(A), topology, 2)


@pytest.mark.parametrize("kind", list(TopologyKind))
def test_flat_start_is_a_framing(make_topology, labels, kind):
    topology = make_topology(kind)
    seq = labels(A, B, B, A)
    T = topology.min_frames(seq) + 4
    alignment = flat_start_alignment(seq, topology, T)
    assert len(alignment) == T
    graph = compile_sequence_graph(seq, topology)
    states = reference_states(graph, alignment)
    assert len(states) == T + 1


def _ctc_collapse(frames, blank):
    out = []
    previous = None
    for u in frames:
        if u != previous and u != blank:
            out.append(u)
        previous = u
    return tuple(out)


def _hmm_pattern(kind, units, n):
    """Regular expression of the framings of a label sequence, one letter per class"""

    def c(cls):
        return chr(ord("A") + cls)

    parts = []
    for i, u in enumerate(units):
        same_prev = i > 0 and units[i - 1] == u
        same_next = i + 1 < len(units) and units[i + 1] == u
        label, blank = c(u), c(n + u)
        if kind == TopologyKind.MONO:
            parts.append(f"{label}+")
        elif kind == TopologyKind.HMM5:
            parts.append("".join(f"{c(3 * u + k)}+" for k in range(3)))
        elif kind == TopologyKind.HMM_PB:
            parts.append(f"{label}+{blank}*")
        elif kind == TopologyKind.HMM_BP:
            parts.append(f"{blank}*{label}+")
        else:
            lead = "" if same_prev else f"{blank}*"
            trail = f"{blank}+" if same_next else f"{blank}*"
            parts.append(f"{lead}{label}+{trail}")
    return re.compile("".join(parts))


def _label_sequences(n, max_len=3):
    for length in range(1, max_len + 1):
        yield from itertools.product(range(n), repeat=length)


@pytest.mark.parametrize("kind", list(TopologyKind))
def test_sequence_graph_matches_brute_force(make_topology, labels, kind):
    topology = make_topology(kind)
    n = 2
    for T in range(1, 7):
        strings = list(itertools.product(range(topology.num_classes), repeat=T))
        encoded = ["".join(chr(ord("A") + x) for x in s) for s in strings]
        for units in _label_sequences(n):
            graph = compile_sequence_graph(labels(*units), topology)
            found = set(_languages(graph, T))
            if kind == TopologyKind.CTC:
                expected = {s for s in strings if _ctc_collapse(s, CTC_BLANK) == units}
            else:
                pattern = _hmm_pattern(kind, units, n)
                expected = {s for s, text in zip(strings, encoded) if pattern.fullmatch(text)}
            assert found == expected, (units, T)


@pytest.mark.parametrize("units", list(_label_sequences(2)))
def test_hmm_bpb_language_is_ctc_language(make_topology, labels, units):
    ctc = make_topology(TopologyKind.CTC)
    bpb = make_topology(TopologyKind.HMM_BPB)
    for T in range(1, 7):
        ctc_strings = {tuple(-1 if u == CTC_BLANK else u for u in s)
                       for s in _languages(compile_sequence_graph(labels(*units), ctc), T)}
        bpb_strings = {tuple(-1 if u >= 2 else u for u in s)
                       for s in _languages(compile_sequence_graph(labels(*units), bpb), T)}
        assert ctc_strings == bpb_strings, T


def test_hmm_pb_label_repeats(make_topology, labels):
    topology = make_topology(TopologyKind.HMM_PB)
    a_blank = 2
    assert _languages(compile_sequence_graph(labels(A), topology), 3) == sorted([
        (A, A, A), (A, A, a_blank), (A, a_blank, a_blank),
    ])


@pytest.mark.parametrize("kind", [TopologyKind.CTC, TopologyKind.HMM_BPB])
@pytest.mark.parametrize("units", [(A, A), (A, A, B), (B, A, A)])
def test_keyword_filler_framings_match_sequence_graph(make_topology, labels, kind, units):
    topology = make_topology(kind)
    keyword = labels(*units)
    kwfiller = compile_kwfiller_graph([keyword], topology, -math.inf)
    sequence = compile_sequence_graph(keyword, topology)
    label_classes = {c for u in (A, B) for c in topology.label_classes(u)}
    for T in range(1, 6):
        # only one keyword occurrence fits; all-blank hub paths carry no label
        spotted = {s for s in _languages(kwfiller, T) if label_classes & set(s)}
        assert spotted == set(_languages(sequence, T)), T
