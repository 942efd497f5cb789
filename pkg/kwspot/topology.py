import logging
import math
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from kwspot.errors import GraphError, Infeasible, MissingSpecialUnit, UnknownUnit
from kwspot.lattice import EPSILON, Lattice
from kwspot.models.configs import AccuracyLevel, TopologyKind
from kwspot.units import LabelSequence, SpecialUnit, UnitInventory

logger = logging.getLogger(__name__)

LOG_HALF = math.log(0.5)


class TemplateState(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    output_class: int


class CanonicalStep(BaseModel):
    """One state of the flat-start path: minimum frames and share of the spare frames"""

    model_config = ConfigDict(frozen=True)

    state: int
    min_frames: int
    share: int


class UnitTemplate(BaseModel):
    """
    Hidden states of one unit

    Entry and exit weights connect consecutive units: the weight from state j of
    unit i to state k of unit i+1 is exit[j] + entry[k]. When the next unit is
    identical and `repeat_exit`/`repeat_entry` are set, only those are used.
    """

    model_config = ConfigDict(frozen=True)

    unit: int
    states: Tuple[TemplateState, ...]
    entry: Tuple[Tuple[int, float], ...]
    transitions: Tuple[Tuple[int, int, float], ...]
    exit: Tuple[Tuple[int, float], ...]
    repeat_entry: Optional[Tuple[Tuple[int, float], ...]] = None
    repeat_exit: Optional[Tuple[Tuple[int, float], ...]] = None
    canonical: Tuple[CanonicalStep, ...]
    repeat_canonical: Optional[Tuple[CanonicalStep, ...]] = None

    def outgoing_mass(self) -> List[float]:
        """Linear-domain outgoing probability of every state (transitions plus exit)"""
        mass = [0.0] * len(self.states)
        for src, _, logp in self.transitions:
            mass[src] += math.exp(logp)
        for state, logp in self.exit:
            mass[state] += math.exp(logp)
        return mass


class Topology(BaseModel):
    """Templates for every non-blank unit plus the output-class table"""

    model_config = ConfigDict(frozen=True)

    kind: TopologyKind
    inventory: UnitInventory
    templates: Dict[int, UnitTemplate]
    class_names: Tuple[str, ...]
    class_units: Tuple[int, ...]
    class_is_blank: Tuple[bool, ...]
    scored_transitions: bool = True

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def template(self, unit: int) -> UnitTemplate:
        try:
            return self.templates[unit]
        except KeyError:
            raise UnknownUnit(unit) from None

    def label_classes(self, unit: int) -> List[int]:
        """Non-blank output classes of a unit"""
        return [c for c, (u, b) in enumerate(zip(self.class_units, self.class_is_blank)) if u == unit and not b]

    def accuracy_keys(self, level: AccuracyLevel = AccuracyLevel.PHONE) -> np.ndarray:
        """
        Identity key of each class for accuracy counting

        Phone level maps every label class to its unit; blank classes only match
        themselves. State level compares the classes directly.
        """
        if level == AccuracyLevel.STATE:
            return np.arange(self.num_classes)
        offset = self.inventory.total_units
        return np.array([
            offset + c if blank and self.kind != TopologyKind.CTC else u
            for c, (u, blank) in enumerate(zip(self.class_units, self.class_is_blank))
        ])

    def unit_matrix(self) -> np.ndarray:
        """C x total_units 0/1 matrix summing label classes into their unit; per-unit blanks are dropped"""
        m = np.zeros((self.num_classes, self.inventory.total_units))
        for c, (u, blank) in enumerate(zip(self.class_units, self.class_is_blank)):
            if not blank or self.kind == TopologyKind.CTC:
                m[c, u] = 1.0
        return m

    def min_frames(self, labels: LabelSequence) -> int:
        """Shortest framing of a label sequence under this topology"""
        if self.kind == TopologyKind.CTC:
            repeats = sum(1 for a, b in zip(labels.units, labels.units[1:]) if a == b)
            return len(labels.units) + repeats
        total = 0
        for i, u in enumerate(labels.units):
            steps = self.canonical_steps(labels.units, i)
            total += sum(s.min_frames for s in steps)
        return total

    def canonical_steps(self, units: Sequence[int], i: int) -> Tuple[CanonicalStep, ...]:
        template = self.template(units[i])
        repeated = i + 1 < len(units) and units[i + 1] == units[i]
        if repeated and template.repeat_canonical is not None:
            return template.repeat_canonical
        return template.canonical


def _steps(*triples) -> Tuple[CanonicalStep, ...]:
    return tuple(CanonicalStep(state=s, min_frames=m, share=w) for s, m, w in triples)


def _make_template(kind: TopologyKind, unit: int, name: str, label: int, blank: Optional[int],
                   loop: float) -> UnitTemplate:
    lp, lq = math.log(loop), math.log(1.0 - loop)
    if kind == TopologyKind.MONO:
        return UnitTemplate(
            unit=unit,
            states=(TemplateState(name=name, output_class=label),),
            entry=((0, 0.0),),
            transitions=((0, 0, lp),),
            exit=((0, lq),),
            canonical=_steps((0, 1, 1)),
        )
    if kind == TopologyKind.HMM5:
        return UnitTemplate(
            unit=unit,
            states=tuple(TemplateState(name=f"{name}_{k}", output_class=label + k) for k in range(3)),
            entry=((0, 0.0),),
            transitions=((0, 0, lp), (0, 1, lq), (1, 1, lp), (1, 2, lq), (2, 2, lp)),
            exit=((2, lq),),
            canonical=_steps((0, 1, 1), (1, 1, 1), (2, 1, 1)),
        )
    blank_state = TemplateState(name=f"{name}_blank", output_class=blank)
    label_state = TemplateState(name=name, output_class=label)
    if kind == TopologyKind.HMM_PB:
        # self-looping label, then an optional self-looping blank
        half_rest = lq + LOG_HALF
        return UnitTemplate(
            unit=unit,
            states=(label_state, blank_state),
            entry=((0, 0.0),),
            transitions=((0, 0, lp), (0, 1, half_rest), (1, 1, lp)),
            exit=((0, half_rest), (1, lq)),
            canonical=_steps((0, 1, 1), (1, 0, 1)),
        )
    if kind == TopologyKind.HMM_BP:
        # optional blank delays the self-looping label
        return UnitTemplate(
            unit=unit,
            states=(blank_state, label_state),
            entry=((0, LOG_HALF), (1, LOG_HALF)),
            transitions=((0, 0, lp), (0, 1, lq), (1, 1, lp)),
            exit=((1, lq),),
            canonical=_steps((0, 0, 0), (1, 1, 1)),
        )
    if kind == TopologyKind.HMM_BPB:
        lead = TemplateState(name=f"{name}_blank", output_class=blank)
        trail = TemplateState(name=f"{name}_blank", output_class=blank)
        half_rest = lq + LOG_HALF
        return UnitTemplate(
            unit=unit,
            states=(lead, label_state, trail),
            entry=((0, LOG_HALF), (1, LOG_HALF)),
            transitions=((0, 0, lp), (0, 1, lq), (1, 1, lp), (1, 2, half_rest), (2, 2, lp)),
            exit=((1, half_rest), (2, lq)),
            repeat_entry=((1, LOG_HALF),),
            repeat_exit=((2, lq),),
            canonical=_steps((0, 0, 0), (1, 1, 1), (2, 0, 0)),
            repeat_canonical=_steps((0, 0, 0), (1, 1, 1), (2, 1, 0)),
        )
    if kind == TopologyKind.CTC:
        # used when expanding unit graphs; sequence compilation follows the CTC collapse rules
        half_rest = lq + LOG_HALF
        return UnitTemplate(
            unit=unit,
            states=(label_state, blank_state),
            entry=((0, 0.0),),
            transitions=((0, 0, lp), (0, 1, half_rest), (1, 1, lp)),
            exit=((0, half_rest), (1, lq)),
            repeat_exit=((1, lq),),
            canonical=_steps((0, 1, 1)),
        )
    raise GraphError(f"unsupported topology kind: {kind}")


def build_topology(kind: TopologyKind, inventory: UnitInventory, self_loop: float = 0.5) -> Topology:
    """
    Build the per-unit state templates of a topology

    Args:
        kind: topology family
        inventory: unit inventory; must contain blank exactly when kind is CTC
        self_loop: probability of every self-loop, the rest is split over forward arcs

    Returns:
        Topology with its output-class table
    """
    kind = TopologyKind(kind)
    has_blank = inventory.has(SpecialUnit.BLANK)
    if kind == TopologyKind.CTC and not has_blank:
        raise MissingSpecialUnit(SpecialUnit.BLANK.value)
    if kind != TopologyKind.CTC and has_blank:
        raise GraphError("the blank unit only exists for the ctc topology")

    blank_unit = inventory.blank_id()
    units = [u for u in range(inventory.total_units) if u != blank_unit]
    n = len(units)
    names: List[str] = []
    class_units: List[int] = []
    class_is_blank: List[bool] = []
    templates: Dict[int, UnitTemplate] = {}

    if kind == TopologyKind.CTC:
        for u in range(inventory.total_units):
            names.append(inventory.symbol_of(u))
            class_units.append(u)
            class_is_blank.append(u == blank_unit)
        for u in units:
            templates[u] = _make_template(kind, u, inventory.symbol_of(u), u, blank_unit, self_loop)
    elif kind == TopologyKind.HMM5:
        for j, u in enumerate(units):
            sym = inventory.symbol_of(u)
            for k in range(3):
                names.append(f"{sym}_{k}")
                class_units.append(u)
                class_is_blank.append(False)
            templates[u] = _make_template(kind, u, sym, 3 * j, None, self_loop)
    elif kind == TopologyKind.MONO:
        for j, u in enumerate(units):
            names.append(inventory.symbol_of(u))
            class_units.append(u)
            class_is_blank.append(False)
            templates[u] = _make_template(kind, u, inventory.symbol_of(u), j, None, self_loop)
    else:
        # label classes 0..n-1, per-unit blank classes n..2n-1
        for u in units:
            names.append(inventory.symbol_of(u))
            class_units.append(u)
            class_is_blank.append(False)
        for u in units:
            names.append(f"{inventory.symbol_of(u)}_blank")
            class_units.append(u)
            class_is_blank.append(True)
        for j, u in enumerate(units):
            templates[u] = _make_template(kind, u, inventory.symbol_of(u), j, n + j, self_loop)

    topology = Topology(
        kind=kind,
        inventory=inventory,
        templates=templates,
        class_names=tuple(names),
        class_units=tuple(class_units),
        class_is_blank=tuple(class_is_blank),
        scored_transitions=kind != TopologyKind.CTC,
    )
    logger.debug(f"Built {kind.value} topology: {len(templates)} units, {topology.num_classes} classes")
    return topology


def _compile_ctc(labels: LabelSequence, topology: Topology) -> Lattice:
    blank = topology.inventory.blank_id()
    units = labels.units
    n = len(units)
    # extended sequence blank l1 blank l2 ... ln blank as nodes 1..2n+1
    ext = [blank]
    for u in units:
        ext += [u, blank]
    arcs = [(0, 1, blank, 0.0), (0, 2, units[0], 0.0)]
    for k in range(1, len(ext) + 1):
        unit = ext[k - 1]
        arcs.append((k, k, unit, 0.0))
        if k < len(ext):
            arcs.append((k, k + 1, ext[k], 0.0))
        is_label = k % 2 == 0
        if is_label and k + 2 <= len(ext) and ext[k + 1] != unit:
            arcs.append((k, k + 2, ext[k + 1], 0.0))
    finals = {2 * n: 0.0, 2 * n + 1: 0.0}
    return Lattice.from_arcs(len(ext) + 1, arcs, finals)


def compile_sequence_graph(labels: LabelSequence, topology: Topology) -> Lattice:
    """
    Compile a label sequence into the lattice of all its framings

    State ids grow along the sequence, so a path's state never decreases.
    """
    for u in labels.units:
        topology.template(u)
    if topology.kind == TopologyKind.CTC:
        return _compile_ctc(labels, topology)

    scored = topology.scored_transitions
    units = labels.units
    offsets = []
    next_state = 1
    for u in units:
        offsets.append(next_state)
        next_state += len(topology.template(u).states)

    arcs = []
    for i, u in enumerate(units):
        tmpl = topology.template(u)
        base = offsets[i]
        for src, dst, logp in tmpl.transitions:
            arcs.append((base + src, base + dst, tmpl.states[dst].output_class, logp if scored else 0.0))
        if i == 0:
            for k, logp in tmpl.entry:
                arcs.append((0, base + k, tmpl.states[k].output_class, logp if scored else 0.0))
        else:
            prev = topology.template(units[i - 1])
            repeated = units[i - 1] == u and prev.repeat_exit is not None
            exits = prev.repeat_exit if repeated else prev.exit
            entries = tmpl.repeat_entry if repeated and tmpl.repeat_entry is not None else tmpl.entry
            for j, exit_logp in exits:
                for k, entry_logp in entries:
                    w = exit_logp + entry_logp if scored else 0.0
                    arcs.append((offsets[i - 1] + j, base + k, tmpl.states[k].output_class, w))
    last = topology.template(units[-1])
    finals = {offsets[-1] + j: (logp if scored else 0.0) for j, logp in last.exit}
    return Lattice.from_arcs(next_state, arcs, finals)


def flat_start_alignment(labels: LabelSequence, topology: Topology, T: int) -> List[int]:
    """
    Uniform segmentation of T frames over the canonical states of each unit

    Raises:
        Infeasible: when T is below the minimal framing length
    """
    units = labels.units
    steps: List[Tuple[int, int, int]] = []  # (class, min frames, share)
    if topology.kind == TopologyKind.CTC:
        blank = topology.inventory.blank_id()
        for i, u in enumerate(units):
            steps.append((u, 1, 1))
            if i + 1 < len(units) and units[i + 1] == u:
                steps.append((blank, 1, 0))
    else:
        for i, u in enumerate(units):
            tmpl = topology.template(u)
            for step in topology.canonical_steps(units, i):
                steps.append((tmpl.states[step.state].output_class, step.min_frames, step.share))

    required = sum(m for _, m, _ in steps)
    if T < required:
        raise Infeasible(f"{T} frames cannot hold a framing of {len(units)} labels (need {required})")
    spare = T - required
    shares = [w for _, _, w in steps]
    total_share = sum(shares)
    extra = [0] * len(steps)
    if total_share:
        # largest-remainder split keeps the total exact and deterministic
        quotas = [spare * w / total_share for w in shares]
        extra = [int(math.floor(q)) for q in quotas]
        left = spare - sum(extra)
        order = sorted(range(len(steps)), key=lambda k: (-(quotas[k] - extra[k]), k))
        for k in order[:left]:
            extra[k] += 1
    alignment: List[int] = []
    for (cls, m, _), e in zip(steps, extra):
        alignment.extend([cls] * (m + e))
    return alignment


def _repeat_states(unit_graph: Lattice) -> Dict[int, int]:
    """
    Chain states sitting between two arcs of the same unit

    A state qualifies when it is neither initial nor final and every arc in and
    out of it carries one unit; the framing must then separate the two copies
    the way sequence compilation does.
    """
    incoming: Dict[int, Set[int]] = {}
    outgoing: Dict[int, Set[int]] = {}
    for a, b, u, _, _, _ in unit_graph.arcs():
        outgoing.setdefault(a, set()).add(u)
        incoming.setdefault(b, set()).add(u)
    finals = unit_graph.finals()
    repeats = {}
    for state, units in incoming.items():
        if state == unit_graph.initial or state in finals:
            continue
        if len(units) == 1 and outgoing.get(state) == units and EPSILON not in units:
            repeats[state] = next(iter(units))
    return repeats


def expand_unit_graph(unit_graph: Lattice, topology: Topology) -> Lattice:
    """
    Replace every unit arc of a unit-level acceptor with its topology template

    Arc tags and entry marks travel with the unit arc: every frame arc of the
    template keeps the tag and the first frame arc keeps the entry mark. For a
    CTC topology a blank unit arc becomes a single emitting blank arc. Two arcs
    of one unit meeting in a chain state are joined through the template's
    repeat exit and entry, as in compile_sequence_graph.
    """
    blank = topology.inventory.blank_id()
    repeats = _repeat_states(unit_graph)
    next_state = unit_graph.num_states
    arcs = []
    for a, b, u, w, tag, entry in unit_graph.arcs():
        if u == EPSILON:
            arcs.append((a, b, EPSILON, w, tag, entry))
            continue
        if u == blank:
            arcs.append((a, b, u, w, tag, entry))
            continue
        tmpl = topology.template(u)
        entries = tmpl.entry
        if a in repeats and tmpl.repeat_entry is not None:
            entries = tmpl.repeat_entry
        exits = tmpl.exit
        if b in repeats and tmpl.repeat_exit is not None:
            exits = tmpl.repeat_exit
        base = next_state
        next_state += len(tmpl.states)
        for k, logp in entries:
            arcs.append((a, base + k, tmpl.states[k].output_class, w + logp, tag, entry))
        for src, dst, logp in tmpl.transitions:
            arcs.append((base + src, base + dst, tmpl.states[dst].output_class, logp, tag, False))
        for j, logp in exits:
            arcs.append((base + j, b, EPSILON, logp, tag, False))
    frame_graph = Lattice.from_arcs(next_state, arcs, unit_graph.finals(), unit_graph.initial)
    return frame_graph.remove_epsilons()
