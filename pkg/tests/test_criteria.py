import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from kwspot.criteria import (
    LossGrad,
    apply_nu,
    build_numerator_graph,
    ce_loss,
    ctc_loss,
    interpolate_ce,
    lf_bmmi,
    lf_mmi,
    lf_smbr,
    nu_weight,
    reference_states,
    state_accuracy,
)
from kwspot.errors import AlignmentMismatch, GraphError, Infeasible, LengthMismatch
from kwspot.lattice import Lattice, enumerate_arc_paths, enumerate_paths
from kwspot.models.configs import CriterionConfig, CriterionKind, LabelMode, NUConfig, TopologyKind
from kwspot.phonelm import build_denominator_graph, train_ngram
from kwspot.topology import build_topology, compile_sequence_graph, flat_start_alignment
from kwspot.units import LabelSequence, UnitInventory

A, B, C = 0, 1, 2


def numeric_grad(fn, x, eps=1e-6):
    grad = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        plus, minus = x.copy(), x.copy()
        plus[idx] += eps
        minus[idx] -= eps
        grad[idx] = (fn(plus) - fn(minus)) / (2 * eps)
    return grad


@pytest.fixture
def mono():
    """Three one-state phones, a bigram denominator and a 4-frame reference for [a, b]"""
    inventory = UnitInventory.for_mode(["a", "b", "c"], LabelMode.PHONE, ctc=False)
    topology = build_topology(TopologyKind.MONO, inventory, 0.5)
    lm = train_ngram([LabelSequence(units=(A, B)), LabelSequence(units=(B, C, A))], 2, inventory)
    denominator = build_denominator_graph(lm, topology)
    labels = LabelSequence(units=(A, B))
    reference = flat_start_alignment(labels, topology, 4)
    return topology, denominator, labels, reference


def test_ce_perfect_frame():
    result = ce_loss(np.array([[0.0, -50.0]]), [0])
    assert result.loss == pytest.approx(0.0)


def test_ce_half_posteriors():
    x = np.log(np.full((2, 2), 0.5))
    result = ce_loss(x, [0, 1])
    assert result.loss == pytest.approx(2 * math.log(2))
    assert_allclose(result.grad.values, [[-1.0, 0.0], [0.0, -1.0]])


def test_ce_length_mismatch():
    with pytest.raises(LengthMismatch):
        ce_loss(np.zeros((2, 2)), [0])


def test_ctc_single_frame(make_topology, labels):
    topology = make_topology(TopologyKind.CTC, ("a",))
    x = np.log([[0.7, 0.3]])
    assert ctc_loss(x, labels(A), topology).loss == pytest.approx(-math.log(0.7))


def test_ctc_two_frames_uniform(make_topology, labels):
    topology = make_topology(TopologyKind.CTC, ("a",))
    x = np.log(np.full((2, 2), 0.5))
    assert ctc_loss(x, labels(A), topology).loss == pytest.approx(-math.log(0.75))


def test_ctc_repeat_infeasible(make_topology, labels):
    topology = make_topology(TopologyKind.CTC, ("a",))
    with pytest.raises(Infeasible):
        ctc_loss(np.zeros((2, 2)), labels(A, A), topology)


def test_ctc_needs_ctc_topology(make_topology, labels):
    with pytest.raises(GraphError):
        ctc_loss(np.zeros((2, 2)), labels(A), make_topology(TopologyKind.MONO))


def test_ctc_gradient(make_topology, labels, rng):
    topology = make_topology(TopologyKind.CTC, ("a", "b"))
    seq = labels(A, B, A)
    x = rng.normal(size=(6, 3))
    analytic = ctc_loss(x, seq, topology).grad.values
    numeric = numeric_grad(lambda v: ctc_loss(v, seq, topology).loss, x)
    assert_allclose(analytic, numeric, atol=1e-6)


def test_reference_states_reject_foreign_alignment(make_topology, labels):
    graph = compile_sequence_graph(labels(A, B), make_topology(TopologyKind.MONO))
    with pytest.raises(AlignmentMismatch):
        reference_states(graph, [1, 1, 0, 0])


def test_numerator_tolerance_zero_is_reference(mono):
    topology, _, seq, reference = mono
    graph = build_numerator_graph(seq, reference, 0, topology)
    paths = enumerate_paths(graph, len(reference))
    assert [units for units, _ in paths] == [list(reference)]


def test_numerator_wide_tolerance_is_unconstrained(mono):
    topology, _, seq, reference = mono
    T = len(reference)
    constrained = build_numerator_graph(seq, reference, T, topology)
    free = compile_sequence_graph(seq, topology)
    assert sorted(u for u, _ in enumerate_paths(constrained, T)) == sorted(u for u, _ in enumerate_paths(free, T))


@pytest.mark.parametrize("tolerance", [1, 2])
def test_numerator_path_count_matches_window_rule(make_topology, labels, tolerance):
    topology = make_topology(TopologyKind.HMM_BP)
    seq = labels(A, B)
    T = 6
    reference = flat_start_alignment(seq, topology, T)
    graph = compile_sequence_graph(seq, topology)
    ref_states = reference_states(graph, reference)

    def inside(states):
        for t, s in enumerate(states):
            lo = ref_states[t - tolerance] if t - tolerance >= 0 else -1
            hi = ref_states[t + tolerance] if t + tolerance <= T else graph.num_states
            if not lo <= s <= hi:
                return False
        return True

    expected = 0
    for arcs in enumerate_arc_paths(graph, T):
        states = [graph.initial] + [int(graph.dst[a]) for a in arcs]
        expected += inside(states)

    numerator = build_numerator_graph(seq, reference, tolerance, topology)
    assert len(enumerate_arc_paths(numerator, T)) == expected
    assert expected > 1


def test_mmi_with_identical_graphs(mono, rng):
    topology, _, seq, reference = mono
    graph = compile_sequence_graph(seq, topology)
    result = lf_mmi(rng.normal(size=(4, 3)), graph, graph, CriterionConfig(kind=CriterionKind.LF_MMI))
    assert result.loss == pytest.approx(0.0, abs=1e-12)
    assert_allclose(result.grad.values, 0.0, atol=1e-12)


def test_mmi_zero_kappa_has_zero_gradient(mono, rng):
    topology, denominator, seq, reference = mono
    numerator = build_numerator_graph(seq, reference, 1, topology)
    cfg = CriterionConfig(kind=CriterionKind.LF_MMI, kappa=0.0)
    assert_allclose(lf_mmi(rng.normal(size=(4, 3)), numerator, denominator, cfg).grad.values, 0.0)


def test_mmi_gradient(mono, rng):
    topology, denominator, seq, reference = mono
    numerator = build_numerator_graph(seq, reference, 1, topology)
    cfg = CriterionConfig(kind=CriterionKind.LF_MMI, kappa=0.8)
    x = rng.normal(size=(4, 3))
    analytic = lf_mmi(x, numerator, denominator, cfg).grad.values
    numeric = numeric_grad(lambda v: lf_mmi(v, numerator, denominator, cfg).loss, x)
    assert_allclose(analytic, numeric, atol=1e-6)


def test_bmmi_without_boost_equals_mmi(mono, rng):
    topology, denominator, seq, reference = mono
    numerator = build_numerator_graph(seq, reference, 1, topology)
    x = rng.normal(size=(4, 3))
    mmi = lf_mmi(x, numerator, denominator, CriterionConfig(kind=CriterionKind.LF_MMI, kappa=0.7))
    bmmi = lf_bmmi(x, numerator, denominator, reference,
                   CriterionConfig(kind=CriterionKind.LF_BMMI, kappa=0.7, boost=0.0), topology)
    assert abs(bmmi.loss - mmi.loss) <= 1e-12
    assert_allclose(bmmi.grad.values, mmi.grad.values, atol=1e-12)


def test_bmmi_error_free_competitors_equal_mmi(mono, rng):
    topology, _, seq, reference = mono
    only_reference = build_numerator_graph(seq, reference, 0, topology)
    x = rng.normal(size=(4, 3))
    mmi = lf_mmi(x, only_reference, only_reference, CriterionConfig(kind=CriterionKind.LF_MMI))
    bmmi = lf_bmmi(x, only_reference, only_reference, reference,
                   CriterionConfig(kind=CriterionKind.LF_BMMI, boost=0.5), topology)
    assert bmmi.loss == pytest.approx(mmi.loss, abs=1e-12)
    assert_allclose(bmmi.grad.values, mmi.grad.values, atol=1e-12)


def test_bmmi_boost_raises_loss(mono, rng):
    topology, denominator, seq, reference = mono
    numerator = build_numerator_graph(seq, reference, 1, topology)
    x = rng.normal(size=(4, 3))
    plain = lf_bmmi(x, numerator, denominator, reference,
                    CriterionConfig(kind=CriterionKind.LF_BMMI, boost=0.0), topology)
    boosted = lf_bmmi(x, numerator, denominator, reference,
                      CriterionConfig(kind=CriterionKind.LF_BMMI, boost=0.5), topology)
    assert boosted.loss > plain.loss


def test_bmmi_gradient(mono, rng):
    topology, denominator, seq, reference = mono
    numerator = build_numerator_graph(seq, reference, 1, topology)
    cfg = CriterionConfig(kind=CriterionKind.LF_BMMI, kappa=0.8, boost=0.3)
    x = rng.normal(size=(4, 3))
    analytic = lf_bmmi(x, numerator, denominator, reference, cfg, topology).grad.values
    numeric = numeric_grad(lambda v: lf_bmmi(v, numerator, denominator, reference, cfg, topology).loss, x)
    assert_allclose(analytic, numeric, atol=1e-6)


def test_smbr_all_mass_on_reference(mono, rng):
    topology, _, seq, reference = mono
    only_reference = build_numerator_graph(seq, reference, 0, topology)
    result = lf_smbr(rng.normal(size=(4, 3)), only_reference, reference,
                     CriterionConfig(kind=CriterionKind.LF_SMBR), topology)
    assert result.loss == pytest.approx(-4.0)
    assert_allclose(result.grad.values, 0.0, atol=1e-10)


def test_smbr_two_equal_accuracy_paths(make_topology):
    topology = make_topology(TopologyKind.MONO, ("a", "b", "c"))
    # two one-frame paths, b and c, both wrong against the reference a
    graph = Lattice.from_arcs(2, [(0, 1, B, 0.0), (0, 1, C, 0.0)], {1: 0.0})
    result = lf_smbr(np.zeros((1, 3)), graph, [A], CriterionConfig(kind=CriterionKind.LF_SMBR), topology)
    assert result.loss == pytest.approx(0.0)


def test_smbr_gradient(mono, rng):
    topology, denominator, _, reference = mono
    cfg = CriterionConfig(kind=CriterionKind.LF_SMBR, kappa=0.8)
    x = rng.normal(size=(4, 3))
    analytic = lf_smbr(x, denominator, reference, cfg, topology).grad.values
    numeric = numeric_grad(lambda v: lf_smbr(v, denominator, reference, cfg, topology).loss, x)
    assert_allclose(analytic, numeric, atol=1e-6)


def test_smbr_expected_accuracy_by_enumeration(mono, rng):
    topology, denominator, _, reference = mono
    x = rng.normal(size=(4, 3))
    paths = enumerate_paths(denominator, 4, x)
    scores = np.array([s for _, s in paths])
    weights = np.exp(scores - scores.max())
    weights /= weights.sum()
    expected = sum(w * state_accuracy(units, reference) for w, (units, _) in zip(weights, paths))
    result = lf_smbr(x, denominator, reference, CriterionConfig(kind=CriterionKind.LF_SMBR), topology)
    assert -result.loss == pytest.approx(expected, abs=1e-10)


def test_state_accuracy():
    assert state_accuracy([1, 2, 3, 4, 5], [1, 2, 3, 4, 5]) == 5
    assert state_accuracy([0, 0, 0], [1, 1, 1]) == 0
    assert state_accuracy([0, 1, 0, 1], [0, 0, 0, 0]) == 2
    with pytest.raises(LengthMismatch):
        state_accuracy([0], [0, 0])


def test_state_accuracy_by_phone_keys(make_topology):
    topology = make_topology(TopologyKind.HMM5, ("a", "b"))
    keys = topology.accuracy_keys()
    assert state_accuracy([0, 1, 2, 3], [2, 2, 2, 2], keys) == 3


def test_nu_weights():
    nu = NUConfig(alpha=2.5, beta=2.5, keyword_units=frozenset({A}))
    assert nu_weight([A], [A], nu).tolist() == [2.5]
    assert nu_weight([B], [C], nu).tolist() == [1.0]

    skewed = NUConfig(alpha=3.0, beta=2.0, keyword_units=frozenset({A}))
    assert nu_weight([A, A, B, B], [A, B, A, C], skewed).tolist() == [2.0, 3.0, 2.0, 1.0]


def test_nu_unit_weights_leave_gradient_alone(mono, rng):
    topology, denominator, seq, reference = mono
    numerator = build_numerator_graph(seq, reference, 1, topology)
    mmi = lf_mmi(rng.normal(size=(4, 3)), numerator, denominator, CriterionConfig(kind=CriterionKind.LF_MMI))
    nu = NUConfig(alpha=1.0, beta=1.0, keyword_units=frozenset({A, B}))
    weights = nu_weight(reference, [A, C, B, A], nu)
    assert weights.tolist() == [1.0] * 4
    weighted = apply_nu(mmi, weights)
    assert weighted.loss == mmi.loss
    assert_allclose(weighted.grad.values, mmi.grad.values)


def test_interpolate_ce_endpoints():
    ce = LossGrad(1.0, np.ones((2, 2)))
    seq = LossGrad(3.0, np.zeros((2, 2)))
    assert interpolate_ce(ce, seq, 1.0) is ce
    assert interpolate_ce(ce, seq, 0.0) is seq
    mixed = interpolate_ce(ce, seq, 0.25)
    assert mixed.loss == pytest.approx(2.5)
    assert_allclose(mixed.grad.values, 0.25)


def max_relative_error(analytic, numeric):
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-8)
    return float(np.abs(analytic - numeric).max() / scale)


def random_instance(seed, kind):
    """A random label sequence, bigram denominator, flat-start reference and frame scores"""
    rng = np.random.default_rng(seed)
    inventory = UnitInventory.for_mode(["a", "b"], LabelMode.PHONE, ctc=False)
    topology = build_topology(kind, inventory, float(rng.uniform(0.2, 0.8)))
    corpus = [LabelSequence(units=tuple(rng.integers(0, 2, size=rng.integers(1, 4)).tolist())) for _ in range(4)]
    denominator = build_denominator_graph(train_ngram(corpus, 2, inventory), topology)
    seq = LabelSequence(units=tuple(rng.integers(0, 2, size=rng.integers(1, 3)).tolist()))
    T = topology.min_frames(seq) + int(rng.integers(1, 3))
    reference = flat_start_alignment(seq, topology, T)
    x = rng.normal(size=(T, topology.num_classes))
    kappa = float(rng.uniform(0.5, 1.5))
    return topology, denominator, seq, reference, x, kappa


def sequence_loss(name, topology, denominator, seq, reference, kappa):
    numerator = build_numerator_graph(seq, reference, 1, topology)
    if name == "lf_mmi":
        cfg = CriterionConfig(kind=CriterionKind.LF_MMI, kappa=kappa)
        return lambda v: lf_mmi(v, numerator, denominator, cfg)
    if name.startswith("lf_bmmi"):
        boost = 0.0 if name.endswith("b0") else 0.1
        cfg = CriterionConfig(kind=CriterionKind.LF_BMMI, kappa=kappa, boost=boost)
        return lambda v: lf_bmmi(v, numerator, denominator, reference, cfg, topology)
    cfg = CriterionConfig(kind=CriterionKind.LF_SMBR, kappa=kappa)
    return lambda v: lf_smbr(v, denominator, reference, cfg, topology)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("kind", [TopologyKind.HMM_BP, TopologyKind.HMM_BPB, TopologyKind.HMM_PB])
@pytest.mark.parametrize("criterion", ["lf_mmi", "lf_bmmi_b0", "lf_bmmi", "lf_smbr"])
def test_sequence_gradients_on_random_instances(criterion, kind, seed):
    topology, denominator, seq, reference, x, kappa = random_instance(seed, kind)
    loss = sequence_loss(criterion, topology, denominator, seq, reference, kappa)
    analytic = loss(x).grad.values
    numeric = numeric_grad(lambda v: loss(v).loss, x, eps=1e-4)
    assert max_relative_error(analytic, numeric) < 1e-4


@pytest.mark.parametrize("seed", range(12))
def test_ctc_gradients_on_random_instances(make_topology, seed):
    rng = np.random.default_rng(100 + seed)
    topology = make_topology(TopologyKind.CTC, ("a", "b"))
    seq = LabelSequence(units=tuple(rng.integers(0, 2, size=rng.integers(1, 4)).tolist()))
    T = topology.min_frames(seq) + int(rng.integers(0, 3))
    x = rng.normal(size=(T, topology.num_classes))
    analytic = ctc_loss(x, seq, topology).grad.values
    numeric = numeric_grad(lambda v: ctc_loss(v, seq, topology).loss, x, eps=1e-4)
    assert max_relative_error(analytic, numeric) < 1e-4


def test_bmmi_loss_grows_with_boost(mono, rng):
    topology, denominator, seq, reference = mono
    numerator = build_numerator_graph(seq, reference, 1, topology)
    x = rng.normal(size=(4, 3))
    losses = [
        lf_bmmi(x, numerator, denominator, reference,
                CriterionConfig(kind=CriterionKind.LF_BMMI, boost=b), topology).loss
        for b in (0.0, 0.05, 0.1, 0.2)
    ]
    assert all(later > earlier for earlier, later in zip(losses, losses[1:]))
