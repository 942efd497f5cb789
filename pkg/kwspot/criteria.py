"""
Training objectives and their gradients with respect to frame log-posteriors.

Every criterion returns a LossGrad whose grad holds dLoss/d(log-posterior);
the acoustic model turns that into pre-activation gradients.
"""
import logging
from typing import Optional, Sequence, Union

import numpy as np

from kwspot.errors import AlignmentMismatch, GraphError, Infeasible, LengthMismatch, NoPath
from kwspot.lattice import (
    NEG_INF,
    Lattice,
    ScoreKind,
    ScoreMatrix,
    _as_values,
    arc_log_posteriors,
    backward_pass,
    forward_backward,
    forward_pass,
    viterbi_arcs,
)
from kwspot.models.configs import AccuracyLevel, CriterionConfig, NUConfig, TopologyKind
from kwspot.topology import Topology, compile_sequence_graph
from kwspot.units import LabelSequence

logger = logging.getLogger(__name__)

Scores = Union[ScoreMatrix, np.ndarray]


class LossGrad:
    """Scalar loss and its T x U gradient"""

    def __init__(self, loss: float, grad: np.ndarray):
        self.loss = float(loss)
        self.grad = ScoreMatrix(grad, ScoreKind.GRADIENT)

    @property
    def T(self) -> int:
        return self.grad.T

    def __repr__(self) -> str:
        return f"LossGrad(loss={self.loss:.6f}, T={self.grad.T})"


def _check_alignment(alignment: Sequence[int], T: int) -> np.ndarray:
    ref = np.asarray(alignment, dtype=np.int64)
    if len(ref) != T:
        raise LengthMismatch(T, len(ref))
    return ref


def ce_loss(log_posteriors: Scores, alignment: Sequence[int]) -> LossGrad:
    """Frame cross-entropy against a fixed class alignment"""
    x = _as_values(log_posteriors)
    T = x.shape[0]
    ref = _check_alignment(alignment, T)
    rows = np.arange(T)
    loss = -float(x[rows, ref].sum())
    grad = np.zeros_like(x)
    grad[rows, ref] = -1.0
    return LossGrad(loss, grad)


def ctc_loss(log_posteriors: Scores, labels: LabelSequence, topology: Topology) -> LossGrad:
    """
    Negative log-probability of the label sequence summed over all CTC framings

    Raises:
        Infeasible: when the utterance is shorter than the minimal framing
    """
    if topology.kind != TopologyKind.CTC:
        raise GraphError(f"ctc_loss needs the ctc topology, got {topology.kind.value}")
    x = _as_values(log_posteriors)
    T = x.shape[0]
    need = topology.min_frames(labels)
    if T < need:
        raise Infeasible(f"{T} frames cannot hold {len(labels)} labels (need {need})")
    graph = compile_sequence_graph(labels, topology)
    try:
        fb = forward_backward(graph, x)
    except NoPath as e:
        raise Infeasible(str(e)) from e
    return LossGrad(-fb.log_total, -fb.occupancy.values)


def reference_states(graph: Lattice, alignment: Sequence[int]) -> np.ndarray:
    """
    State sequence (T+1 entries, initial state first) that realizes a class alignment

    Raises:
        AlignmentMismatch: when no path of the graph emits the alignment
    """
    ref = np.asarray(alignment, dtype=np.int64)
    U = max(int(ref.max()) if len(ref) else 0, graph.max_unit) + 1
    mask = np.full((len(ref), U), NEG_INF)
    mask[np.arange(len(ref)), ref] = 0.0
    try:
        arcs, _ = viterbi_arcs(graph, mask)
    except NoPath:
        raise AlignmentMismatch("reference alignment is not a framing of the labels") from None
    return np.array([graph.initial] + [int(graph.dst[a]) for a in arcs], dtype=np.int64)


def build_numerator_graph(
    labels: LabelSequence,
    reference_alignment: Sequence[int],
    tolerance: int,
    topology: Topology,
) -> Lattice:
    """
    Framings of the labels that stay within a frame-shift window of the reference

    At frame t a path may occupy any state between the reference state of frame
    t - tolerance and that of frame t + tolerance; windows running past either
    end of the utterance are open on that side.

    Args:
        labels: transcript labels
        reference_alignment: output class per frame
        tolerance: window radius in frames
        topology: topology the labels compile under

    Returns:
        Time-expanded lattice accepting only length-T paths
    """
    graph = compile_sequence_graph(labels, topology)
    T = len(reference_alignment)
    path = reference_states(graph, reference_alignment)
    N = graph.num_states

    t_idx = np.arange(T + 1)
    lo = np.where(t_idx - tolerance >= 0, path[np.clip(t_idx - tolerance, 0, T)], 0)
    hi = np.where(t_idx + tolerance <= T, path[np.clip(t_idx + tolerance, 0, T)], N - 1)
    states = np.arange(N)
    allowed = (states[None, :] >= lo[:, None]) & (states[None, :] <= hi[:, None])

    src, dst, unit, weight = [], [], [], []
    for t in range(T):
        keep = allowed[t, graph.src] & allowed[t + 1, graph.dst]
        src.append(t * N + graph.src[keep])
        dst.append((t + 1) * N + graph.dst[keep])
        unit.append(graph.unit[keep])
        weight.append(graph.weight[keep])
    final = np.full((T + 1) * N, NEG_INF)
    end = allowed[T] & np.isfinite(graph.final)
    final[T * N + states[end]] = graph.final[end]

    def cat(parts, dtype):
        return np.concatenate(parts) if parts else np.zeros(0, dtype=dtype)

    expanded = Lattice(
        (T + 1) * N,
        cat(src, np.int64),
        cat(dst, np.int64),
        cat(unit, np.int64),
        cat(weight, np.float64),
        final,
        graph.initial,
    ).trim()
    logger.debug(f"Numerator graph: {expanded.num_states} states, {expanded.num_arcs} arcs, tolerance {tolerance}")
    return expanded


def accuracy_matrix(
    reference_alignment: Sequence[int],
    topology: Topology,
    level: AccuracyLevel = AccuracyLevel.PHONE,
) -> np.ndarray:
    """acc[t, c] = 1 when class c counts as correct against the reference class at frame t"""
    keys = topology.accuracy_keys(level)
    ref = np.asarray(reference_alignment, dtype=np.int64)
    return (keys[None, :] == keys[ref][:, None]).astype(np.float64)


def state_accuracy(path: Sequence[int], reference: Sequence[int], keys: Optional[np.ndarray] = None) -> int:
    """
    Number of frames whose class matches the reference

    When `keys` is given (see Topology.accuracy_keys) classes are compared by key,
    so e.g. the three states of a phone all match that phone.
    """
    p = np.asarray(path, dtype=np.int64)
    r = np.asarray(reference, dtype=np.int64)
    if len(p) != len(r):
        raise LengthMismatch(len(r), len(p))
    if keys is not None:
        p, r = keys[p], keys[r]
    return int((p == r).sum())


def _mmi(x: np.ndarray, numerator: Lattice, denominator: Lattice, kappa: float,
         offset: Optional[np.ndarray] = None) -> LossGrad:
    scaled = kappa * x
    num = forward_backward(numerator, scaled)
    den_scores = scaled if offset is None else scaled + offset
    den = forward_backward(denominator, den_scores)
    loss = -(num.log_total - den.log_total)
    grad = kappa * (den.occupancy.values - num.occupancy.values)
    return LossGrad(loss, grad)


def lf_mmi(log_posteriors: Scores, numerator: Lattice, denominator: Lattice, cfg: CriterionConfig) -> LossGrad:
    """Lattice-free MMI: log numerator total minus log denominator total, scores scaled by kappa"""
    return _mmi(_as_values(log_posteriors), numerator, denominator, cfg.kappa)


def lf_bmmi(
    log_posteriors: Scores,
    numerator: Lattice,
    denominator: Lattice,
    reference_alignment: Sequence[int],
    cfg: CriterionConfig,
    topology: Topology,
) -> LossGrad:
    """
    Boosted lattice-free MMI

    Denominator frames that disagree with the reference get a score offset of
    +boost, so competitors are boosted in proportion to their errors and an
    error-free competitor is left as it is.
    """
    x = _as_values(log_posteriors)
    ref = _check_alignment(reference_alignment, x.shape[0])
    if cfg.boost == 0.0:
        return _mmi(x, numerator, denominator, cfg.kappa)
    acc = accuracy_matrix(ref, topology, cfg.accuracy)
    acc = _pad_columns(acc, x.shape[1])
    return _mmi(x, numerator, denominator, cfg.kappa, offset=cfg.boost * (1.0 - acc))


def _pad_columns(acc: np.ndarray, U: int) -> np.ndarray:
    if acc.shape[1] >= U:
        return acc[:, :U]
    return np.pad(acc, ((0, 0), (0, U - acc.shape[1])))


def _transition_ratios(log_from: np.ndarray, log_arc: np.ndarray, log_to: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore"):
        r = np.exp(log_from + log_arc - log_to)
    return np.where(np.isnan(r), 0.0, r)


def lf_smbr(
    log_posteriors: Scores,
    denominator: Lattice,
    reference_alignment: Sequence[int],
    cfg: CriterionConfig,
    topology: Topology,
) -> LossGrad:
    """
    Lattice-free state-level minimum Bayes risk

    The loss is minus the expected frame accuracy under the scaled path
    posterior. The gradient needs, per arc and frame, the expected accuracy of
    the paths through it, collected by forward and backward accuracy
    accumulators alongside the usual alpha and beta.
    """
    x = _as_values(log_posteriors)
    T, U = x.shape
    ref = _check_alignment(reference_alignment, T)
    acc = _pad_columns(accuracy_matrix(ref, topology, cfg.accuracy), U)
    kappa = cfg.kappa
    scaled = kappa * x
    lat = denominator

    alpha = forward_pass(lat, scaled)
    log_total = float(np.logaddexp.reduce(alpha[T] + lat.final)) if lat.num_states else NEG_INF
    if not np.isfinite(log_total):
        raise NoPath(f"no accepting path of length {T}")
    beta = backward_pass(lat, scaled)
    N = lat.num_states

    # expected accuracy of prefixes ending in each state / suffixes leaving it
    acc_fwd = np.zeros((T + 1, N))
    for t in range(T):
        r = _transition_ratios(alpha[t, lat.src], lat.weight + scaled[t, lat.unit], alpha[t + 1, lat.dst])
        acc_fwd[t + 1] = np.bincount(lat.dst, weights=r * (acc_fwd[t, lat.src] + acc[t, lat.unit]), minlength=N)
    acc_bwd = np.zeros((T + 1, N))
    for t in range(T - 1, -1, -1):
        r = _transition_ratios(beta[t + 1, lat.dst], lat.weight + scaled[t, lat.unit], beta[t, lat.src])
        acc_bwd[t] = np.bincount(lat.src, weights=r * (acc[t, lat.unit] + acc_bwd[t + 1, lat.dst]), minlength=N)

    post = np.exp(arc_log_posteriors(lat, scaled, alpha, beta, log_total))
    expected = float((post[0] * (acc[0, lat.unit] + acc_bwd[1, lat.dst])).sum()) if T else 0.0

    gamma = np.zeros((T, U))
    xi = np.zeros((T, U))
    for t in range(T):
        through = acc_fwd[t, lat.src] + acc[t, lat.unit] + acc_bwd[t + 1, lat.dst]
        gamma[t] = np.bincount(lat.unit, weights=post[t], minlength=U)
        xi[t] = np.bincount(lat.unit, weights=post[t] * through, minlength=U)

    grad = -kappa * (xi - gamma * expected)
    return LossGrad(-expected, grad)


def nu_weight(
    reference: Sequence[int],
    hypothesis: Sequence[int],
    nu: NUConfig,
    class_units: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """
    Per-frame gradient weights for keyword frames

    A frame whose reference and hypothesis are both keyword units gets
    min(alpha, beta); a keyword reference alone (a false rejection) gets alpha;
    a keyword hypothesis alone (a false alarm) gets beta; everything else 1.
    `class_units` maps output classes to units when the frames hold classes.
    """
    r = np.asarray(reference, dtype=np.int64)
    h = np.asarray(hypothesis, dtype=np.int64)
    if len(r) != len(h):
        raise LengthMismatch(len(r), len(h))
    if class_units is not None:
        table = np.asarray(class_units, dtype=np.int64)
        r, h = table[r], table[h]
    keyword = np.array(sorted(nu.keyword_units), dtype=np.int64)
    ref_kw = np.isin(r, keyword)
    hyp_kw = np.isin(h, keyword)
    w = np.ones(len(r))
    w[ref_kw & hyp_kw] = min(nu.alpha, nu.beta)
    w[ref_kw & ~hyp_kw] = nu.alpha
    w[~ref_kw & hyp_kw] = nu.beta
    return w


def apply_nu(loss_grad: LossGrad, weights: np.ndarray) -> LossGrad:
    """Scale every gradient row by its frame weight; the loss value is left as it is"""
    weights = np.asarray(weights, dtype=np.float64)
    if len(weights) != loss_grad.T:
        raise LengthMismatch(loss_grad.T, len(weights))
    return LossGrad(loss_grad.loss, loss_grad.grad.values * weights[:, None])


def interpolate_ce(ce: LossGrad, seq: LossGrad, cew: float) -> LossGrad:
    """cew * CE + (1 - cew) * sequence criterion"""
    if ce.grad.values.shape != seq.grad.values.shape:
        raise LengthMismatch(seq.T, ce.T)
    if cew == 1.0:
        return ce
    if cew == 0.0:
        return seq
    return LossGrad(
        cew * ce.loss + (1.0 - cew) * seq.loss,
        cew * ce.grad.values + (1.0 - cew) * seq.grad.values,
    )
