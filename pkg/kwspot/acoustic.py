"""
Frame classifier, priors, forced alignment and the SGD training loop.
"""
import json
import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import log_softmax

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
)
from kwspot.errors import (
    AlignmentMismatch,
    DimensionMismatch,
    EmptyAlignment,
    FormatError,
    GraphError,
    Infeasible,
    NoPath,
)
from kwspot.lattice import Lattice, ScoreKind, ScoreMatrix, viterbi
from kwspot.models.configs import CriterionConfig, CriterionKind, NUConfig, TrainConfig
from kwspot.models.reports import EpochStats
from kwspot.topology import Topology, compile_sequence_graph, flat_start_alignment
from kwspot.units import LabelSequence

logger = logging.getLogger(__name__)

MODEL_MAGIC = b"KWSM"
PRIOR_FLOOR = 1e-6


class FrameClassifier:
    """
    Context-splicing feed-forward network: splice -> (affine, ReLU)* -> affine -> log-softmax

    Parameters are stored as [W0, b0, W1, b1, ...] in `dtype` (float32 by
    default); every computation runs in float64.
    """

    def __init__(
        self,
        input_dim: int,
        hidden: Sequence[int],
        num_classes: int,
        context: int = 2,
        subsample: int = 1,
        class_names: Optional[Sequence[str]] = None,
        dtype=np.float32,
        params: Optional[List[np.ndarray]] = None,
    ):
        self.input_dim = int(input_dim)
        self.hidden = [int(h) for h in hidden]
        self.num_classes = int(num_classes)
        self.context = int(context)
        self.subsample = int(subsample)
        self.class_names = list(class_names) if class_names is not None else [str(c) for c in range(num_classes)]
        self.dtype = np.dtype(dtype)
        sizes = self.layer_sizes
        if params is None:
            params = []
            for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
                params += [np.zeros((fan_in, fan_out), self.dtype), np.zeros(fan_out, self.dtype)]
        self.params = [np.asarray(p, dtype=self.dtype) for p in params]
        expected = [(a, b) for a, b in zip(sizes[:-1], sizes[1:])]
        if len(self.params) != 2 * len(expected):
            raise DimensionMismatch(2 * len(expected), len(self.params))
        for (fan_in, fan_out), W, b in zip(expected, self.params[0::2], self.params[1::2]):
            if W.shape != (fan_in, fan_out) or b.shape != (fan_out,):
                raise DimensionMismatch(fan_in * fan_out, W.size)

    @classmethod
    def create(
        cls,
        input_dim: int,
        num_classes: int,
        cfg: TrainConfig,
        subsample: int = 1,
        class_names: Optional[Sequence[str]] = None,
        seed: int = 0,
        dtype=np.float32,
    ) -> "FrameClassifier":
        """Randomly initialized network (scaled Gaussian weights, zero biases)"""
        model = cls(input_dim, cfg.hidden, num_classes, cfg.context, subsample, class_names, dtype)
        rng = np.random.default_rng(seed)
        for i in range(0, len(model.params), 2):
            model.params[i] = (rng.standard_normal(model.params[i].shape) * cfg.init_scale).astype(model.dtype)
        return model

    @property
    def spliced_dim(self) -> int:
        return self.input_dim * (2 * self.context + 1)

    @property
    def layer_sizes(self) -> List[int]:
        return [self.spliced_dim] + self.hidden + [self.num_classes]

    @property
    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.params))

    def output_frames(self, T: int) -> int:
        return -(-T // self.subsample)

    def splice(self, features: np.ndarray) -> np.ndarray:
        """Stack each frame with its +-context neighbours (edges replicated), keep every subsample-th frame"""
        feats = np.asarray(features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[1] != self.input_dim:
            raise DimensionMismatch(self.input_dim, feats.shape[1] if feats.ndim == 2 else -1)
        T = feats.shape[0]
        kept = np.arange(0, T, self.subsample)
        offsets = np.arange(-self.context, self.context + 1)
        idx = np.clip(kept[:, None] + offsets[None, :], 0, max(T - 1, 0))
        return feats[idx].reshape(len(kept), self.spliced_dim)

    def forward_cache(self, features: np.ndarray) -> Tuple[List[np.ndarray], np.ndarray]:
        """Layer inputs (for backward) and the log-posteriors"""
        h = self.splice(features)
        inputs = [h]
        n_layers = len(self.params) // 2
        for i in range(n_layers):
            W = self.params[2 * i].astype(np.float64)
            b = self.params[2 * i + 1].astype(np.float64)
            z = h @ W + b
            if i < n_layers - 1:
                h = np.maximum(z, 0.0)
                inputs.append(h)
            else:
                return inputs, log_softmax(z, axis=1)
        raise GraphError("network has no layers")

    def backward(self, inputs: List[np.ndarray], log_post: np.ndarray, grad_log_post: np.ndarray) -> List[np.ndarray]:
        """
        Parameter gradients given dLoss/d(log-posterior)

        The log-softmax Jacobian maps g to g - y * sum(g) at the output pre-activation.
        """
        g = np.asarray(grad_log_post, dtype=np.float64)
        y = np.exp(log_post)
        dz = g - y * g.sum(axis=1, keepdims=True)
        grads: List[np.ndarray] = [None] * len(self.params)
        n_layers = len(self.params) // 2
        for i in range(n_layers - 1, -1, -1):
            grads[2 * i] = inputs[i].T @ dz
            grads[2 * i + 1] = dz.sum(axis=0)
            if i > 0:
                dh = dz @ self.params[2 * i].astype(np.float64).T
                dz = dh * (inputs[i] > 0)
        return grads

    def apply_update(self, grads: List[np.ndarray], learning_rate: float) -> None:
        if learning_rate == 0.0:
            return
        for i, g in enumerate(grads):
            self.params[i] = (self.params[i].astype(np.float64) - learning_rate * g).astype(self.dtype)

    def copy(self) -> "FrameClassifier":
        return FrameClassifier(self.input_dim, self.hidden, self.num_classes, self.context, self.subsample,
                               self.class_names, self.dtype, [p.copy() for p in self.params])

    def __repr__(self) -> str:
        return (f"FrameClassifier(in={self.input_dim}, hidden={self.hidden}, out={self.num_classes}, "
                f"context={self.context}, subsample={self.subsample})")


def forward(model: FrameClassifier, features: np.ndarray) -> ScoreMatrix:
    """T x U log-posteriors (ceil(T / subsample) rows)"""
    _, log_post = model.forward_cache(features)
    return ScoreMatrix(log_post, ScoreKind.LOG_POSTERIOR)


class PriorVector:
    """Class priors in the linear domain"""

    def __init__(self, values):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 1 or (values <= 0).any():
            raise FormatError("priors must be a strictly positive vector")
        self.values = values / values.sum()

    def __len__(self) -> int:
        return len(self.values)

    @classmethod
    def uniform(cls, num_classes: int) -> "PriorVector":
        return cls(np.full(num_classes, 1.0 / num_classes))


def estimate_priors(alignments: Sequence[Sequence[int]], num_classes: int, floor: float = PRIOR_FLOOR) -> PriorVector:
    """Frame frequency of each class, floored and renormalized"""
    counts = np.zeros(num_classes)
    for ali in alignments:
        if len(ali):
            counts += np.bincount(np.asarray(ali, dtype=np.int64), minlength=num_classes)[:num_classes]
    total = counts.sum()
    if total == 0:
        raise EmptyAlignment("no aligned frames to estimate priors from")
    return PriorVector(np.maximum(counts / total, floor))


def pseudo_likelihood(scores: ScoreMatrix, priors: PriorVector) -> ScoreMatrix:
    """log y - log P(class)"""
    if scores.U != len(priors):
        raise DimensionMismatch(len(priors), scores.U)
    return ScoreMatrix(scores.values - np.log(priors.values)[None, :], ScoreKind.LOG_LIKELIHOOD)


def forced_align(model: FrameClassifier, features: np.ndarray, labels: LabelSequence, topology: Topology) -> List[int]:
    """Best framing of the labels under the current model, as a class per output frame"""
    log_post = forward(model, features)
    graph = compile_sequence_graph(labels, topology)
    try:
        classes, _ = viterbi(graph, log_post)
    except NoPath as e:
        raise Infeasible(str(e)) from e
    return classes


def decode_hypothesis(model: FrameClassifier, features: np.ndarray, denominator: Optional[Lattice],
                      kappa: float = 1.0) -> List[int]:
    """Free-running best class sequence (denominator graph search, or frame argmax without one)"""
    log_post = forward(model, features)
    if denominator is None:
        return np.argmax(log_post.values, axis=1).tolist()
    classes, _ = viterbi(denominator, kappa * log_post.values)
    return classes


class TrainingExample:
    """One utterance prepared for training"""

    def __init__(
        self,
        utt_id: str,
        features: np.ndarray,
        labels: LabelSequence,
        alignment: Optional[Sequence[int]] = None,
        hypothesis: Optional[Sequence[int]] = None,
    ):
        self.utt_id = utt_id
        self.features = features
        self.labels = labels
        self.alignment = list(alignment) if alignment is not None else None
        self.hypothesis = list(hypothesis) if hypothesis is not None else None


class TrainingObjective:
    """Criterion settings shared by every utterance of an epoch"""

    def __init__(
        self,
        criterion: CriterionConfig,
        topology: Topology,
        denominator: Optional[Lattice] = None,
        nu: Optional[NUConfig] = None,
        ce_only: bool = False,
    ):
        self.criterion = criterion
        self.topology = topology
        self.denominator = denominator
        self.nu = nu
        self.ce_only = ce_only

    @property
    def name(self) -> str:
        return CriterionKind.CE.value if self.ce_only else self.criterion.kind.value


def utterance_loss_grad(
    model: FrameClassifier,
    example: TrainingExample,
    objective: TrainingObjective,
    log_post: Optional[ScoreMatrix] = None,
) -> LossGrad:
    """Objective value and dLoss/d(log-posterior) for one utterance"""
    if log_post is None:
        log_post = forward(model, example.features)
    cfg = objective.criterion
    kind = CriterionKind.CE if objective.ce_only else cfg.kind

    if kind == CriterionKind.CTC:
        result = ctc_loss(log_post, example.labels, objective.topology)
    else:
        if example.alignment is None:
            raise EmptyAlignment(f"{example.utt_id}: no alignment")
        ce = ce_loss(log_post, example.alignment)
        if kind == CriterionKind.CE or cfg.cew == 1.0:
            result = ce
        else:
            if objective.denominator is None:
                raise GraphError("sequence criteria need a denominator graph")
            den = objective.denominator
            if kind == CriterionKind.LF_SMBR:
                seq = lf_smbr(log_post, den, example.alignment, cfg, objective.topology)
            else:
                num = build_numerator_graph(example.labels, example.alignment, cfg.tolerance, objective.topology)
                if kind == CriterionKind.LF_MMI:
                    seq = lf_mmi(log_post, num, den, cfg)
                else:
                    seq = lf_bmmi(log_post, num, den, example.alignment, cfg, objective.topology)
            result = interpolate_ce(ce, seq, cfg.cew)

    if objective.nu is not None and example.alignment is not None and example.hypothesis is not None:
        weights = nu_weight(example.alignment, example.hypothesis, objective.nu, objective.topology.class_units)
        result = apply_nu(result, weights)
    return result


def _example_gradient(args) -> Tuple[Optional[List[np.ndarray]], float, int, Optional[str]]:
    model, example, objective = args
    inputs, log_post = model.forward_cache(example.features)
    try:
        lg = utterance_loss_grad(model, example, objective, ScoreMatrix(log_post))
    except (Infeasible, NoPath, AlignmentMismatch) as e:
        return None, 0.0, 0, f"{example.utt_id}: {e}"
    return model.backward(inputs, log_post, lg.grad.values), lg.loss, lg.T, None


def train_epoch(
    model: FrameClassifier,
    examples: Sequence[TrainingExample],
    objective: TrainingObjective,
    learning_rate: float,
    batch_size: int = 8,
    threads: int = 1,
    epoch: int = 0,
) -> EpochStats:
    """
    One SGD pass in sorted utterance order

    Per-utterance gradients of a minibatch are computed in parallel and summed
    in utterance order, so the result does not depend on the thread count.
    The update uses the batch gradient divided by its frame count.
    """
    ordered = sorted(examples, key=lambda e: e.utt_id)
    total_loss, total_frames, skipped = 0.0, 0, 0
    with ThreadPoolExecutor(max_workers=max(threads, 1)) as pool:
        for start in range(0, len(ordered), batch_size):
            batch = ordered[start:start + batch_size]
            results = list(pool.map(_example_gradient, [(model, ex, objective) for ex in batch]))
            summed: Optional[List[np.ndarray]] = None
            frames = 0
            for grads, loss, T, skip_reason in results:
                if grads is None:
                    skipped += 1
                    logger.warning(f"Skipping utterance {skip_reason}")
                    continue
                total_loss += loss
                frames += T
                summed = grads if summed is None else [a + b for a, b in zip(summed, grads)]
            if summed is not None and frames:
                model.apply_update([g / frames for g in summed], learning_rate)
                total_frames += frames
    mean = total_loss / total_frames if total_frames else float("nan")
    stats = EpochStats(
        epoch=epoch,
        criterion=objective.name,
        loss=mean,
        frames=total_frames,
        utterances=len(ordered) - skipped,
        skipped=skipped,
        learning_rate=learning_rate,
    )
    logger.info(f"Epoch {epoch} ({stats.criterion}): loss/frame {mean:.5f}, "
                f"{stats.utterances} utterances, {skipped} skipped, lr {learning_rate:g}")
    return stats


def flat_start(examples: Sequence[TrainingExample], model: FrameClassifier, topology: Topology) -> List[TrainingExample]:
    """Uniform segmentations at the model's output frame rate; utterances too short are dropped"""
    prepared = []
    for ex in examples:
        T = model.output_frames(len(ex.features))
        try:
            ali = flat_start_alignment(ex.labels, topology, T)
        except Infeasible as e:
            logger.warning(f"Flat start skips {ex.utt_id}: {e}")
            continue
        prepared.append(TrainingExample(ex.utt_id, ex.features, ex.labels, ali, ex.hypothesis))
    return prepared


def realign(examples: Sequence[TrainingExample], model: FrameClassifier, topology: Topology) -> List[TrainingExample]:
    """Viterbi re-alignment with the current model; keeps the old alignment when it fails"""
    out = []
    for ex in examples:
        try:
            ali = forced_align(model, ex.features, ex.labels, topology)
        except (Infeasible, NoPath) as e:
            logger.warning(f"Realignment keeps the previous alignment of {ex.utt_id}: {e}")
            ali = ex.alignment
        out.append(TrainingExample(ex.utt_id, ex.features, ex.labels, ali, ex.hypothesis))
    return out


def train_model(
    model: FrameClassifier,
    examples: Sequence[TrainingExample],
    topology: Topology,
    criterion: CriterionConfig,
    train: TrainConfig,
    denominator: Optional[Lattice] = None,
    nu: Optional[NUConfig] = None,
    threads: int = 1,
) -> Tuple[FrameClassifier, List[TrainingExample], List[EpochStats]]:
    """
    Full schedule: CE epochs on flat-start alignments, one Viterbi realignment,
    then the configured criterion. The learning rate halves whenever an epoch
    fails to improve on the best loss of the same criterion.
    """
    is_ctc = criterion.kind == CriterionKind.CTC
    data = list(examples) if is_ctc else flat_start(examples, model, topology)
    history: List[EpochStats] = []
    lr = train.learning_rate
    best: Dict[str, float] = {}
    ce_epochs = 0 if is_ctc else min(train.ce_epochs, train.epochs)

    for epoch in range(train.epochs):
        ce_phase = epoch < ce_epochs
        if epoch == ce_epochs and ce_epochs > 0:
            data = realign(data, model, topology)
            if nu is not None and train.use_nu:
                data = [
                    TrainingExample(ex.utt_id, ex.features, ex.labels, ex.alignment,
                                    decode_hypothesis(model, ex.features, denominator, criterion.kappa))
                    for ex in data
                ]
        if is_ctc and epoch == 0 and nu is not None and train.use_nu:
            data = [
                TrainingExample(ex.utt_id, ex.features, ex.labels,
                                _ctc_alignment(model, ex, topology),
                                decode_hypothesis(model, ex.features, None))
                for ex in data
            ]
        objective = TrainingObjective(
            criterion, topology, denominator,
            nu if (train.use_nu and not ce_phase) else None,
            ce_only=ce_phase,
        )
        stats = train_epoch(model, data, objective, lr, train.batch_size, threads, epoch)
        history.append(stats)
        previous = best.get(objective.name)
        if previous is not None and not stats.loss < previous and train.halve_on_plateau:
            lr *= 0.5
            logger.info(f"Loss plateaued at epoch {epoch}, learning rate halved to {lr:g}")
        if previous is None or stats.loss < previous:
            best[objective.name] = stats.loss
    return model, data, history


def _ctc_alignment(model: FrameClassifier, example: TrainingExample, topology: Topology) -> Optional[List[int]]:
    try:
        return forced_align(model, example.features, example.labels, topology)
    except (Infeasible, NoPath):
        return None


# Model file: magic, little-endian uint32 header length, JSON header, float32 parameter blob

def save_model(model: FrameClassifier, path: Union[str, Path], priors: Optional[PriorVector] = None) -> None:
    header = {
        "input_dim": model.input_dim,
        "hidden": model.hidden,
        "num_classes": model.num_classes,
        "context": model.context,
        "subsample": model.subsample,
        "class_names": model.class_names,
        "shapes": [list(p.shape) for p in model.params],
        "priors": priors.values.tolist() if priors is not None else None,
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = b"".join(p.astype("<f4").tobytes() for p in model.params)
    Path(path).write_bytes(MODEL_MAGIC + struct.pack("<I", len(head)) + head + blob)
    logger.info(f"Saved model ({model.num_parameters} parameters) to {path}")


def load_model(path: Union[str, Path]) -> Tuple[FrameClassifier, Optional[PriorVector]]:
    data = Path(path).read_bytes()
    if data[:4] != MODEL_MAGIC or len(data) < 8:
        raise FormatError(f"{path}: not a kwspot model file")
    (head_len,) = struct.unpack("<I", data[4:8])
    try:
        header = json.loads(data[8:8 + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: corrupt model header") from e
    offset = 8 + head_len
    params = []
    for shape in header["shapes"]:
        n = int(np.prod(shape))
        chunk = data[offset:offset + 4 * n]
        if len(chunk) != 4 * n:
            raise FormatError(f"{path}: truncated parameter blob")
        params.append(np.frombuffer(chunk, dtype="<f4").reshape(shape).astype(np.float32))
        offset += 4 * n
    model = FrameClassifier(
        header["input_dim"], header["hidden"], header["num_classes"], header["context"],
        header["subsample"], header["class_names"], np.float32, params,
    )
    priors = PriorVector(header["priors"]) if header.get("priors") is not None else None
    return model, priors
