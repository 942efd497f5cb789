import logging
import math
from typing import Dict, List, Optional

import numpy as np

from kwspot.acoustic import FrameClassifier, PriorVector, forward, pseudo_likelihood
from kwspot.errors import ConfigError, GraphError
from kwspot.lattice import Lattice, ScoreMatrix
from kwspot.models.configs import PostMode
from kwspot.models.reports import Detection
from kwspot.postproc import (
    ConfusionMatrix,
    ThresholdTable,
    build_ctc_peak_lattice,
    cascade_detections,
    compile_kwfiller_graph,
    kwfiller_detections,
    med_score,
    med_search,
    smoothing_detections,
    smoothing_scores,
)
from kwspot.system import KwsSystem

logger = logging.getLogger(__name__)


class DecoderService:
    """Runs a trained model and one of the post-processing modes over utterances"""

    def __init__(
        self,
        system: KwsSystem,
        model: FrameClassifier,
        priors: Optional[PriorVector] = None,
        thresholds: Optional[ThresholdTable] = None,
        confusions: Optional[ConfusionMatrix] = None,
        med_thresholds: Optional[ThresholdTable] = None,
    ):
        self.system = system
        self.config = system.config
        self.model = model
        self.priors = priors or PriorVector.uniform(system.topology.num_classes)
        self.thresholds = thresholds
        self.confusions = confusions
        self.med_thresholds = med_thresholds
        self._graphs: Dict[float, Lattice] = {}

    def available_modes(self) -> List[PostMode]:
        modes = [PostMode.SMOOTH, PostMode.KWFILLER, PostMode.CASCADE]
        if self.system.is_ctc:
            modes.append(PostMode.MED)
        return modes

    def log_posteriors(self, features: np.ndarray) -> ScoreMatrix:
        return forward(self.model, features)

    def graph(self, filler_weight: float) -> Lattice:
        if filler_weight not in self._graphs:
            self._graphs[filler_weight] = compile_kwfiller_graph(
                self.system.keyword_labels, self.system.topology, filler_weight)
        return self._graphs[filler_weight]

    def _blank_skip(self) -> Optional[float]:
        return self.config.decode.blank_skip if self.system.is_ctc else None

    def _require(self, value, what: str):
        if value is None:
            raise ConfigError(f"{what} missing; run training calibration first")
        return value

    def detect(
        self,
        utt_id: str,
        features: np.ndarray,
        mode: PostMode,
        filler_weight: Optional[float] = None,
        log_post: Optional[ScoreMatrix] = None,
    ) -> List[Detection]:
        """Detections of one utterance under a post-processing mode"""
        mode = PostMode(mode)
        log_post = log_post if log_post is not None else self.log_posteriors(features)
        keywords = self.system.keyword_labels
        topology = self.system.topology
        weight = self.config.decode.filler_weight if filler_weight is None else filler_weight

        if mode == PostMode.SMOOTH:
            return smoothing_detections(log_post, keywords, topology, self._require(self.thresholds, "thresholds"),
                                        self.config.smooth, utt_id)
        if mode == PostMode.KWFILLER:
            return kwfiller_detections(self.graph(weight), pseudo_likelihood(log_post, self.priors), utt_id,
                                       log_post, self.system.inventory.blank_id(), self._blank_skip())
        if mode == PostMode.CASCADE:
            return cascade_detections(log_post, pseudo_likelihood(log_post, self.priors), keywords, topology,
                                      self._require(self.thresholds, "thresholds"), self.config.smooth,
                                      self.graph(weight), self.config.decode.cascade_offset, utt_id,
                                      self._blank_skip())
        if mode == PostMode.MED:
            if not self.system.is_ctc:
                raise GraphError("med search needs a ctc model")
            columns = build_ctc_peak_lattice(log_post, self.system.inventory.blank_id(), self.config.med)
            return med_search(columns, keywords, self._require(self.confusions, "confusions"),
                              self._require(self.med_thresholds, "med thresholds"), utt_id,
                              self.config.med.posterior_scale)
        raise ConfigError(f"unknown post-processing mode: {mode}")

    def keyword_margins(self, log_post: ScoreMatrix, mode: PostMode) -> List[float]:
        """
        Per keyword, how far the best score lies above log T(k) (smoothing and MED);
        the EER sweep moves the shared offset over these margins
        """
        keywords = self.system.keyword_labels
        if mode == PostMode.SMOOTH:
            table = self._require(self.thresholds, "thresholds")
            scores = smoothing_scores(log_post, keywords, self.system.topology, self.config.smooth)
            return [table.margin(k, s) for k, (s, _) in enumerate(scores)]
        if mode == PostMode.MED:
            table = self._require(self.med_thresholds, "med thresholds")
            columns = build_ctc_peak_lattice(log_post, self.system.inventory.blank_id(), self.config.med)
            margins = []
            for k, kw in enumerate(keywords):
                score, first, _ = med_score(columns, kw.units, self.confusions, self.config.med.posterior_scale)
                margins.append(table.margin(k, score) if first >= 0 and math.isfinite(score) else -math.inf)
            return margins
        raise ConfigError(f"{mode.value} decisions come from a filler-weight sweep, not score margins")
