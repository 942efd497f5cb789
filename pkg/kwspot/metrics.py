"""
Detection metrics: EER with its ROC sweep, false alarms per hour, real-time factor.
"""
import logging
import math
from typing import List, Sequence, Tuple

import numpy as np

from kwspot.errors import DataError, EmptyScores
from kwspot.models.reports import EerResult, RocPoint

logger = logging.getLogger(__name__)

NOMINAL_FRAME_SHIFT_MS = 10.0


def _crossing(points: Sequence[Tuple[float, float]]) -> float:
    """
    EER along a sequence of (far, frr) points ordered from permissive to strict

    The first point with far <= frr and its predecessor are interpolated linearly.
    """
    for i, (far, frr) in enumerate(points):
        if far <= frr:
            if i == 0:
                return far
            far0, frr0 = points[i - 1]
            d0, d1 = far0 - frr0, far - frr
            lam = d0 / (d0 - d1)
            return far0 + lam * (far - far0)
    return points[-1][0]


def compute_eer(positive: Sequence[float], negative: Sequence[float]) -> EerResult:
    """
    Sweep every distinct score (plus +inf) as a threshold; a trial is accepted
    when its score is at or above the threshold

    Raises:
        EmptyScores: either list is empty
    """
    if not len(positive) or not len(negative):
        raise EmptyScores("EER needs positive and negative scores")
    pos = np.sort(np.asarray(positive, dtype=np.float64))
    neg = np.sort(np.asarray(negative, dtype=np.float64))
    thresholds = np.append(np.unique(np.concatenate([pos, neg])), np.inf)
    # counts of scores strictly below each threshold
    far = 1.0 - np.searchsorted(neg, thresholds, side="left") / len(neg)
    frr = np.searchsorted(pos, thresholds, side="left") / len(pos)
    roc = [RocPoint(threshold=float(t), far=float(a), frr=float(r)) for t, a, r in zip(thresholds, far, frr)]
    eer = _crossing(list(zip(far.tolist(), frr.tolist())))
    return EerResult(eer=min(max(eer, 0.0), 1.0), roc=roc)


def eer_from_operating_points(points: Sequence[Tuple[float, float, float]]) -> EerResult:
    """
    EER from (setting, far, frr) operating points of a decoder sweep

    Points are ordered from the most permissive (highest far) to the strictest,
    with the trivial end points (1, 0) and (0, 1) added.
    """
    if not points:
        raise EmptyScores("no operating points")
    ordered = sorted(points, key=lambda p: (-p[1], p[2]))
    chain = [(1.0, 0.0)] + [(far, frr) for _, far, frr in ordered] + [(0.0, 1.0)]
    eer = _crossing(chain)
    roc = [RocPoint(threshold=float(s), far=float(a), frr=float(r)) for s, a, r in ordered]
    return EerResult(eer=min(max(eer, 0.0), 1.0), roc=roc)


def compute_faf(num_detections: int, hours: float) -> float:
    """False alarms per hour of keyword-free audio"""
    if hours <= 0:
        raise DataError("audio duration must be positive")
    return num_detections / hours


def frames_to_seconds(frames: int, frame_shift_ms: float = NOMINAL_FRAME_SHIFT_MS) -> float:
    return frames * frame_shift_ms / 1000.0


def measure_rtf(decode_seconds: float, audio_seconds: float) -> float:
    if audio_seconds <= 0:
        raise DataError("audio duration must be positive")
    return decode_seconds / audio_seconds


def split_trials(scores: Sequence[Tuple[bool, float]]) -> Tuple[List[float], List[float]]:
    """(is_positive, score) trials into positive and negative score lists; -inf becomes a very low finite score"""
    pos, neg = [], []
    for is_pos, score in scores:
        value = score if math.isfinite(score) else -1e30
        (pos if is_pos else neg).append(value)
    return pos, neg
