"""Video-level anticipation metrics: AP, time-to-accident, and their curves.

A video is scored by the maximum predicted probability over its decision
window: frames 1..t_ao for positives, all frames for negatives.  Frames after
the accident never influence any metric.  A video "crosses" a threshold tau
when some window frame has p >= tau (ties count as crossings).

Average precision uses the descending distinct decision scores as thresholds
and sums precision * recall-increment with recall starting at 0.  Time to
accident (TTA) for a positive at threshold tau is (t_ao - t_first)/fps seconds
where t_first is the earliest crossing frame at or before t_ao; a positive
that never crosses yields no TTA at that threshold.  mTTA averages the mean
TTA over thresholds 0.01..0.99, skipping thresholds that detect no positive
(or counting them as zero under the ``zero`` policy).

Curve rows report precision with the convention that a threshold predicting
no positives has precision 1.0 (no false alarms were raised).
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, MetricUndefinedError

DEFAULT_THRESHOLDS = tuple(i / 100.0 for i in range(1, 100))
GRANULARITIES = ("video", "frame")
ZERO_DETECTION_POLICIES = ("skip", "zero", "zero_undetected")


@dataclass(frozen=True)
class VideoPrediction:
    """Per-frame probabilities plus the ground-truth label of one video."""

    video_id: str
    probs: np.ndarray
    label: int
    t_ao: int | None = None
    fps: int = 20

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "probs", probs)
        if probs.ndim != 1 or probs.size == 0:
            raise ContractError(
                f"{self.video_id}: probs must be a non-empty frame vector, got shape {probs.shape}"
            )
        if not np.all(np.isfinite(probs)) or probs.min() < 0.0 or probs.max() > 1.0:
            raise ContractError(f"{self.video_id}: probs must be finite and within [0, 1]")
        if self.label not in (0, 1):
            raise ContractError(f"{self.video_id}: label must be 0 or 1, got {self.label!r}")
        if self.label == 1:
            if self.t_ao is None or not (1 <= self.t_ao <= probs.size):
                raise ContractError(
                    f"{self.video_id}: positive video needs accident frame in 1..{probs.size},"
                    f" got {self.t_ao}"
                )
        elif self.t_ao is not None:
            raise ContractError(f"{self.video_id}: negative video must not carry an accident frame")
        if self.fps < 1:
            raise ContractError(f"{self.video_id}: fps must be >= 1, got {self.fps}")

    @property
    def window(self) -> np.ndarray:
        """Decision-window probabilities (positives truncate at t_ao)."""
        if self.label == 1:
            return self.probs[: self.t_ao]
        return self.probs

    @property
    def score(self) -> float:
        """Video-level score: max probability over the decision window."""
        return float(self.window.max())


def _stable_mean(values) -> float:
    """Order-independent mean (exact accumulation via fsum)."""
    return math.fsum(values) / len(values)


def _check_nonempty(videos) -> list[VideoPrediction]:
    videos = list(videos)
    if not videos:
        raise MetricUndefinedError("no videos to evaluate")
    return videos


def _instances(videos, granularity: str) -> tuple[np.ndarray, np.ndarray]:
    """(scores, labels) arrays at the requested granularity."""
    if granularity not in GRANULARITIES:
        raise ContractError(f"granularity must be one of {GRANULARITIES}, got {granularity!r}")
    if granularity == "video":
        scores = np.array([v.score for v in videos], dtype=np.float64)
        labels = np.array([v.label for v in videos], dtype=np.int64)
    else:
        scores = np.concatenate([v.window for v in videos])
        labels = np.concatenate(
            [np.full(v.window.size, v.label, dtype=np.int64) for v in videos]
        )
    return scores, labels


def average_precision(videos, granularity: str = "video") -> float:
    """Step-interpolated AP over descending distinct scores."""
    videos = _check_nonempty(videos)
    scores, labels = _instances(videos, granularity)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise MetricUndefinedError("average precision needs at least one positive instance")
    ap = 0.0
    recall_prev = 0.0
    for tau in sorted(set(scores.tolist()), reverse=True):
        predicted = scores >= tau
        tp = int(np.sum(predicted & (labels == 1)))
        fp = int(np.sum(predicted & (labels == 0)))
        precision = tp / (tp + fp)
        recall = tp / n_pos
        ap += (recall - recall_prev) * precision
        recall_prev = recall
    return ap


def tta(video: VideoPrediction, threshold: float) -> float | None:
    """Seconds of anticipation at the earliest crossing, or None if missed."""
    if video.label != 1:
        raise ContractError(f"{video.video_id}: TTA is defined for positive videos only")
    crossings = np.flatnonzero(video.window >= threshold)
    if crossings.size == 0:
        return None
    t_first = int(crossings[0]) + 1
    return (video.t_ao - t_first) / video.fps


def _threshold_stats(videos, threshold: float) -> tuple[int, int, int, list[float]]:
    """(tp, fp, n_pos, detected TTAs) at one threshold, video granularity."""
    tp = fp = n_pos = 0
    ttas: list[float] = []
    for v in videos:
        crossed = v.score >= threshold
        if v.label == 1:
            n_pos += 1
            if crossed:
                tp += 1
                ttas.append(tta(v, threshold))
        elif crossed:
            fp += 1
    return tp, fp, n_pos, ttas


def mtta(videos, thresholds=None, zero_detection_policy: str = "skip") -> float:
    """Mean over thresholds of the mean TTA across detected positives.

    Policies for thresholds where detection is partial or absent:

    * ``"skip"`` (default) — average the detected positives; drop thresholds
      with zero detections entirely.  Comparisons across models with very
      different detection coverage can mislead here: a model that stays
      silent at confident thresholds keeps only its flattering terms.
    * ``"zero"`` — like ``"skip"`` but a threshold with zero detections
      contributes 0.0 instead of vanishing.
    * ``"zero_undetected"`` — every positive counts at every threshold, with
      missed positives contributing 0.0, so each term equals recall times the
      mean detected TTA.  This is the coverage-honest variant: silence never
      raises the score.
    """
    if zero_detection_policy not in ZERO_DETECTION_POLICIES:
        raise ContractError(
            f"zero_detection_policy must be one of {ZERO_DETECTION_POLICIES},"
            f" got {zero_detection_policy!r}"
        )
    videos = _check_nonempty(videos)
    if not any(v.label == 1 for v in videos):
        raise MetricUndefinedError("mTTA needs at least one positive video")
    taus = DEFAULT_THRESHOLDS if thresholds is None else tuple(thresholds)
    if not taus:
        raise ContractError("thresholds must be non-empty")
    per_threshold: list[float] = []
    for tau in taus:
        _, _, n_pos, ttas = _threshold_stats(videos, tau)
        if zero_detection_policy == "zero_undetected":
            per_threshold.append(_stable_mean(ttas + [0.0] * (n_pos - len(ttas))))
        elif ttas:
            per_threshold.append(_stable_mean(ttas))
        elif zero_detection_policy == "zero":
            per_threshold.append(0.0)
    if not per_threshold:
        raise MetricUndefinedError("no threshold detected any positive video")
    return _stable_mean(per_threshold)


@dataclass(frozen=True)
class OperatingPoint:
    """Precision/recall/TTA attained at one decision threshold."""

    threshold: float
    precision: float
    recall: float
    mean_tta_seconds: float | None
    met_target: bool


def _point_at(videos, threshold: float) -> tuple[float, float, float | None]:
    tp, fp, n_pos, ttas = _threshold_stats(videos, threshold)
    precision = tp / (tp + fp) if tp + fp > 0 else 1.0
    recall = tp / n_pos
    mean_tta = _stable_mean(ttas) if ttas else None
    return precision, recall, mean_tta


def at_recall(videos, target_recall: float = 0.8, thresholds=None) -> OperatingPoint:
    """Largest threshold whose recall meets the target.

    Candidate thresholds default to the distinct video scores, where recall
    actually changes.  If no candidate reaches the target (possible only with
    a custom grid), the point with the highest recall is returned and
    ``met_target`` is False.
    """
    if not 0.0 < target_recall <= 1.0:
        raise ContractError(f"target_recall must lie in (0, 1], got {target_recall}")
    videos = _check_nonempty(videos)
    if not any(v.label == 1 for v in videos):
        raise MetricUndefinedError("recall is undefined without positive videos")
    if thresholds is None:
        taus = sorted({v.score for v in videos}, reverse=True)
    else:
        taus = sorted(set(thresholds), reverse=True)
        if not taus:
            raise ContractError("thresholds must be non-empty")
    best_fallback = None  # (recall, tau) with highest recall, then largest tau
    for tau in taus:
        precision, recall, mean_tta = _point_at(videos, tau)
        if recall >= target_recall:
            return OperatingPoint(float(tau), precision, recall, mean_tta, True)
        if best_fallback is None or recall > best_fallback[0]:
            best_fallback = (recall, tau)
    precision, recall, mean_tta = _point_at(videos, best_fallback[1])
    return OperatingPoint(float(best_fallback[1]), precision, recall, mean_tta, False)


@dataclass(frozen=True)
class CurvePoint:
    """One row of the threshold sweep."""

    threshold: float
    precision: float
    recall: float
    mean_tta_seconds: float | None


def mtta_ap_curve(videos, thresholds=None) -> list[CurvePoint]:
    """Precision / recall / mean-TTA at each threshold of the sweep grid."""
    videos = _check_nonempty(videos)
    if not any(v.label == 1 for v in videos):
        raise MetricUndefinedError("curve needs at least one positive video")
    taus = DEFAULT_THRESHOLDS if thresholds is None else tuple(thresholds)
    if not taus:
        raise ContractError("thresholds must be non-empty")
    rows = []
    for tau in taus:
        precision, recall, mean_tta = _point_at(videos, tau)
        rows.append(CurvePoint(float(tau), precision, recall, mean_tta))
    return rows


EVAL_REPORT_SCHEMA = {
    "type": "object",
    "required": [
        "num_videos",
        "num_positives",
        "granularity",
        "ap",
        "mtta_seconds",
        "target_recall",
        "operating_point",
        "curve",
    ],
    "additionalProperties": False,
    "properties": {
        "num_videos": {"type": "integer", "minimum": 1},
        "num_positives": {"type": "integer", "minimum": 0},
        "granularity": {"enum": list(GRANULARITIES)},
        "ap": {"type": "number", "minimum": 0.0, "maximum": 1.0},
        "mtta_seconds": {"type": ["number", "null"], "minimum": 0.0},
        "target_recall": {"type": "number", "exclusiveMinimum": 0.0, "maximum": 1.0},
        "operating_point": {
            "type": "object",
            "required": ["threshold", "precision", "recall", "mean_tta_seconds", "met_target"],
            "additionalProperties": False,
            "properties": {
                "threshold": {"type": "number"},
                "precision": {"type": "number", "minimum": 0.0, "maximum": 1.0},
                "recall": {"type": "number", "minimum": 0.0, "maximum": 1.0},
                "mean_tta_seconds": {"type": ["number", "null"], "minimum": 0.0},
                "met_target": {"type": "boolean"},
            },
        },
        "curve": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["threshold", "precision", "recall", "mean_tta_seconds"],
                "additionalProperties": False,
                "properties": {
                    "threshold": {"type": "number"},
                    "precision": {"type": "number", "minimum": 0.0, "maximum": 1.0},
                    "recall": {"type": "number", "minimum": 0.0, "maximum": 1.0},
                    "mean_tta_seconds": {"type": ["number", "null"], "minimum": 0.0},
                },
            },
        },
    },
}


@dataclass(frozen=True)
class EvalReport:
    """Bundle of AP, mTTA, the target-recall operating point, and the sweep."""

    num_videos: int
    num_positives: int
    granularity: str
    ap: float
    mtta_seconds: float | None
    target_recall: float
    operating_point: OperatingPoint
    curve: list[CurvePoint] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        op = self.operating_point
        return {
            "num_videos": self.num_videos,
            "num_positives": self.num_positives,
            "granularity": self.granularity,
            "ap": self.ap,
            "mtta_seconds": self.mtta_seconds,
            "target_recall": self.target_recall,
            "operating_point": {
                "threshold": op.threshold,
                "precision": op.precision,
                "recall": op.recall,
                "mean_tta_seconds": op.mean_tta_seconds,
                "met_target": op.met_target,
            },
            "curve": [
                {
                    "threshold": row.threshold,
                    "precision": row.precision,
                    "recall": row.recall,
                    "mean_tta_seconds": row.mean_tta_seconds,
                }
                for row in self.curve
            ],
        }

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_json_dict(), indent=indent, sort_keys=True)

    def write_curve_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["threshold", "precision", "recall", "mean_tta_seconds"])
            for row in self.curve:
                mean_tta = "nan" if row.mean_tta_seconds is None else f"{row.mean_tta_seconds:.6f}"
                writer.writerow([f"{row.threshold:.2f}", f"{row.precision:.6f}", f"{row.recall:.6f}", mean_tta])


def evaluate(
    videos,
    target_recall: float = 0.8,
    thresholds=None,
    zero_detection_policy: str = "skip",
    granularity: str = "video",
) -> EvalReport:
    """Full evaluation; mTTA falls back to None when no threshold detects."""
    videos = _check_nonempty(videos)
    ap = average_precision(videos, granularity=granularity)
    try:
        mtta_value = mtta(videos, thresholds=thresholds, zero_detection_policy=zero_detection_policy)
    except MetricUndefinedError:
        mtta_value = None
    point = at_recall(videos, target_recall=target_recall)
    curve = mtta_ap_curve(videos, thresholds=thresholds)
    return EvalReport(
        num_videos=len(videos),
        num_positives=sum(v.label == 1 for v in videos),
        granularity=granularity,
        ap=ap,
        mtta_seconds=mtta_value,
        target_recall=target_recall,
        operating_point=point,
        curve=curve,
    )
