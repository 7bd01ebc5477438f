"""Frame- and sentence-level metrics, expert disagreement, entropy summaries.

The positive class for precision/recall/F1 is the manipulated label (0).
Sentence accuracy is the fraction of clips whose full predicted label
sequence matches the truth exactly.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .dsp import FeatureMatrix
from .experts import Ensemble
from .mining import DEFAULT_DECISION_THRESHOLD, MiningReport

POSITIVE_LABEL = 0  # manipulated


@dataclass(frozen=True)
class FrameConfusion:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class FrameMetrics:
    precision: float
    recall: float
    f1: float
    zero_division: bool
    confusion: FrameConfusion


def _as_labels(seq) -> np.ndarray:
    arr = np.asarray(getattr(seq, "labels", seq))
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("label sequence must be non-empty 1-D")
    if not np.all((arr == 0) | (arr == 1)):
        raise ValueError("labels must be 0 or 1")
    return arr.astype(np.int64)


def frame_confusion(pred, truth, positive_label: int = POSITIVE_LABEL) -> FrameConfusion:
    p = _as_labels(pred)
    t = _as_labels(truth)
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.size} predictions vs {t.size} truths")
    pos_p = p == positive_label
    pos_t = t == positive_label
    return FrameConfusion(
        tp=int(np.sum(pos_p & pos_t)),
        fp=int(np.sum(pos_p & ~pos_t)),
        fn=int(np.sum(~pos_p & pos_t)),
        tn=int(np.sum(~pos_p & ~pos_t)),
    )


def frame_metrics(pred, truth, positive_label: int = POSITIVE_LABEL) -> FrameMetrics:
    """Precision/recall/F1 with manipulated as the positive class.

    Degenerate denominators yield 0.0 and set the zero_division flag instead
    of raising.
    """
    confusion = frame_confusion(pred, truth, positive_label)
    zero = False
    if confusion.tp + confusion.fp > 0:
        precision = confusion.tp / (confusion.tp + confusion.fp)
    else:
        precision, zero = 0.0, True
    if confusion.tp + confusion.fn > 0:
        recall = confusion.tp / (confusion.tp + confusion.fn)
    else:
        recall, zero = 0.0, True
    if precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    else:
        f1, zero = 0.0, True
    return FrameMetrics(precision=precision, recall=recall, f1=f1,
                        zero_division=zero, confusion=confusion)


def sentence_accuracy(pred_map: Mapping[str, object], truth_map: Mapping[str, object]) -> float:
    """Fraction of clips with an exactly matching full label sequence."""
    if not truth_map:
        raise ValueError("empty corpus")
    if set(pred_map) != set(truth_map):
        missing = set(truth_map) ^ set(pred_map)
        raise ValueError(f"prediction/truth clip ids disagree (e.g. {sorted(missing)[:3]})")
    hits = 0
    for cid, truth in truth_map.items():
        t = _as_labels(truth)
        p = _as_labels(pred_map[cid])
        if p.shape == t.shape and bool(np.all(p == t)):
            hits += 1
    return hits / len(truth_map)


def dissimilarity_from_predictions(preds: np.ndarray) -> np.ndarray:
    """Pairwise disagreement rates between binary prediction rows."""
    preds = np.asarray(preds)
    if preds.ndim != 2 or preds.shape[0] < 1 or preds.shape[1] < 1:
        raise ValueError("preds must be (n_experts, n_frames) with both dims >= 1")
    n = preds.shape[0]
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            rate = float(np.mean(preds[i] != preds[j]))
            out[i, j] = out[j, i] = rate
    return out


def dissimilarity_matrix(ensemble: Ensemble, corpus: Sequence[FeatureMatrix],
                         decision_threshold: float = DEFAULT_DECISION_THRESHOLD) -> np.ndarray:
    """Expert-vs-expert disagreement over all frames of a corpus."""
    if not corpus:
        raise ValueError("corpus must be non-empty")
    rows = []
    for expert in ensemble.experts:
        votes = [(1.0 - expert.probabilities(fm)) >= decision_threshold for fm in corpus]
        rows.append(np.concatenate(votes))
    return dissimilarity_from_predictions(np.asarray(rows))


def mean_pairwise_dissimilarity(matrix: np.ndarray) -> float:
    """Mean of the strict upper triangle (0.0 for a single expert)."""
    matrix = np.asarray(matrix)
    n = matrix.shape[0]
    if matrix.shape != (n, n):
        raise ValueError("dissimilarity matrix must be square")
    if n < 2:
        return 0.0
    iu = np.triu_indices(n, k=1)
    return float(np.mean(matrix[iu]))


@dataclass(frozen=True)
class EntropySummary:
    mean: float
    hist_counts: np.ndarray  # 20 bins
    hist_edges: np.ndarray  # 21 edges over [0, max] (or [0, 1] if all zero)


def entropy_summary(reports: Sequence[MiningReport], bins: int = 20) -> EntropySummary:
    """Mean information score and a fixed-bin histogram over all reports."""
    if not reports:
        raise ValueError("need at least one mining report")
    values = []
    for report in reports:
        for cid in sorted(report.scores):
            values.append(report.scores[cid])
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("reports contain no scores")
    hi = float(arr.max())
    if hi <= 0.0:
        hi = 1.0
    counts, edges = np.histogram(arr, bins=bins, range=(0.0, hi))
    return EntropySummary(mean=float(arr.mean()), hist_counts=counts, hist_edges=edges)
