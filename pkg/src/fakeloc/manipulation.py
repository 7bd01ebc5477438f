"""Unsupervised segment swapping and frame-level labels.

A clip's energy-delta peaks (gated on zero-crossing rate) propose cut points.
Two cut-bounded segments are drawn, exchanged sample-for-sample (splice when
lengths differ), and the frames where exchanged content ends up are labeled 0
(manipulated); everything else stays 1 (genuine). That turns an unlabeled clip
into a pseudo-labeled training sample with a guaranteed mix of both labels.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dsp import (
    AudioClip,
    FeatureMatrix,
    FrameGrid,
    delta_energy,
    frame_energy,
    lfcc,
    make_frames,
    zero_crossing_rate,
)

DEFAULT_K_SIGMA = 1.0
DEFAULT_ZCR_FACTOR = 0.5
_MIN_CUT_POINTS = 4


@dataclass(frozen=True)
class FrameLabels:
    """Per-frame labels for one clip: 1 = genuine, 0 = manipulated."""

    clip_id: str
    labels: np.ndarray  # int8, 1-D

    def __post_init__(self):
        arr = np.asarray(self.labels)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError(f"clip {self.clip_id!r}: labels must be non-empty 1-D")
        if not np.all((arr == 0) | (arr == 1)):
            raise ValueError(f"clip {self.clip_id!r}: labels must be 0 or 1")
        object.__setattr__(self, "labels", arr.astype(np.int8))

    @property
    def n_frames(self) -> int:
        return self.labels.size

    @property
    def spans(self) -> list[tuple[int, int, int]]:
        """Run-length spans [(start, end, label)] partitioning [0, n_frames)."""
        out = []
        start = 0
        lab = int(self.labels[0])
        for i in range(1, self.labels.size):
            if int(self.labels[i]) != lab:
                out.append((start, i, lab))
                start, lab = i, int(self.labels[i])
        out.append((start, self.labels.size, lab))
        return out

    @classmethod
    def from_spans(cls, clip_id: str, n_frames: int, spans: Sequence[Sequence[int]]) -> "FrameLabels":
        labels = np.ones(n_frames, dtype=np.int8)
        for start, end, lab in spans:
            if not (0 <= start < end <= n_frames):
                raise ValueError(f"clip {clip_id!r}: span ({start},{end}) outside [0,{n_frames}]")
            labels[start:end] = lab
        return cls(clip_id=clip_id, labels=labels)


@dataclass(frozen=True)
class CutPointSet:
    """Candidate segment boundaries (frame indices, strictly increasing)."""

    clip_id: str
    points: tuple[int, ...]
    threshold: float

    def __post_init__(self):
        pts = tuple(int(p) for p in self.points)
        if any(p < 0 for p in pts):
            raise ValueError("cut points must be non-negative")
        if any(b <= a for a, b in zip(pts, pts[1:])):
            raise ValueError("cut points must be strictly increasing")
        object.__setattr__(self, "points", pts)


@dataclass(frozen=True)
class SwapSpec:
    """Two disjoint frame segments to exchange, each half-open [start, end)."""

    seg_a: tuple[int, int]
    seg_b: tuple[int, int]

    def __post_init__(self):
        (a0, a1), (b0, b1) = self.seg_a, self.seg_b
        if not (0 <= a0 < a1 and 0 <= b0 < b1):
            raise ValueError(f"segments must be non-empty with start < end: {self.seg_a}, {self.seg_b}")
        if a1 > b0:
            raise ValueError(f"segments must be ordered and disjoint: {self.seg_a}, {self.seg_b}")
        object.__setattr__(self, "seg_a", (int(a0), int(a1)))
        object.__setattr__(self, "seg_b", (int(b0), int(b1)))

    @property
    def len_a(self) -> int:
        return self.seg_a[1] - self.seg_a[0]

    @property
    def len_b(self) -> int:
        return self.seg_b[1] - self.seg_b[0]

    def post_swap_spans(self) -> tuple[tuple[int, int], tuple[int, int]]:
        """Frame spans occupied by the exchanged content after the swap.

        With equal lengths these are the original segments; with a splice the
        b-content starts at a's old start and the a-content ends at b's old end.
        """
        (a0, _a1), (_b0, b1) = self.seg_a, self.seg_b
        return (a0, a0 + self.len_b), (b1 - self.len_a, b1)


@dataclass(frozen=True)
class PseudoLabeledSample:
    """A swapped clip with generated labels, features, and swap provenance."""

    clip: AudioClip
    features: FeatureMatrix
    labels: FrameLabels
    swap: SwapSpec
    rng_seed: int
    threshold: float

    def __post_init__(self):
        if self.features.rows != self.labels.n_frames:
            raise ValueError("features and labels disagree on frame count")


def find_cut_points(
    energy_delta: np.ndarray,
    zcr: np.ndarray,
    k_sigma: float = DEFAULT_K_SIGMA,
    zcr_factor: float = DEFAULT_ZCR_FACTOR,
    clip_id: str = "",
) -> CutPointSet:
    """Select frame indices where energy jumps, gated on voice activity.

    Threshold is mean + k_sigma * std of the full delta sequence (population
    std). Candidate index i (i >= 1; index 0 is never a cut) must have
    energy_delta[i] above the threshold and zcr[i] above zcr_factor times the
    clip's median ZCR. If fewer than 4 survive, falls back to the 4
    largest-delta indices (ties to the lower index), which may sit at or below
    the threshold.
    """
    energy_delta = np.asarray(energy_delta, dtype=np.float64)
    zcr = np.asarray(zcr, dtype=np.float64)
    if energy_delta.ndim != 1 or zcr.ndim != 1 or energy_delta.size == 0:
        raise ValueError("energy_delta and zcr must be non-empty 1-D sequences")
    if zcr.size != energy_delta.size + 1:
        raise ValueError(
            f"expected one ZCR per frame and one delta per boundary: "
            f"len(zcr)={zcr.size}, len(energy_delta)={energy_delta.size}"
        )
    eligible = np.arange(1, energy_delta.size)
    if eligible.size < _MIN_CUT_POINTS:
        raise ValueError(f"clip {clip_id!r}: too short for cut-point selection")

    threshold = float(energy_delta.mean() + k_sigma * energy_delta.std())
    zcr_gate = zcr_factor * float(np.median(zcr))
    kept = [int(i) for i in eligible if energy_delta[i] > threshold and zcr[i] > zcr_gate]
    if len(kept) < _MIN_CUT_POINTS:
        # fallback: 4 largest deltas among eligible indices, ties to lower index
        order = sorted(eligible, key=lambda i: (-energy_delta[i], i))
        kept = sorted(int(i) for i in order[:_MIN_CUT_POINTS])
    return CutPointSet(clip_id=clip_id, points=tuple(kept), threshold=threshold)


def select_swap_segments(cuts: CutPointSet, rng_seed: int) -> SwapSpec:
    """Draw 4 distinct cut points (seeded) and pair them into two segments."""
    points = np.asarray(cuts.points, dtype=np.int64)
    if points.size < _MIN_CUT_POINTS:
        raise ValueError(f"clip {cuts.clip_id!r}: need at least 4 cut points, got {points.size}")
    rng = np.random.default_rng(rng_seed)
    picked = np.sort(rng.choice(points, size=4, replace=False))
    # points never include 0, so the mixed-label guarantee holds; re-draw kept defensively
    while picked[0] == 0:  # pragma: no cover
        picked = np.sort(rng.choice(points, size=4, replace=False))
    p1, p2, p3, p4 = (int(p) for p in picked)
    return SwapSpec(seg_a=(p1, p2), seg_b=(p3, p4))


def swap_segments(clip: AudioClip, swap: SwapSpec, grid: FrameGrid) -> AudioClip:
    """Exchange the two segments' samples; unequal lengths splice (order kept).

    The output is a permutation of the input samples, so length and amplitude
    bounds are preserved and no renormalization is ever needed.
    """
    fl = grid.frame_len
    (a0, a1), (b0, b1) = swap.seg_a, swap.seg_b
    if b1 > grid.n_frames:
        raise ValueError(f"clip {clip.id!r}: swap extends past frame {grid.n_frames}")
    x = clip.samples
    out = np.concatenate(
        [
            x[: a0 * fl],
            x[b0 * fl : b1 * fl],
            x[a1 * fl : b0 * fl],
            x[a0 * fl : a1 * fl],
            x[b1 * fl :],
        ]
    )
    return AudioClip(id=clip.id, samples=out, sample_rate=clip.sample_rate)


def generate_labels(swap: SwapSpec, grid: FrameGrid, clip_id: str = "") -> FrameLabels:
    """Label frames after a swap: exchanged content 0, everything else 1."""
    if swap.seg_b[1] > grid.n_frames:
        raise ValueError(f"clip {clip_id!r}: swap spec exceeds {grid.n_frames} frames")
    labels = np.ones(grid.n_frames, dtype=np.int8)
    for start, end in swap.post_swap_spans():
        labels[start:end] = 0
    return FrameLabels(clip_id=clip_id, labels=labels)


def pseudo_label_clip(
    clip: AudioClip,
    rng_seed: int,
    k_sigma: float = DEFAULT_K_SIGMA,
    zcr_factor: float = DEFAULT_ZCR_FACTOR,
    max_frames: int | None = None,
    n_filters: int | None = None,
    n_coeffs: int | None = None,
) -> PseudoLabeledSample:
    """Full unsupervised pipeline for one clip: cuts -> swap -> labels -> features."""
    from . import dsp  # default constants live there

    grid = make_frames(clip, max_frames or dsp.DEFAULT_MAX_FRAMES)
    delta = delta_energy(frame_energy(clip, grid))
    zcr = zero_crossing_rate(clip, grid)
    cuts = find_cut_points(delta, zcr, k_sigma=k_sigma, zcr_factor=zcr_factor, clip_id=clip.id)
    swap = select_swap_segments(cuts, rng_seed)
    swapped = swap_segments(clip, swap, grid)
    labels = generate_labels(swap, grid, clip_id=clip.id)
    features = lfcc(
        swapped,
        grid,
        n_filters=n_filters or dsp.DEFAULT_N_FILTERS,
        n_coeffs=n_coeffs or dsp.DEFAULT_N_COEFFS,
    )
    return PseudoLabeledSample(
        clip=swapped,
        features=features,
        labels=labels,
        swap=swap,
        rng_seed=rng_seed,
        threshold=cuts.threshold,
    )
