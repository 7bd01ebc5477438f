"""Mining informative target-domain clips from ensemble disagreement.

Each expert votes per frame (manipulated when its manipulated-probability,
1 - p, reaches the decision threshold). The vote fraction P = m/n feeds a
binary entropy in bits; a clip's information score is the sum over its frames.
High scores mean the experts disagree, which marks the clips worth
pseudo-labeling. Baseline strategies (random, lowest-entropy, cluster-based)
share the same report format.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .dsp import FeatureMatrix
from .experts import Ensemble, Expert

DEFAULT_DECISION_THRESHOLD = 0.5


@dataclass(frozen=True)
class VoteMatrix:
    """Per-frame manipulated-vote counts for one clip."""

    clip_id: str
    votes: np.ndarray  # int, 0..n_experts per frame
    n_experts: int

    def __post_init__(self):
        v = np.asarray(self.votes)
        if v.ndim != 1 or v.size == 0:
            raise ValueError(f"clip {self.clip_id!r}: votes must be non-empty 1-D")
        if self.n_experts < 1 or v.min() < 0 or v.max() > self.n_experts:
            raise ValueError(f"clip {self.clip_id!r}: votes outside [0, {self.n_experts}]")
        object.__setattr__(self, "votes", v.astype(np.int64))


def ensemble_vote(ensemble: Ensemble, features: FeatureMatrix,
                  decision_threshold: float = DEFAULT_DECISION_THRESHOLD) -> VoteMatrix:
    """Count experts calling each frame manipulated (1 - p >= threshold)."""
    votes = np.zeros(features.rows, dtype=np.int64)
    for expert in ensemble.experts:
        manip_p = 1.0 - expert.probabilities(features)
        votes += (manip_p >= decision_threshold).astype(np.int64)
    return VoteMatrix(clip_id=features.clip_id, votes=votes, n_experts=ensemble.n)


def frame_entropy(p: float) -> float:
    """Binary entropy in bits; 0 log 0 taken as 0. Errors outside [0, 1]."""
    if not (0.0 <= p <= 1.0):
        raise ValueError(f"vote probability must be in [0, 1], got {p}")
    if p == 0.0 or p == 1.0:
        return 0.0
    return -p * math.log2(p) - (1.0 - p) * math.log2(1.0 - p)


def sample_information(votes: VoteMatrix) -> float:
    """Information score: sum of per-frame binary entropies (bits)."""
    return float(sum(frame_entropy(m / votes.n_experts) for m in votes.votes))


@dataclass
class MiningReport:
    """Scores plus the strategy's selection over one candidate pool."""

    scores: dict[str, float]
    ranking: list[str]
    selected: list[str]
    z: int
    total_candidates: int
    method: str = "sde"
    seed: int | None = None

    def __post_init__(self):
        if self.z != len(self.selected):
            raise ValueError(f"z={self.z} but {len(self.selected)} clips selected")
        if len(set(self.selected)) != len(self.selected):
            raise ValueError("selection contains duplicates")


def _check_z(z: int, total: int) -> None:
    if not (0 <= z <= total):
        raise ValueError(f"z must be in [0, {total}], got {z}")


def rank_and_select(scores: Mapping[str, float], z: int, method: str = "sde",
                    seed: int | None = None) -> MiningReport:
    """Top-z by information score, ties broken by ascending clip id."""
    if not scores:
        raise ValueError("scores must be non-empty")
    _check_z(z, len(scores))
    ranking = sorted(scores, key=lambda c: (-scores[c], c))
    return MiningReport(
        scores=dict(scores),
        ranking=ranking,
        selected=ranking[:z],
        z=z,
        total_candidates=len(scores),
        method=method,
        seed=seed,
    )


def negative_mining_select(scores: Mapping[str, float], z: int) -> list[str]:
    """Lowest-entropy selection (the 'easiest' clips), ties by ascending id."""
    if not scores:
        raise ValueError("scores must be non-empty")
    _check_z(z, len(scores))
    ranking = sorted(scores, key=lambda c: (scores[c], c))
    return ranking[:z]


def random_select(candidates: Sequence[str], z: int, seed: int) -> list[str]:
    """Uniform selection without replacement; candidate order is irrelevant."""
    pool = sorted(candidates)
    if len(set(pool)) != len(pool):
        raise ValueError("candidate ids must be unique")
    _check_z(z, len(pool))
    rng = np.random.default_rng(seed)
    picked = rng.choice(len(pool), size=z, replace=False)
    return [pool[i] for i in picked]


def kmeans_cluster(embeddings: np.ndarray, k: int, seed: int,
                   max_iters: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Plain k-means: k distinct random data points as initial centers,
    iterate to stability or max_iters, empty clusters re-seeded to the point
    farthest from its assigned center. Deterministic per seed."""
    X = np.asarray(embeddings, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("embeddings must be a non-empty 2-D array")
    n = X.shape[0]
    if not (1 <= k <= n):
        raise ValueError(f"k must be in [1, {n}], got {k}")
    rng = np.random.default_rng(seed)
    centers = X[rng.choice(n, size=k, replace=False)].copy()
    assign = np.full(n, -1, dtype=np.int64)
    for _ in range(max_iters):
        d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = np.argmin(d2, axis=1)  # ties resolve to the lowest index
        d_own = d2[np.arange(n), new_assign]
        for c in range(k):
            if not np.any(new_assign == c):
                worst = int(np.argmax(d_own))
                centers[c] = X[worst]
                new_assign[worst] = c
                d_own[worst] = -1.0  # a reseeded point can fill only one cluster
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(k):
            members = X[assign == c]
            if members.shape[0]:
                centers[c] = members.mean(axis=0)
    return assign, centers


def multicluster_select(ids: Sequence[str], embeddings: np.ndarray,
                        assignment: np.ndarray, centers: np.ndarray,
                        z: int, mode: str, seed: int) -> list[str]:
    """Cluster-based baselines.

    nearest: round-robin over clusters by ascending center distance.
    sparse:  seeded uniform draw from clusters strictly below median size.
    dense:   same from clusters strictly above median size.
    When the eligible pool is smaller than z the remainder comes (seeded) from
    the other clusters, so z = total returns every candidate.
    """
    ids = list(ids)
    X = np.asarray(embeddings, dtype=np.float64)
    assignment = np.asarray(assignment)
    if not (len(ids) == X.shape[0] == assignment.shape[0]):
        raise ValueError("ids, embeddings, and assignment lengths disagree")
    _check_z(z, len(ids))
    k = centers.shape[0]
    rng = np.random.default_rng(seed)

    if mode == "nearest":
        per_cluster = []
        for c in range(k):
            members = [i for i in range(len(ids)) if assignment[i] == c]
            dist = {i: float(np.linalg.norm(X[i] - centers[c])) for i in members}
            per_cluster.append(sorted(members, key=lambda i: (dist[i], ids[i])))
        picked: list[int] = []
        depth = 0
        while len(picked) < z:
            took_any = False
            for c in range(k):
                if depth < len(per_cluster[c]):
                    picked.append(per_cluster[c][depth])
                    took_any = True
                    if len(picked) == z:
                        break
            if not took_any:
                break
            depth += 1
        return [ids[i] for i in picked]

    if mode not in ("sparse", "dense"):
        raise ValueError(f"unknown mode {mode!r}")
    sizes = np.array([int(np.sum(assignment == c)) for c in range(k)])
    median = float(np.median(sizes))
    if mode == "sparse":
        eligible = {c for c in range(k) if sizes[c] < median}
    else:
        eligible = {c for c in range(k) if sizes[c] > median}
    if not eligible:  # all clusters at the median: no density signal, use all
        eligible = set(range(k))
    pool = sorted(ids[i] for i in range(len(ids)) if assignment[i] in eligible)
    rest = sorted(ids[i] for i in range(len(ids)) if assignment[i] not in eligible)
    if z <= len(pool):
        picked_idx = rng.choice(len(pool), size=z, replace=False)
        return [pool[i] for i in picked_idx]
    extra = z - len(pool)
    picked_rest = rng.choice(len(rest), size=extra, replace=False)
    return pool + [rest[i] for i in picked_rest]


def clip_embedding(expert: Expert, features: FeatureMatrix) -> np.ndarray:
    """Per-clip embedding for clustering: mean latent of the given expert."""
    return expert.latents(features).mean(axis=0)


def clip_embedding_lfcc(features: FeatureMatrix) -> np.ndarray:
    """Raw fallback embedding: mean feature row."""
    return features.values.mean(axis=0)


# --- report files ---------------------------------------------------------


def write_mining_report(directory: str | Path, report: MiningReport,
                        n_experts: int, cfg_hash: str) -> tuple[Path, Path]:
    """Write report.json and report.csv; byte-identical for identical inputs."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    order = sorted(report.scores, key=lambda c: (-report.scores[c], c))
    obj = {
        "method": report.method,
        "z": report.z,
        "n_experts": n_experts,
        "scores": [{"id": c, "I": report.scores[c]} for c in order],
        "selected": list(report.selected),
        "seed": report.seed,
        "config_hash": cfg_hash,
    }
    json_path = directory / "report.json"
    json_path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n", encoding="utf-8")

    csv_path = directory / "report.csv"
    selected = set(report.selected)
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "I", "rank", "selected"])
        for rank, cid in enumerate(order, start=1):
            writer.writerow([cid, repr(report.scores[cid]), rank, int(cid in selected)])
    return json_path, csv_path


def read_mining_report(json_path: str | Path) -> tuple[MiningReport, dict]:
    obj = json.loads(Path(json_path).read_text(encoding="utf-8"))
    scores = {row["id"]: float(row["I"]) for row in obj["scores"]}
    ranking = sorted(scores, key=lambda c: (-scores[c], c))
    report = MiningReport(
        scores=scores,
        ranking=ranking,
        selected=list(obj["selected"]),
        z=int(obj["z"]),
        total_candidates=len(scores),
        method=obj["method"],
        seed=obj.get("seed"),
    )
    extras = {"n_experts": obj.get("n_experts"), "config_hash": obj.get("config_hash")}
    return report, extras
