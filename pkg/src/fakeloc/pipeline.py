"""End-to-end pipeline: synth -> train-experts -> mine -> pseudo-label ->
retrain-eval, plus a grid sweep.

Every stage derives a content hash from the configuration slice that affects
it (chained through its upstream stage), writes its artifacts under a
directory named by that hash, and drops a stamp file. Re-running with the
same config skips completed stages; interrupting mid-stage leaves no stamp,
so the stage re-runs cleanly. All randomness is derived from (seed, purpose,
clip id), so outputs are byte-identical across re-runs.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import dsp
from .config import config_hash, derive_seed
from .evaluate import frame_metrics, sentence_accuracy
from .experts import (
    Ensemble,
    Expert,
    ExpertConfig,
    Sample,
    TrainingData,
    load_ensemble,
    load_expert,
    save_expert,
    train_expert,
)
from . import experts as experts_mod
from .manifest import ManifestRecord, read_manifest, resolve_wav_path, write_manifest
from .manipulation import pseudo_label_clip
from .mining import (
    MiningReport,
    ensemble_vote,
    clip_embedding,
    clip_embedding_lfcc,
    kmeans_cluster,
    multicluster_select,
    negative_mining_select,
    random_select,
    rank_and_select,
    read_mining_report,
    sample_information,
    write_mining_report,
)
from .synth import (
    DomainConfig,
    domain_config_from_overrides,
    source_domain_config,
    synth_domain_corpus,
    target_domain_config,
)

log = logging.getLogger(__name__)

STRATEGIES = ("sde", "random", "negative", "multicluster", "undersample", "oversample")
OUTPUT_DIR_ENV = "FAKELOC_OUT"


@dataclass
class RunConfig:
    """Flat configuration for a full run; JSON config files mirror these keys."""

    output_dir: str = "runs/default"
    seed: int = 0
    # corpus synthesis (ignored when manifests are supplied)
    n_source: int = 500
    n_target: int = 500
    source_overrides: dict = field(default_factory=dict)
    target_overrides: dict = field(default_factory=dict)
    source_manifest: str | None = None
    target_manifest: str | None = None
    # features
    n_filters: int = 20
    n_coeffs: int = 20
    max_frames: int = 750
    add_deltas: bool = False
    cache_features: bool = False
    allow_mixed_rates: bool = False
    # experts
    n_experts: int = 10
    context: int = 2
    hidden_dims: tuple[int, ...] = (64,)
    latent_dim: int = 64
    u: float = 0.75
    y0: float = 1.0
    lr: float = 1e-4
    batch_size: int = 16
    epochs: int = 30
    per_frame_distillation: bool = False
    accuracy_floor: float = 0.9
    source_val_fraction: float = 0.1
    # share one weight initialization across the ensemble (plus a small
    # seeded jitter) so experts start aligned and the diversity hinge is
    # active from the first step; off = fresh initialization per expert
    shared_init: bool = False
    init_jitter: float = 0.1
    # init geometry: shrinking the latent layer's init (and growing the
    # output head to compensate) boosts the relative pull of the latent
    # dissimilarity term; 1.0 keeps the plain uniform fan-in/out init
    latent_init_scale: float = 1.0
    out_init_gain: float = 1.0
    # mining
    strategy: str = "sde"
    z: int | None = None
    z_fraction: float = 0.10
    decision_threshold: float = 0.5
    kmeans_k: int = 6
    embedding: str = "latent"
    target_candidate_fraction: float = 0.8
    # pseudo-labeling
    k_sigma: float = 1.0
    zcr_factor: float = 0.5
    # retraining
    retrain_epochs: int | None = None

    def __post_init__(self):
        self.hidden_dims = tuple(int(d) for d in self.hidden_dims)
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.embedding not in ("latent", "lfcc"):
            raise ValueError(f"embedding must be 'latent' or 'lfcc', got {self.embedding!r}")
        if not (0.0 < self.target_candidate_fraction < 1.0):
            raise ValueError("target_candidate_fraction must be in (0, 1)")
        if not (0.0 <= self.source_val_fraction < 1.0):
            raise ValueError("source_val_fraction must be in [0, 1)")
        if self.z is not None and self.z < 0:
            raise ValueError("z must be non-negative")
        if not (0.0 <= self.z_fraction <= 1.0):
            raise ValueError("z_fraction must be in [0, 1]")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        return d

    @classmethod
    def from_dict(cls, obj: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**obj)

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    # --- derived pieces ------------------------------------------------

    def expert_config(self, seed: int, epochs: int | None = None,
                      y0: float | None = None,
                      init_seed: int | None = None) -> ExpertConfig:
        if init_seed is None and self.shared_init:
            init_seed = derive_seed(self.seed, "init")
        return ExpertConfig(
            context=self.context,
            hidden_dims=self.hidden_dims,
            latent_dim=self.latent_dim,
            u=self.u,
            y0=self.y0 if y0 is None else y0,
            lr=self.lr,
            batch_size=self.batch_size,
            epochs=self.epochs if epochs is None else epochs,
            seed=seed,
            per_frame_distillation=self.per_frame_distillation,
            accuracy_floor=self.accuracy_floor,
            init_seed=init_seed,
            init_jitter=self.init_jitter,
            latent_init_scale=self.latent_init_scale,
            out_init_gain=self.out_init_gain,
        )

    def source_domain(self) -> DomainConfig:
        return domain_config_from_overrides(source_domain_config(), self.source_overrides)

    def target_domain(self) -> DomainConfig:
        return domain_config_from_overrides(target_domain_config(), self.target_overrides)

    def dsp_key(self) -> dict:
        return {
            "n_filters": self.n_filters,
            "n_coeffs": self.n_coeffs,
            "max_frames": self.max_frames,
            "add_deltas": self.add_deltas,
        }


class Workspace:
    """Output directory layout plus stage stamps."""

    def __init__(self, output_dir: str | Path):
        self.root = Path(output_dir)
        self.stamps = self.root / "stamps"

    def stage_dir(self, stage: str, h: str) -> Path:
        return self.root / stage / h

    def is_done(self, stage: str, h: str) -> bool:
        return (self.stamps / f"{stage}-{h}.json").exists()

    def mark_done(self, stage: str, h: str, artifacts: dict) -> None:
        self.stamps.mkdir(parents=True, exist_ok=True)
        payload = {"stage": stage, "config_hash": h, "artifacts": artifacts}
        (self.stamps / f"{stage}-{h}.json").write_text(
            json.dumps(payload, sort_keys=True, indent=1) + "\n", encoding="utf-8"
        )

    def lock_path(self) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        return self.root / ".lock"


def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()[:12]


def _hash_fraction(seed: int, salt: str, clip_id: str) -> float:
    return (derive_seed(seed, salt, clip_id) % 10**9) / 10**9


# --- stage hashes ----------------------------------------------------------


def synth_hash(cfg: RunConfig) -> str:
    return config_hash(
        {
            "n_source": cfg.n_source,
            "n_target": cfg.n_target,
            "source_overrides": cfg.source_overrides,
            "target_overrides": cfg.target_overrides,
            "seed": cfg.seed,
        }
    )


def _source_ref(cfg: RunConfig, ws: Workspace) -> str:
    if cfg.source_manifest:
        return _file_digest(Path(cfg.source_manifest))
    return synth_hash(cfg)


def _target_ref(cfg: RunConfig, ws: Workspace) -> str:
    if cfg.target_manifest:
        return _file_digest(Path(cfg.target_manifest))
    return synth_hash(cfg)


def ensemble_hash(cfg: RunConfig, ws: Workspace) -> str:
    return config_hash(
        {
            "dsp": cfg.dsp_key(),
            "experts": {
                "context": cfg.context,
                "hidden_dims": list(cfg.hidden_dims),
                "latent_dim": cfg.latent_dim,
                "u": cfg.u,
                "y0": cfg.y0,
                "lr": cfg.lr,
                "batch_size": cfg.batch_size,
                "epochs": cfg.epochs,
                "per_frame_distillation": cfg.per_frame_distillation,
                "accuracy_floor": cfg.accuracy_floor,
                "shared_init": cfg.shared_init,
                "init_jitter": cfg.init_jitter,
                "latent_init_scale": cfg.latent_init_scale,
                "out_init_gain": cfg.out_init_gain,
            },
            "n_experts": cfg.n_experts,
            "source_val_fraction": cfg.source_val_fraction,
            "source": _source_ref(cfg, ws),
            "seed": cfg.seed,
        }
    )


def mine_hash(cfg: RunConfig, ws: Workspace) -> str:
    return config_hash(
        {
            "ensemble": ensemble_hash(cfg, ws),
            "target": _target_ref(cfg, ws),
            "strategy": cfg.strategy,
            "z": cfg.z,
            "z_fraction": cfg.z_fraction,
            "decision_threshold": cfg.decision_threshold,
            "kmeans_k": cfg.kmeans_k,
            "embedding": cfg.embedding,
            "target_candidate_fraction": cfg.target_candidate_fraction,
            "seed": cfg.seed,
        }
    )


def pseudo_hash(cfg: RunConfig, ws: Workspace) -> str:
    return config_hash(
        {"mine": mine_hash(cfg, ws), "k_sigma": cfg.k_sigma, "zcr_factor": cfg.zcr_factor}
    )


def eval_hash(cfg: RunConfig, ws: Workspace) -> str:
    return config_hash(
        {"pseudo": pseudo_hash(cfg, ws), "retrain_epochs": cfg.retrain_epochs, "seed": cfg.seed}
    )


# --- corpus loading --------------------------------------------------------


def _features_for_clip(cfg: RunConfig, clip: dsp.AudioClip) -> dsp.FeatureMatrix:
    grid = dsp.make_frames(clip, cfg.max_frames)
    fm = dsp.lfcc(clip, grid, n_filters=cfg.n_filters, n_coeffs=cfg.n_coeffs)
    if cfg.add_deltas:
        fm = dsp.append_deltas(fm)
    return fm


def corpus_samples(
    cfg: RunConfig, manifest_path: str | Path, ws: Workspace | None = None
) -> tuple[list[Sample], list[ManifestRecord]]:
    """Load a manifest into training-ready samples (features + labels)."""
    manifest_path = Path(manifest_path)
    records = read_manifest(manifest_path)
    if not records:
        raise ValueError(f"{manifest_path}: empty manifest")
    rates = {r.sample_rate for r in records}
    if len(rates) > 1 and not cfg.allow_mixed_rates:
        raise ValueError(f"{manifest_path}: mixed sample rates {sorted(rates)} "
                         "(set allow_mixed_rates to permit per-clip grids)")
    cache_dir = None
    if cfg.cache_features and ws is not None:
        cache_dir = ws.root / "features" / config_hash(cfg.dsp_key())
        cache_dir.mkdir(parents=True, exist_ok=True)
    dsp_h = config_hash(cfg.dsp_key())

    samples: list[Sample] = []
    for rec in records:
        fm = None
        cache_path = cache_dir / f"{rec.id}.flfc" if cache_dir else None
        if cache_path is not None and cache_path.exists():
            cached, rate, h = dsp.read_feature_cache(cache_path)
            if h == dsp_h and rate == rec.sample_rate:
                fm = cached
        if fm is None:
            clip = dsp.load_wav(resolve_wav_path(manifest_path, rec))
            fm = _features_for_clip(cfg, clip)
            if cache_path is not None:
                dsp.write_feature_cache(cache_path, fm, rec.sample_rate, dsp_h)
        labels = rec.frame_labels().labels
        if labels.size < fm.rows:
            raise ValueError(f"{rec.id}: manifest covers {labels.size} frames, features {fm.rows}")
        samples.append(Sample(clip_id=rec.id, features=fm, labels=labels[: fm.rows]))
    return samples, records


def _split_source(cfg: RunConfig, samples: list[Sample]) -> TrainingData:
    train, val = [], []
    for s in samples:
        if _hash_fraction(cfg.seed, "source-val", s.clip_id) < cfg.source_val_fraction:
            val.append(s)
        else:
            train.append(s)
    return TrainingData(train=train, val=val)


def split_target_ids(cfg: RunConfig, ids: Sequence[str]) -> tuple[list[str], list[str]]:
    """Seeded-hash split of target clips into mining candidates and held-out test."""
    candidates, test = [], []
    for cid in ids:
        if _hash_fraction(cfg.seed, "target-split", cid) < cfg.target_candidate_fraction:
            candidates.append(cid)
        else:
            test.append(cid)
    return candidates, test


# --- stages -----------------------------------------------------------------


def run_synth(cfg: RunConfig) -> tuple[Path, Path]:
    """Generate both domain corpora (idempotent); returns the two manifests."""
    ws = Workspace(cfg.output_dir)
    if cfg.source_manifest and cfg.target_manifest:
        return Path(cfg.source_manifest), Path(cfg.target_manifest)
    h = synth_hash(cfg)
    out = ws.stage_dir("corpus", h)
    src_manifest = out / "source.jsonl"
    tgt_manifest = out / "target.jsonl"
    if ws.is_done("synth", h):
        log.info("synth: stamp %s found, skipping", h)
        return src_manifest, tgt_manifest
    log.info("synth: generating %d source + %d target clips (hash %s)",
             cfg.n_source, cfg.n_target, h)
    for name, domain, n_clips, manifest_path in (
        ("source", cfg.source_domain(), cfg.n_source, src_manifest),
        ("target", cfg.target_domain(), cfg.n_target, tgt_manifest),
    ):
        wav_dir = out / "wav" / name
        wav_dir.mkdir(parents=True, exist_ok=True)
        corpus = synth_domain_corpus(domain, n_clips, derive_seed(cfg.seed, "synth", name))
        records = []
        for clip, labels in corpus:
            wav_path = wav_dir / f"{clip.id}.wav"
            dsp.write_wav(wav_path, clip)
            records.append(
                ManifestRecord.from_frame_labels(
                    labels,
                    wav_path=str(wav_path.relative_to(out)),
                    sample_rate=clip.sample_rate,
                    domain=domain.name,
                )
            )
        write_manifest(manifest_path, records)
    ws.mark_done("synth", h, {"source": str(src_manifest), "target": str(tgt_manifest)})
    return src_manifest, tgt_manifest


def run_train_experts(cfg: RunConfig) -> Path:
    """Train the diverse ensemble on the source corpus; resumable per expert."""
    ws = Workspace(cfg.output_dir)
    src_manifest, _ = run_synth(cfg)
    h = ensemble_hash(cfg, ws)
    out = ws.stage_dir("ensemble", h)
    if ws.is_done("train-experts", h):
        log.info("train-experts: stamp %s found, skipping", h)
        return out
    out.mkdir(parents=True, exist_ok=True)
    samples, _ = corpus_samples(cfg, src_manifest, ws)
    data = _split_source(cfg, samples)
    log.info("train-experts: %d train / %d val clips, n=%d (hash %s)",
             len(data.train), len(data.val), cfg.n_experts, h)

    experts: list[Expert] = []
    for w in range(cfg.n_experts):
        ckpt = out / f"expert_{w:03d}.bin"
        cfg_w = cfg.expert_config(seed=derive_seed(cfg.seed, "expert", w))
        if ckpt.exists():
            expert = load_expert(ckpt, cfg_w)
            log.info("train-experts: expert %d loaded from checkpoint", w)
        else:
            expert = train_expert(data, experts, cfg_w)
            expert.index = w
            save_expert(ckpt, expert)
            _write_train_log(out / f"train_log_{w:03d}.csv", expert.history)
            log.info("train-experts: expert %d trained (%d epochs)", w, len(expert.history))
        experts.append(expert)
    experts_mod.save_ensemble(out, Ensemble(experts=experts))
    ws.mark_done("train-experts", h, {"ensemble_dir": str(out)})
    return out


def _write_train_log(path: Path, history: list[dict]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "bce", "dis_loss", "total", "val_accuracy"])
        for row in history:
            writer.writerow(
                [row["epoch"], repr(row["bce"]), repr(row["dis_loss"]),
                 repr(row["total"]), repr(row["val_accuracy"])]
            )


def resolve_z(cfg: RunConfig, n_candidates: int) -> int:
    z = cfg.z if cfg.z is not None else int(round(cfg.z_fraction * n_candidates))
    if z > n_candidates:
        raise ValueError(f"z={z} exceeds candidate pool size {n_candidates}")
    return z


def run_mine(cfg: RunConfig) -> Path:
    """Score all target candidates with the ensemble and apply the strategy."""
    ws = Workspace(cfg.output_dir)
    _, tgt_manifest = run_synth(cfg)
    ensemble_dir = run_train_experts(cfg)
    h = mine_hash(cfg, ws)
    out = ws.stage_dir("mining", h)
    if ws.is_done("mine", h):
        log.info("mine: stamp %s found, skipping", h)
        return out
    ensemble = load_ensemble(ensemble_dir)
    samples, _ = corpus_samples(cfg, tgt_manifest, ws)
    by_id = {s.clip_id: s for s in samples}
    candidate_ids, _test_ids = split_target_ids(cfg, sorted(by_id))
    if not candidate_ids:
        raise ValueError("target split produced no mining candidates")
    z = resolve_z(cfg, len(candidate_ids))
    log.info("mine: strategy=%s z=%d over %d candidates (hash %s)",
             cfg.strategy, z, len(candidate_ids), h)

    scores: dict[str, float] = {}
    for cid in candidate_ids:
        votes = ensemble_vote(ensemble, by_id[cid].features, cfg.decision_threshold)
        scores[cid] = sample_information(votes)

    if cfg.strategy == "sde":
        report = rank_and_select(scores, z, method="sde", seed=cfg.seed)
    else:
        if cfg.strategy == "negative":
            selected = negative_mining_select(scores, z)
        elif cfg.strategy == "random":
            selected = random_select(candidate_ids, z, derive_seed(cfg.seed, "random-select"))
        else:
            mode = {"multicluster": "nearest", "undersample": "sparse", "oversample": "dense"}[
                cfg.strategy
            ]
            if cfg.embedding == "latent":
                emb = np.vstack(
                    [clip_embedding(ensemble.experts[0], by_id[c].features) for c in candidate_ids]
                )
            else:
                emb = np.vstack([clip_embedding_lfcc(by_id[c].features) for c in candidate_ids])
            assign, centers = kmeans_cluster(emb, cfg.kmeans_k, derive_seed(cfg.seed, "kmeans"))
            selected = multicluster_select(
                candidate_ids, emb, assign, centers, z, mode, derive_seed(cfg.seed, "cluster-select")
            )
        ranking = sorted(scores, key=lambda c: (-scores[c], c))
        report = MiningReport(
            scores=scores, ranking=ranking, selected=selected, z=z,
            total_candidates=len(candidate_ids), method=cfg.strategy, seed=cfg.seed,
        )
    write_mining_report(out, report, n_experts=ensemble.n, cfg_hash=h)
    ws.mark_done("mine", h, {"mining_dir": str(out)})
    return out


def run_pseudo_label(cfg: RunConfig) -> Path:
    """Swap-and-label the selected clips; emit source + pseudo manifest."""
    ws = Workspace(cfg.output_dir)
    src_manifest, tgt_manifest = run_synth(cfg)
    mining_dir = run_mine(cfg)
    h = pseudo_hash(cfg, ws)
    out = ws.stage_dir("pseudo", h)
    augmented = out / "augmented.jsonl"
    if ws.is_done("pseudo-label", h):
        log.info("pseudo-label: stamp %s found, skipping", h)
        return augmented
    report, _ = read_mining_report(mining_dir / "report.json")
    tgt_records = {r.id: r for r in read_manifest(tgt_manifest)}
    wav_dir = out / "wav"
    wav_dir.mkdir(parents=True, exist_ok=True)
    log.info("pseudo-label: swapping %d selected clips (hash %s)", len(report.selected), h)

    pseudo_records: list[ManifestRecord] = []
    for cid in report.selected:
        rec = tgt_records[cid]
        clip = dsp.load_wav(resolve_wav_path(tgt_manifest, rec))
        try:
            sample = pseudo_label_clip(
                clip,
                rng_seed=derive_seed(cfg.seed, "swap", cid),
                k_sigma=cfg.k_sigma,
                zcr_factor=cfg.zcr_factor,
                max_frames=cfg.max_frames,
                n_filters=cfg.n_filters,
                n_coeffs=cfg.n_coeffs,
            )
        except ValueError as exc:
            log.warning("pseudo-label: skipping %s (%s)", cid, exc)
            continue
        wav_path = wav_dir / f"{cid}.wav"
        dsp.write_wav(wav_path, sample.clip)
        pseudo_records.append(
            ManifestRecord.from_frame_labels(
                sample.labels,
                wav_path=str(wav_path.relative_to(out)),
                sample_rate=sample.clip.sample_rate,
                domain=rec.domain,
                provenance="pseudo",
                swap={
                    "seg_a": list(sample.swap.seg_a),
                    "seg_b": list(sample.swap.seg_b),
                    "seed": sample.rng_seed,
                    "threshold": sample.threshold,
                },
            )
        )

    src_records = read_manifest(src_manifest)
    rebased = []
    for rec in src_records:
        abs_path = resolve_wav_path(src_manifest, rec)
        rebased.append(dataclasses.replace(rec, wav_path=os.path.relpath(abs_path, out)))
    write_manifest(augmented, rebased + pseudo_records)
    ws.mark_done("pseudo-label", h, {"augmented_manifest": str(augmented)})
    return augmented


def run_retrain_eval(cfg: RunConfig) -> dict:
    """Retrain one detector on source + pseudo data and score the target test split."""
    ws = Workspace(cfg.output_dir)
    _, tgt_manifest = run_synth(cfg)
    augmented = run_pseudo_label(cfg)
    mining_dir = run_mine(cfg)
    h = eval_hash(cfg, ws)
    out = ws.stage_dir("eval", h)
    metrics_json = out / "metrics.json"
    if ws.is_done("retrain-eval", h):
        log.info("retrain-eval: stamp %s found, skipping", h)
        return json.loads(metrics_json.read_text(encoding="utf-8"))
    out.mkdir(parents=True, exist_ok=True)

    samples, records = corpus_samples(cfg, augmented, ws)
    provenance = {r.id: r.provenance for r in records}
    pseudo_ids = {r.id for r in records if r.provenance == "pseudo"}
    train, val = [], []
    for s in samples:
        if (
            provenance[s.clip_id] == "ground_truth"
            and _hash_fraction(cfg.seed, "source-val", s.clip_id) < cfg.source_val_fraction
        ):
            val.append(s)
        else:
            train.append(s)

    detector_cfg = dataclasses.replace(
        cfg.expert_config(seed=derive_seed(cfg.seed, "retrain"), epochs=cfg.retrain_epochs),
        init_seed=None,  # a single detector never shares ensemble initialization
    )
    log.info("retrain-eval: training detector on %d clips (%d pseudo), hash %s",
             len(train), len(pseudo_ids), h)
    detector = train_expert(TrainingData(train=train, val=val), [], detector_cfg)
    _write_train_log(out / "train_log_detector.csv", detector.history)

    tgt_samples, tgt_records = corpus_samples(cfg, tgt_manifest, ws)
    by_id = {s.clip_id: s for s in tgt_samples}
    rec_by_id = {r.id: r for r in tgt_records}
    _candidates, test_ids = split_target_ids(cfg, sorted(by_id))
    if not test_ids:
        raise ValueError("target split produced no held-out test clips")
    leaked = pseudo_ids & set(test_ids)
    if leaked:
        raise RuntimeError(f"provenance violation: pseudo clips in test split: {sorted(leaked)[:3]}")
    for tid in test_ids:
        if rec_by_id[tid].provenance != "ground_truth":
            raise RuntimeError(f"test clip {tid} lacks ground-truth provenance")

    pred_map, truth_map = {}, {}
    for tid in test_ids:
        p = detector.probabilities(by_id[tid].features)
        pred_map[tid] = np.where(p > 0.5, 1, 0)  # tie counts as manipulated
        truth_map[tid] = by_id[tid].labels
    pooled_pred = np.concatenate([pred_map[t] for t in test_ids])
    pooled_truth = np.concatenate([truth_map[t] for t in test_ids])
    fm = frame_metrics(pooled_pred, pooled_truth)
    sent_acc = sentence_accuracy(pred_map, truth_map)

    report, _ = read_mining_report(mining_dir / "report.json")
    if report.selected:
        mean_entropy = float(np.mean([report.scores[c] for c in report.selected]))
    else:
        mean_entropy = 0.0

    metrics = {
        "precision": fm.precision,
        "recall": fm.recall,
        "f1": fm.f1,
        "sentence_acc": sent_acc,
        "mean_entropy": mean_entropy,
        "strategy": cfg.strategy,
        "z": report.z,
        "seed": cfg.seed,
        "n_experts": cfg.n_experts,
        "u": cfg.u,
        "config_hash": h,
        "zero_division": fm.zero_division,
        "counts": {"tp": fm.confusion.tp, "fp": fm.confusion.fp,
                   "fn": fm.confusion.fn, "tn": fm.confusion.tn},
        "n_test_clips": len(test_ids),
        "n_selected": len(report.selected),
    }
    metrics_json.write_text(json.dumps(metrics, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    with (out / "metrics.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["precision", "recall", "f1", "sentence_acc", "mean_entropy"])
        writer.writerow([repr(fm.precision), repr(fm.recall), repr(fm.f1),
                         repr(sent_acc), repr(mean_entropy)])
    ws.mark_done("retrain-eval", h, {"metrics": str(metrics_json)})
    return metrics


def run_sweep(cfg: RunConfig, param: str = "u",
              values: Sequence[float] = (0.25, 0.5, 0.75), repeats: int = 3) -> Path:
    """Grid over u or z with per-cell repeats under distinct derived seeds.

    Emits sweep_runs.csv (one row per run) and sweep_summary.csv (one row per
    grid value with mean and best F1 over its repeats), both sorted by value.
    """
    if param not in ("u", "z"):
        raise ValueError("sweep param must be 'u' or 'z'")
    if not values or repeats < 1:
        raise ValueError("need at least one value and one repeat")
    ws = Workspace(cfg.output_dir)
    src_manifest, tgt_manifest = run_synth(cfg)
    h = config_hash(
        {
            "base": ensemble_hash(cfg, ws),
            "mine": {"strategy": cfg.strategy, "z": cfg.z, "z_fraction": cfg.z_fraction},
            "param": param,
            "values": [repr(v) for v in values],
            "repeats": repeats,
        }
    )
    out = ws.stage_dir("sweep", h)
    runs_csv = out / "sweep_runs.csv"
    summary_csv = out / "sweep_summary.csv"
    if ws.is_done("sweep", h):
        log.info("sweep: stamp %s found, skipping", h)
        return summary_csv
    out.mkdir(parents=True, exist_ok=True)

    rows = []
    for value in sorted(values):
        for rep in range(repeats):
            # seed depends on the repeat only, so arms of one repeat are
            # paired: they share corpus and training seed and differ only in
            # the swept value
            sub_seed = derive_seed(cfg.seed, "sweep", param, rep)
            sub = dataclasses.replace(
                cfg,
                output_dir=str(out / f"{param}_{value}" / f"rep_{rep}"),
                seed=sub_seed,
                source_manifest=str(src_manifest),
                target_manifest=str(tgt_manifest),
                **({"u": float(value)} if param == "u" else {"z": int(value), "z_fraction": 0.0}),
            )
            metrics = run_retrain_eval(sub)
            rows.append(
                {
                    "value": value,
                    "repeat": rep,
                    "seed": sub_seed,
                    "precision": metrics["precision"],
                    "recall": metrics["recall"],
                    "f1": metrics["f1"],
                    "sentence_acc": metrics["sentence_acc"],
                    "mean_entropy": metrics["mean_entropy"],
                }
            )
            log.info("sweep: %s=%s rep %d -> f1 %.4f", param, value, rep, metrics["f1"])

    with runs_csv.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    with summary_csv.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["value", "repeats", "avg_f1", "best_f1", "avg_entropy"])
        for value in sorted(set(r["value"] for r in rows)):
            cell = [r for r in rows if r["value"] == value]
            f1s = [r["f1"] for r in cell]
            ents = [r["mean_entropy"] for r in cell]
            writer.writerow(
                [value, len(cell), repr(float(np.mean(f1s))), repr(float(np.max(f1s))),
                 repr(float(np.mean(ents)))]
            )
    ws.mark_done("sweep", h, {"runs": str(runs_csv), "summary": str(summary_csv)})
    return summary_csv
