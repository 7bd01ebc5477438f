"""Frame classifiers and sequential diverse-expert training.

Each expert is a small tanh MLP over a (2*context+1)-frame feature window:
hidden layers, a latent layer h, then a sigmoid head p = P(genuine). By
default every expert draws a fresh initialization from its own seed; setting
init_seed makes all experts of an ensemble share one initialization (plus a
tiny seeded jitter) so that controlled "shuffle-only" ablations isolate the
effect of the diversity term. Experts
are trained one after another; from the second expert on, the loss adds a
hinge on the cosine similarity between the expert's per-clip mean latent and
each frozen predecessor's, pushing latents apart once cosine exceeds the
margin u. Loss per batch of N clips:

    L = (1/N) * sum_j [ sum_i BCE(p_ji, y_ji) + Dis_j ]
    Dis_j = (1/n_prev) * sum_w y0 * 0.5 * max(0, cos(h_j, h_j^w) - u)^2

All arithmetic is float64 and every random draw is seeded, so training is
bit-reproducible for a fixed seed.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import config_hash, derive_seed
from .dsp import FeatureMatrix

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-7
_ADAM_B1 = 0.9
_ADAM_B2 = 0.999
_ADAM_EPS = 1e-8


class TrainingDivergence(RuntimeError):
    """Raised when a training step produces a non-finite loss."""


@dataclass(frozen=True)
class ExpertConfig:
    context: int = 2
    hidden_dims: tuple[int, ...] = (64,)
    latent_dim: int = 64
    u: float = 0.75
    y0: float = 1.0
    lr: float = 1e-4
    batch_size: int = 16
    epochs: int = 30
    seed: int = 0
    per_frame_distillation: bool = False
    accuracy_floor: float = 0.9
    floor_patience_epochs: int | None = None
    # Experts of one ensemble share their weight initialization and differ
    # only through the shuffle order (seed) and the diversity hinge; None
    # falls back to seed. init_jitter adds a small per-expert seeded weight
    # perturbation (relative to each layer's glorot limit): enough asymmetry
    # for the cosine hinge to grab onto, small enough that plain training
    # collapses it back.
    init_seed: int | None = None
    init_jitter: float = 0.1
    # Multiplier on the output layer's init limit. A larger head init lets
    # logits reach confident magnitudes within few epochs at the default lr,
    # driving the fitted frames' BCE gradient toward zero so the diversity
    # hinge is not drowned out.
    out_init_gain: float = 1.0
    # Multiplier on the latent layer's init limit. The hinge gradient on a
    # latent scales as 1/|h|, so starting with small-norm latents (and a
    # large head so logits still reach useful magnitudes) makes the
    # diversity term competitive with the classification term.
    latent_init_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(d) for d in self.hidden_dims))
        if not (0.0 < self.u < 1.0):
            raise ValueError(f"u must be in (0, 1), got {self.u}")
        if self.y0 < 0:
            raise ValueError("y0 must be non-negative")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1 or self.epochs < 0 or self.context < 0:
            raise ValueError("batch_size >= 1, epochs >= 0, context >= 0 required")
        if self.latent_dim < 1 or any(d < 1 for d in self.hidden_dims):
            raise ValueError("layer widths must be positive")
        if self.init_jitter < 0:
            raise ValueError("init_jitter must be non-negative")
        if self.out_init_gain <= 0:
            raise ValueError("out_init_gain must be positive")
        if self.latent_init_scale <= 0:
            raise ValueError("latent_init_scale must be positive")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        return d


@dataclass
class Sample:
    """One clip ready for training: features plus per-frame labels."""

    clip_id: str
    features: FeatureMatrix
    labels: np.ndarray  # int, 1 = genuine, 0 = manipulated

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        if self.labels.shape != (self.features.rows,):
            raise ValueError(
                f"clip {self.clip_id!r}: {self.labels.shape[0] if self.labels.ndim else '?'} labels "
                f"for {self.features.rows} frames"
            )
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise ValueError(f"clip {self.clip_id!r}: labels must be 0/1")


@dataclass
class TrainingData:
    train: list[Sample]
    val: list[Sample] = field(default_factory=list)

    def __post_init__(self):
        if not self.train:
            raise ValueError("training set must be non-empty")
        cols = {s.features.cols for s in self.train + self.val}
        if len(cols) != 1:
            raise ValueError(f"inconsistent feature widths: {sorted(cols)}")

    @property
    def n_features(self) -> int:
        return self.train[0].features.cols


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Expert:
    """One frame classifier; parameters plus its input normalizer."""

    def __init__(self, config: ExpertConfig, n_features: int, index: int = 0,
                 rng: np.random.Generator | None = None):
        if n_features < 1:
            raise ValueError("n_features must be positive")
        self.config = config
        self.n_features = int(n_features)
        self.index = int(index)
        self.feat_mu = np.zeros(n_features)
        self.feat_sigma = np.ones(n_features)
        self.history: list[dict] = []

        dims = [(2 * config.context + 1) * n_features, *config.hidden_dims, config.latent_dim]
        init_seed = config.seed if config.init_seed is None else config.init_seed
        rng = rng or np.random.default_rng(init_seed)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        limits = []
        for layer, (fan_in, fan_out) in enumerate(zip(dims, dims[1:])):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            if layer == len(dims) - 2:
                limit *= config.latent_init_scale
            limits.append(limit)
            self.weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))
        out_limit = config.out_init_gain * np.sqrt(6.0 / (config.latent_dim + 1))
        self.out_w = rng.uniform(-out_limit, out_limit, size=config.latent_dim)
        self.out_b = np.zeros(1)
        if config.init_seed is not None and config.init_jitter > 0.0:
            # shared-init mode: break the inter-expert symmetry with a small
            # per-expert perturbation scaled by each layer's init limit
            jrng = np.random.default_rng(derive_seed(config.seed, "init-jitter"))
            for W, limit in zip(self.weights, limits):
                W += config.init_jitter * limit * jrng.standard_normal(W.shape)
            self.out_w += config.init_jitter * out_limit * jrng.standard_normal(
                config.latent_dim
            )

    # --- parameter plumbing ------------------------------------------

    def trainable_params(self) -> list[np.ndarray]:
        params: list[np.ndarray] = []
        for W, b in zip(self.weights, self.biases):
            params.extend((W, b))
        params.extend((self.out_w, self.out_b))
        return params

    def set_normalizer(self, mu: np.ndarray, sigma: np.ndarray) -> None:
        if mu.shape != (self.n_features,) or sigma.shape != (self.n_features,):
            raise ValueError("normalizer shape mismatch")
        self.feat_mu = mu.astype(np.float64)
        self.feat_sigma = np.maximum(sigma.astype(np.float64), 1e-8)

    # --- forward passes -----------------------------------------------

    def _windows(self, fm: FeatureMatrix) -> np.ndarray:
        if fm.cols != self.n_features:
            raise ValueError(f"expected {self.n_features} feature columns, got {fm.cols}")
        c = self.config.context
        z = (fm.values - self.feat_mu) / self.feat_sigma
        if c == 0:
            return z
        m = z.shape[0]
        pad = np.zeros((c, z.shape[1]))
        ext = np.vstack([pad, z, pad])
        return np.hstack([ext[o : o + m] for o in range(2 * c + 1)])

    def _forward_windows(self, X: np.ndarray):
        acts = [X]
        a = X
        for W, b in zip(self.weights, self.biases):
            a = np.tanh(a @ W + b)
            acts.append(a)
        logits = acts[-1] @ self.out_w + self.out_b[0]
        p_raw = _sigmoid(logits)
        p = np.clip(p_raw, PROB_CLAMP, 1.0 - PROB_CLAMP)
        return acts, logits, p_raw, p

    def latents_and_probs(self, fm: FeatureMatrix) -> tuple[np.ndarray, np.ndarray]:
        """Latent rows (n_frames, latent_dim) and genuine-probabilities (n_frames,)."""
        acts, _, _, p = self._forward_windows(self._windows(fm))
        return acts[-1], p

    def probabilities(self, fm: FeatureMatrix) -> np.ndarray:
        return self.latents_and_probs(fm)[1]

    def latents(self, fm: FeatureMatrix) -> np.ndarray:
        return self.latents_and_probs(fm)[0]


def forward(expert: Expert, features: FeatureMatrix, frame: int) -> tuple[np.ndarray, float]:
    """Latent vector and probability for one frame (window zero-padded at edges)."""
    if not (0 <= frame < features.rows):
        raise ValueError(f"frame {frame} outside [0, {features.rows})")
    h, p = expert.latents_and_probs(features)
    return h[frame], float(p[frame])


# --- loss functions ------------------------------------------------------


def bce_loss(probs: Sequence[np.ndarray], labels: Sequence[np.ndarray]) -> float:
    """Mean over samples of the per-sample summed binary cross-entropy."""
    if len(probs) == 0 or len(probs) != len(labels):
        raise ValueError("probs and labels must be equal-length non-empty sequences")
    total = 0.0
    for p, y in zip(probs, labels):
        p = np.asarray(p, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if p.shape != y.shape or p.ndim != 1 or p.size == 0:
            raise ValueError("each sample needs matching non-empty 1-D probs and labels")
        if np.any(p <= 0.0) or np.any(p >= 1.0):
            raise ValueError("probabilities must lie strictly inside (0, 1)")
        total += float(-np.sum(y * np.log(p) + (1.0 - y) * np.log1p(-p)))
    return total / len(probs)


def cosine_sim(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; defined as 0 when either vector is all zeros."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"vectors must be 1-D with equal length, got {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a @ b) / (na * nb)


def distillation_loss(h_now: np.ndarray, h_prev: Sequence[np.ndarray],
                      u: float, y0: float = 1.0) -> float:
    """Mean hinge penalty against frozen predecessors' latents; 0 with none."""
    n = len(h_prev)
    if n == 0:
        return 0.0
    total = 0.0
    for h in h_prev:
        gap = max(0.0, cosine_sim(h_now, h) - u)
        total += y0 * 0.5 * gap * gap
    return total / n


def _sample_dis_terms(expert: Expert, latents: np.ndarray,
                      prev_latents: list[np.ndarray]) -> float:
    cfg = expert.config
    if cfg.per_frame_distillation:
        m = latents.shape[0]
        return sum(
            distillation_loss(latents[i], [pl[i] for pl in prev_latents], cfg.u, cfg.y0)
            for i in range(m)
        ) / m
    h_now = latents.mean(axis=0)
    return distillation_loss(h_now, [pl.mean(axis=0) for pl in prev_latents], cfg.u, cfg.y0)


def total_loss(batch: Sequence[Sample], expert: Expert,
               prev_experts: Sequence[Expert]) -> float:
    """Batch loss: BCE plus, per sample, the predecessor-dissimilarity hinge.

    With no predecessors this is exactly bce_loss on the expert's outputs
    (nothing is added, so the values agree bit for bit).
    """
    if len(batch) == 0:
        raise ValueError("batch must be non-empty")
    probs = [expert.probabilities(s.features) for s in batch]
    labels = [s.labels for s in batch]
    bce = bce_loss(probs, labels)
    if not prev_experts:
        return bce
    dis_sum = 0.0
    for s in batch:
        latents = expert.latents(s.features)
        prev = [w.latents(s.features) for w in prev_experts]
        dis_sum += _sample_dis_terms(expert, latents, prev)
    return bce + dis_sum / len(batch)


# --- gradients ------------------------------------------------------------


def _dis_grad_mean_latent(a: np.ndarray, prev_means: list[np.ndarray],
                          u: float, y0: float) -> tuple[float, np.ndarray]:
    """Hinge value and gradient w.r.t. the current mean latent a."""
    loss = 0.0
    grad = np.zeros_like(a)
    n = len(prev_means)
    na = float(np.linalg.norm(a))
    for b in prev_means:
        nb = float(np.linalg.norm(b))
        if na == 0.0 or nb == 0.0:
            continue
        c = float(a @ b) / (na * nb)
        gap = c - u
        if gap <= 0.0:
            continue
        loss += y0 * 0.5 * gap * gap
        grad += y0 * gap * (b / (na * nb) - c * a / (na * na))
    return loss / n, grad / n


def loss_and_gradients(expert: Expert, batch: Sequence[Sample],
                       prev_experts: Sequence[Expert],
                       prev_latents: list[list[np.ndarray]] | None = None,
                       windows: list[np.ndarray] | None = None):
    """Analytic gradients of the batch loss w.r.t. trainable parameters.

    Returns (components, grads) where components has keys total/bce/dis
    (bce and dis are already averaged over the batch) and grads follows
    trainable_params() order. prev_latents, when given, holds per-predecessor
    per-sample latent matrices (mean-latent mode uses their row means).
    """
    if len(batch) == 0:
        raise ValueError("batch must be non-empty")
    cfg = expert.config
    n_batch = len(batch)
    if windows is None:
        windows = [expert._windows(s.features) for s in batch]
    sizes = [w.shape[0] for w in windows]
    X = np.vstack(windows)
    y = np.concatenate([np.asarray(s.labels, dtype=np.float64) for s in batch])
    acts, logits, p_raw, p = expert._forward_windows(X)
    H = acts[-1]

    per_frame_bce = -(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    bce = float(sum(per_frame_bce[s:e].sum() for s, e in zip(bounds, bounds[1:]))) / n_batch

    live = (p_raw > PROB_CLAMP) & (p_raw < 1.0 - PROB_CLAMP)
    dlogits = (p - y) * live / n_batch
    dH = np.outer(dlogits, expert.out_w)
    g_out_w = H.T @ dlogits
    g_out_b = np.array([dlogits.sum()])

    dis = 0.0
    use_dis = bool(prev_experts) and cfg.y0 != 0.0
    if use_dis:
        if prev_latents is None:
            prev_latents = [[w.latents(s.features) for s in batch] for w in prev_experts]
        for j, (s, e) in enumerate(zip(bounds, bounds[1:])):
            m = e - s
            if cfg.per_frame_distillation:
                sample_dis = 0.0
                for i in range(m):
                    d_i, g_i = _dis_grad_mean_latent(
                        H[s + i], [pl[j][i] for pl in prev_latents], cfg.u, cfg.y0
                    )
                    sample_dis += d_i
                    dH[s + i] += g_i / (m * n_batch)
                dis += sample_dis / m
            else:
                a = H[s:e].mean(axis=0)
                d_j, g_j = _dis_grad_mean_latent(
                    a, [pl[j].mean(axis=0) for pl in prev_latents], cfg.u, cfg.y0
                )
                dis += d_j
                dH[s:e] += g_j / (m * n_batch)
        dis /= n_batch
    elif prev_experts:
        # y0 == 0: the hinge is identically zero, gradients untouched
        dis = 0.0

    grads: list[np.ndarray] = []
    delta = dH
    for layer in range(len(expert.weights) - 1, -1, -1):
        a_out = acts[layer + 1]
        dz = delta * (1.0 - a_out * a_out)
        grads.append(dz.sum(axis=0))  # bias
        grads.append(acts[layer].T @ dz)  # weight
        delta = dz @ expert.weights[layer].T
    grads.reverse()
    grads.extend((g_out_w, g_out_b))

    total = bce + dis if use_dis else bce
    return {"total": total, "bce": bce, "dis": dis}, grads


# --- training -------------------------------------------------------------


def _val_accuracy(expert: Expert, val: Sequence[Sample]) -> float:
    correct = 0
    total = 0
    for s in val:
        p = expert.probabilities(s.features)
        pred = np.where(p > 0.5, 1, 0)  # ties count as manipulated
        correct += int(np.sum(pred == s.labels))
        total += s.labels.size
    return correct / total if total else float("nan")


def train_expert(data: TrainingData, prev_experts: Sequence[Expert],
                 config: ExpertConfig) -> Expert:
    """Train one expert against its frozen predecessors. Deterministic per seed.

    After the configured epochs, training extends (up to floor_patience_epochs,
    default one more `epochs` worth) while validation accuracy sits below
    accuracy_floor, logging a warning either way.
    """
    if config.init_seed is None:
        rng = np.random.default_rng(config.seed)
        expert = Expert(config, data.n_features, index=len(prev_experts), rng=rng)
    else:
        expert = Expert(config, data.n_features, index=len(prev_experts),
                        rng=np.random.default_rng(config.init_seed))
        rng = np.random.default_rng(config.seed)  # shuffle stream only

    rows = np.vstack([s.features.values for s in data.train])
    mu = rows.mean(axis=0)
    sigma = rows.std(axis=0)
    expert.set_normalizer(mu, sigma)

    windows = [expert._windows(s.features) for s in data.train]
    prev_mean_latents: list[np.ndarray] | None = None
    if prev_experts and not config.per_frame_distillation:
        # frozen predecessors: per-sample mean latents never change during training
        prev_mean_latents = [
            np.vstack([w.latents(s.features).mean(axis=0) for s in data.train])
            for w in prev_experts
        ]

    params = expert.trainable_params()
    m_state = [np.zeros_like(p) for p in params]
    v_state = [np.zeros_like(p) for p in params]
    step = 0

    n_train = len(data.train)
    patience = config.floor_patience_epochs if config.floor_patience_epochs is not None else config.epochs
    max_epochs = config.epochs + patience
    epoch = 0
    while epoch < config.epochs or (
        epoch < max_epochs
        and data.val
        and expert.history
        and expert.history[-1]["val_accuracy"] < config.accuracy_floor
    ):
        order = rng.permutation(n_train)
        epoch_bce = 0.0
        epoch_dis = 0.0
        for start in range(0, n_train, config.batch_size):
            idx = order[start : start + config.batch_size]
            batch = [data.train[i] for i in idx]
            batch_windows = [windows[i] for i in idx]
            prev_lat = None
            if prev_mean_latents is not None:
                prev_lat = [[pm[i][None, :] for i in idx] for pm in prev_mean_latents]
            elif prev_experts and config.per_frame_distillation:
                prev_lat = [[w.latents(b.features) for b in batch] for w in prev_experts]
            comps, grads = loss_and_gradients(
                expert, batch, prev_experts, prev_latents=prev_lat, windows=batch_windows
            )
            if not np.isfinite(comps["total"]):
                raise TrainingDivergence(
                    f"expert {expert.index}: non-finite loss at epoch {epoch}, "
                    f"batch starting {start} (bce={comps['bce']}, dis={comps['dis']})"
                )
            step += 1
            lr_t = config.lr * np.sqrt(1.0 - _ADAM_B2**step) / (1.0 - _ADAM_B1**step)
            for par, g, m_s, v_s in zip(params, grads, m_state, v_state):
                m_s *= _ADAM_B1
                m_s += (1.0 - _ADAM_B1) * g
                v_s *= _ADAM_B2
                v_s += (1.0 - _ADAM_B2) * (g * g)
                par -= lr_t * m_s / (np.sqrt(v_s) + _ADAM_EPS)
            epoch_bce += comps["bce"] * len(batch)
            epoch_dis += comps["dis"] * len(batch)
        acc = _val_accuracy(expert, data.val) if data.val else float("nan")
        expert.history.append(
            {
                "epoch": epoch,
                "bce": epoch_bce / n_train,
                "dis_loss": epoch_dis / n_train,
                "total": (epoch_bce + epoch_dis) / n_train,
                "val_accuracy": acc,
            }
        )
        epoch += 1
        if epoch == config.epochs and epoch < max_epochs and data.val and acc < config.accuracy_floor:
            log.warning(
                "expert %d: val accuracy %.4f below floor %.2f after %d epochs; extending",
                expert.index, acc, config.accuracy_floor, config.epochs,
            )
    if data.val and expert.history and expert.history[-1]["val_accuracy"] < config.accuracy_floor:
        log.warning(
            "expert %d: val accuracy %.4f still below floor %.2f after %d epochs",
            expert.index, expert.history[-1]["val_accuracy"], config.accuracy_floor, epoch,
        )
    return expert


@dataclass
class Ensemble:
    experts: list[Expert]

    def __post_init__(self):
        if not self.experts:
            raise ValueError("ensemble must contain at least one expert")
        dims = {(e.n_features, e.config.latent_dim, e.config.context) for e in self.experts}
        if len(dims) != 1:
            raise ValueError("ensemble experts disagree on architecture")

    @property
    def n(self) -> int:
        return len(self.experts)


def train_ensemble(data: TrainingData, config: ExpertConfig, n: int,
                   on_expert=None) -> Ensemble:
    """Sequentially train n experts, each against all earlier ones.

    Expert w trains with seed derive_seed(config.seed, "expert", w): fresh
    weight initialization and fresh data order per expert unless
    config.init_seed pins a shared initialization. ``on_expert(expert)``
    runs after each expert finishes (used for incremental checkpointing).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    experts: list[Expert] = []
    for w in range(n):
        cfg_w = dataclasses.replace(
            config, seed=derive_seed(config.seed, "expert", w)
        )
        expert = train_expert(data, experts, cfg_w)
        expert.index = w
        experts.append(expert)
        if on_expert is not None:
            on_expert(expert)
    return Ensemble(experts=experts)


# --- checkpoints ----------------------------------------------------------
#
# Expert checkpoint layout (little-endian):
#   magic    4 bytes b"EXPT"
#   version  u32 (currently 1)
#   hash_len u32, then config hash, ASCII
#   index    u32
#   latent   u32 (latent_dim d)
#   n_feat   u32
#   n_params u64
#   params   n_params float64: feat_mu, feat_sigma, then per layer W (row-major)
#            and b, then out_w, out_b.

_CKPT_MAGIC = b"EXPT"
_CKPT_VERSION = 1


def expert_config_key(config: ExpertConfig, n_features: int) -> str:
    d = config.to_dict()
    d["n_features"] = n_features
    # seeds name the run, not the architecture; each expert has its own
    d.pop("seed")
    d.pop("init_seed")
    return config_hash(d)


def _param_vector(expert: Expert) -> np.ndarray:
    parts = [expert.feat_mu, expert.feat_sigma]
    for W, b in zip(expert.weights, expert.biases):
        parts.extend((W.ravel(), b))
    parts.extend((expert.out_w, expert.out_b))
    return np.concatenate(parts)


def save_expert(path: str | Path, expert: Expert) -> None:
    cfg_hash = expert_config_key(expert.config, expert.n_features).encode("ascii")
    vec = np.ascontiguousarray(_param_vector(expert), dtype="<f8")
    header = struct.pack(
        f"<4sII{len(cfg_hash)}sIIIQ",
        _CKPT_MAGIC,
        _CKPT_VERSION,
        len(cfg_hash),
        cfg_hash,
        expert.index,
        expert.config.latent_dim,
        expert.n_features,
        vec.size,
    )
    Path(path).write_bytes(header + vec.tobytes())


def load_expert(path: str | Path, config: ExpertConfig) -> Expert:
    raw = Path(path).read_bytes()
    magic, version, hash_len = struct.unpack_from("<4sII", raw, 0)
    if magic != _CKPT_MAGIC:
        raise ValueError(f"{path}: not an expert checkpoint")
    if version != _CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    file_hash = raw[off : off + hash_len].decode("ascii")
    off += hash_len
    index, latent_dim, n_features, n_params = struct.unpack_from("<IIIQ", raw, off)
    off += 20
    expected_hash = expert_config_key(config, n_features)
    if file_hash != expected_hash:
        raise ValueError(
            f"{path}: checkpoint config hash {file_hash} does not match {expected_hash}"
        )
    if latent_dim != config.latent_dim:
        raise ValueError(f"{path}: latent_dim {latent_dim} != config {config.latent_dim}")
    vec = np.frombuffer(raw, dtype="<f8", count=n_params, offset=off)
    expert = Expert(config, n_features, index=index)
    pos = 0

    def take(shape) -> np.ndarray:
        nonlocal pos
        size = int(np.prod(shape))
        out = vec[pos : pos + size].reshape(shape).copy()
        pos += size
        return out

    expert.feat_mu = take((n_features,))
    expert.feat_sigma = take((n_features,))
    for i, (W, b) in enumerate(zip(expert.weights, expert.biases)):
        expert.weights[i] = take(W.shape)
        expert.biases[i] = take(b.shape)
    expert.out_w = take(expert.out_w.shape)
    expert.out_b = take((1,))
    if pos != vec.size:
        raise ValueError(f"{path}: parameter count mismatch ({vec.size} != {pos})")
    return expert


def save_ensemble(directory: str | Path, ensemble: Ensemble) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    first = ensemble.experts[0]
    files = []
    for expert in ensemble.experts:
        name = f"expert_{expert.index:03d}.bin"
        save_expert(directory / name, expert)
        files.append(name)
    manifest = {
        "config": first.config.to_dict(),
        "n_features": first.n_features,
        "n": ensemble.n,
        "config_hash": expert_config_key(first.config, first.n_features),
        "experts": files,
    }
    (directory / "ensemble.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )


def load_ensemble(directory: str | Path) -> Ensemble:
    directory = Path(directory)
    manifest = json.loads((directory / "ensemble.json").read_text(encoding="utf-8"))
    config = ExpertConfig(**{**manifest["config"], "hidden_dims": tuple(manifest["config"]["hidden_dims"])})
    experts = [load_expert(directory / name, config) for name in manifest["experts"]]
    return Ensemble(experts=experts)
