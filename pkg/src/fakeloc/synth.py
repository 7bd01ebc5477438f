"""Synthetic two-domain corpus of partially fake clips.

Genuine audio is a sequence of harmonic bursts (random f0, amplitude envelope,
spectral tilt) separated by gaps, over a broadband channel noise floor. Fake
segments overwrite frame-aligned spans with a tone whose partial envelope
carries a mid-band bump and, depending on the variant, extra local noise; the
splices are hard (no crossfade), so segment boundaries leave energy
discontinuities.

The two built-in domains differ in channel and fake variant: the source domain
is clean with fakes marked by band bump and/or a noise bump (redundant cues);
the target domain mixes source-like clips with a "shifted" channel style
(higher noise floor than source fakes, brighter tilt) whose fakes carry the
band bump only. A detector that learned the noise shortcut at home fails on
shifted clips, which is exactly the subpopulation worth mining.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .config import derive_seed
from .dsp import FRAME_SECONDS, AudioClip, quantize16
from .manipulation import FrameLabels


@dataclass(frozen=True)
class ChannelStyle:
    """Per-clip rendering style: pitch range, spectral tilt, noise floor."""

    f0_range: tuple[float, float] = (120.0, 260.0)
    tilt: float = 1.0  # partial k amplitude ~ k**-tilt
    noise_level: float = 0.003
    noise_jitter: float = 0.0  # per-clip log-uniform half-width
    tilt_jitter: float = 0.0

    def __post_init__(self):
        lo, hi = self.f0_range
        if not (0 < lo <= hi):
            raise ValueError(f"bad f0_range {self.f0_range}")
        if self.noise_level < 0 or self.noise_jitter < 0 or self.tilt_jitter < 0:
            raise ValueError("noise/jitter values must be non-negative")


@dataclass(frozen=True)
class FakeVariant:
    """Fake-segment generator: band-bump envelope and/or extra local noise.

    mix = probabilities of (band+noise, band only, noise only, clean) per
    segment. A "clean" fake re-renders the span with the genuine envelope and
    no added cue: a seamless splice that is indistinguishable from genuine
    content, as real partially fake corpora contain.
    """

    name: str = "band_noise"
    band_center: float = 2800.0
    band_width: float = 700.0
    band_gain: tuple[float, float] = (3.0, 8.0)
    extra_noise: tuple[float, float] = (0.008, 0.016)
    mix: tuple[float, float, float, float] = (0.7, 0.15, 0.15, 0.0)

    def __post_init__(self):
        if len(self.mix) != 4:
            raise ValueError(f"variant {self.name!r}: mix needs 4 entries, got {len(self.mix)}")
        if abs(sum(self.mix) - 1.0) > 1e-9 or any(m < 0 for m in self.mix):
            raise ValueError(f"variant {self.name!r}: mix must be a distribution, got {self.mix}")


@dataclass(frozen=True)
class DomainConfig:
    """Everything needed to synthesize one domain's corpus."""

    name: str
    sample_rate: int = 16000
    clip_seconds: tuple[float, float] = (1.2, 1.8)
    burst_seconds: tuple[float, float] = (0.12, 0.35)
    gap_seconds: tuple[float, float] = (0.04, 0.16)
    amp_range: tuple[float, float] = (0.25, 0.6)
    n_harmonics: int = 10
    genuine_clip_fraction: float = 0.15
    fake_ratio: float = 0.3
    fake_seconds: tuple[float, float] = (0.10, 0.30)
    fake_variant: FakeVariant = field(default_factory=FakeVariant)
    # weighted channel styles; one is drawn per clip
    styles: tuple[tuple[float, ChannelStyle], ...] = ((1.0, ChannelStyle()),)

    def __post_init__(self):
        if not self.name:
            raise ValueError("domain name must be non-empty")
        if not (0 <= self.fake_ratio < 1):
            raise ValueError(f"fake_ratio must be in [0, 1), got {self.fake_ratio}")
        if not (0 <= self.genuine_clip_fraction <= 1):
            raise ValueError("genuine_clip_fraction must be in [0, 1]")
        if not self.styles or any(w <= 0 for w, _ in self.styles):
            raise ValueError("styles must be non-empty with positive weights")
        for pair in (self.clip_seconds, self.burst_seconds, self.gap_seconds,
                     self.amp_range, self.fake_seconds):
            if not (0 < pair[0] <= pair[1]):
                raise ValueError(f"bad range {pair}")


def source_domain_config() -> DomainConfig:
    """Built-in source domain: clean channel, fakes with redundant cues."""
    return DomainConfig(
        name="source",
        fake_variant=FakeVariant(
            name="band_noise",
            band_center=2800.0,
            band_width=700.0,
            band_gain=(3.0, 8.0),
            extra_noise=(0.008, 0.016),
            mix=(0.62, 0.14, 0.14, 0.10),
        ),
        styles=((1.0, ChannelStyle(noise_jitter=0.3, tilt_jitter=0.1)),),
    )


def target_domain_config() -> DomainConfig:
    """Built-in target domain: mostly source-like clips plus a shifted channel
    (noisy, bright) whose fakes carry the band cue only."""
    base = ChannelStyle(noise_jitter=0.3, tilt_jitter=0.1)
    shifted = ChannelStyle(
        f0_range=(150.0, 300.0),
        tilt=0.45,
        noise_level=0.02,
        noise_jitter=0.5,
        tilt_jitter=0.15,
    )
    return DomainConfig(
        name="target",
        fake_variant=FakeVariant(
            name="band_only",
            band_center=2800.0,
            band_width=900.0,
            band_gain=(3.0, 8.0),
            extra_noise=(0.0, 0.0),
            mix=(0.9, 0.0, 0.0, 0.1),
        ),
        styles=((0.82, base), (0.18, shifted)),
    )


def _tone(rng: np.random.Generator, n: int, sample_rate: int, f0: float,
          n_harmonics: int, partial_amps: np.ndarray) -> np.ndarray:
    t = np.arange(n) / sample_rate
    sig = np.zeros(n)
    total = partial_amps.sum()
    if total <= 0:
        return sig
    amps = partial_amps / total
    for k in range(1, n_harmonics + 1):
        f = k * f0
        if f >= 0.45 * sample_rate:
            break
        sig += amps[k - 1] * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
    return sig


def _tilt_amps(n_harmonics: int, tilt: float) -> np.ndarray:
    k = np.arange(1, n_harmonics + 1, dtype=np.float64)
    return k ** -tilt


def _band_amps(n_harmonics: int, tilt: float, f0: float,
               center: float, width: float, gain: float) -> np.ndarray:
    k = np.arange(1, n_harmonics + 1, dtype=np.float64)
    freqs = k * f0
    bump = gain * np.exp(-((freqs - center) ** 2) / (2 * width**2))
    return (k**-tilt) * (1.0 + bump)


def _render_burst(rng, out, start, length, sample_rate, style, tilt, n_harmonics, amp_range):
    f0 = rng.uniform(*style.f0_range)
    amp = rng.uniform(*amp_range)
    sig = _tone(rng, length, sample_rate, f0, n_harmonics, _tilt_amps(n_harmonics, tilt))
    ramp = min(int(0.010 * sample_rate), max(1, length // 4))
    env = np.ones(length)
    env[:ramp] = np.linspace(0.0, 1.0, ramp)
    env[-ramp:] = np.linspace(1.0, 0.0, ramp)
    out[start : start + length] += amp * sig * env


def _place_fake_spans(rng, n_frames, cfg: DomainConfig) -> list[tuple[int, int]]:
    """Non-overlapping frame-aligned spans covering ~fake_ratio of the clip."""
    target = int(round(cfg.fake_ratio * n_frames))
    min_len = max(4, int(round(cfg.fake_seconds[0] / FRAME_SECONDS)))
    max_len = max(min_len, int(round(cfg.fake_seconds[1] / FRAME_SECONDS)))
    spans: list[tuple[int, int]] = []
    placed = 0
    for _ in range(80):
        if placed >= target or target - placed < min_len:
            break
        length = int(rng.integers(min_len, min(max_len, target - placed) + 1))
        if length >= n_frames - 2:
            break
        start = int(rng.integers(1, n_frames - length))
        # keep a 2-frame margin so neighboring splices stay distinct
        if any(start < e + 2 and s < start + length + 2 for s, e in spans):
            continue
        spans.append((start, start + length))
        placed += length
    return sorted(spans)


def _render_fake(rng, out, span, frame_len, sample_rate, style, tilt, cfg: DomainConfig):
    variant = cfg.fake_variant
    s, e = span[0] * frame_len, span[1] * frame_len
    length = e - s
    mode = rng.choice(4, p=np.asarray(variant.mix))
    f0 = rng.uniform(*style.f0_range)
    amp = rng.uniform(*cfg.amp_range)
    if mode in (0, 1):  # band bump envelope
        gain = rng.uniform(*variant.band_gain)
        amps = _band_amps(cfg.n_harmonics, tilt, f0, variant.band_center, variant.band_width, gain)
    else:  # noise-only or clean fake keeps the genuine envelope
        amps = _tilt_amps(cfg.n_harmonics, tilt)
    sig = amp * _tone(rng, length, sample_rate, f0, cfg.n_harmonics, amps)
    if mode in (0, 2):
        sigma = rng.uniform(*variant.extra_noise)
        if sigma > 0:
            sig = sig + sigma * rng.standard_normal(length)
    out[s:e] = sig  # hard splice: replaces whatever was there


def synth_clip(cfg: DomainConfig, clip_id: str, rng: np.random.Generator) -> tuple[AudioClip, FrameLabels]:
    """Render one clip plus its ground-truth frame labels (1 genuine, 0 fake)."""
    frame_len = int(round(FRAME_SECONDS * cfg.sample_rate))
    duration = rng.uniform(*cfg.clip_seconds)
    n_frames = max(8, int(round(duration / FRAME_SECONDS)))
    n = n_frames * frame_len

    weights = np.asarray([w for w, _ in cfg.styles], dtype=np.float64)
    style = cfg.styles[int(rng.choice(len(cfg.styles), p=weights / weights.sum()))][1]
    noise_level = style.noise_level * float(np.exp(rng.uniform(-style.noise_jitter, style.noise_jitter)))
    tilt = style.tilt * float(np.exp(rng.uniform(-style.tilt_jitter, style.tilt_jitter)))

    out = np.zeros(n)
    pos = int(rng.uniform(*cfg.gap_seconds) * cfg.sample_rate) if rng.random() < 0.5 else 0
    while pos < n:
        burst = int(rng.uniform(*cfg.burst_seconds) * cfg.sample_rate)
        burst = min(burst, n - pos)
        if burst > int(0.03 * cfg.sample_rate):
            _render_burst(rng, out, pos, burst, cfg.sample_rate, style, tilt,
                          cfg.n_harmonics, cfg.amp_range)
        pos += burst + int(rng.uniform(*cfg.gap_seconds) * cfg.sample_rate)

    if rng.random() < cfg.genuine_clip_fraction:
        spans: list[tuple[int, int]] = []
    else:
        spans = _place_fake_spans(rng, n_frames, cfg)
    for span in spans:
        _render_fake(rng, out, span, frame_len, cfg.sample_rate, style, tilt, cfg)

    if noise_level > 0:
        out = out + noise_level * rng.standard_normal(n)
    out = quantize16(np.clip(out, -1.0, 1.0))
    clip = AudioClip(id=clip_id, samples=out, sample_rate=cfg.sample_rate)

    labels = np.ones(n_frames, dtype=np.int8)
    for s, e in spans:
        labels[s:e] = 0
    return clip, FrameLabels(clip_id=clip_id, labels=labels)


def synth_domain_corpus(cfg: DomainConfig, n_clips: int, rng_seed: int) -> list[tuple[AudioClip, FrameLabels]]:
    """Deterministic corpus: each clip's RNG stream derives from (seed, clip id)."""
    if n_clips <= 0:
        raise ValueError("n_clips must be positive")
    corpus = []
    for i in range(n_clips):
        clip_id = f"{cfg.name}-{i:05d}"
        rng = np.random.default_rng(derive_seed(rng_seed, clip_id))
        corpus.append(synth_clip(cfg, clip_id, rng))
    return corpus


def domain_config_from_overrides(base: DomainConfig, overrides: dict) -> DomainConfig:
    """Apply flat/nested dict overrides to a domain config (for run configs)."""
    kwargs: dict = {}
    for key, value in overrides.items():
        if key == "styles":
            styles = tuple((float(w), ChannelStyle(**{k: _coerce(v) for k, v in s.items()}))
                           for w, s in value)
            kwargs["styles"] = styles
        elif key == "fake_variant":
            kwargs["fake_variant"] = FakeVariant(**{k: _coerce(v) for k, v in value.items()})
        else:
            kwargs[key] = _coerce(value)
    return dataclasses.replace(base, **kwargs)


def _coerce(value):
    return tuple(value) if isinstance(value, list) else value
