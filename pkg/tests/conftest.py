"""Shared fixtures: small deterministic clips and feature matrices."""
import numpy as np
import pytest

from fakeloc.dsp import AudioClip, FeatureMatrix, lfcc, make_frames
from fakeloc.synth import source_domain_config, synth_clip


@pytest.fixture(scope="session")
def tone_clip() -> AudioClip:
    """1.0 s of a stable two-tone signal, 16 kHz."""
    sr = 16000
    t = np.arange(sr) / sr
    x = 0.4 * np.sin(2 * np.pi * 220 * t) + 0.2 * np.sin(2 * np.pi * 1250 * t)
    return AudioClip(id="tone", samples=x, sample_rate=sr)


@pytest.fixture(scope="session")
def synth_pair():
    """One synthesized source-domain clip with its frame labels."""
    rng = np.random.default_rng(20240811)
    return synth_clip(source_domain_config(), "fixture-clip", rng)


@pytest.fixture(scope="session")
def small_features(tone_clip) -> FeatureMatrix:
    grid = make_frames(tone_clip)
    return lfcc(tone_clip, grid, n_filters=12, n_coeffs=8)


def random_features(rng: np.random.Generator, clip_id: str, rows: int, cols: int) -> FeatureMatrix:
    return FeatureMatrix(clip_id=clip_id, values=rng.normal(size=(rows, cols)))
