"""Synthetic corpus generator: determinism, label soundness, domain presets."""
import numpy as np
import pytest

from fakeloc.dsp import FRAME_SECONDS, make_frames
from fakeloc.synth import (
    ChannelStyle,
    DomainConfig,
    FakeVariant,
    domain_config_from_overrides,
    source_domain_config,
    synth_clip,
    synth_domain_corpus,
    target_domain_config,
)


def test_synth_clip_is_deterministic_per_seed():
    cfg = source_domain_config()
    a, la = synth_clip(cfg, "c", np.random.default_rng(42))
    b, lb = synth_clip(cfg, "c", np.random.default_rng(42))
    np.testing.assert_array_equal(a.samples, b.samples)
    np.testing.assert_array_equal(la.labels, lb.labels)
    c, _ = synth_clip(cfg, "c", np.random.default_rng(43))
    assert not np.array_equal(a.samples, c.samples)


def test_synth_clip_shape_and_amplitude():
    cfg = source_domain_config()
    clip, labels = synth_clip(cfg, "c", np.random.default_rng(0))
    frame_len = int(round(FRAME_SECONDS * cfg.sample_rate))
    assert clip.samples.size == labels.n_frames * frame_len
    lo, hi = cfg.clip_seconds
    assert lo - 0.02 <= clip.samples.size / cfg.sample_rate <= hi + 0.02
    assert np.max(np.abs(clip.samples)) <= 1.0


def test_synth_labels_are_frame_aligned_spans():
    cfg = source_domain_config()
    for seed in range(12):
        clip, labels = synth_clip(cfg, f"c{seed}", np.random.default_rng(seed))
        grid = make_frames(clip)
        assert labels.n_frames == grid.n_frames
        # every manipulated span is interior (frame 0 is never fake)
        for start, end, lab in labels.spans:
            if lab == 0:
                assert start >= 1 and end <= grid.n_frames


def test_fake_ratio_roughly_respected():
    cfg = dataclasses_replace_ratio(source_domain_config(), 0.3)
    fake_fracs = []
    for i, (_, labels) in enumerate(synth_domain_corpus(cfg, 40, rng_seed=9)):
        fake_fracs.append(float(np.mean(labels.labels == 0)))
    # mix of genuine-only clips and ~30%-fake clips
    assert 0.1 < np.mean(fake_fracs) < 0.4
    assert any(f == 0.0 for f in fake_fracs)  # some all-genuine clips
    assert any(f > 0.15 for f in fake_fracs)


def dataclasses_replace_ratio(cfg, ratio):
    import dataclasses

    return dataclasses.replace(cfg, fake_ratio=ratio)


def test_corpus_ids_and_per_clip_independence():
    cfg = source_domain_config()
    corpus = synth_domain_corpus(cfg, 5, rng_seed=3)
    ids = [clip.id for clip, _ in corpus]
    assert ids == [f"source-{i:05d}" for i in range(5)]
    # clip 3 depends only on (seed, id), not on how many clips precede it
    again = synth_domain_corpus(cfg, 4, rng_seed=3)
    np.testing.assert_array_equal(corpus[3][0].samples, again[3][0].samples)


def test_genuine_only_domain():
    import dataclasses

    cfg = dataclasses.replace(source_domain_config(), genuine_clip_fraction=1.0)
    for _, labels in synth_domain_corpus(cfg, 6, rng_seed=1):
        assert np.all(labels.labels == 1)


def test_domain_presets_differ():
    src, tgt = source_domain_config(), target_domain_config()
    assert src.name == "source" and tgt.name == "target"
    assert len(tgt.styles) > len(src.styles)  # target adds a shifted channel
    assert tgt.fake_variant.name != src.fake_variant.name


def test_overrides_reach_nested_configs():
    cfg = domain_config_from_overrides(
        source_domain_config(),
        {
            "clip_seconds": [0.4, 0.5],
            "fake_variant": {"name": "x", "mix": [1.0, 0.0, 0.0, 0.0]},
            "styles": [[1.0, {"noise_level": 0.05}]],
        },
    )
    assert cfg.clip_seconds == (0.4, 0.5)
    assert cfg.fake_variant.mix == (1.0, 0.0, 0.0, 0.0)
    assert cfg.styles[0][1].noise_level == 0.05


def test_variant_mix_must_be_distribution():
    with pytest.raises(ValueError, match="distribution"):
        FakeVariant(mix=(0.5, 0.5, 0.5, 0.0))
    with pytest.raises(ValueError, match="4 entries"):
        FakeVariant(mix=(1.0, 0.0, 0.0))


def test_domain_config_validation():
    with pytest.raises(ValueError):
        DomainConfig(name="")
    with pytest.raises(ValueError):
        DomainConfig(name="d", fake_ratio=1.0)
    with pytest.raises(ValueError):
        ChannelStyle(f0_range=(0.0, 100.0))
