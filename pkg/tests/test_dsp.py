"""Framing, cepstral features, energy/ZCR, WAV IO, and the feature cache.

The cepstra are checked against a from-scratch oracle that uses an explicit
DFT matrix and an explicit DCT-II cosine sum, no FFT library calls.
"""
import numpy as np
import pytest

from fakeloc.dsp import (
    AudioClip,
    FeatureMatrix,
    append_deltas,
    delta_energy,
    frame_energy,
    lfcc,
    load_wav,
    make_frames,
    quantize16,
    read_feature_cache,
    write_feature_cache,
    write_wav,
    zero_crossing_rate,
)


def brute_force_lfcc(samples, sample_rate, frame_len, n_frames, n_filters, n_coeffs):
    """Loop-and-sum reimplementation used as the oracle."""
    window = np.hanning(frame_len)
    nfft = 1
    while nfft < frame_len:
        nfft *= 2
    n_bins = nfft // 2 + 1
    freqs = np.array([k * sample_rate / nfft for k in range(n_bins)])
    edges = [i * (sample_rate / 2.0) / (n_filters + 1) for i in range(n_filters + 2)]
    out = np.zeros((n_frames, n_coeffs))
    for fr in range(n_frames):
        seg = samples[fr * frame_len : (fr + 1) * frame_len] * window
        padded = np.zeros(nfft)
        padded[:frame_len] = seg
        spec = np.zeros(n_bins)
        for k in range(n_bins):
            re = sum(padded[t] * np.cos(-2 * np.pi * k * t / nfft) for t in range(nfft))
            im = sum(padded[t] * np.sin(-2 * np.pi * k * t / nfft) for t in range(nfft))
            spec[k] = re * re + im * im
        logs = np.zeros(n_filters)
        for m in range(n_filters):
            lo, center, hi = edges[m], edges[m + 1], edges[m + 2]
            acc = 0.0
            for k in range(n_bins):
                f = freqs[k]
                if lo <= f <= center:
                    w = (f - lo) / (center - lo)
                elif center < f <= hi:
                    w = (hi - f) / (hi - center)
                else:
                    w = 0.0
                acc += w * spec[k]
            logs[m] = np.log(max(acc, 1e-10))
        for c in range(n_coeffs):
            s = sum(logs[m] * np.cos(np.pi * c * (2 * m + 1) / (2 * n_filters))
                    for m in range(n_filters))
            scale = np.sqrt(1.0 / n_filters) if c == 0 else np.sqrt(2.0 / n_filters)
            out[fr, c] = scale * s
    return out


def test_lfcc_matches_brute_force_oracle(tone_clip):
    short = AudioClip(id="t", samples=tone_clip.samples[: 4 * 160], sample_rate=16000)
    grid = make_frames(short)
    assert grid.n_frames == 4 and grid.frame_len == 160
    got = lfcc(short, grid, n_filters=10, n_coeffs=6).values
    want = brute_force_lfcc(short.samples, 16000, 160, 4, 10, 6)
    np.testing.assert_allclose(got, want, rtol=1e-8, atol=1e-8)


def test_lfcc_silence_hits_log_floor():
    clip = AudioClip(id="s", samples=np.zeros(1600), sample_rate=16000)
    grid = make_frames(clip)
    fm = lfcc(clip, grid, n_filters=8, n_coeffs=5)
    # constant log-floor vector: DCT keeps only coefficient 0
    np.testing.assert_allclose(fm.values[:, 1:], 0.0, atol=1e-12)
    np.testing.assert_allclose(fm.values[:, 0], np.sqrt(8) * np.log(1e-10))


def test_lfcc_rejects_bad_coeff_count(tone_clip):
    grid = make_frames(tone_clip)
    with pytest.raises(ValueError):
        lfcc(tone_clip, grid, n_filters=8, n_coeffs=9)


def test_make_frames_drops_partial_frame_and_caps():
    clip = AudioClip(id="c", samples=np.zeros(16000 + 80), sample_rate=16000)
    grid = make_frames(clip)
    assert grid.n_frames == 100  # trailing half frame dropped
    assert grid.frame_len == grid.hop == 160
    capped = make_frames(clip, max_frames=7)
    assert capped.n_frames == 7


def test_make_frames_too_short_errors():
    clip = AudioClip(id="c", samples=np.zeros(100), sample_rate=16000)
    with pytest.raises(ValueError, match="too short"):
        make_frames(clip)


def test_frame_energy_is_sum_of_squares():
    sr = 16000
    x = np.concatenate([np.full(160, 0.5), np.full(160, -0.25)])
    clip = AudioClip(id="e", samples=x, sample_rate=sr)
    e = frame_energy(clip, make_frames(clip))
    np.testing.assert_allclose(e, [160 * 0.25, 160 * 0.0625])


def test_delta_energy_oracle():
    np.testing.assert_allclose(delta_energy([1.0, 4.0, 2.0, 2.0]), [3.0, 2.0, 0.0])
    with pytest.raises(ValueError):
        delta_energy([1.0])


def test_zero_crossing_rate_counts_sign_changes():
    # frame of 4 samples: signs + - + +  -> 2 changes / 3
    clip = AudioClip(
        id="z",
        samples=np.array([0.5, -0.5, 0.5, 0.5, 0.0, 0.0, -0.1, -0.2]),
        sample_rate=8000,
    )
    from fakeloc.dsp import FrameGrid

    grid = FrameGrid(frame_len=4, hop=4, n_frames=2)
    zcr = zero_crossing_rate(clip, grid)
    # second frame: 0 0 -0.1 -0.2 -> zero is positive, one change at index 2
    np.testing.assert_allclose(zcr, [2 / 3, 1 / 3])


def test_quantize16_matches_disk_round_trip(tmp_path, tone_clip):
    p = tmp_path / "t.wav"
    write_wav(p, tone_clip)
    back = load_wav(p)
    np.testing.assert_allclose(back.samples, quantize16(tone_clip.samples), atol=0)
    assert back.sample_rate == tone_clip.sample_rate


def test_quantize16_is_idempotent(tone_clip):
    q = quantize16(tone_clip.samples)
    np.testing.assert_array_equal(quantize16(q), q)


def test_load_wav_int16_scaling(tmp_path):
    import scipy.io.wavfile

    p = tmp_path / "i.wav"
    scipy.io.wavfile.write(p, 8000, np.array([0, 16384, -32768, 32767], dtype=np.int16))
    clip = load_wav(p)
    np.testing.assert_allclose(clip.samples, [0.0, 0.5, -1.0, 32767 / 32768])


def test_load_wav_stereo_needs_downmix(tmp_path):
    import scipy.io.wavfile

    p = tmp_path / "s.wav"
    data = np.tile(np.array([1000, -1000], dtype=np.int16), (64, 1))
    scipy.io.wavfile.write(p, 8000, data)
    with pytest.raises(ValueError, match="downmix"):
        load_wav(p)
    clip = load_wav(p, downmix=True)
    np.testing.assert_allclose(clip.samples, 0.0, atol=1e-12)


def test_append_deltas_widens_and_first_order_matches_gradient():
    vals = np.array([[0.0, 1.0], [2.0, 1.0], [4.0, 5.0]])
    fm = FeatureMatrix(clip_id="d", values=vals)
    out = append_deltas(fm)
    assert out.values.shape == (3, 4)
    # central differences inside, one-sided at the ends
    np.testing.assert_allclose(out.values[:, 2], [2.0, 2.0, 2.0])
    np.testing.assert_allclose(out.values[:, 3], [0.0, 2.0, 4.0])


def test_feature_cache_round_trip(tmp_path, small_features):
    p = tmp_path / "f.flfc"
    write_feature_cache(p, small_features, 16000, "abc123")
    fm, rate, h = read_feature_cache(p)
    assert fm.clip_id == small_features.clip_id
    assert rate == 16000 and h == "abc123"
    np.testing.assert_array_equal(fm.values, small_features.values)


def test_feature_cache_rejects_garbage(tmp_path):
    p = tmp_path / "bad.flfc"
    p.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(ValueError, match="not a feature cache"):
        read_feature_cache(p)


def test_feature_cache_detects_truncation(tmp_path, small_features):
    p = tmp_path / "t.flfc"
    write_feature_cache(p, small_features, 16000, "h")
    raw = p.read_bytes()
    p.write_bytes(raw[:-8])
    with pytest.raises(ValueError, match="truncated"):
        read_feature_cache(p)


def test_audio_clip_validation():
    with pytest.raises(ValueError):
        AudioClip(id="", samples=np.zeros(10), sample_rate=16000)
    with pytest.raises(ValueError):
        AudioClip(id="x", samples=np.zeros((2, 5)), sample_rate=16000)
    with pytest.raises(ValueError, match="exceed"):
        AudioClip(id="x", samples=np.array([1.5]), sample_rate=16000)
