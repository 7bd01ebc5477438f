"""Audio framing and linear-frequency cepstral features.

Clips are mono float64 in [-1, 1]. Frames are non-overlapping 10 ms blocks
(hop == frame length) capped at ``max_frames``; trailing samples that do not
fill a frame are dropped. Features are linear-filterbank cepstra: Hann window,
power spectrum, triangular filters spaced linearly up to Nyquist, log with an
absolute floor, then an orthonormal DCT-II keeping the first ``n_coeffs``
coefficients.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.fft
import scipy.io.wavfile

FRAME_SECONDS = 0.010  # frame length; frames do not overlap
DEFAULT_MAX_FRAMES = 750
DEFAULT_N_FILTERS = 20
DEFAULT_N_COEFFS = 20
LOG_FLOOR = 1e-10

_AMPLITUDE_TOL = 1e-6


@dataclass(frozen=True)
class AudioClip:
    """Mono audio with a stable id used for seeding and manifests."""

    id: str
    samples: np.ndarray  # float64, 1-D
    sample_rate: int

    def __post_init__(self):
        if not self.id:
            raise ValueError("clip id must be non-empty")
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError(f"clip {self.id!r}: samples must be non-empty 1-D")
        if not (8000 <= self.sample_rate <= 48000):
            raise ValueError(f"clip {self.id!r}: unsupported sample rate {self.sample_rate}")
        peak = float(np.max(np.abs(self.samples)))
        if peak > 1.0 + _AMPLITUDE_TOL:
            raise ValueError(f"clip {self.id!r}: samples exceed [-1, 1] (peak {peak:.6g})")


@dataclass(frozen=True)
class FrameGrid:
    """Frame layout of one clip: n_frames frames of frame_len samples, hop == frame_len."""

    frame_len: int
    hop: int
    n_frames: int

    def __post_init__(self):
        if self.frame_len <= 0 or self.n_frames <= 0:
            raise ValueError("frame_len and n_frames must be positive")
        if self.hop != self.frame_len:
            raise ValueError("frames are non-overlapping: hop must equal frame_len")


@dataclass(frozen=True)
class FeatureMatrix:
    """Per-frame feature rows for one clip (row i belongs to frame i)."""

    clip_id: str
    values: np.ndarray  # (n_frames, n_coeffs) float64

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.size == 0:
            raise ValueError(f"clip {self.clip_id!r}: feature matrix must be non-empty 2-D")
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"clip {self.clip_id!r}: non-finite feature values")

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]


def load_wav(path: str | Path, downmix: bool = False) -> AudioClip:
    """Read a PCM WAV file into a normalized mono clip.

    Integer PCM is scaled by its full-scale value (int16 by 32768, so a
    full-scale square wave maps to +/- 32767/32768); float WAVs are taken
    as already normalized. Multi-channel input is an error unless
    ``downmix`` averages the channels.
    """
    path = Path(path)
    try:
        rate, data = scipy.io.wavfile.read(path)
    except FileNotFoundError:
        raise
    except Exception as exc:  # unreadable or unsupported encoding
        raise ValueError(f"{path}: unreadable or unsupported WAV ({exc})") from exc
    if data.size == 0:
        raise ValueError(f"{path}: zero-length audio")
    if data.ndim == 2:
        if not downmix:
            raise ValueError(f"{path}: {data.shape[1]} channels; pass downmix=True to average")
        data = data.mean(axis=1)

    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
        if np.max(np.abs(samples)) > 1.0 + _AMPLITUDE_TOL:
            raise ValueError(f"{path}: float samples outside [-1, 1]")
    else:
        raise ValueError(f"{path}: unsupported sample format {data.dtype}")
    return AudioClip(id=path.stem, samples=samples, sample_rate=int(rate))


def write_wav(path: str | Path, clip: AudioClip) -> None:
    """Write a clip as 16-bit PCM with the same scale load_wav divides by,
    so already-quantized samples round-trip to identical bytes."""
    scaled = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype(np.int16)
    scipy.io.wavfile.write(Path(path), clip.sample_rate, scaled)


def quantize16(samples: np.ndarray) -> np.ndarray:
    """Snap float samples to the 16-bit grid used on disk (int/32768).

    Idempotent, and exactly the write_wav -> load_wav round trip.
    """
    q = np.clip(np.round(samples * 32768.0), -32768, 32767)
    return q / 32768.0


def make_frames(clip: AudioClip, max_frames: int = DEFAULT_MAX_FRAMES) -> FrameGrid:
    """Frame layout for a clip: 10 ms non-overlapping frames, capped at max_frames."""
    if max_frames <= 0:
        raise ValueError("max_frames must be positive")
    frame_len = int(round(FRAME_SECONDS * clip.sample_rate))
    n_full = clip.samples.size // frame_len
    if n_full < 1:
        raise ValueError(
            f"clip {clip.id!r}: too short for one {frame_len}-sample frame "
            f"({clip.samples.size} samples)"
        )
    return FrameGrid(frame_len=frame_len, hop=frame_len, n_frames=min(n_full, max_frames))


def _frame_view(clip: AudioClip, grid: FrameGrid) -> np.ndarray:
    n = grid.n_frames * grid.frame_len
    return clip.samples[:n].reshape(grid.n_frames, grid.frame_len)


def _linear_filterbank(n_filters: int, nfft: int, sample_rate: int) -> np.ndarray:
    """Triangular filters with peaks spaced linearly over [0, Nyquist]."""
    freqs = np.fft.rfftfreq(nfft, d=1.0 / sample_rate)
    edges = np.linspace(0.0, sample_rate / 2.0, n_filters + 2)
    fb = np.zeros((n_filters, freqs.size))
    for m in range(n_filters):
        lo, center, hi = edges[m], edges[m + 1], edges[m + 2]
        rising = (freqs >= lo) & (freqs <= center)
        falling = (freqs > center) & (freqs <= hi)
        fb[m, rising] = (freqs[rising] - lo) / (center - lo)
        fb[m, falling] = (hi - freqs[falling]) / (hi - center)
    return fb


def lfcc(
    clip: AudioClip,
    grid: FrameGrid,
    n_filters: int = DEFAULT_N_FILTERS,
    n_coeffs: int = DEFAULT_N_COEFFS,
    eps_log: float = LOG_FLOOR,
) -> FeatureMatrix:
    """Linear-frequency cepstra, one row per frame.

    All-zero frames hit the log floor in every band and produce a constant
    log-energy vector, i.e. only coefficient 0 is nonzero.
    """
    if n_coeffs < 1 or n_coeffs > n_filters:
        raise ValueError(f"n_coeffs must be in [1, n_filters={n_filters}]")
    frames = _frame_view(clip, grid)
    window = np.hanning(grid.frame_len)
    nfft = 1 << (grid.frame_len - 1).bit_length()
    spectrum = np.abs(np.fft.rfft(frames * window, n=nfft, axis=1)) ** 2
    fb = _linear_filterbank(n_filters, nfft, clip.sample_rate)
    energies = spectrum @ fb.T
    log_e = np.log(np.maximum(energies, eps_log))
    coeffs = scipy.fft.dct(log_e, type=2, norm="ortho", axis=1)[:, :n_coeffs]
    return FeatureMatrix(clip_id=clip.id, values=np.ascontiguousarray(coeffs))


def append_deltas(fm: FeatureMatrix, order: int = 1) -> FeatureMatrix:
    """Append delta (and with order=2 delta-delta) columns. Off by default upstream."""
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    blocks = [fm.values]
    current = fm.values
    for _ in range(order):
        current = np.gradient(current, axis=0) if current.shape[0] > 1 else np.zeros_like(current)
        blocks.append(current)
    return FeatureMatrix(clip_id=fm.clip_id, values=np.hstack(blocks))


def frame_energy(clip: AudioClip, grid: FrameGrid) -> np.ndarray:
    """Per-frame energy: sum of squared samples (no window)."""
    frames = _frame_view(clip, grid)
    return np.sum(frames * frames, axis=1)


def delta_energy(energy: np.ndarray) -> np.ndarray:
    """Absolute first difference of frame energy; output[k] = |E[k+1] - E[k]|."""
    energy = np.asarray(energy, dtype=np.float64)
    if energy.ndim != 1 or energy.size < 2:
        raise ValueError("energy sequence must be 1-D with at least 2 frames")
    return np.abs(np.diff(energy))


def zero_crossing_rate(clip: AudioClip, grid: FrameGrid) -> np.ndarray:
    """Sign changes per frame divided by (frame_len - 1). Zero counts as positive."""
    frames = _frame_view(clip, grid)
    neg = np.signbit(frames)
    changes = neg[:, 1:] != neg[:, :-1]
    return changes.sum(axis=1) / float(grid.frame_len - 1)


# --- feature cache file -------------------------------------------------
#
# Layout (all integers little-endian):
#   magic   4 bytes  b"FLFC"
#   version u32      (currently 1)
#   id_len  u32      then clip id, UTF-8
#   rows    u32
#   cols    u32
#   rate    u32      sample rate of the source clip
#   hash_len u32     then config hash, ASCII
#   data    rows*cols float64, row-major, little-endian

_CACHE_MAGIC = b"FLFC"
_CACHE_VERSION = 1


def write_feature_cache(path: str | Path, fm: FeatureMatrix, sample_rate: int, cfg_hash: str) -> None:
    clip_id = fm.clip_id.encode("utf-8")
    hash_bytes = cfg_hash.encode("ascii")
    header = struct.pack(
        f"<4sII{len(clip_id)}sIIII{len(hash_bytes)}s",
        _CACHE_MAGIC,
        _CACHE_VERSION,
        len(clip_id),
        clip_id,
        fm.rows,
        fm.cols,
        sample_rate,
        len(hash_bytes),
        hash_bytes,
    )
    data = np.ascontiguousarray(fm.values, dtype="<f8").tobytes()
    Path(path).write_bytes(header + data)


def read_feature_cache(path: str | Path) -> tuple[FeatureMatrix, int, str]:
    raw = Path(path).read_bytes()
    magic, version, id_len = struct.unpack_from("<4sII", raw, 0)
    if magic != _CACHE_MAGIC:
        raise ValueError(f"{path}: not a feature cache file")
    if version != _CACHE_VERSION:
        raise ValueError(f"{path}: unsupported cache version {version}")
    off = 12
    clip_id = raw[off : off + id_len].decode("utf-8")
    off += id_len
    rows, cols, rate, hash_len = struct.unpack_from("<IIII", raw, off)
    off += 16
    cfg_hash = raw[off : off + hash_len].decode("ascii")
    off += hash_len
    expected = rows * cols * 8
    if len(raw) - off != expected:
        raise ValueError(f"{path}: truncated cache ({len(raw) - off} of {expected} data bytes)")
    values = np.frombuffer(raw, dtype="<f8", count=rows * cols, offset=off).reshape(rows, cols)
    return FeatureMatrix(clip_id=clip_id, values=values.copy()), rate, cfg_hash
