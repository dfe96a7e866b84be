"""Filterbank frontend: 16 kHz PCM audio to 41-dimensional frame features.

Each frame is 25 ms of audio hopped by 10 ms: the Hamming-windowed frame is
zero-padded to a 512-point FFT, the magnitude spectrum is pushed through 40
triangular mel filters spanning 0-8000 Hz, and the natural log of each filter
output (plus the log frame energy as dimension 41) forms the feature vector.

Also provides cepstral mean/variance normalization (CMVN) in three modes and
the binary stats-file format used to ship global CMVN statistics.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .validation import as_feature_array, as_int16_samples, check_sample_rate

SAMPLE_RATE = 16000
FRAME_LEN = 400           # 25 ms at 16 kHz
FRAME_HOP = 160           # 10 ms
FRAMES_PER_SECOND = 100   # nominal frame rate implied by the 10 ms hop
NUM_FILTERS = 40
FEAT_DIM = 41             # 40 filterbank values + log frame energy
NFFT = 512
FMIN_HZ = 0.0
FMAX_HZ = 8000.0
LOG_FLOOR = 1e-10
CMVN_STD_FLOOR = 1e-8

CMVN_MODES = ("none", "global", "utterance")

_CMVN_MAGIC = b"CMVN"
_CMVN_VERSION = 1


@dataclass(frozen=True)
class AudioBuffer:
    """A mono utterance: int16 PCM samples at 16 kHz."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        object.__setattr__(self, "samples", as_int16_samples(self.samples))
        object.__setattr__(self, "sample_rate", check_sample_rate(self.sample_rate))

    @property
    def duration_seconds(self) -> float:
        return self.samples.size / self.sample_rate

    def __len__(self) -> int:
        return self.samples.size


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=None)
def _filter_edges(num_filters: int, fmin: float, fmax: float) -> np.ndarray:
    # num_filters + 2 edge frequencies, evenly spaced on the mel scale
    mel_edges = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), num_filters + 2)
    return mel_to_hz(mel_edges)


def mel_filter_centers(num_filters: int = NUM_FILTERS,
                       fmin: float = FMIN_HZ, fmax: float = FMAX_HZ) -> np.ndarray:
    """Center frequency in Hz of each triangular filter."""
    return _filter_edges(num_filters, fmin, fmax)[1:-1].copy()


@lru_cache(maxsize=None)
def mel_filterbank(num_filters: int = NUM_FILTERS, nfft: int = NFFT,
                   sample_rate: int = SAMPLE_RATE,
                   fmin: float = FMIN_HZ, fmax: float = FMAX_HZ) -> np.ndarray:
    """Triangular filter matrix of shape (num_filters, nfft // 2 + 1).

    Filter j rises linearly from edge j to edge j+1 and falls to edge j+2,
    evaluated at the FFT bin frequencies.
    """
    edges = _filter_edges(num_filters, fmin, fmax)
    bin_hz = np.arange(nfft // 2 + 1, dtype=np.float64) * (sample_rate / nfft)
    left = edges[:-2, None]
    center = edges[1:-1, None]
    right = edges[2:, None]
    rising = (bin_hz[None, :] - left) / (center - left)
    falling = (right - bin_hz[None, :]) / (right - center)
    weights = np.maximum(0.0, np.minimum(rising, falling))
    weights.flags.writeable = False
    return weights


def frame_count(num_samples: int) -> int:
    """Number of whole 400-sample frames at a 160-sample hop."""
    if num_samples < FRAME_LEN:
        raise ValueError(
            f"audio too short for one frame: {num_samples} samples < {FRAME_LEN}")
    return 1 + (num_samples - FRAME_LEN) // FRAME_HOP


def extract_features(audio: AudioBuffer) -> np.ndarray:
    """Compute the (num_frames, 41) feature array for one utterance.

    Returns float64 features: columns 0..39 are log filterbank values,
    column 40 is the log energy of the windowed frame.
    """
    if not isinstance(audio, AudioBuffer):
        audio = AudioBuffer(audio)
    x = audio.samples.astype(np.float64) / 32768.0
    n_frames = frame_count(x.size)
    frames = np.lib.stride_tricks.sliding_window_view(x, FRAME_LEN)[::FRAME_HOP]
    assert frames.shape[0] == n_frames
    windowed = frames * np.hamming(FRAME_LEN)
    magnitude = np.abs(np.fft.rfft(windowed, n=NFFT, axis=1))
    filter_out = magnitude @ mel_filterbank().T
    log_fbank = np.log(filter_out + LOG_FLOOR)
    log_energy = np.log(np.sum(windowed * windowed, axis=1) + LOG_FLOOR)
    return np.concatenate([log_fbank, log_energy[:, None]], axis=1)


# ---------------------------------------------------------------------------
# CMVN

@dataclass(frozen=True)
class CmvnStats:
    """Per-dimension mean and (floored) standard deviation."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        std = np.asarray(self.std, dtype=np.float64)
        if mean.ndim != 1 or mean.shape != std.shape:
            raise ValueError("mean and std must be 1-D arrays of equal length")
        if np.any(std <= 0) or not np.all(np.isfinite(std)) or not np.all(np.isfinite(mean)):
            raise ValueError("CMVN stats must be finite with std > 0")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def compute_global_cmvn(corpus) -> CmvnStats:
    """Pool mean/std per dimension over every frame of every utterance.

    The std is population std (ddof=0), floored at 1e-8 so constant
    dimensions stay usable.
    """
    total = 0
    acc = None
    acc_sq = None
    for feats in corpus:
        feats = as_feature_array(feats)
        if acc is None:
            acc = np.zeros(feats.shape[1], dtype=np.float64)
            acc_sq = np.zeros(feats.shape[1], dtype=np.float64)
        elif feats.shape[1] != acc.shape[0]:
            raise ValueError("inconsistent feature dimensions across the corpus")
        acc += feats.sum(axis=0)
        acc_sq += (feats * feats).sum(axis=0)
        total += feats.shape[0]
    if total == 0:
        raise ValueError("empty corpus: no frames to pool")
    mean = acc / total
    var = np.maximum(acc_sq / total - mean * mean, 0.0)
    std = np.maximum(np.sqrt(var), CMVN_STD_FLOOR)
    return CmvnStats(mean, std)


def apply_cmvn(feats, mode: str = "none", stats: CmvnStats | None = None) -> np.ndarray:
    """Normalize a feature array; returns a new array, input untouched.

    mode "none" copies, "global" uses precomputed corpus stats, "utterance"
    normalizes with this utterance's own frame statistics (needs >= 2 frames).
    """
    feats = as_feature_array(feats)
    if mode not in CMVN_MODES:
        raise ValueError(f"unknown CMVN mode {mode!r}, expected one of {CMVN_MODES}")
    if mode == "none":
        return feats.copy()
    if mode == "global":
        if stats is None:
            raise ValueError("global CMVN requires precomputed stats")
        if stats.dim != feats.shape[1]:
            raise ValueError(
                f"stats dimension {stats.dim} does not match features {feats.shape[1]}")
        return (feats - stats.mean) / stats.std
    if feats.shape[0] < 2:
        raise ValueError("utterance CMVN is undefined for a single frame (std of one value)")
    mean = feats.mean(axis=0)
    std = np.maximum(feats.std(axis=0), CMVN_STD_FLOOR)
    return (feats - mean) / std


def save_cmvn_stats(stats: CmvnStats, path) -> None:
    """Write stats as: magic 'CMVN', u32 version, u32 dim, then float64
    means and float64 stds, all little-endian."""
    payload = struct.pack("<4sII", _CMVN_MAGIC, _CMVN_VERSION, stats.dim)
    payload += stats.mean.astype("<f8").tobytes()
    payload += stats.std.astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(payload)


def load_cmvn_stats(path) -> CmvnStats:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12:
        raise ValueError("CMVN stats file truncated: missing header")
    magic, version, dim = struct.unpack_from("<4sII", blob, 0)
    if magic != _CMVN_MAGIC:
        raise ValueError(f"bad magic {magic!r} in CMVN stats file")
    if version != _CMVN_VERSION:
        raise ValueError(f"unsupported CMVN stats version {version}")
    expected = 12 + 2 * 8 * dim
    if len(blob) != expected:
        raise ValueError(
            f"CMVN stats file size {len(blob)} does not match dim {dim} (expected {expected})")
    mean = np.frombuffer(blob, dtype="<f8", count=dim, offset=12)
    std = np.frombuffer(blob, dtype="<f8", count=dim, offset=12 + 8 * dim)
    return CmvnStats(mean.copy(), std.copy())
