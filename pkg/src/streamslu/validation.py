"""Input validation helpers shared across the package."""
from __future__ import annotations

import numpy as np

SAMPLE_RATE = 16000

_I16_MIN = -32768
_I16_MAX = 32767


def as_int16_samples(samples) -> np.ndarray:
    """Coerce to a 1-D contiguous int16 array, rejecting lossy inputs."""
    arr = np.asarray(samples)
    if arr.ndim != 1:
        raise ValueError(f"samples must be 1-D, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError("samples must be non-empty")
    if arr.dtype != np.int16:
        if not np.issubdtype(arr.dtype, np.integer):
            raise ValueError(f"samples must be int16 PCM, got dtype {arr.dtype}")
        if arr.min() < _I16_MIN or arr.max() > _I16_MAX:
            raise ValueError("integer samples fall outside the int16 range")
        arr = arr.astype(np.int16)
    return np.ascontiguousarray(arr)


def check_sample_rate(sample_rate: int) -> int:
    rate = int(sample_rate)
    if rate != SAMPLE_RATE:
        raise ValueError(f"sample rate must be {SAMPLE_RATE} Hz, got {rate}")
    return rate


def as_feature_array(feats, feat_dim: int | None = None) -> np.ndarray:
    """Validate a (num_frames, feat_dim) float feature array."""
    arr = np.asarray(feats)
    if arr.ndim != 2:
        raise ValueError(f"feature array must be 2-D (frames, dims), got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise ValueError("feature array has no frames")
    if feat_dim is not None and arr.shape[1] != feat_dim:
        raise ValueError(f"expected {feat_dim}-dim frames, got {arr.shape[1]}")
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("feature array contains non-finite values")
    return arr


def as_feature_list(X, feat_dim: int | None = None) -> list[np.ndarray]:
    if isinstance(X, np.ndarray) and X.ndim == 2:
        X = [X]
    out = [as_feature_array(x, feat_dim) for x in X]
    if not out:
        raise ValueError("empty feature collection")
    return out


def as_label_array(y, num_rows: int | None = None) -> np.ndarray:
    arr = np.asarray(y)
    if arr.ndim != 1:
        raise ValueError(f"labels must be 1-D, got shape {arr.shape}")
    if num_rows is not None and arr.shape[0] != num_rows:
        raise ValueError(f"got {arr.shape[0]} labels for {num_rows} samples")
    return arr
