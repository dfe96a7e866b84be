"""Segment-by-segment classification with elementwise-max accumulation.

Audio is consumed in overlapping windows: one ends every `step_seconds`,
each covering the last `segment_seconds` of signal (plus a final window
anchored at the stream end so no tail is dropped). Each window runs through
the conv stack as soon as its frames exist; the per-window pooled vectors
are folded with an elementwise max, and the dense head runs once on the
accumulated vector when the stream closes. Because the stack is unpadded
with a fixed time stride of 16 frames, windows whose start offsets are
multiples of 16 produce exactly the output positions the full signal would,
which is what the stride16 alignment mode guarantees.

Latency accounting: beta is the wall-clock compute of a full-signal forward
pass; alpha is the compute that must happen after the final sample arrives,
reconstructed from measured per-segment times on a timeline where frames
arrive at 100 per second and each segment's compute starts as soon as both
its frames and the previous segment's compute are done.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .features import FRAMES_PER_SECOND
from .model import (ModelWeights, UtteranceTooShortError, conv_stack_forward,
                    head_forward, receptive_field, time_stride)
from .validation import as_feature_array

ALIGNMENTS = ("free", "stride16")


@dataclass(frozen=True)
class StreamConfig:
    """Segmentation policy: window length S, hop T, start alignment."""

    segment_seconds: float = 1.0
    step_seconds: float = 0.25
    alignment: str = "free"

    def __post_init__(self):
        if self.alignment not in ALIGNMENTS:
            raise ValueError(f"alignment must be one of {ALIGNMENTS}")
        if not self.step_seconds > 0:
            raise ValueError("step_seconds must be positive")
        if self.segment_frames < 61:
            raise ValueError(
                "segment_seconds must cover at least 61 frames (0.61 s), "
                f"got {self.segment_seconds}")

    @property
    def segment_frames(self) -> int:
        return round(self.segment_seconds * FRAMES_PER_SECOND)

    @property
    def step_frames(self) -> int:
        return max(1, round(self.step_seconds * FRAMES_PER_SECOND))


def _align_start(start: int, alignment: str, stride: int = 16) -> int:
    if alignment == "stride16":
        return (start // stride) * stride
    return start


def segment_stream(frames, cfg: StreamConfig) -> list[tuple[int, int]]:
    """Enumerate the (start, end) frame windows for a whole stream.

    Accepts a frame count or a feature array. Windows end at S, S+T, S+2T,
    ... plus a final window at the stream end; each covers the last S seconds
    (rounded down to a multiple of 16 frames under stride16 alignment).
    """
    if isinstance(frames, (int, np.integer)):
        num_frames = int(frames)
    else:
        num_frames = as_feature_array(frames).shape[0]
    if num_frames < 61:
        raise UtteranceTooShortError(
            f"stream has {num_frames} frames, need at least 61")
    seg = cfg.segment_frames
    step = cfg.step_frames
    ends = []
    e = seg
    while e < num_frames:
        ends.append(e)
        e += step
    ends.append(num_frames)
    windows = []
    for e in ends:
        start = _align_start(max(0, e - seg), cfg.alignment)
        windows.append((start, e))
    return windows


class MaxAccumulator:
    """Elementwise running max over pooled vectors (identity is -inf)."""

    def __init__(self, dim: int, dtype=np.float32):
        self.running = np.full(dim, -np.inf, dtype=dtype)
        self.segments_seen = 0

    def add(self, pooled: np.ndarray) -> "MaxAccumulator":
        pooled = np.asarray(pooled)
        if pooled.shape != self.running.shape:
            raise ValueError(
                f"pooled vector has shape {pooled.shape}, expected {self.running.shape}")
        np.maximum(self.running, pooled, out=self.running)
        self.segments_seen += 1
        return self


@dataclass
class LatencyReport:
    """Wall-clock accounting for one classification.

    beta_seconds: full-signal compute (conv stack + head on all frames).
    alpha_seconds: compute remaining after the last frame arrives, on a
    timeline where earlier segments overlap signal reception.
    """

    beta_seconds: float
    alpha_seconds: float
    num_segments: int
    per_segment_seconds: list[float] = field(default_factory=list)
    head_seconds: float = 0.0

    @property
    def ratio_percent(self) -> float:
        if not self.beta_seconds > 0:
            raise ValueError("ratio undefined: beta must be positive")
        return 100.0 * self.alpha_seconds / self.beta_seconds

    def to_dict(self) -> dict:
        return {
            "beta_seconds": self.beta_seconds,
            "alpha_seconds": self.alpha_seconds,
            "ratio_percent": self.ratio_percent,
            "num_segments": self.num_segments,
            "per_segment_seconds": list(self.per_segment_seconds),
            "head_seconds": self.head_seconds,
        }


def post_receipt_seconds(window_ends, segment_seconds_spent, total_frames: int,
                         head_seconds: float) -> float:
    """Replay measured segment costs on a real-time arrival timeline.

    Segment i's frames are all present at end_i / 100 s; its compute starts
    at max(arrival, previous finish). The value returned is how far the last
    finish runs past the stream end, plus the head pass.
    """
    t = 0.0
    for end, cost in zip(window_ends, segment_seconds_spent):
        t = max(t, end / FRAMES_PER_SECOND) + cost
    stream_end = total_frames / FRAMES_PER_SECOND
    return max(0.0, t - stream_end) + head_seconds


class StreamingSession:
    """Push-based classification of one stream.

    Frames go in with push() in any chunking (each frame exactly once, in
    order); finish() signals end-of-stream and returns the posterior with a
    LatencyReport. A session is single-use and not thread-safe; producer and
    consumer must hand frames over through their own queue.
    """

    def __init__(self, weights: ModelWeights, cfg: StreamConfig,
                 clock=time.perf_counter):
        self.weights = weights
        self.cfg = cfg
        self.clock = clock
        self._frames: list[np.ndarray] = []
        self._num_frames = 0
        self._next_end = cfg.segment_frames
        self._acc = MaxAccumulator(pooled_dim(weights), dtype=weights.dtype)
        self.windows: list[tuple[int, int]] = []
        self.segment_seconds_spent: list[float] = []
        self._finished = False

    def push(self, frames) -> None:
        if self._finished:
            raise RuntimeError("session already finished")
        arr = np.asarray(frames, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[None, :]
        if arr.ndim != 2 or arr.shape[1] != self.weights.feat_dim:
            raise ValueError(
                f"expected ({self.weights.feat_dim},) frames, got shape {arr.shape}")
        self._frames.append(arr)
        self._num_frames += arr.shape[0]
        while self._num_frames >= self._next_end:
            self._run_window(self._next_end)
            self._next_end += self.cfg.step_frames

    def finish(self):
        """Close the stream: classify the final window, run the head."""
        if self._finished:
            raise RuntimeError("session already finished")
        self._finished = True
        n = self._num_frames
        if n < 61:
            raise UtteranceTooShortError(f"stream ended with {n} frames, need at least 61")
        if not self.windows or self.windows[-1][1] != n:
            self._run_window(n)
        t0 = self.clock()
        posterior = head_forward(self._acc.running, self.weights)
        head_seconds = self.clock() - t0
        alpha = post_receipt_seconds([e for _, e in self.windows],
                                     self.segment_seconds_spent, n, head_seconds)
        report = LatencyReport(beta_seconds=float("nan"), alpha_seconds=alpha,
                               num_segments=self._acc.segments_seen,
                               per_segment_seconds=list(self.segment_seconds_spent),
                               head_seconds=head_seconds)
        return posterior, report

    def _buffer(self) -> np.ndarray:
        if len(self._frames) > 1:
            self._frames = [np.concatenate(self._frames, axis=0)]
        return self._frames[0]

    def _run_window(self, end: int) -> None:
        start = _align_start(max(0, end - self.cfg.segment_frames),
                             self.cfg.alignment, time_stride(self.weights.specs))
        window = self._buffer()[start:end]
        t0 = self.clock()
        pooled = conv_stack_forward(window, self.weights).pooled
        self.segment_seconds_spent.append(self.clock() - t0)
        self._acc.add(pooled)
        self.windows.append((start, end))


def pooled_dim(weights: ModelWeights) -> int:
    """Channel count of the accumulated vector (the last conv's width)."""
    last = None
    for spec in weights.specs:
        if spec.kind == "conv2d":
            last = spec.out_channels
        elif spec.kind == "global_max_pool":
            return last
    raise ValueError("model has no global max pool layer")


def full_classify(feats, weights: ModelWeights):
    """One unsegmented forward pass; returns (posterior, compute seconds)."""
    feats = as_feature_array(feats, weights.feat_dim)
    t0 = time.perf_counter()
    pooled = conv_stack_forward(feats, weights).pooled
    posterior = head_forward(pooled, weights)
    return posterior, time.perf_counter() - t0


def stream_classify(feats, cfg: StreamConfig, weights: ModelWeights,
                    measure_beta: bool = True):
    """Segment-by-segment classification of pre-extracted frames.

    Returns (posterior, LatencyReport). The report's beta comes from an extra
    full-signal reference pass unless measure_beta is False (beta then stays
    NaN and the ratio is unavailable).
    """
    feats = as_feature_array(feats, weights.feat_dim)
    session = StreamingSession(weights, cfg)
    session.push(feats)
    posterior, report = session.finish()
    if measure_beta:
        _, beta = full_classify(feats, weights)
        report.beta_seconds = beta
    return posterior, report


def measure_latency(feats, weights: ModelWeights, cfg: StreamConfig,
                    repeats: int = 3):
    """Median-of-repeats latency for the model alone (no feature extraction).

    Returns (LatencyReport, realtime_ok) where realtime_ok says every median
    per-segment compute fit inside one segment of audio, the regime in which
    comparing alpha against beta is meaningful.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    feats = as_feature_array(feats, weights.feat_dim)
    betas = []
    runs = []
    for _ in range(repeats):
        _, beta = full_classify(feats, weights)
        betas.append(beta)
        _, report = stream_classify(feats, cfg, weights, measure_beta=False)
        runs.append(report)
    per_segment = np.median([r.per_segment_seconds for r in runs], axis=0)
    head = float(np.median([r.head_seconds for r in runs]))
    windows = segment_stream(feats.shape[0], cfg)
    alpha = post_receipt_seconds([e for _, e in windows], per_segment,
                                 feats.shape[0], head)
    report = LatencyReport(beta_seconds=float(np.median(betas)),
                           alpha_seconds=alpha,
                           num_segments=len(windows),
                           per_segment_seconds=[float(v) for v in per_segment],
                           head_seconds=head)
    realtime_ok = bool(np.max(per_segment) < cfg.segment_seconds)
    return report, realtime_ok
