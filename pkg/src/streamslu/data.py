"""Audio file I/O, noise mixing, manifests, and the synthetic tone corpus.

The WAV reader is a deliberate strict subset of RIFF: PCM, 16-bit, mono,
16 kHz. Anything else fails loudly with the offending header field named,
because silently resampling or downmixing would invalidate every feature
downstream.
"""
from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import AudioBuffer, SAMPLE_RATE


class WavFormatError(ValueError):
    """A WAV file that is not PCM16 mono 16 kHz, with the bad field named."""


def read_wav(path) -> AudioBuffer:
    """Parse a RIFF/WAVE file, accepting only PCM 16-bit mono 16 kHz."""
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 12:
        raise WavFormatError(f"{path}: too small to hold a RIFF header")
    riff, _size, wave = struct.unpack_from("<4sI4s", blob, 0)
    if riff != b"RIFF":
        raise WavFormatError(f"{path}: chunk id {riff!r} is not 'RIFF'")
    if wave != b"WAVE":
        raise WavFormatError(f"{path}: RIFF form type {wave!r} is not 'WAVE'")
    fmt = None
    data = None
    offset = 12
    while offset + 8 <= len(blob):
        chunk_id, chunk_size = struct.unpack_from("<4sI", blob, offset)
        body = blob[offset + 8:offset + 8 + chunk_size]
        if len(body) < chunk_size:
            raise WavFormatError(f"{path}: chunk {chunk_id!r} truncated")
        if chunk_id == b"fmt ":
            fmt = body
        elif chunk_id == b"data":
            data = body
        offset += 8 + chunk_size + (chunk_size & 1)  # chunks are word-aligned
    if fmt is None:
        raise WavFormatError(f"{path}: missing 'fmt ' chunk")
    if data is None:
        raise WavFormatError(f"{path}: missing 'data' chunk")
    if len(fmt) < 16:
        raise WavFormatError(f"{path}: 'fmt ' chunk is {len(fmt)} bytes, need 16")
    audio_format, channels, rate, _byte_rate, _align, bits = struct.unpack_from(
        "<HHIIHH", fmt, 0)
    if audio_format != 1:
        raise WavFormatError(
            f"{path}: audio format tag {audio_format} is not PCM (1)")
    if channels != 1:
        raise WavFormatError(f"{path}: {channels} channels, only mono supported")
    if rate != SAMPLE_RATE:
        raise WavFormatError(f"{path}: sample rate {rate}, expected {SAMPLE_RATE}")
    if bits != 16:
        raise WavFormatError(f"{path}: {bits} bits per sample, expected 16")
    if len(data) % 2:
        raise WavFormatError(f"{path}: odd data chunk size {len(data)}")
    samples = np.frombuffer(data, dtype="<i2")
    if samples.size == 0:
        raise WavFormatError(f"{path}: empty data chunk")
    return AudioBuffer(samples.copy())


def write_wav(path, audio: AudioBuffer) -> None:
    """Write a canonical 44-byte-header PCM16 mono WAV file."""
    payload = audio.samples.astype("<i2").tobytes()
    rate = audio.sample_rate
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE",
        b"fmt ", 16, 1, 1, rate, rate * 2, 2, 16,
        b"data", len(payload))
    Path(path).write_bytes(header + payload)


# ---------------------------------------------------------------------------
# noise mixing

def mix_noise(clean: AudioBuffer, noise: AudioBuffer, snr_db: float) -> AudioBuffer:
    """Add noise scaled so mean-square powers satisfy the requested SNR.

    The noise is looped or truncated to the clean length. snr_db=inf returns
    the clean signal unchanged; the sum is clipped to the int16 range.
    """
    if snr_db == math.inf:
        return AudioBuffer(clean.samples.copy(), clean.sample_rate)
    x = clean.samples.astype(np.float64)
    n = noise.samples.astype(np.float64)
    if n.size < x.size:
        n = np.tile(n, int(np.ceil(x.size / n.size)))
    n = n[:x.size]
    p_clean = np.mean(x * x)
    p_noise = np.mean(n * n)
    if p_clean == 0.0:
        raise ValueError("clean signal has zero power, SNR is undefined")
    if p_noise == 0.0:
        raise ValueError("noise signal has zero power, cannot scale it")
    scale = math.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))
    mixed = np.clip(np.rint(x + scale * n), -32768, 32767).astype(np.int16)
    return AudioBuffer(mixed, clean.sample_rate)


# ---------------------------------------------------------------------------
# manifests

@dataclass
class Manifest:
    """Rows of (audio path, intent label) plus the label vocabulary.

    The vocabulary is the sorted unique label set unless one is imposed, so
    label ids are stable across reloads of the same data.
    """

    paths: list[str]
    labels: list[str]
    vocabulary: list[str] = field(default_factory=list)

    def __post_init__(self):
        if len(self.paths) != len(self.labels):
            raise ValueError("paths and labels differ in length")
        if not self.vocabulary:
            self.vocabulary = sorted(set(self.labels))
        unknown = set(self.labels) - set(self.vocabulary)
        if unknown:
            raise ValueError(f"labels {sorted(unknown)} missing from the vocabulary")

    def __len__(self) -> int:
        return len(self.paths)

    @property
    def num_classes(self) -> int:
        return len(self.vocabulary)

    def label_ids(self) -> np.ndarray:
        index = {label: i for i, label in enumerate(self.vocabulary)}
        return np.array([index[label] for label in self.labels], dtype=np.int64)


def load_manifest(csv_path, vocabulary=None) -> Manifest:
    """Read a `path,intent` CSV; paths resolve relative to the CSV file."""
    csv_path = Path(csv_path)
    root = csv_path.parent
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or \
                not {"path", "intent"} <= set(reader.fieldnames):
            raise ValueError(
                f"{csv_path}: manifest needs a header with 'path' and 'intent' columns")
        paths = []
        labels = []
        for row in reader:
            paths.append(str((root / row["path"]).resolve()))
            labels.append(row["intent"])
    if not paths:
        raise ValueError(f"{csv_path}: manifest has no rows")
    return Manifest(paths, labels, list(vocabulary) if vocabulary else [])


def save_manifest(csv_path, rel_paths, labels) -> None:
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "intent"])
        for p, label in zip(rel_paths, labels):
            writer.writerow([p, label])


def load_intent_csv(csv_path, vocabulary=None, root=None) -> Manifest:
    """Read a spoken-command CSV with action/object/location columns.

    The intent label is the composed triple "action|object|location". Audio
    paths resolve against `root` (default: the CSV's grandparent directory,
    matching the usual dataset layout of data/*.csv next to wavs/).
    """
    csv_path = Path(csv_path)
    root = Path(root) if root is not None else csv_path.parent.parent
    required = {"path", "action", "object", "location"}
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        have = set(reader.fieldnames or [])
        missing = required - have
        if missing:
            raise ValueError(f"{csv_path}: missing columns {sorted(missing)}")
        paths = []
        labels = []
        for row in reader:
            paths.append(str((root / row["path"]).resolve()))
            labels.append(f"{row['action']}|{row['object']}|{row['location']}")
    if not paths:
        raise ValueError(f"{csv_path}: no rows")
    return Manifest(paths, labels, list(vocabulary) if vocabulary else [])


def load_fluent_manifest(csv_path, vocabulary=None, root=None) -> Manifest:
    """Load a Fluent Speech Commands split CSV (data/*.csv in the release)."""
    return load_intent_csv(csv_path, vocabulary=vocabulary, root=root)


# ---------------------------------------------------------------------------
# synthetic tone-motif corpus

@dataclass(frozen=True)
class ToyCorpusSpec:
    num_classes: int = 8
    samples_per_class: int = 100
    duration_range: tuple[float, float] = (0.8, 2.5)
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.num_classes <= 8:
            raise ValueError("num_classes must be in 1..8 (frequency grid size)")
        lo, hi = self.duration_range
        if not 0.7 <= lo <= hi:
            raise ValueError("durations must be >= 0.7 s and ordered")


_GRID_SIZE = 24
_TONE_SECONDS = 0.25
_RAMP = 80  # 5 ms fade at each tone boundary


def _frequency_grid() -> np.ndarray:
    # 24 log-spaced tones, 300 Hz to ~3.5 kHz
    return 300.0 * (3500.0 / 300.0) ** (np.arange(_GRID_SIZE) / (_GRID_SIZE - 1))


def class_motif(class_id: int) -> np.ndarray:
    """Three tone frequencies for a class, drawn from interleaved thirds of
    the grid so any two classes differ in every tone."""
    grid = _frequency_grid()
    return grid[[class_id, class_id + 8, class_id + 16]]


def synth_motif_utterance(class_id: int, duration_s: float, amplitude: float,
                          rng: np.random.Generator) -> AudioBuffer:
    """One utterance: the class's three tones repeating, over a noise floor."""
    num = int(round(duration_s * SAMPLE_RATE))
    freqs = class_motif(class_id)
    tone_len = int(_TONE_SECONDS * SAMPLE_RATE)
    t = np.arange(num) / SAMPLE_RATE
    x = np.zeros(num)
    pos = 0
    k = 0
    while pos < num:
        end = min(pos + tone_len, num)
        seg = amplitude * np.sin(2 * np.pi * freqs[k % 3] * t[pos:end])
        ramp_len = min(_RAMP, seg.size // 2)
        if ramp_len:
            ramp = np.linspace(0.0, 1.0, ramp_len)
            seg[:ramp_len] *= ramp
            seg[-ramp_len:] *= ramp[::-1]
        x[pos:end] = seg
        pos = end
        k += 1
    x += rng.normal(0.0, amplitude * 0.03, size=num)  # ~30 dB below the tones
    samples = np.clip(np.rint(x * 32767.0), -32768, 32767).astype(np.int16)
    return AudioBuffer(samples)


def toy_label(class_id: int) -> str:
    return f"motif{class_id:02d}"


def generate_toy_corpus(spec: ToyCorpusSpec, out_dir) -> dict[str, Path]:
    """Write WAVs plus train/val/test manifests (70/15/15 seeded split).

    Fully deterministic: each utterance is generated from a generator seeded
    by (corpus seed, class, index), so the same spec always produces
    bit-identical files regardless of generation order.
    """
    out_dir = Path(out_dir)
    wav_dir = out_dir / "wav"
    wav_dir.mkdir(parents=True, exist_ok=True)
    rel_paths = []
    labels = []
    lo, hi = spec.duration_range
    for class_id in range(spec.num_classes):
        for idx in range(spec.samples_per_class):
            rng = np.random.default_rng([spec.seed, class_id, idx])
            duration = rng.uniform(lo, hi)
            amplitude = rng.uniform(0.1, 0.4)
            audio = synth_motif_utterance(class_id, duration, amplitude, rng)
            rel = f"wav/{toy_label(class_id)}_{idx:04d}.wav"
            write_wav(out_dir / rel, audio)
            rel_paths.append(rel)
            labels.append(toy_label(class_id))
    total = len(rel_paths)
    order = np.random.default_rng(spec.seed).permutation(total)
    n_train = int(0.7 * total)
    n_val = int(0.15 * total)
    split_indices = {
        "train": order[:n_train],
        "val": order[n_train:n_train + n_val],
        "test": order[n_train + n_val:],
    }
    manifests = {}
    for split, idx in split_indices.items():
        path = out_dir / f"{split}.csv"
        save_manifest(path, [rel_paths[i] for i in idx], [labels[i] for i in idx])
        manifests[split] = path
    return manifests
