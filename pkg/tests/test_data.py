"""WAV IO, noise mixing at controlled SNR, manifests, and the toy corpus."""
from __future__ import annotations

import struct

import numpy as np
import pytest

from streamslu.data import (AudioBuffer, Manifest, ToyCorpusSpec,
                            WavFormatError, class_motif, generate_toy_corpus,
                            load_fluent_manifest, load_intent_csv,
                            load_manifest, mix_noise, read_wav,
                            save_manifest, synth_motif_utterance, toy_label,
                            write_wav)
from streamslu.features import SAMPLE_RATE, extract_features


def make_wav_bytes(samples=None, *, riff=b"RIFF", wave=b"WAVE", fmt_code=1,
                   channels=1, rate=16000, bits=16, extra_chunks=b"",
                   data_override=None):
    if samples is None:
        samples = np.arange(-50, 50, dtype=np.int16)
    payload = samples.astype("<i2").tobytes() if data_override is None \
        else data_override
    block = channels * bits // 8
    fmt = struct.pack("<HHIIHH", fmt_code, channels, rate, rate * block,
                      block, bits)
    body = (b"fmt " + struct.pack("<I", len(fmt)) + fmt
            + extra_chunks
            + b"data" + struct.pack("<I", len(payload)) + payload)
    return riff + struct.pack("<I", 4 + len(body)) + wave + body


# ---------------------------------------------------------------------------
# WAV read / write

def test_wav_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    samples = rng.integers(-32768, 32768, size=5000, dtype=np.int16)
    path = tmp_path / "x.wav"
    write_wav(path, AudioBuffer(samples))
    back = read_wav(path)
    assert back.sample_rate == 16000
    assert np.array_equal(back.samples, samples)
    assert path.stat().st_size == 44 + 2 * samples.size


def test_read_rejects_malformed_headers(tmp_path):
    cases = [
        ("notriff", make_wav_bytes(riff=b"RIFX"), "RIFF"),
        ("notwave", make_wav_bytes(wave=b"EVAW"), "WAVE"),
        ("float", make_wav_bytes(fmt_code=3), "format"),
        ("stereo", make_wav_bytes(channels=2), "channels"),
        ("rate", make_wav_bytes(rate=8000), "sample rate"),
        ("bits", make_wav_bytes(bits=8), "bits"),
        ("tiny", b"RIFF\x00\x00", "too small"),
    ]
    for name, blob, needle in cases:
        path = tmp_path / f"{name}.wav"
        path.write_bytes(blob)
        with pytest.raises(WavFormatError, match=needle):
            read_wav(path)


def test_read_rejects_structural_damage(tmp_path):
    good = make_wav_bytes()

    path = tmp_path / "trunc.wav"
    path.write_bytes(good[:-10])  # data chunk shorter than its declared size
    with pytest.raises(WavFormatError, match="truncated"):
        read_wav(path)

    path = tmp_path / "nofmt.wav"
    blob = make_wav_bytes()
    path.write_bytes(blob[:12] + blob[12:].replace(b"fmt ", b"junk", 1))
    with pytest.raises(WavFormatError, match="missing 'fmt '"):
        read_wav(path)

    path = tmp_path / "nodata.wav"
    path.write_bytes(blob[:12] + blob[12:].replace(b"data", b"dodo", 1))
    with pytest.raises(WavFormatError, match="missing 'data'"):
        read_wav(path)

    path = tmp_path / "odd.wav"
    path.write_bytes(make_wav_bytes(data_override=b"\x00\x01\x02"))
    with pytest.raises(WavFormatError, match="odd data chunk"):
        read_wav(path)

    path = tmp_path / "empty.wav"
    path.write_bytes(make_wav_bytes(data_override=b""))
    with pytest.raises(WavFormatError, match="empty data"):
        read_wav(path)


def test_read_skips_unknown_chunks(tmp_path):
    samples = np.arange(100, dtype=np.int16)
    # LIST chunk with odd payload size exercises the word-alignment skip
    extra = b"LIST" + struct.pack("<I", 5) + b"INFOX" + b"\x00"
    path = tmp_path / "chunky.wav"
    path.write_bytes(make_wav_bytes(samples, extra_chunks=extra))
    assert np.array_equal(read_wav(path).samples, samples)


def test_error_messages_name_the_file(tmp_path):
    path = tmp_path / "distinctive-name.wav"
    path.write_bytes(make_wav_bytes(rate=44100))
    with pytest.raises(WavFormatError, match="distinctive-name"):
        read_wav(path)


# ---------------------------------------------------------------------------
# noise mixing

def realized_snr_db(clean: np.ndarray, mixed: np.ndarray) -> float:
    diff = mixed.astype(np.float64) - clean.astype(np.float64)
    p_clean = np.mean(clean.astype(np.float64) ** 2)
    return 10.0 * np.log10(p_clean / np.mean(diff * diff))


@pytest.mark.parametrize("snr_db", [0.0, 5.0, 10.0, 20.0])
def test_mix_noise_hits_requested_snr(snr_db):
    rng = np.random.default_rng(1)
    # moderate amplitudes so clipping and rounding stay negligible
    clean = AudioBuffer((3000 * np.sin(2 * np.pi * 440 / 16000
                                       * np.arange(32000))).astype(np.int16))
    noise = AudioBuffer((rng.normal(0, 2000, 48000)).astype(np.int16))
    mixed = mix_noise(clean, noise, snr_db)
    assert abs(realized_snr_db(clean.samples, mixed.samples) - snr_db) < 0.01


def test_mix_noise_loops_short_noise():
    clean = AudioBuffer((2000 * np.ones(10000)).astype(np.int16))
    noise = AudioBuffer(np.random.default_rng(2)
                        .integers(-500, 500, 700).astype(np.int16))
    mixed = mix_noise(clean, noise, 10.0)
    assert mixed.samples.size == 10000
    assert abs(realized_snr_db(clean.samples, mixed.samples) - 10.0) < 0.01


def test_mix_noise_inf_is_identity_copy():
    clean = AudioBuffer(np.arange(100, dtype=np.int16))
    noise = AudioBuffer(np.ones(100, dtype=np.int16))
    out = mix_noise(clean, noise, np.inf)
    assert np.array_equal(out.samples, clean.samples)
    assert out.samples is not clean.samples


def test_mix_noise_zero_power_errors():
    silence = AudioBuffer(np.zeros(100, dtype=np.int16))
    tone = AudioBuffer((1000 * np.ones(100)).astype(np.int16))
    with pytest.raises(ValueError, match="clean"):
        mix_noise(silence, tone, 10.0)
    with pytest.raises(ValueError, match="noise"):
        mix_noise(tone, silence, 10.0)


# ---------------------------------------------------------------------------
# manifests

def test_manifest_vocabulary_and_ids():
    m = Manifest(["a.wav", "b.wav", "c.wav"], ["stop", "go", "stop"])
    assert m.vocabulary == ["go", "stop"]
    assert m.num_classes == 2
    assert m.label_ids().tolist() == [1, 0, 1]
    assert len(m) == 3


def test_manifest_validation():
    with pytest.raises(ValueError, match="differ in length"):
        Manifest(["a.wav"], ["x", "y"])
    with pytest.raises(ValueError, match="missing from the vocabulary"):
        Manifest(["a.wav"], ["x"], vocabulary=["y", "z"])


def test_manifest_csv_roundtrip(tmp_path):
    csv_path = tmp_path / "split.csv"
    save_manifest(csv_path, ["wav/a.wav", "wav/b.wav"], ["go", "stop"])
    m = load_manifest(csv_path)
    assert m.labels == ["go", "stop"]
    assert m.paths == [str(tmp_path / "wav" / "a.wav"),
                       str(tmp_path / "wav" / "b.wav")]
    # an imposed vocabulary overrides the sorted-unique default
    m2 = load_manifest(csv_path, vocabulary=["stop", "go", "left"])
    assert m2.label_ids().tolist() == [1, 0]


def test_load_manifest_rejects_bad_csv(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("file,label\nx.wav,go\n")
    with pytest.raises(ValueError, match="'path' and 'intent'"):
        load_manifest(bad)
    empty = tmp_path / "empty.csv"
    empty.write_text("path,intent\n")
    with pytest.raises(ValueError, match="no rows"):
        load_manifest(empty)


def test_load_intent_csv_composes_triple_labels(tmp_path):
    data_dir = tmp_path / "data"
    data_dir.mkdir()
    csv_path = data_dir / "train_data.csv"
    csv_path.write_text(
        ",path,speakerId,transcription,action,object,location\n"
        "0,wavs/sp1/a.wav,sp1,turn on the lights,activate,lights,none\n"
        "1,wavs/sp2/b.wav,sp2,heat up the kitchen,increase,heat,kitchen\n")
    m = load_intent_csv(csv_path)
    assert m.labels == ["activate|lights|none", "increase|heat|kitchen"]
    # paths resolve against the CSV's grandparent by default
    assert m.paths[0] == str(tmp_path / "wavs" / "sp1" / "a.wav")
    m2 = load_intent_csv(csv_path, root=tmp_path / "elsewhere")
    assert m2.paths[0] == str(tmp_path / "elsewhere" / "wavs" / "sp1" / "a.wav")


def test_load_intent_csv_requires_columns(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("path,action,object\nx.wav,a,b\n")
    with pytest.raises(ValueError, match="location"):
        load_intent_csv(bad)


def test_fluent_loader_is_intent_csv_alias(tmp_path):
    csv_path = tmp_path / "valid_data.csv"
    csv_path.write_text("path,action,object,location\nwavs/x.wav,a,b,c\n")
    a = load_fluent_manifest(csv_path)
    b = load_intent_csv(csv_path)
    assert (a.paths, a.labels, a.vocabulary) == (b.paths, b.labels, b.vocabulary)


# ---------------------------------------------------------------------------
# toy corpus

def test_motifs_differ_in_every_tone():
    motifs = [class_motif(c) for c in range(8)]
    for i in range(8):
        assert motifs[i].shape == (3,)
        assert np.all(motifs[i] >= 300.0) and np.all(motifs[i] <= 3500.0)
        for j in range(i):
            assert np.all(motifs[i] != motifs[j])


def test_utterance_synthesis_is_deterministic():
    a = synth_motif_utterance(2, 1.0, 0.3, np.random.default_rng([0, 2, 5]))
    b = synth_motif_utterance(2, 1.0, 0.3, np.random.default_rng([0, 2, 5]))
    assert np.array_equal(a.samples, b.samples)
    assert a.samples.size == 16000
    # tones dominate the noise floor
    assert np.max(np.abs(a.samples)) > 0.25 * 32767


def test_corpus_layout_counts_and_split(tmp_path):
    spec = ToyCorpusSpec(num_classes=4, samples_per_class=6, seed=3,
                         duration_range=(0.8, 1.2))
    manifests = generate_toy_corpus(spec, tmp_path / "c")
    assert set(manifests) == {"train", "val", "test"}
    splits = {name: load_manifest(path) for name, path in manifests.items()}
    # 24 files: 70/15/15 split with integer truncation
    assert (len(splits["train"]), len(splits["val"]), len(splits["test"])) \
        == (16, 3, 5)
    all_paths = [p for s in splits.values() for p in s.paths]
    assert len(set(all_paths)) == 24
    counts = {}
    for s in splits.values():
        for label in s.labels:
            counts[label] = counts.get(label, 0) + 1
    assert counts == {toy_label(c): 6 for c in range(4)}
    for p in all_paths:
        audio = read_wav(p)
        assert 0.8 <= audio.duration_seconds <= 1.2 + 1e-6


def test_corpus_regeneration_is_bit_identical(tmp_path):
    spec = ToyCorpusSpec(num_classes=2, samples_per_class=4, seed=9,
                         duration_range=(0.8, 1.0))
    m1 = generate_toy_corpus(spec, tmp_path / "one")
    m2 = generate_toy_corpus(spec, tmp_path / "two")
    for split in ("train", "val", "test"):
        assert m1[split].read_text() == m2[split].read_text()
        for p1, p2 in zip(load_manifest(m1[split]).paths,
                          load_manifest(m2[split]).paths):
            assert open(p1, "rb").read() == open(p2, "rb").read()


def test_corpus_spec_validation():
    with pytest.raises(ValueError, match="num_classes"):
        ToyCorpusSpec(num_classes=9)
    with pytest.raises(ValueError, match="durations"):
        ToyCorpusSpec(duration_range=(0.3, 1.0))
    with pytest.raises(ValueError, match="durations"):
        ToyCorpusSpec(duration_range=(2.0, 1.0))


def test_classes_separable_with_nearest_centroid(mini_corpus):
    """Mean utterance features should cluster by class strongly enough that
    a nearest-centroid rule beats 75% on held-out files."""
    vocab = [toy_label(c) for c in range(4)]  # align ids across splits
    splits = {name: load_manifest(path, vocabulary=vocab)
              for name, path in mini_corpus.items()}

    def mean_feats(manifest):
        # time-averaged log-mel, centered across dims so the per-utterance
        # amplitude offset cancels and the motif's filter triple dominates
        rows = np.stack([extract_features(read_wav(p)).mean(axis=0)
                         for p in manifest.paths])
        return rows - rows.mean(axis=1, keepdims=True)

    train_x = mean_feats(splits["train"])
    train_y = splits["train"].label_ids()
    test_x = mean_feats(splits["test"])
    test_y = splits["test"].label_ids()
    centroids = np.stack([train_x[train_y == c].mean(axis=0)
                          for c in range(splits["train"].num_classes)])
    dists = ((test_x[:, None, :] - centroids[None]) ** 2).sum(axis=2)
    accuracy = np.mean(dists.argmin(axis=1) == test_y)
    assert accuracy >= 0.75
