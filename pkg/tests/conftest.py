"""Shared fixtures: models, the synthetic corpus, and one trained network.

The expensive pieces (corpus synthesis, full-size training) are session
scoped so the learnability, evaluation, and CLI checks share one run.
"""
from __future__ import annotations

import time

import numpy as np
import pytest

import streamslu as slu


@pytest.fixture(scope="session")
def paper_weights():
    """The full-size 31-intent network with fresh He-initialized tensors."""
    return slu.build_model(31, seed=0)


@pytest.fixture(scope="session")
def toy8_weights():
    """Full-size conv stack with an 8-class head, untrained."""
    return slu.build_model(8, seed=0)


@pytest.fixture(scope="session")
def tiny_weights():
    # two 8-channel blocks on 9-dim features: same layer algebra, toy cost
    return slu.build_custom_model(4, 9, [(8, 8), (8, 8)], [8], seed=1)


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    """Manifests of the default 8x100 synthetic tone corpus."""
    out = tmp_path_factory.mktemp("toy_corpus")
    return slu.generate_toy_corpus(slu.ToyCorpusSpec(), out)


def load_split(manifest_path, vocabulary=None):
    manifest = slu.load_manifest(manifest_path, vocabulary=vocabulary)
    feats = [slu.extract_features(slu.read_wav(p)) for p in manifest.paths]
    return feats, manifest


@pytest.fixture(scope="session")
def toy_splits(toy_corpus):
    """{split: (feature list, Manifest)} with raw (unnormalized) features.

    All three splits share one vocabulary so label ids line up.
    """
    vocab = [slu.toy_label(c) for c in range(8)]
    return {name: load_split(path, vocab) for name, path in toy_corpus.items()}


@pytest.fixture(scope="session")
def trained_toy(toy_splits):
    """One full training run on the synthetic corpus with global CMVN.

    Returns a dict with the best weights, the CMVN stats, the shared label
    vocabulary, the TrainResult, and the wall-clock seconds spent.
    """
    train_feats, train_manifest = toy_splits["train"]
    val_feats, val_manifest = toy_splits["val"]
    vocab = train_manifest.vocabulary
    stats = slu.compute_global_cmvn(train_feats)
    norm = lambda feats: [slu.apply_cmvn(f, "global", stats) for f in feats]

    weights = slu.build_model(train_manifest.num_classes, seed=0)
    weights.labels = vocab
    cfg = slu.TrainConfig(max_epochs=30, seed=0)
    t0 = time.perf_counter()
    result = slu.train(weights, norm(train_feats), train_manifest.label_ids(),
                       norm(val_feats), val_manifest.label_ids(), cfg)
    elapsed = time.perf_counter() - t0
    return {"weights": result.weights, "stats": stats, "vocab": vocab,
            "result": result, "elapsed_seconds": elapsed}


@pytest.fixture(scope="session")
def mini_corpus(tmp_path_factory):
    """A 4-class, 6-per-class corpus for fast CLI round trips."""
    out = tmp_path_factory.mktemp("mini_corpus")
    spec = slu.ToyCorpusSpec(num_classes=4, samples_per_class=6,
                             duration_range=(0.8, 1.2), seed=7)
    return slu.generate_toy_corpus(spec, out)


def random_features(rng: np.random.Generator, num_frames: int,
                    dim: int = 41) -> np.ndarray:
    return rng.normal(size=(num_frames, dim)).astype(np.float32)
