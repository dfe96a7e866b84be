"""Full-signal training with masked pooling over padded batches.

Variable-length utterances are length-bucketed into padded batches; each
sample carries its true frame count so batch-norm statistics and the global
max pool only ever see real frames. Appending padding to a sample therefore
changes neither its loss nor its gradients. Optimization is Adam with early
stopping on validation loss.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import layers
from .model import (ModelWeights, _head_backward, _head_forward,
                    _stack_backward, _stack_forward, receptive_field)
from .validation import as_feature_list, as_label_array


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 30
    early_stop_patience: int = 10
    seed: int = 0
    cmvn_mode: str = "global"  # frontend policy, applied by the caller
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    bn_momentum: float = 0.9


@dataclass
class Batch:
    """Zero-padded feature batch with per-sample valid frame counts."""

    features: np.ndarray  # (B, T_max, feat_dim)
    valid: np.ndarray     # (B,)
    labels: np.ndarray    # (B,)


def pad_batch(feats_list, labels) -> Batch:
    t_max = max(f.shape[0] for f in feats_list)
    dim = feats_list[0].shape[1]
    out = np.zeros((len(feats_list), t_max, dim), dtype=np.float32)
    valid = np.empty(len(feats_list), dtype=np.int64)
    for i, f in enumerate(feats_list):
        out[i, :f.shape[0]] = f
        valid[i] = f.shape[0]
    return Batch(out, valid, np.asarray(labels, dtype=np.int64))


def make_batches(feats_list, labels, batch_size: int,
                 rng: np.random.Generator | None = None) -> list[Batch]:
    """Length-bucketed batches; batch order is shuffled when rng is given."""
    labels = as_label_array(labels, len(feats_list))
    order = np.argsort([f.shape[0] for f in feats_list], kind="stable")
    chunks = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    if rng is not None:
        rng.shuffle(chunks)
    return [pad_batch([feats_list[i] for i in chunk], labels[chunk])
            for chunk in chunks]


def loss_and_grad(batch: Batch, weights: ModelWeights):
    """Mean cross-entropy of a padded batch plus gradients for every
    learnable tensor.

    Returns (loss, grads, bn_updates) where grads maps tensor names to
    arrays and bn_updates carries the batch statistics each batch-norm layer
    saw, for the running-stat update.
    """
    rf = receptive_field(weights.specs)
    if int(batch.valid.min()) < rf:
        raise ValueError(
            f"batch contains a sample shorter than the receptive field ({rf} frames)")
    x = batch.features.astype(weights.dtype, copy=False)[:, :, :, None]
    _, pooled, stack_caches, bn_updates = _stack_forward(
        x, weights, batch.valid, training=True, want_cache=True)
    logits, head_caches, head_bn = _head_forward(
        pooled, weights, training=True, want_cache=True)
    bn_updates = bn_updates + head_bn
    loss, d_logits = layers.softmax_cross_entropy(logits, batch.labels)
    d_pooled, grads = _head_backward(d_logits, head_caches, weights)
    grads.update(_stack_backward(d_pooled, stack_caches, weights))
    return loss, grads, bn_updates


def update_running_stats(bn_updates, momentum: float) -> None:
    for bn, batch_mean, batch_var in bn_updates:
        bn.running_mean = (momentum * bn.running_mean
                           + (1.0 - momentum) * batch_mean).astype(bn.running_mean.dtype)
        bn.running_var = (momentum * bn.running_var
                          + (1.0 - momentum) * batch_var).astype(bn.running_var.dtype)


class Adam:
    """Adam over the model's learnable tensors, updated in place."""

    def __init__(self, weights: ModelWeights, cfg: TrainConfig):
        self.cfg = cfg
        self.step_count = 0
        self.m = {name: np.zeros_like(arr) for name, arr in weights.learnable_tensors()}
        self.v = {name: np.zeros_like(arr) for name, arr in weights.learnable_tensors()}

    def step(self, weights: ModelWeights, grads: dict) -> None:
        cfg = self.cfg
        self.step_count += 1
        t = self.step_count
        correction1 = 1.0 - cfg.adam_beta1 ** t
        correction2 = 1.0 - cfg.adam_beta2 ** t
        for name, arr in weights.learnable_tensors():
            g = grads[name].astype(arr.dtype, copy=False)
            m = self.m[name]
            v = self.v[name]
            m *= cfg.adam_beta1
            m += (1.0 - cfg.adam_beta1) * g
            v *= cfg.adam_beta2
            v += (1.0 - cfg.adam_beta2) * (g * g)
            update = (cfg.learning_rate * (m / correction1)
                      / (np.sqrt(v / correction2) + cfg.adam_eps))
            arr -= update.astype(arr.dtype, copy=False)


def predict_logits(feats_list, weights: ModelWeights, batch_size: int = 32) -> np.ndarray:
    """Inference-mode logits for a list of utterances (frozen BN stats)."""
    feats_list = as_feature_list(feats_list, weights.feat_dim)
    out = np.empty((len(feats_list), weights.num_intents), dtype=np.float64)
    order = np.argsort([f.shape[0] for f in feats_list], kind="stable")
    for i in range(0, len(order), batch_size):
        chunk = order[i:i + batch_size]
        batch = pad_batch([feats_list[j] for j in chunk], np.zeros(len(chunk)))
        x = batch.features.astype(weights.dtype, copy=False)[:, :, :, None]
        _, pooled, _, _ = _stack_forward(x, weights, batch.valid, training=False)
        logits, _, _ = _head_forward(pooled, weights, training=False)
        out[chunk] = logits
    return out


def evaluate(feats_list, labels, weights: ModelWeights, batch_size: int = 32):
    """Mean cross-entropy and error rate on held-out data."""
    labels = as_label_array(labels, len(feats_list)).astype(np.int64)
    logits = predict_logits(feats_list, weights, batch_size)
    log_p = layers.log_softmax(logits)
    loss = float(-log_p[np.arange(len(labels)), labels].mean())
    error_rate = float(np.mean(logits.argmax(axis=1) != labels))
    return loss, error_rate


@dataclass
class TrainResult:
    weights: ModelWeights          # best-validation-loss snapshot
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0

    def history_csv(self) -> str:
        lines = ["epoch,train_loss,val_loss,val_error_rate"]
        for row in self.history:
            lines.append(f"{row['epoch']},{row['train_loss']:.6f},"
                         f"{row['val_loss']:.6f},{row['val_error_rate']:.6f}")
        return "\n".join(lines) + "\n"


def train(weights: ModelWeights, train_feats, train_labels,
          val_feats, val_labels, cfg: TrainConfig = TrainConfig(),
          log=None) -> TrainResult:
    """Fit in place and return the best-validation snapshot plus history.

    Deterministic for a fixed config seed: batch composition, shuffling and
    every update depend only on the seed and the data.
    """
    train_feats = as_feature_list(train_feats, weights.feat_dim)
    val_feats = as_feature_list(val_feats, weights.feat_dim)
    train_labels = as_label_array(train_labels, len(train_feats))
    rng = np.random.default_rng(cfg.seed)
    optimizer = Adam(weights, cfg)
    best_loss = np.inf
    best_weights = weights.copy()
    best_epoch = -1
    since_best = 0
    history = []
    for epoch in range(cfg.max_epochs):
        epoch_losses = []
        for batch in make_batches(train_feats, train_labels, cfg.batch_size, rng):
            loss, grads, bn_updates = loss_and_grad(batch, weights)
            optimizer.step(weights, grads)
            update_running_stats(bn_updates, cfg.bn_momentum)
            epoch_losses.append(loss)
        val_loss, val_error = evaluate(val_feats, val_labels, weights, cfg.batch_size)
        row = {"epoch": epoch, "train_loss": float(np.mean(epoch_losses)),
               "val_loss": val_loss, "val_error_rate": val_error}
        history.append(row)
        if log is not None:
            log(row)
        if val_loss < best_loss:
            best_loss = val_loss
            best_weights = weights.copy()
            best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.early_stop_patience:
                break
    result = TrainResult(best_weights, history, best_epoch)
    result.weights.labels = copy.copy(weights.labels)
    return result
