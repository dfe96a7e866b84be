"""The intent-classification network and its geometry.

The default architecture is a four-block convolutional stack over
(time, freq, channels) feature maps followed by a dense head:

    block  = conv 4xF -> batchnorm -> relu -> maxpool 2x1 -> conv 1x1 -> bn -> relu
    blocks = 128/64, 128/64, 128/64, 256/256 channels (F = 41 in block 1, then 1)
    head   = global max pool over time -> dense 256/196/128 (bn+relu) -> dense softmax

All convolutions are unpadded with stride 1, so the stack shrinks time by a
fixed receptive field (61 frames) and subsamples it by a fixed stride (16),
which is what makes per-segment outputs line up with full-signal outputs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import layers
from .validation import as_feature_array

LAYER_KINDS = ("conv2d", "maxpool", "dense", "global_max_pool", "softmax")
ACTIVATIONS = ("relu", "softmax", "none")

DEFAULT_FEAT_DIM = 41
DEFAULT_BLOCKS = ((128, 64), (128, 64), (128, 64), (256, 256))
DEFAULT_HIDDEN = (256, 196, 128)
DEFAULT_NUM_INTENTS = 31


class UtteranceTooShortError(ValueError):
    """Raised when an input has fewer frames than the receptive field."""


@dataclass(frozen=True)
class LayerSpec:
    """Architecture row: what one layer is, independent of its tensors."""

    kind: str
    kernel_time: int = 0
    kernel_freq: int = 0
    in_channels: int = 0
    out_channels: int = 0
    has_batchnorm: bool = False
    activation: str = "none"

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.kind == "conv2d" and (self.kernel_time < 1 or self.kernel_freq < 1):
            raise ValueError("conv2d layers need positive kernel dims")


@dataclass
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray


@dataclass
class ConvParams:
    kernel: np.ndarray  # (kt, kf, cin, cout)
    bias: np.ndarray    # (cout,)
    bn: BatchNormParams | None = None


@dataclass
class DenseParams:
    weight: np.ndarray  # (din, dout)
    bias: np.ndarray    # (dout,)
    bn: BatchNormParams | None = None


def _bn_tensor_items(prefix: str, bn: BatchNormParams, include_running: bool):
    yield f"{prefix}/bn_gamma", bn.gamma
    yield f"{prefix}/bn_beta", bn.beta
    if include_running:
        yield f"{prefix}/bn_mean", bn.running_mean
        yield f"{prefix}/bn_var", bn.running_var


@dataclass
class ModelWeights:
    """Ordered per-layer tensors matching a LayerSpec list.

    params[i] is None for layers without tensors (pooling rows). labels, when
    present, carries the intent names in output-index order.
    """

    specs: tuple[LayerSpec, ...]
    params: list
    labels: list[str] | None = None

    @property
    def dtype(self):
        for p in self.params:
            if p is not None:
                return p.bias.dtype
        raise ValueError("model has no tensors")

    @property
    def num_intents(self) -> int:
        return self.specs[-1].out_channels

    @property
    def feat_dim(self) -> int:
        for spec in self.specs:
            if spec.kind == "conv2d":
                return spec.kernel_freq
        raise ValueError("model has no conv layers")

    def layer_name(self, index: int) -> str:
        return f"layer{index:02d}"

    def named_tensors(self, include_running: bool = True):
        """Yield (name, array) in a stable serialization order."""
        for i, (spec, p) in enumerate(zip(self.specs, self.params)):
            if p is None:
                continue
            prefix = self.layer_name(i)
            if spec.kind == "conv2d":
                yield f"{prefix}/kernel", p.kernel
                yield f"{prefix}/bias", p.bias
            else:
                yield f"{prefix}/weight", p.weight
                yield f"{prefix}/bias", p.bias
            if p.bn is not None:
                yield from _bn_tensor_items(prefix, p.bn, include_running)

    def learnable_tensors(self):
        return self.named_tensors(include_running=False)

    def _locate(self, name: str):
        prefix, _, leaf = name.partition("/")
        try:
            index = int(prefix.removeprefix("layer"))
        except ValueError:
            raise KeyError(name) from None
        if not 0 <= index < len(self.params) or self.params[index] is None:
            raise KeyError(name)
        p = self.params[index]
        attr_map = {"kernel": (p, "kernel"), "weight": (p, "weight"), "bias": (p, "bias"),
                    "bn_gamma": (p.bn, "gamma"), "bn_beta": (p.bn, "beta"),
                    "bn_mean": (p.bn, "running_mean"), "bn_var": (p.bn, "running_var")}
        if leaf not in attr_map or attr_map[leaf][0] is None:
            raise KeyError(name)
        return attr_map[leaf]

    def get_tensor(self, name: str) -> np.ndarray:
        obj, attr = self._locate(name)
        return getattr(obj, attr)

    def set_tensor(self, name: str, value: np.ndarray) -> None:
        obj, attr = self._locate(name)
        current = getattr(obj, attr)
        value = np.asarray(value, dtype=current.dtype)
        if value.shape != current.shape:
            raise ValueError(f"tensor {name} has shape {current.shape}, got {value.shape}")
        setattr(obj, attr, value)

    def num_learnable_params(self) -> int:
        return sum(arr.size for _, arr in self.learnable_tensors())

    def copy(self) -> "ModelWeights":
        return self.astype(self.dtype)

    def astype(self, dtype) -> "ModelWeights":
        new_params = []
        for p in self.params:
            if p is None:
                new_params.append(None)
                continue
            bn = p.bn and BatchNormParams(*(np.array(a, dtype=dtype) for a in
                                            (p.bn.gamma, p.bn.beta,
                                             p.bn.running_mean, p.bn.running_var)))
            if isinstance(p, ConvParams):
                new_params.append(ConvParams(np.array(p.kernel, dtype=dtype),
                                             np.array(p.bias, dtype=dtype), bn))
            else:
                new_params.append(DenseParams(np.array(p.weight, dtype=dtype),
                                              np.array(p.bias, dtype=dtype), bn))
        labels = list(self.labels) if self.labels is not None else None
        return ModelWeights(self.specs, new_params, labels)


# ---------------------------------------------------------------------------
# architecture assembly

def stack_layer_specs(feat_dim: int, block_channels) -> list[LayerSpec]:
    specs: list[LayerSpec] = []
    cin = 1
    for i, (conv_ch, mix_ch) in enumerate(block_channels):
        kf = feat_dim if i == 0 else 1
        specs.append(LayerSpec("conv2d", 4, kf, cin, conv_ch, True, "relu"))
        specs.append(LayerSpec("maxpool"))
        specs.append(LayerSpec("conv2d", 1, 1, conv_ch, mix_ch, True, "relu"))
        cin = mix_ch
    specs.append(LayerSpec("global_max_pool"))
    return specs


def model_layer_specs(num_intents: int = DEFAULT_NUM_INTENTS,
                      feat_dim: int = DEFAULT_FEAT_DIM,
                      block_channels=DEFAULT_BLOCKS,
                      hidden_dims=DEFAULT_HIDDEN) -> tuple[LayerSpec, ...]:
    specs = stack_layer_specs(feat_dim, block_channels)
    prev = block_channels[-1][1]
    for h in hidden_dims:
        specs.append(LayerSpec("dense", in_channels=prev, out_channels=h,
                               has_batchnorm=True, activation="relu"))
        prev = h
    specs.append(LayerSpec("dense", in_channels=prev, out_channels=num_intents,
                           has_batchnorm=False, activation="softmax"))
    return tuple(specs)


def _init_bn(channels: int, dtype) -> BatchNormParams:
    return BatchNormParams(np.ones(channels, dtype=dtype),
                           np.zeros(channels, dtype=dtype),
                           np.zeros(channels, dtype=dtype),
                           np.ones(channels, dtype=dtype))


def init_weights(specs, seed: int = 0, dtype=np.float32) -> ModelWeights:
    """He-uniform fan-in init for kernels/weights, zero biases, identity BN."""
    rng = np.random.default_rng(seed)
    params = []
    for spec in specs:
        if spec.kind == "conv2d":
            fan_in = spec.kernel_time * spec.kernel_freq * spec.in_channels
            limit = math.sqrt(6.0 / fan_in)
            shape = (spec.kernel_time, spec.kernel_freq, spec.in_channels, spec.out_channels)
            kernel = rng.uniform(-limit, limit, size=shape).astype(dtype)
            bn = _init_bn(spec.out_channels, dtype) if spec.has_batchnorm else None
            params.append(ConvParams(kernel, np.zeros(spec.out_channels, dtype=dtype), bn))
        elif spec.kind == "dense":
            limit = math.sqrt(6.0 / spec.in_channels)
            weight = rng.uniform(-limit, limit,
                                 size=(spec.in_channels, spec.out_channels)).astype(dtype)
            bn = _init_bn(spec.out_channels, dtype) if spec.has_batchnorm else None
            params.append(DenseParams(weight, np.zeros(spec.out_channels, dtype=dtype), bn))
        else:
            params.append(None)
    return ModelWeights(tuple(specs), params)


def build_model(num_intents: int = DEFAULT_NUM_INTENTS, seed: int = 0,
                dtype=np.float32) -> ModelWeights:
    """The default architecture with randomly initialized tensors."""
    return init_weights(model_layer_specs(num_intents), seed=seed, dtype=dtype)


def build_custom_model(num_intents: int, feat_dim: int, block_channels,
                       hidden_dims, seed: int = 0, dtype=np.float32) -> ModelWeights:
    """Same layer kinds as the default model with different sizes (used for
    cheap gradient checking and experiments)."""
    specs = model_layer_specs(num_intents, feat_dim, block_channels, hidden_dims)
    return init_weights(specs, seed=seed, dtype=dtype)


# ---------------------------------------------------------------------------
# geometry

def receptive_field(specs) -> int:
    """Input frames that feed one output position of the conv stack."""
    rf = 1
    stride = 1
    for spec in specs:
        if spec.kind == "conv2d":
            rf += (spec.kernel_time - 1) * stride
        elif spec.kind == "maxpool":
            rf += stride
            stride *= 2
    return rf


def time_stride(specs) -> int:
    """Input frames between adjacent output positions of the conv stack."""
    stride = 1
    for spec in specs:
        if spec.kind == "maxpool":
            stride *= 2
    return stride


_CANONICAL_SPECS = model_layer_specs()
RECEPTIVE_FIELD_FRAMES = receptive_field(_CANONICAL_SPECS)  # 61
TIME_STRIDE_FRAMES = time_stride(_CANONICAL_SPECS)          # 16


def output_length(num_frames: int, specs=None) -> int:
    """Closed-form number of conv-stack output positions for an input length."""
    rf = RECEPTIVE_FIELD_FRAMES if specs is None else receptive_field(specs)
    stride = TIME_STRIDE_FRAMES if specs is None else time_stride(specs)
    if num_frames < rf:
        raise UtteranceTooShortError(
            f"need at least {rf} frames for one output position, got {num_frames}")
    return (num_frames - rf) // stride + 1


# ---------------------------------------------------------------------------
# forward / backward executors

def _stack_indices(specs) -> list[int]:
    out = []
    for i, spec in enumerate(specs):
        out.append(i)
        if spec.kind == "global_max_pool":
            return out
    raise ValueError("model has no global max pool layer")


def _head_indices(specs) -> list[int]:
    start = _stack_indices(specs)[-1] + 1
    return list(range(start, len(specs)))


def _stack_forward(x: np.ndarray, weights: ModelWeights, valid: np.ndarray, *,
                   training: bool, want_maps: bool = False, want_cache: bool = False):
    """Run the conv stack on a padded batch.

    x is (B, T, F, 1); valid holds each sample's true frame count. Returns
    (maps, pooled, caches, bn_updates); maps and caches are empty lists
    unless requested.
    """
    valid = np.asarray(valid, dtype=np.int64)
    maps = []
    caches = []
    bn_updates = []
    for i in _stack_indices(weights.specs):
        spec = weights.specs[i]
        p = weights.params[i]
        name = weights.layer_name(i)
        if spec.kind == "conv2d":
            x_in = x
            y = layers.conv_forward(x_in, p.kernel, p.bias)
            valid = valid - (spec.kernel_time - 1)
            if spec.has_batchnorm:
                if training:
                    mask = np.arange(y.shape[1])[None, :] < valid[:, None]
                    y, (bm, bv), bn_cache = layers.batchnorm_train_forward(
                        y, p.bn.gamma, p.bn.beta, mask)
                    bn_updates.append((p.bn, bm, bv))
                else:
                    y = layers.batchnorm_infer(y, p.bn.gamma, p.bn.beta,
                                               p.bn.running_mean, p.bn.running_var)
                    bn_cache = None
            else:
                bn_cache = None
            pre_act = y
            x = layers.relu(y)
            if want_cache:
                caches.append(("conv2d", x_in, bn_cache, pre_act))
        elif spec.kind == "maxpool":
            in_shape = x.shape
            x, first = layers.maxpool_forward(x)
            valid = valid // 2
            if want_cache:
                caches.append(("maxpool", first, in_shape))
        else:  # global_max_pool
            in_shape = x.shape
            pooled, arg = layers.global_maxpool_forward(x, valid)
            if want_cache:
                caches.append(("global_max_pool", arg, in_shape))
            if want_maps:
                maps.append((f"{name}.{spec.kind}", pooled))
            return maps, pooled, caches, bn_updates
        if want_maps:
            maps.append((f"{name}.{spec.kind}", x))
    raise AssertionError("unreachable")


def _stack_backward(d_pooled: np.ndarray, caches, weights: ModelWeights) -> dict:
    grads: dict[str, np.ndarray] = {}
    indices = _stack_indices(weights.specs)
    d = d_pooled
    for i, cache in zip(reversed(indices), reversed(caches)):
        spec = weights.specs[i]
        p = weights.params[i]
        name = weights.layer_name(i)
        kind = cache[0]
        if kind == "global_max_pool":
            _, arg, in_shape = cache
            d = layers.global_maxpool_backward(d, arg, in_shape)
        elif kind == "maxpool":
            _, first, in_shape = cache
            d = layers.maxpool_backward(d, first, in_shape)
        else:
            _, x_in, bn_cache, pre_act = cache
            d = layers.relu_backward(d, pre_act)
            if bn_cache is not None:
                d, d_gamma, d_beta = layers.batchnorm_train_backward(d, bn_cache)
                grads[f"{name}/bn_gamma"] = d_gamma
                grads[f"{name}/bn_beta"] = d_beta
            d, d_kernel, d_bias = layers.conv_backward(
                d, x_in, p.kernel, need_dx=i != indices[0])
            grads[f"{name}/kernel"] = d_kernel
            grads[f"{name}/bias"] = d_bias
    return grads


def _head_forward(pooled: np.ndarray, weights: ModelWeights, *,
                  training: bool, want_cache: bool = False):
    """Run the dense head on (B, C) pooled vectors; returns pre-softmax logits."""
    x = pooled
    caches = []
    bn_updates = []
    for i in _head_indices(weights.specs):
        spec = weights.specs[i]
        p = weights.params[i]
        if spec.kind == "softmax":
            x = layers.softmax(x)
            continue
        x_in = x
        y = layers.dense_forward(x_in, p.weight, p.bias)
        if spec.has_batchnorm:
            if training:
                y, (bm, bv), bn_cache = layers.batchnorm_train_forward(
                    y, p.bn.gamma, p.bn.beta)
                bn_updates.append((p.bn, bm, bv))
            else:
                y = layers.batchnorm_infer(y, p.bn.gamma, p.bn.beta,
                                           p.bn.running_mean, p.bn.running_var)
                bn_cache = None
        else:
            bn_cache = None
        pre_act = y
        x = layers.relu(y) if spec.activation == "relu" else y
        if want_cache:
            caches.append((x_in, bn_cache, pre_act, spec.activation))
    return x, caches, bn_updates


def _head_backward(d_logits: np.ndarray, caches, weights: ModelWeights):
    grads: dict[str, np.ndarray] = {}
    d = d_logits
    for i, cache in zip(reversed(_head_indices(weights.specs)), reversed(caches)):
        spec = weights.specs[i]
        p = weights.params[i]
        name = weights.layer_name(i)
        x_in, bn_cache, pre_act, activation = cache
        if activation == "relu":
            d = layers.relu_backward(d, pre_act)
        if bn_cache is not None:
            d, d_gamma, d_beta = layers.batchnorm_train_backward(d, bn_cache)
            grads[f"{name}/bn_gamma"] = d_gamma
            grads[f"{name}/bn_beta"] = d_beta
        d, d_weight, d_bias = layers.dense_backward(d, x_in, p.weight)
        grads[f"{name}/weight"] = d_weight
        grads[f"{name}/bias"] = d_bias
    return d, grads


# ---------------------------------------------------------------------------
# public inference surface

@dataclass
class ConvStackResult:
    """Per-layer feature maps (name, (time, freq, channels) array) and the
    channelwise max over all output positions."""

    feature_maps: list[tuple[str, np.ndarray]]
    pooled: np.ndarray


def conv_stack_forward(feats, weights: ModelWeights) -> ConvStackResult:
    """Run the conv stack on one utterance's (num_frames, feat_dim) features."""
    feats = as_feature_array(feats, weights.feat_dim)
    rf = receptive_field(weights.specs)
    if feats.shape[0] < rf:
        raise UtteranceTooShortError(
            f"segment has {feats.shape[0]} frames, the stack needs at least {rf}")
    x = feats.astype(weights.dtype, copy=False)[None, :, :, None]
    maps, pooled, _, _ = _stack_forward(
        x, weights, np.array([feats.shape[0]]), training=False, want_maps=True)
    squeezed = [(name, arr[0]) for name, arr in maps]
    return ConvStackResult(squeezed, pooled[0])


def head_logits(pooled, weights: ModelWeights) -> np.ndarray:
    """Pre-softmax scores for one pooled vector or a (B, C) batch of them."""
    arr = np.asarray(pooled, dtype=weights.dtype)
    single = arr.ndim == 1
    if single:
        arr = arr[None]
    logits, _, _ = _head_forward(arr, weights, training=False)
    return logits[0] if single else logits


def head_forward(pooled, weights: ModelWeights) -> np.ndarray:
    """Posterior over intents (sums to one) for a pooled vector."""
    return layers.softmax(head_logits(pooled, weights))
