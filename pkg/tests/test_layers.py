"""Layer primitives against finite differences and hand oracles.

Gradient checks here use smooth surrogate losses (sum of output times a
fixed random weighting) so central differences are valid everywhere, and
kink-free inputs (distinct integers) where a max is involved.
"""
from __future__ import annotations

import numpy as np
import pytest

from streamslu import layers

H = 1e-6  # float64 central-difference step for smooth losses


def fd_grad(fn, arr, h=H):
    """Elementwise central differences of scalar fn with respect to arr."""
    g = np.empty_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    out = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = fn()
        flat[i] = orig - h
        lo = fn()
        flat[i] = orig
        out[i] = (hi - lo) / (2 * h)
    return g


def rel_err(a, b):
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-8)
    return np.max(np.abs(a - b)) / scale


# ---------------------------------------------------------------------------
# convolution

def test_conv_forward_matches_loop_oracle():
    rng = np.random.default_rng(0)
    for _ in range(5):
        b, t, f, ci, co = 2, rng.integers(4, 9), rng.integers(2, 6), 3, 4
        kt, kf = rng.integers(1, 4), rng.integers(1, int(f) + 1)
        x = rng.normal(size=(b, t, f, ci))
        k = rng.normal(size=(kt, kf, ci, co))
        bias = rng.normal(size=co)
        y = layers.conv_forward(x, k, bias)
        t_out, f_out = t - kt + 1, f - kf + 1
        assert y.shape == (b, t_out, f_out, co)
        expected = np.empty_like(y)
        for bb in range(b):
            for tt in range(t_out):
                for ff in range(f_out):
                    patch = x[bb, tt:tt + kt, ff:ff + kf, :]
                    expected[bb, tt, ff] = (
                        np.tensordot(patch, k, axes=([0, 1, 2], [0, 1, 2])) + bias)
        assert np.allclose(y, expected, atol=1e-12)


def test_conv_backward_matches_finite_differences():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 7, 5, 3))
    k = rng.normal(size=(3, 2, 3, 4))
    bias = rng.normal(size=4)
    r = rng.normal(size=(2, 5, 4, 4))  # fixed weighting -> smooth scalar loss

    loss = lambda: float(np.sum(layers.conv_forward(x, k, bias) * r))
    d_x, d_k, d_b = layers.conv_backward(r, x, k)
    assert rel_err(d_x, fd_grad(loss, x)) < 1e-8
    assert rel_err(d_k, fd_grad(loss, k)) < 1e-8
    assert rel_err(d_b, fd_grad(loss, bias)) < 1e-8


def test_conv_backward_can_skip_input_gradient():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(1, 6, 4, 2))
    k = rng.normal(size=(2, 2, 2, 3))
    d = rng.normal(size=(1, 5, 3, 3))
    full = layers.conv_backward(d, x, k)
    slim = layers.conv_backward(d, x, k, need_dx=False)
    assert slim[0] is None
    assert np.array_equal(full[1], slim[1])
    assert np.array_equal(full[2], slim[2])


def test_conv_rejects_bad_shapes():
    x = np.zeros((1, 5, 3, 2))
    with pytest.raises(ValueError):
        layers.conv_forward(x, np.zeros((2, 2, 4, 3)), np.zeros(3))  # channels
    with pytest.raises(ValueError):
        layers.conv_forward(x, np.zeros((6, 2, 2, 3)), np.zeros(3))  # kernel > input


def test_conv2d_valid_single_sample():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(10, 41, 1))
    k = rng.normal(size=(4, 41, 1, 8))
    b = rng.normal(size=8)
    y = layers.conv2d_valid(x, k, b)
    assert y.shape == (7, 1, 8)
    assert np.allclose(y, layers.conv_forward(x[None], k, b)[0])


# ---------------------------------------------------------------------------
# max pooling (kernel 2, stride 2, floor)

def distinct_input(rng, shape):
    vals = rng.permutation(np.prod(shape)).astype(np.float64)
    return vals.reshape(shape)  # unique integers: every max has margin >= 1


def test_maxpool_floor_semantics():
    rng = np.random.default_rng(4)
    x = distinct_input(rng, (2, 7, 3, 2))
    y, first = layers.maxpool_forward(x)
    assert y.shape == (2, 3, 3, 2)  # frame 7 dropped
    assert np.array_equal(y, np.maximum(x[:, 0:6:2], x[:, 1:6:2]))


def test_maxpool_backward_routes_to_argmax():
    rng = np.random.default_rng(5)
    x = distinct_input(rng, (2, 6, 3, 2))
    y, first = layers.maxpool_forward(x)
    d = rng.normal(size=y.shape)
    d_x = layers.maxpool_backward(d, first, x.shape)
    loss = lambda: float(np.sum(layers.maxpool_forward(x)[0] * d))
    assert rel_err(d_x, fd_grad(loss, x, h=1e-3)) < 1e-10


def test_maxpool_tie_goes_to_first():
    x = np.zeros((1, 4, 1, 1))
    x[0, :, 0, 0] = [1.0, 1.0, 2.0, 2.0]
    _, first = layers.maxpool_forward(x)
    d = np.ones((1, 2, 1, 1))
    d_x = layers.maxpool_backward(d, first, x.shape)
    assert d_x[0, :, 0, 0].tolist() == [1.0, 0.0, 1.0, 0.0]


def test_maxpool_time_matches_batch_version():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(9, 1, 5))
    assert np.array_equal(layers.maxpool_time(x),
                          layers.maxpool_forward(x[None])[0][0])


def test_maxpool_rejects_single_frame():
    with pytest.raises(ValueError):
        layers.maxpool_forward(np.zeros((1, 1, 2, 2)))


# ---------------------------------------------------------------------------
# global max pooling with a valid-length mask

def test_global_maxpool_ignores_padding():
    rng = np.random.default_rng(7)
    x = distinct_input(rng, (3, 8, 1, 4))
    valid = np.array([8, 5, 2])
    out, arg = layers.global_maxpool_forward(x, valid)
    for i, v in enumerate(valid):
        assert np.array_equal(out[i], x[i, :v].reshape(-1, 4).max(axis=0))


def test_global_maxpool_backward_matches_fd():
    rng = np.random.default_rng(8)
    x = distinct_input(rng, (2, 6, 1, 3))
    valid = np.array([6, 4])
    r = rng.normal(size=(2, 3))
    loss = lambda: float(np.sum(layers.global_maxpool_forward(x, valid)[0] * r))
    out, arg = layers.global_maxpool_forward(x, valid)
    d_x = layers.global_maxpool_backward(r, arg, x.shape)
    assert rel_err(d_x, fd_grad(loss, x, h=1e-3)) < 1e-10
    # nothing reaches padded positions
    assert np.all(d_x[1, 4:] == 0.0)


# ---------------------------------------------------------------------------
# batch norm

def test_batchnorm_train_standardizes_valid_region():
    rng = np.random.default_rng(9)
    x = rng.normal(2.0, 3.0, size=(4, 10, 1, 6))
    valid = np.array([10, 7, 5, 10])
    mask = np.arange(10)[None, :] < valid[:, None]
    y, (mean, var), cache = layers.batchnorm_train_forward(
        x, np.ones(6), np.zeros(6), mask)
    sel = y[mask]  # (sum(valid), 1, 6)
    assert np.all(np.abs(sel.reshape(-1, 6).mean(axis=0)) < 1e-10)
    assert np.all(np.abs(sel.reshape(-1, 6).var(axis=0) - 1.0) < 1e-4)  # eps bias
    # reported batch stats are the raw masked moments
    assert np.allclose(mean, x[mask].reshape(-1, 6).mean(axis=0), atol=1e-12)
    assert np.allclose(var, x[mask].reshape(-1, 6).var(axis=0), atol=1e-12)


def test_batchnorm_train_ignores_padding_values():
    rng = np.random.default_rng(10)
    x = rng.normal(size=(2, 8, 1, 3))
    valid = np.array([8, 5])
    mask = np.arange(8)[None, :] < valid[:, None]
    poisoned = x.copy()
    poisoned[1, 5:] = 1e6
    ya = layers.batchnorm_train_forward(x, np.ones(3), np.zeros(3), mask)[0]
    yb = layers.batchnorm_train_forward(poisoned, np.ones(3), np.zeros(3), mask)[0]
    assert np.array_equal(ya[mask], yb[mask])


def test_batchnorm_train_backward_matches_fd():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(3, 6, 1, 4))
    gamma = rng.uniform(0.5, 1.5, size=4)
    beta = rng.normal(size=4)
    valid = np.array([6, 4, 6])
    mask = np.arange(6)[None, :] < valid[:, None]
    r = rng.normal(size=x.shape) * mask[:, :, None, None]

    def loss():
        y, _, _ = layers.batchnorm_train_forward(x, gamma, beta, mask)
        return float(np.sum(y * r))

    _, _, cache = layers.batchnorm_train_forward(x, gamma, beta, mask)
    d_x, d_gamma, d_beta = layers.batchnorm_train_backward(r, cache)
    assert rel_err(d_x, fd_grad(loss, x)) < 1e-6
    assert rel_err(d_gamma, fd_grad(loss, gamma)) < 1e-7
    assert rel_err(d_beta, fd_grad(loss, beta)) < 1e-7


def test_batchnorm_dense_backward_matches_fd():
    rng = np.random.default_rng(12)
    x = rng.normal(size=(8, 5))
    gamma = rng.uniform(0.5, 1.5, size=5)
    beta = rng.normal(size=5)
    r = rng.normal(size=x.shape)

    def loss():
        y, _, _ = layers.batchnorm_train_forward(x, gamma, beta, None)
        return float(np.sum(y * r))

    _, _, cache = layers.batchnorm_train_forward(x, gamma, beta, None)
    d_x, d_gamma, d_beta = layers.batchnorm_train_backward(r, cache)
    assert rel_err(d_x, fd_grad(loss, x)) < 1e-6
    assert rel_err(d_gamma, fd_grad(loss, gamma)) < 1e-7
    assert rel_err(d_beta, fd_grad(loss, beta)) < 1e-7


def test_batchnorm_infer_formula():
    rng = np.random.default_rng(13)
    x = rng.normal(size=(2, 5, 1, 3))
    gamma = rng.uniform(0.5, 2.0, size=3)
    beta = rng.normal(size=3)
    mean = rng.normal(size=3)
    var = rng.uniform(0.5, 2.0, size=3)
    y = layers.batchnorm_infer(x, gamma, beta, mean, var)
    expected = gamma * (x - mean) / np.sqrt(var + 1e-5) + beta
    assert np.allclose(y, expected, atol=1e-12)


# ---------------------------------------------------------------------------
# dense, relu, softmax

def test_dense_backward_matches_fd():
    rng = np.random.default_rng(14)
    x = rng.normal(size=(4, 6))
    w = rng.normal(size=(6, 3))
    b = rng.normal(size=3)
    r = rng.normal(size=(4, 3))
    loss = lambda: float(np.sum(layers.dense_forward(x, w, b) * r))
    d_x, d_w, d_b = layers.dense_backward(r, x, w)
    assert rel_err(d_x, fd_grad(loss, x)) < 1e-9
    assert rel_err(d_w, fd_grad(loss, w)) < 1e-9
    assert rel_err(d_b, fd_grad(loss, b)) < 1e-9


def test_relu_and_subgradient_at_zero():
    x = np.array([-2.0, -0.0, 0.0, 3.0])
    assert layers.relu(x).tolist() == [0.0, 0.0, 0.0, 3.0]
    d = layers.relu_backward(np.ones_like(x), x)
    assert d.tolist() == [0.0, 0.0, 0.0, 1.0]  # kink resolves to 0


def test_softmax_properties():
    rng = np.random.default_rng(15)
    for _ in range(20):
        logits = rng.normal(0, 5, size=(rng.integers(1, 8), rng.integers(2, 31)))
        p = layers.softmax(logits)
        assert np.all(p > 0)
        assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12)
        shifted = layers.softmax(logits + rng.normal() * 100)
        assert np.allclose(p, shifted, atol=1e-9)
        assert np.allclose(np.log(p), layers.log_softmax(logits), atol=1e-9)


def test_softmax_extreme_logits_stable():
    p = layers.softmax(np.array([[1000.0, 0.0, -1000.0]]))
    assert np.all(np.isfinite(p))
    assert np.isclose(p.sum(), 1.0)


def test_cross_entropy_uniform_is_log_n():
    # zero logits = uniform posterior: loss is exactly log(num classes)
    for n in (2, 8, 31):
        loss, _ = layers.softmax_cross_entropy(np.zeros((3, n)),
                                               np.array([0, 1, n - 1]))
        assert np.isclose(loss, np.log(n), atol=1e-12)


def test_cross_entropy_gradient_matches_fd():
    rng = np.random.default_rng(16)
    logits = rng.normal(size=(4, 6))
    labels = rng.integers(0, 6, size=4)
    loss_fn = lambda: layers.softmax_cross_entropy(logits, labels)[0]
    _, d = layers.softmax_cross_entropy(logits, labels)
    assert rel_err(d, fd_grad(loss_fn, logits)) < 1e-8


def test_cross_entropy_rejects_nonfinite_logits():
    logits = np.zeros((3, 4))
    logits[1, 2] = np.nan
    with pytest.raises(FloatingPointError) as exc:
        layers.softmax_cross_entropy(logits, np.array([0, 0, 0]))
    assert "1" in str(exc.value)  # names the first offending sample
