"""Layer library: shapes, parameter bookkeeping, state round-trips."""

import numpy as np
import pytest

from modalign.errors import ParameterError
from modalign.layers import (Activation, BatchNorm2d, Conv2d, ConvTranspose2d,
                             Dense, Dropout, Flatten, LayerNorm, MaxPool2d,
                             Sequential, UpsampleTime2, init_uniform)
from modalign.tensor import Tensor


def test_init_uniform_bounds_and_determinism():
    a = init_uniform(np.random.default_rng(7), (100, 50), fan_in=50)
    b = init_uniform(np.random.default_rng(7), (100, 50), fan_in=50)
    bound = np.sqrt(1.0 / 50)
    assert np.abs(a.data).max() <= bound
    np.testing.assert_array_equal(a.data, b.data)
    assert a.requires_grad


def test_dense_param_count_and_shape(rng):
    d = Dense(10, 4, np.random.default_rng(0))
    assert d.parameter_count() == 10 * 4 + 4
    out = d(Tensor(rng.standard_normal((3, 10)).astype(np.float32)))
    assert out.shape == (3, 4)
    assert np.all(np.isfinite(out.data))


def test_conv2d_bias_is_per_channel(rng):
    c = Conv2d(2, 5, 3, 3, np.random.default_rng(0), padding="same")
    c.b.data = np.arange(5, dtype=np.float32)
    x = Tensor(np.zeros((1, 2, 4, 4), dtype=np.float32))
    out = c(x)
    for ch in range(5):
        np.testing.assert_allclose(out.data[0, ch], ch)


def test_conv_transpose_same_preserves_shape(rng):
    ct = ConvTranspose2d(4, 2, 1, 11, np.random.default_rng(0), padding="same")
    out = ct(Tensor(rng.standard_normal((2, 4, 3, 25)).astype(np.float32)))
    assert out.shape == (2, 2, 3, 25)


def test_layernorm_normalizes_last_axis(rng):
    ln = LayerNorm(16)
    x = Tensor((rng.standard_normal((4, 16)) * 5 + 3).astype(np.float32))
    out = ln(x).data
    np.testing.assert_allclose(out.mean(axis=-1), 0, atol=1e-5)
    np.testing.assert_allclose(out.std(axis=-1), 1, atol=1e-3)
    assert ln.parameter_count() == 32


def test_batchnorm_normalizes_channels(rng):
    bn = BatchNorm2d(3)
    x = Tensor((rng.standard_normal((8, 3, 4, 5)) * 2 + 7).astype(np.float32))
    out = bn(x).data
    np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0, atol=1e-5)
    np.testing.assert_allclose(out.std(axis=(0, 2, 3)), 1, atol=1e-3)


def test_dropout_train_vs_eval(rng):
    d = Dropout(0.5)
    x = Tensor(np.ones((64, 64), dtype=np.float32))
    out_eval = d(x, training=False)
    np.testing.assert_array_equal(out_eval.data, x.data)
    out_train = d(x, training=True, rng=np.random.default_rng(0))
    assert np.any(out_train.data == 0)
    with pytest.raises(ParameterError):
        Dropout(-0.1)


def test_activation_validation():
    with pytest.raises(ParameterError):
        Activation("softmax")


def test_sequential_names_params_by_index(rng):
    seq = Sequential(Dense(4, 3, np.random.default_rng(0)), Activation("relu"),
                     Dense(3, 2, np.random.default_rng(1)))
    names = set(seq.named_parameters())
    assert names == {"0.w", "0.b", "2.w", "2.b"}
    out = seq(Tensor(rng.standard_normal((5, 4)).astype(np.float32)))
    assert out.shape == (5, 2)


def test_state_roundtrip(rng):
    seq = Sequential(Dense(4, 3, np.random.default_rng(0)),
                     Conv2d(1, 1, 1, 1, np.random.default_rng(1)))
    state = seq.state()
    fresh = Sequential(Dense(4, 3, np.random.default_rng(9)),
                       Conv2d(1, 1, 1, 1, np.random.default_rng(9)))
    fresh.load_state(state)
    for n, p in fresh.named_parameters().items():
        np.testing.assert_array_equal(p.data, state[n])


def test_astype_roundtrip():
    d = Dense(3, 2, np.random.default_rng(0))
    d.astype(np.float64)
    assert all(p.dtype == np.float64 for p in d.named_parameters().values())
    d.astype(np.float32)
    assert all(p.dtype == np.float32 for p in d.named_parameters().values())


def test_maxpool_flatten_upsample_shapes(rng):
    x = Tensor(rng.standard_normal((2, 3, 5, 9)).astype(np.float32))
    assert MaxPool2d(2, 2)(x).shape == (2, 3, 3, 5)
    assert Flatten()(x).shape == (2, 3 * 5 * 9)
    assert UpsampleTime2()(x).shape == (2, 3, 5, 18)
