"""Finite-difference checks for every backward op.

The derivative oracle is central differences (step 1e-3) of the forward
replayed in float64; a few conv seeds additionally replay the forward with
the scalar six-loop oracle for full independence from the im2col path.
"""

import numpy as np
import pytest

from dermseg import nn
from dermseg.errors import StateError
from dermseg.tensor import Tensor4

from oracles import finite_diff, naive_conv, rel_err

SEEDS = range(20)
TOL = 1e-3


def _conv_case(seed, stride, rate, padding):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((1, 2, 6, 6)).astype(np.float32)
    w = rng.standard_normal((3, 2, 3, 3)).astype(np.float32)
    b = rng.standard_normal(3).astype(np.float32)
    p = nn.ConvParams(weights=w, bias=b, stride=stride, dilation_rate=rate,
                      padding=padding)
    y = nn.conv2d_forward(Tensor4(x), p)
    go = rng.standard_normal(y.shape).astype(np.float32)
    return x, w, b, p, go


@pytest.mark.parametrize("seed", SEEDS)
def test_conv_backward_stride2(seed):
    x, w, b, p, go = _conv_case(seed, stride=2, rate=1, padding=nn.MIRROR)
    gx, gw, gb = nn.conv2d_backward(Tensor4(x), p, Tensor4(go))
    go64 = go.astype(np.float64)

    def loss(xv=None, wv=None, bv=None):
        return np.vdot(
            nn._conv_raw(
                (x if xv is None else xv).astype(np.float64),
                (w if wv is None else wv).astype(np.float64),
                (b if bv is None else bv).astype(np.float64),
                p.stride, p.dilation_rate, p.padding,
            ),
            go64,
        )

    assert rel_err(gx.data, finite_diff(lambda v: loss(xv=v), x)) < TOL
    assert rel_err(gw, finite_diff(lambda v: loss(wv=v), w)) < TOL
    assert rel_err(gb, finite_diff(lambda v: loss(bv=v), b)) < TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_conv_backward_dilated(seed):
    x, w, b, p, go = _conv_case(seed, stride=1, rate=2, padding=nn.MIRROR)
    gx, gw, gb = nn.conv2d_backward(Tensor4(x), p, Tensor4(go))
    go64 = go.astype(np.float64)

    def loss(xv=None, wv=None, bv=None):
        return np.vdot(
            nn._conv_raw(
                (x if xv is None else xv).astype(np.float64),
                (w if wv is None else wv).astype(np.float64),
                (b if bv is None else bv).astype(np.float64),
                1, 2, nn.MIRROR,
            ),
            go64,
        )

    assert rel_err(gx.data, finite_diff(lambda v: loss(xv=v), x)) < TOL
    assert rel_err(gw, finite_diff(lambda v: loss(wv=v), w)) < TOL
    assert rel_err(gb, finite_diff(lambda v: loss(bv=v), b)) < TOL


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_conv_backward_against_scalar_loop_replay(seed):
    # slower, fully im2col-independent replay of the forward
    x, w, b, p, go = _conv_case(seed, stride=2, rate=1, padding=nn.ZERO)
    gx, gw, gb = nn.conv2d_backward(Tensor4(x), p, Tensor4(go))
    go64 = go.astype(np.float64)

    def loss_x(xv):
        return np.vdot(naive_conv(xv, w, b, 2, 1, "zero"), go64)

    def loss_w(wv):
        return np.vdot(naive_conv(x, wv, b, 2, 1, "zero"), go64)

    assert rel_err(gx.data, finite_diff(loss_x, x)) < TOL
    assert rel_err(gw, finite_diff(loss_w, w)) < TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_relu_backward_fd(seed):
    rng = np.random.default_rng(100 + seed)
    x = rng.standard_normal((1, 2, 4, 4)).astype(np.float32)
    # keep points away from the kink so FD is well defined
    x[np.abs(x) < 0.05] = 0.1
    go = rng.standard_normal(x.shape).astype(np.float32)
    gx = nn.relu_backward(Tensor4(x), Tensor4(go))

    def loss(xv):
        return np.vdot(np.maximum(xv, 0.0), go.astype(np.float64))

    assert rel_err(gx.data, finite_diff(loss, x, step=1e-4)) < 1e-4


@pytest.mark.parametrize("seed", SEEDS)
def test_batchnorm_backward_fd(seed):
    rng = np.random.default_rng(200 + seed)
    x = rng.standard_normal((2, 2, 3, 3)).astype(np.float32)
    gamma = (rng.standard_normal(2) * 0.5 + 1.0).astype(np.float32)
    beta = rng.standard_normal(2).astype(np.float32)
    p = nn.BatchNormParams(gamma=gamma, beta=beta,
                           running_mean=np.zeros(2), running_var=np.ones(2))
    go = rng.standard_normal(x.shape).astype(np.float32)
    gx, gg, gb = nn.batchnorm_backward(Tensor4(x), p, Tensor4(go))
    go64 = go.astype(np.float64)

    def loss(xv=None, gv=None, bv=None):
        out, _, _, _, _ = nn._bn_train_raw(
            (x if xv is None else xv).astype(np.float64),
            (gamma if gv is None else gv).astype(np.float64),
            (beta if bv is None else bv).astype(np.float64),
            p.epsilon,
        )
        return np.vdot(out, go64)

    assert rel_err(gx.data, finite_diff(lambda v: loss(xv=v), x)) < TOL
    assert rel_err(gg, finite_diff(lambda v: loss(gv=v), gamma)) < TOL
    assert rel_err(gb, finite_diff(lambda v: loss(bv=v), beta)) < TOL


def test_batchnorm_grad_beta_is_sum():
    rng = np.random.default_rng(42)
    x = Tensor4(rng.standard_normal((3, 4, 5, 5)).astype(np.float32))
    p = nn.BatchNormParams.identity(4)
    go = rng.standard_normal(x.shape).astype(np.float32)
    _, _, gb = nn.batchnorm_backward(x, p, Tensor4(go))
    assert rel_err(gb, go.sum(axis=(0, 2, 3))) < 1e-6


def test_batchnorm_constant_grad_out_sums_to_zero():
    rng = np.random.default_rng(43)
    x = Tensor4(rng.standard_normal((2, 3, 4, 4)).astype(np.float32))
    p = nn.BatchNormParams.identity(3)
    go = Tensor4(np.ones(x.shape, dtype=np.float32))
    gx, _, _ = nn.batchnorm_backward(x, p, go)
    assert np.abs(gx.data.sum(axis=(0, 2, 3))).max() < 1e-5


def test_batchnorm_backward_rejects_infer_mode():
    x = Tensor4(np.zeros((1, 2, 2, 2), dtype=np.float32))
    p = nn.BatchNormParams.identity(2)
    p.mode = nn.INFER
    with pytest.raises(StateError):
        nn.batchnorm_backward(x, p, Tensor4(np.zeros(x.shape, np.float32)))


@pytest.mark.parametrize("seed", SEEDS)
def test_xent_grad_fd(seed):
    rng = np.random.default_rng(300 + seed)
    z = rng.standard_normal((1, 2, 3, 3)).astype(np.float32)
    labels = rng.integers(0, 2, (1, 3, 3))
    _, grad = nn.softmax_xent(Tensor4(z), labels)

    def loss(zv):
        zv = zv.astype(np.float64)
        m = zv.max(axis=1, keepdims=True)
        lse = m[:, 0] + np.log(np.exp(zv - m).sum(axis=1))
        zt = np.take_along_axis(zv, labels[:, None], axis=1)[:, 0]
        return np.mean(lse - zt)

    assert rel_err(grad.data, finite_diff(loss, z)) < TOL


@pytest.mark.parametrize("r", [1, 2, 4])
def test_shuffle_backward_is_inverse_permutation(r):
    # <shuffle(x), y> == <x, unshuffle(y)> for all x, y => exact adjoint
    rng = np.random.default_rng(400 + r)
    x = Tensor4(rng.standard_normal((2, 4 * r * r, 3, 3)).astype(np.float32))
    y = nn.pixel_shuffle(x, r)
    g = Tensor4(rng.standard_normal(y.shape).astype(np.float32))
    lhs = np.vdot(y.data.astype(np.float64), g.data.astype(np.float64))
    rhs = np.vdot(x.data.astype(np.float64),
                  nn.pixel_unshuffle(g, r).data.astype(np.float64))
    assert abs(lhs - rhs) < 1e-6
