"""Small random graphs, one per layer kind, for finite-difference checks.

Each case takes a Generator and returns ``(loss_fn, params)`` where
``loss_fn()`` rebuilds a scalar loss from the current parameter values.
"""
import numpy as np

from inkcheck.layers import (
    bce_loss,
    bidirectional_recurrent,
    conv2d_same,
    ctc_loss,
    dense,
    dropout,
    init_recurrent,
    maxpool,
    maxpool2x2,
    time_distributed_dense,
)
from inkcheck.tensor import log_softmax, parameter


def _weighted(out, weights):
    return (out * weights).sum()


GRAD_CASES = {}


def _case(name):
    def deco(fn):
        GRAD_CASES[name] = fn
        return fn
    return deco


@_case("conv3x3_same")
def _conv_case(rng):
    x = parameter(rng.normal(size=(2, 4, 4, 2)))
    k, b = parameter(rng.normal(size=(3, 3, 2, 3))), parameter(rng.normal(size=3))
    w = rng.normal(size=(2, 4, 4, 3))
    return (lambda: _weighted(conv2d_same(x, k, b), w)), [x, k, b]


@_case("maxpool2x2")
def _pool_case(rng):
    x = parameter(rng.permutation(96).reshape(2, 4, 4, 3) * 0.1)
    w = rng.normal(size=(2, 2, 2, 3))
    return (lambda: _weighted(maxpool2x2(x), w)), [x]


@_case("maxpool2x4")
def _wide_pool_case(rng):
    x = parameter(rng.permutation(192).reshape(2, 4, 8, 3) * 0.1)
    w = rng.normal(size=(2, 2, 2, 3))
    return (lambda: _weighted(maxpool(x, (2, 4)), w)), [x]


@_case("dense")
def _dense_case(rng):
    x, wt, b = parameter(rng.normal(size=(3, 5))), parameter(rng.normal(size=(5, 4))), parameter(rng.normal(size=4))
    w = rng.normal(size=(3, 4))
    return (lambda: _weighted(dense(x, wt, b), w)), [x, wt, b]


@_case("time_distributed_dense")
def _td_case(rng):
    x, wt, b = parameter(rng.normal(size=(2, 6, 5))), parameter(rng.normal(size=(5, 3))), parameter(rng.normal(size=3))
    w = rng.normal(size=(2, 6, 3))
    return (lambda: _weighted(time_distributed_dense(x, wt, b), w)), [x, wt, b]


@_case("bidirectional_recurrent")
def _rnn_case(rng):
    raw = init_recurrent(rng, 3, 4)
    params = {d: {k: parameter(v + rng.normal(scale=0.1, size=v.shape)) for k, v in p.items()} for d, p in raw.items()}
    x = parameter(rng.normal(size=(2, 5, 3)))
    w = rng.normal(size=(2, 5, 8))
    flat = [x] + [t for p in params.values() for t in p.values()]
    return (lambda: _weighted(bidirectional_recurrent(x, params), w)), flat


@_case("bidirectional_recurrent_lstm")
def _lstm_case(rng):
    raw = init_recurrent(rng, 3, 2, "lstm")
    params = {d: {k: parameter(v) for k, v in p.items()} for d, p in raw.items()}
    x = parameter(rng.normal(size=(2, 4, 3)))
    w = rng.normal(size=(2, 4, 4))
    flat = [x] + [t for p in params.values() for t in p.values()]
    return (lambda: _weighted(bidirectional_recurrent(x, params, "lstm"), w)), flat


@_case("dropout")
def _dropout_case(rng):
    x = parameter(rng.normal(size=(4, 6)))
    w = rng.normal(size=(4, 6))
    return (lambda: _weighted(dropout(x, 0.3, True, np.random.default_rng(3)), w)), [x]


@_case("activation")
def _activation_case(rng):
    x = parameter(rng.normal(size=(3, 7)))
    w = rng.normal(size=(3, 7))
    return (lambda: _weighted(x.tanh() + x.sigmoid() * 2 + (x + 0.05).relu() + log_softmax(x).exp(), w)), [x]


@_case("bce")
def _bce_case(rng):
    x = parameter(rng.normal(size=8))
    y = rng.integers(0, 2, size=8)
    return (lambda: bce_loss(x.sigmoid(), y)), [x]


@_case("ctc")
def _ctc_case(rng):
    x = parameter(rng.normal(size=(2, 7, 4)))
    return (lambda: ctc_loss(x, [[0, 1, 1], [2]]).sum()), [x]
