"""Elementwise activation functions and their derivatives.

Each entry in ``ACTIVATIONS`` maps a name to ``(fn, dfn)`` where ``dfn(x, y)``
is the derivative with respect to the pre-activation ``x`` (``y = fn(x)`` is
passed in so derivatives that are cheaper in terms of the output can use it).
"""

import numpy as np

LRELU_SLOPE = 0.01
ELU_ALPHA = 1.0


def sigmoid(x):
    """Numerically stable logistic sigmoid."""
    ex = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + ex), ex / (1.0 + ex))


def _linear(x):
    return x


def _dlinear(x, y):
    return np.ones_like(x)


def _relu(x):
    return np.maximum(x, 0.0)


def _drelu(x, y):
    return (x > 0).astype(x.dtype)


def _lrelu(x):
    return np.where(x > 0, x, LRELU_SLOPE * x)


def _dlrelu(x, y):
    return np.where(x > 0, 1.0, LRELU_SLOPE).astype(x.dtype)


def _elu(x):
    out = x.copy()
    neg = x < 0
    out[neg] = ELU_ALPHA * np.expm1(x[neg])
    return out


def _delu(x, y):
    # for x < 0: d/dx alpha*(e^x - 1) = y + alpha
    return np.where(x > 0, 1.0, y + ELU_ALPHA).astype(x.dtype)


def _tanh(x):
    return np.tanh(x)


def _dtanh(x, y):
    return 1.0 - y * y


def _sigmoid_act(x):
    return sigmoid(x)


def _dsigmoid(x, y):
    return y * (1.0 - y)


ACTIVATIONS = {
    "linear": (_linear, _dlinear),
    "relu": (_relu, _drelu),
    "lrelu": (_lrelu, _dlrelu),
    "elu": (_elu, _delu),
    "tanh": (_tanh, _dtanh),
    "sigmoid": (_sigmoid_act, _dsigmoid),
}


def apply_activation(name, x):
    """Apply activation ``name`` to ``x``; raises for unknown names."""
    if name not in ACTIVATIONS:
        raise ValueError(f"unknown activation {name!r}")
    return ACTIVATIONS[name][0](x)
