"""Weight initialization."""

import math

import numpy as np


def glorot_uniform(fan_in, fan_out, shape, seed, dtype=np.float64):
    """Sample a tensor uniformly from [-L, L] with L = sqrt(6 / (fan_in + fan_out)).

    ``seed`` may be an integer or an existing ``numpy.random.Generator``; the same
    seed and shape always produce the identical tensor.
    """
    if fan_in < 1 or fan_out < 1:
        raise ValueError(f"fan_in and fan_out must be >= 1, got {fan_in}, {fan_out}")
    rng = np.random.default_rng(seed)
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)
