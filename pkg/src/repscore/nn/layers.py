"""Layers with explicit forward/backward passes.

Conventions:

- Image-like tensors are channels-last: ``(batch, height, width, channels)``.
- Sequences are ``(batch, steps, features)`` with a boolean mask ``(batch, steps)``.
- Every layer caches what its backward pass needs during ``forward`` and
  accumulates parameter gradients into ``Param.grad``; ``backward`` returns the
  gradient with respect to the layer input.
- All state is created with an explicit dtype (float64 by default) and an
  explicit ``numpy.random.Generator`` where randomness is involved, so whole
  training runs are bitwise reproducible on one platform.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .activations import ACTIVATIONS
from .init import glorot_uniform


class Param:
    """A trainable tensor plus its gradient accumulator."""

    def __init__(self, name, value):
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)

    @property
    def size(self):
        return self.value.size

    def zero_grad(self):
        self.grad[...] = 0.0


class Layer:
    """Base class; subclasses set ``kind`` to their serialization tag."""

    kind = None

    def params(self):
        """Trainable parameters, in a deterministic order."""
        return []

    def state_arrays(self):
        """Non-trainable state (e.g. running statistics) for checkpointing."""
        return {}

    def load_state_arrays(self, arrays):
        for name, arr in self.state_arrays().items():
            arr[...] = arrays[name]

    def spec(self):
        raise NotImplementedError

    def zero_grad(self):
        for p in self.params():
            p.zero_grad()


class Conv2D(Layer):
    """2D cross-correlation with "same" spatial padding, stride 1.

    Input ``(N, H, W, C_in)``, kernels ``(kh, kw, C_in, filters)``; output keeps
    the spatial dims: ``(N, H, W, filters)``.  Even kernels pad one extra row /
    column at the bottom / right.  The activation is applied elementwise.
    """

    kind = "conv2d"

    def __init__(self, in_channels, filters, kernel, activation="linear",
                 seed=0, dtype=np.float64):
        kh, kw = kernel
        if kh < 1 or kw < 1:
            raise ValueError(f"kernel dims must be >= 1, got {kernel}")
        if filters < 1:
            raise ValueError("filters must be >= 1")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.in_channels = in_channels
        self.filters = filters
        self.kernel = (kh, kw)
        self.activation = activation
        self.dtype = dtype
        fan_in = kh * kw * in_channels
        fan_out = kh * kw * filters
        self.kernels = Param(
            "kernels",
            glorot_uniform(fan_in, fan_out, (kh, kw, in_channels, filters), seed, dtype),
        )
        self.bias = Param("bias", np.zeros(filters, dtype=dtype))
        self._cache = None

    def params(self):
        return [self.kernels, self.bias]

    def spec(self):
        return {
            "kind": self.kind,
            "in_channels": self.in_channels,
            "filters": self.filters,
            "kernel": list(self.kernel),
            "activation": self.activation,
        }

    def _pad(self, x):
        kh, kw = self.kernel
        ph, pw = kh - 1, kw - 1
        top, left = ph // 2, pw // 2
        return np.pad(x, ((0, 0), (top, ph - top), (left, pw - left), (0, 0))), top, left

    def forward(self, x, training=False):
        if x.ndim != 4:
            raise ValueError(f"conv2d expects a 4D input, got shape {x.shape}")
        if x.shape[3] != self.in_channels:
            raise ValueError(
                f"channel mismatch: input has {x.shape[3]} channels, "
                f"kernels expect {self.in_channels}"
            )
        kh, kw = self.kernel
        n, h, w, _ = x.shape
        xp, top, left = self._pad(x)
        # im2col: (N, H, W, C, kh, kw) view -> (N*H*W, kh*kw*C) matrix
        cols = sliding_window_view(xp, (kh, kw), axis=(1, 2))
        flat = cols.transpose(0, 1, 2, 4, 5, 3).reshape(n * h * w, kh * kw * self.in_channels)
        kmat = self.kernels.value.reshape(kh * kw * self.in_channels, self.filters)
        pre = (flat @ kmat).reshape(n, h, w, self.filters) + self.bias.value
        out = ACTIVATIONS[self.activation][0](pre)
        self._cache = (flat, xp.shape, (top, left), pre, out, x.shape)
        return out

    def backward(self, dout):
        flat, padded_shape, (top, left), pre, out, in_shape = self._cache
        kh, kw = self.kernel
        n, h, w, _ = in_shape
        c = self.in_channels
        dpre = dout * ACTIVATIONS[self.activation][1](pre, out)
        dpre_flat = dpre.reshape(n * h * w, self.filters)
        self.bias.grad += dpre_flat.sum(axis=0)
        self.kernels.grad += (flat.T @ dpre_flat).reshape(kh, kw, c, self.filters)
        kmat = self.kernels.value.reshape(kh * kw * c, self.filters)
        dcols = (dpre_flat @ kmat.T).reshape(n, h, w, kh, kw, c)
        # col2im: scatter-add each kernel tap back onto the padded input
        dxp = np.zeros(padded_shape, dtype=dout.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, i:i + h, j:j + w, :] += dcols[:, :, :, i, j, :]
        return dxp[:, top:top + h, left:left + w, :]


class MaxPool2D(Layer):
    """2x2 max pooling with stride 2.

    Odd trailing rows/columns are truncated.  An axis that is already down to a
    single row/column is left untouched, so deep stacks on narrow inputs (e.g.
    the 6-row per-IMU branches) never collapse to an empty tensor.
    """

    kind = "maxpool2d"

    def __init__(self, pool=(2, 2)):
        self.pool = tuple(pool)
        self._cache = None

    def spec(self):
        return {"kind": self.kind, "pool": list(self.pool)}

    @staticmethod
    def output_hw(h, w, pool=(2, 2)):
        ph = pool[0] if h >= pool[0] else 1
        pw = pool[1] if w >= pool[1] else 1
        return h // ph, w // pw

    def forward(self, x, training=False):
        n, h, w, c = x.shape
        ph = self.pool[0] if h >= self.pool[0] else 1
        pw = self.pool[1] if w >= self.pool[1] else 1
        h2, w2 = h // ph, w // pw
        xc = x[:, :h2 * ph, :w2 * pw, :]
        win = xc.reshape(n, h2, ph, w2, pw, c).transpose(0, 1, 3, 5, 2, 4)
        win = win.reshape(n, h2, w2, c, ph * pw)
        idx = win.argmax(axis=4)
        out = np.take_along_axis(win, idx[..., None], axis=4)[..., 0]
        self._cache = (x.shape, (ph, pw), idx)
        return out

    def backward(self, dout):
        in_shape, (ph, pw), idx = self._cache
        n, h, w, c = in_shape
        h2, w2 = idx.shape[1], idx.shape[2]
        dwin = np.zeros((n, h2, w2, c, ph * pw), dtype=dout.dtype)
        np.put_along_axis(dwin, idx[..., None], dout[..., None], axis=4)
        dxc = dwin.reshape(n, h2, w2, c, ph, pw).transpose(0, 1, 4, 2, 5, 3)
        dxc = dxc.reshape(n, h2 * ph, w2 * pw, c)
        dx = np.zeros(in_shape, dtype=dout.dtype)
        dx[:, :h2 * ph, :w2 * pw, :] = dxc
        return dx


class Dense(Layer):
    """Fully connected layer: ``y = act(x @ W + b)`` with W of shape (in, out)."""

    kind = "dense"

    def __init__(self, in_features, units, activation="linear", seed=0, dtype=np.float64):
        if units < 1:
            raise ValueError("units must be >= 1")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.in_features = in_features
        self.units = units
        self.activation = activation
        self.weights = Param(
            "weights", glorot_uniform(in_features, units, (in_features, units), seed, dtype)
        )
        self.bias = Param("bias", np.zeros(units, dtype=dtype))
        self._cache = None

    def params(self):
        return [self.weights, self.bias]

    def spec(self):
        return {
            "kind": self.kind,
            "in_features": self.in_features,
            "units": self.units,
            "activation": self.activation,
        }

    def forward(self, x, training=False):
        if x.shape[1] != self.in_features:
            raise ValueError(
                f"dense expects {self.in_features} input features, got {x.shape[1]}"
            )
        pre = x @ self.weights.value + self.bias.value
        out = ACTIVATIONS[self.activation][0](pre)
        self._cache = (x, pre, out)
        return out

    def backward(self, dout):
        x, pre, out = self._cache
        dpre = dout * ACTIVATIONS[self.activation][1](pre, out)
        self.weights.grad += x.T @ dpre
        self.bias.grad += dpre.sum(axis=0)
        return dpre @ self.weights.value.T


class Dropout(Layer):
    """Inverted dropout; identity when not training.

    The layer owns a seeded generator so training runs are reproducible.  Call
    ``freeze()`` to reuse one sampled mask across repeated forward passes
    (needed by finite-difference gradient checks); ``unfreeze()`` restores
    normal sampling.
    """

    kind = "dropout"

    def __init__(self, rate, seed=0):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng = np.random.default_rng(seed)
        self.frozen = False
        self._frozen_mask = None
        self._cache = None

    def spec(self):
        return {"kind": self.kind, "rate": self.rate}

    def state_arrays(self):
        return {}

    def rng_state(self):
        return self.rng.bit_generator.state

    def set_rng_state(self, state):
        self.rng.bit_generator.state = state

    def freeze(self):
        self.frozen = True
        self._frozen_mask = None

    def unfreeze(self):
        self.frozen = False
        self._frozen_mask = None

    def forward(self, x, training=False):
        if not training or self.rate == 0.0:
            self._cache = None
            return x
        if self.frozen and self._frozen_mask is not None and self._frozen_mask.shape == x.shape:
            mask = self._frozen_mask
        else:
            mask = self.rng.random(x.shape) >= self.rate
            if self.frozen:
                self._frozen_mask = mask
        scale = 1.0 / (1.0 - self.rate)
        self._cache = (mask, scale)
        return x * mask * scale

    def backward(self, dout):
        if self._cache is None:
            return dout
        mask, scale = self._cache
        return dout * mask * scale


class BatchNorm(Layer):
    """Batch normalization over all axes except the last (channel) axis.

    Training normalizes with the batch statistics and updates running
    statistics with momentum 0.99; inference normalizes with the running
    statistics (a fixed per-channel affine map).
    """

    kind = "batchnorm"

    def __init__(self, channels, momentum=0.99, eps=1e-3, dtype=np.float64):
        if channels < 1:
            raise ValueError("channels must be >= 1")
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.gamma = Param("gamma", np.ones(channels, dtype=dtype))
        self.beta = Param("beta", np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self._cache = None

    def params(self):
        return [self.gamma, self.beta]

    def state_arrays(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def spec(self):
        return {
            "kind": self.kind,
            "channels": self.channels,
            "momentum": self.momentum,
            "eps": self.eps,
        }

    def forward(self, x, training=False):
        if x.shape[-1] != self.channels:
            raise ValueError(
                f"batchnorm expects {self.channels} channels, got {x.shape[-1]}"
            )
        axes = tuple(range(x.ndim - 1))
        if training:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            inv = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mean) * inv
            m = x.size // self.channels
            self.running_mean[...] = self.momentum * self.running_mean + (1 - self.momentum) * mean
            self.running_var[...] = self.momentum * self.running_var + (1 - self.momentum) * var
            self._cache = ("train", x, xhat, mean, inv, m, axes)
        else:
            inv = 1.0 / np.sqrt(self.running_var + self.eps)
            xhat = (x - self.running_mean) * inv
            self._cache = ("eval", xhat, inv)
        return self.gamma.value * xhat + self.beta.value

    def backward(self, dout):
        if self._cache[0] == "eval":
            _, xhat, inv = self._cache
            axes = tuple(range(dout.ndim - 1))
            self.gamma.grad += (dout * xhat).sum(axis=axes)
            self.beta.grad += dout.sum(axis=axes)
            return dout * self.gamma.value * inv
        _, x, xhat, mean, inv, m, axes = self._cache
        self.gamma.grad += (dout * xhat).sum(axis=axes)
        self.beta.grad += dout.sum(axis=axes)
        dxhat = dout * self.gamma.value
        dvar = (dxhat * (x - mean)).sum(axis=axes) * (-0.5) * inv ** 3
        dmean = -(dxhat.sum(axis=axes)) * inv + dvar * (-2.0 / m) * (x - mean).sum(axis=axes)
        return dxhat * inv + dvar * 2.0 * (x - mean) / m + dmean / m


class Masking(Layer):
    """Marks padded sequence steps so downstream recurrent layers skip them.

    Holds no parameters; validates that the boolean mask matches the step
    count and passes the pair through unchanged.
    """

    kind = "masking"

    def spec(self):
        return {"kind": self.kind}

    def forward(self, x, mask, training=False):
        if mask.shape != x.shape[:2]:
            raise ValueError(
                f"mask shape {mask.shape} does not match sequence shape {x.shape[:2]}"
            )
        if mask.dtype != np.bool_:
            raise ValueError("mask must be a boolean array")
        return x, mask

    def backward(self, dout):
        return dout


class LSTM(Layer):
    """Masked LSTM with tanh activation and sigmoid recurrent activation.

    Gate order in the fused weight matrices is (input, forget, candidate,
    output).  On masked steps the hidden and cell state are carried over
    unchanged, which makes padded steps exact no-ops.  ``return_sequences``
    controls whether ``forward`` yields the per-step hidden states (with the
    carried value on masked steps) or only the state after the final step.
    """

    kind = "lstm"

    def __init__(self, input_dim, units, return_sequences=False, seed=0, dtype=np.float64):
        if units < 1:
            raise ValueError("units must be >= 1")
        self.input_dim = input_dim
        self.units = units
        self.return_sequences = return_sequences
        rng = np.random.default_rng(seed)
        self.w_in = Param(
            "w_in", glorot_uniform(input_dim, 4 * units, (input_dim, 4 * units), rng, dtype)
        )
        self.w_rec = Param(
            "w_rec", glorot_uniform(units, 4 * units, (units, 4 * units), rng, dtype)
        )
        self.bias = Param("bias", np.zeros(4 * units, dtype=dtype))
        self._cache = None

    def params(self):
        return [self.w_in, self.w_rec, self.bias]

    def spec(self):
        return {
            "kind": self.kind,
            "input_dim": self.input_dim,
            "units": self.units,
            "return_sequences": self.return_sequences,
        }

    def forward(self, x, mask, training=False):
        if x.ndim != 3 or x.shape[2] != self.input_dim:
            raise ValueError(
                f"lstm expects input (batch, steps, {self.input_dim}), got {x.shape}"
            )
        if mask.shape != x.shape[:2]:
            raise ValueError("mask length must equal the step count")
        n, steps, _ = x.shape
        u = self.units
        sig = ACTIVATIONS["sigmoid"][0]
        h = np.zeros((n, u), dtype=x.dtype)
        c = np.zeros((n, u), dtype=x.dtype)
        step_cache = []
        seq = np.empty((n, steps, u), dtype=x.dtype) if self.return_sequences else None
        for t in range(steps):
            xt = x[:, t, :]
            m = mask[:, t][:, None]
            z = xt @ self.w_in.value + h @ self.w_rec.value + self.bias.value
            i = sig(z[:, :u])
            f = sig(z[:, u:2 * u])
            g = np.tanh(z[:, 2 * u:3 * u])
            o = sig(z[:, 3 * u:])
            c_new = f * c + i * g
            tanh_c = np.tanh(c_new)
            h_new = o * tanh_c
            step_cache.append((xt, h, c, i, f, g, o, tanh_c, m))
            c = np.where(m, c_new, c)
            h = np.where(m, h_new, h)
            if self.return_sequences:
                seq[:, t, :] = h
        self._cache = (step_cache, x.shape)
        return seq if self.return_sequences else h

    def backward(self, dout):
        """Backpropagate through time.

        ``dout`` is (batch, steps, units) when the layer returned sequences,
        else (batch, units) for the final state.  Returns the gradient with
        respect to the input sequence.
        """
        step_cache, in_shape = self._cache
        n, steps, _ = in_shape
        u = self.units
        dx = np.zeros(in_shape, dtype=self.w_in.value.dtype)
        if self.return_sequences:
            dh = np.zeros((n, u), dtype=dx.dtype)
        else:
            dh = dout.copy()
        dc = np.zeros((n, u), dtype=dx.dtype)
        for t in range(steps - 1, -1, -1):
            xt, h_prev, c_prev, i, f, g, o, tanh_c, m = step_cache[t]
            if self.return_sequences:
                dh = dh + dout[:, t, :]
            # split between the updated path (mask true) and the carried path
            dh_new = np.where(m, dh, 0.0)
            dh_carry = np.where(m, 0.0, dh)
            dc_new = np.where(m, dc, 0.0)
            dc_carry = np.where(m, 0.0, dc)
            do = dh_new * tanh_c
            dct = dc_new + dh_new * o * (1.0 - tanh_c * tanh_c)
            df = dct * c_prev
            di = dct * g
            dg = dct * i
            dz = np.concatenate(
                [
                    di * i * (1.0 - i),
                    df * f * (1.0 - f),
                    dg * (1.0 - g * g),
                    do * o * (1.0 - o),
                ],
                axis=1,
            )
            self.w_in.grad += xt.T @ dz
            self.w_rec.grad += h_prev.T @ dz
            self.bias.grad += dz.sum(axis=0)
            dx[:, t, :] = dz @ self.w_in.value.T
            dh = dz @ self.w_rec.value.T + dh_carry
            dc = dct * f + dc_carry
        return dx


class Softmax(Layer):
    """Softmax over the last axis; used as the output activation at inference.

    Training uses the fused softmax cross-entropy in ``repscore.nn.loss``, so
    this layer never participates in backprop.
    """

    kind = "softmax"

    def spec(self):
        return {"kind": self.kind}

    def forward(self, x, training=False):
        shifted = x - x.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=-1, keepdims=True)
