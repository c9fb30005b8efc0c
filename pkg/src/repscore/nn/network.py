"""Composite network: per-window CNN encoders feeding a masked LSTM classifier.

A repetition arrives as ``(batch, windows, rows, window_len)`` plus a boolean
mask ``(batch, windows)``.  One or more :class:`Branch` objects each run a
shared CNN stack over every window of a band of input rows (the whole matrix
for the baseline/channel-centric structures, one 6-row band per IMU for the
IMU-centric structure).  Branch outputs are flattened and concatenated into a
per-window feature vector, then the window sequence runs through masking, an
LSTM stack and a dense head.

The window count may vary between calls -- masked windows are exact no-ops --
but the per-window shape ``(rows, window_len)`` is fixed at build time because
the flattened CNN output feeds fixed-size LSTM weights.
"""

import numpy as np

from .layers import LSTM, BatchNorm, Conv2D, Dense, Dropout, Masking, MaxPool2D, Softmax
from .loss import softmax_crossentropy

_LAYER_CLASSES = {
    "conv2d": Conv2D,
    "maxpool2d": MaxPool2D,
    "dense": Dense,
    "dropout": Dropout,
    "batchnorm": BatchNorm,
    "lstm": LSTM,
    "masking": Masking,
    "softmax": Softmax,
}


def layer_from_spec(spec, dtype=np.float64):
    """Instantiate a layer from its ``spec()`` dict (weights not restored here)."""
    kind = spec["kind"]
    if kind not in _LAYER_CLASSES:
        raise ValueError(f"unknown layer kind {kind!r}")
    kwargs = {k: v for k, v in spec.items() if k != "kind"}
    if kind == "conv2d":
        kwargs["kernel"] = tuple(kwargs["kernel"])
        kwargs["dtype"] = dtype
    elif kind == "maxpool2d":
        kwargs["pool"] = tuple(kwargs["pool"])
    elif kind in ("dense", "lstm"):
        kwargs["dtype"] = dtype
    elif kind == "batchnorm":
        kwargs["dtype"] = dtype
    return _LAYER_CLASSES[kind](**kwargs)


class Branch:
    """A CNN stack applied per window to rows [row_start, row_stop) of the input.

    The stack's final feature map is flattened to a vector; ``feature_dim`` is
    its length for the configured window shape.
    """

    def __init__(self, row_start, row_stop, layers, window_len):
        self.row_start = row_start
        self.row_stop = row_stop
        self.layers = layers
        self.window_len = window_len
        h, w, c = row_stop - row_start, window_len, 1
        for layer in layers:
            if isinstance(layer, Conv2D):
                c = layer.filters
            elif isinstance(layer, MaxPool2D):
                h, w = MaxPool2D.output_hw(h, w, layer.pool)
        self.out_shape = (h, w, c)
        self.feature_dim = h * w * c

    def params(self):
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def spec(self):
        return {
            "row_start": self.row_start,
            "row_stop": self.row_stop,
            "window_len": self.window_len,
            "layers": [layer.spec() for layer in self.layers],
        }

    def forward(self, x, training=False):
        """x: (M, band_rows, window_len) -> (M, feature_dim)."""
        out = x[..., None]
        for layer in self.layers:
            out = layer.forward(out, training=training)
        m = out.shape[0]
        self._conv_out_shape = out.shape
        return out.reshape(m, -1)

    def backward(self, dflat):
        dout = dflat.reshape(self._conv_out_shape)
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout[..., 0]


class RepetitionNetwork:
    """Shared-weight window encoders + masked LSTM stack + dense softmax head."""

    def __init__(self, branches, lstm_layers, head, rows, window_len,
                 n_classes=3, meta=None):
        self.branches = branches
        self.masking = Masking()
        self.lstm_layers = lstm_layers
        self.head = head
        self.softmax = Softmax()
        self.rows = rows
        self.window_len = window_len
        self.n_classes = n_classes
        self.meta = dict(meta or {})
        self.feature_dim = sum(b.feature_dim for b in branches)

    # -- parameter plumbing ------------------------------------------------

    def params(self):
        out = []
        for b in self.branches:
            out.extend(b.params())
        for l in self.lstm_layers:
            out.extend(l.params())
        for d in self.head:
            out.extend(d.params())
        return out

    def parameter_count(self):
        return sum(p.size for p in self.params())

    def zero_grad(self):
        for p in self.params():
            p.zero_grad()

    def _iter_layers(self):
        for b in self.branches:
            yield from b.layers
        yield self.masking
        yield from self.lstm_layers
        yield from self.head
        yield self.softmax

    def dropout_layers(self):
        return [l for l in self._iter_layers() if isinstance(l, Dropout)]

    def freeze_noise(self):
        """Freeze dropout masks so repeated training-mode forwards are identical."""
        for l in self.dropout_layers():
            l.freeze()

    def unfreeze_noise(self):
        for l in self.dropout_layers():
            l.unfreeze()

    # -- forward / backward -------------------------------------------------

    def _check_input(self, x, mask):
        if x.ndim != 4:
            raise ValueError(f"expected (batch, windows, rows, window_len), got {x.shape}")
        if x.shape[2] != self.rows or x.shape[3] != self.window_len:
            raise ValueError(
                f"window shape mismatch: network was built for "
                f"({self.rows}, {self.window_len}) windows, got "
                f"({x.shape[2]}, {x.shape[3]})"
            )
        if mask.shape != x.shape[:2]:
            raise ValueError(f"mask shape {mask.shape} != batch/window dims {x.shape[:2]}")

    def _window_features(self, x, training):
        n, t = x.shape[:2]
        if training:
            # fused over batch*windows; layer caches hold this pass for backward
            flat_in = x.reshape(n * t, self.rows, self.window_len)
            feats = [
                b.forward(flat_in[:, b.row_start:b.row_stop, :], training=True)
                for b in self.branches
            ]
            feat = feats[0] if len(feats) == 1 else np.concatenate(feats, axis=1)
            return feat.reshape(n, t, self.feature_dim)
        # inference encodes one window at a time so every BLAS call has the same
        # shape regardless of the window count; appending fully-masked windows
        # then leaves earlier windows' features bitwise identical
        steps = []
        for ti in range(t):
            feats = [
                b.forward(x[:, ti, b.row_start:b.row_stop, :], training=False)
                for b in self.branches
            ]
            steps.append(feats[0] if len(feats) == 1 else np.concatenate(feats, axis=1))
        return np.stack(steps, axis=1)

    def forward_logits(self, x, mask, training=False):
        self._check_input(x, mask)
        n, t = x.shape[:2]
        seq = self._window_features(x, training)
        seq, mask = self.masking.forward(seq, mask, training=training)
        out = seq
        for l in self.lstm_layers:
            out = l.forward(out, mask, training=training)
        for d in self.head:
            out = d.forward(out, training=training)
        self._cache = (n, t)
        return out

    def predict_proba(self, x, mask, batch_size=None):
        """Class probabilities, inference mode.  Rows sum to 1."""
        if batch_size is None or x.shape[0] <= batch_size:
            return self.softmax.forward(self.forward_logits(x, mask, training=False))
        chunks = [
            self.softmax.forward(self.forward_logits(x[i:i + batch_size], mask[i:i + batch_size]))
            for i in range(0, x.shape[0], batch_size)
        ]
        return np.concatenate(chunks, axis=0)

    def backward_from_logits(self, dlogits):
        """Backprop a logits gradient; accumulates into every Param.grad.

        Valid only after a ``training=True`` forward pass (the fused path is
        what the layer caches hold).  Returns the gradient with respect to the
        windowed input.
        """
        n, t = self._cache
        dout = dlogits
        for d in reversed(self.head):
            dout = d.backward(dout)
        for l in reversed(self.lstm_layers):
            dout = l.backward(dout)
        dflat = dout.reshape(n * t, self.feature_dim)
        dx = np.zeros((n * t, self.rows, self.window_len), dtype=dflat.dtype)
        offset = 0
        for b in self.branches:
            dband = b.backward(dflat[:, offset:offset + b.feature_dim])
            dx[:, b.row_start:b.row_stop, :] += dband
            offset += b.feature_dim
        return dx.reshape(n, t, self.rows, self.window_len)

    def loss_and_gradients(self, x, mask, onehot, training=True):
        """Forward + backward on one batch; returns (loss, probs).

        Parameter gradients are accumulated onto the params (call ``zero_grad``
        first for a fresh batch).
        """
        logits = self.forward_logits(x, mask, training=training)
        loss, probs, dlogits = softmax_crossentropy(logits, onehot)
        self.backward_from_logits(dlogits)
        return loss, probs

    # -- serialization -------------------------------------------------------

    def spec(self):
        return {
            "rows": self.rows,
            "window_len": self.window_len,
            "n_classes": self.n_classes,
            "meta": self.meta,
            "branches": [b.spec() for b in self.branches],
            "lstm": [l.spec() for l in self.lstm_layers],
            "masking": self.masking.spec(),
            "head": [d.spec() for d in self.head],
            "softmax": self.softmax.spec(),
        }

    @classmethod
    def from_spec(cls, spec, dtype=np.float64):
        branches = []
        for bspec in spec["branches"]:
            layers = [layer_from_spec(ls, dtype=dtype) for ls in bspec["layers"]]
            branches.append(
                Branch(bspec["row_start"], bspec["row_stop"], layers, bspec["window_len"])
            )
        lstm_layers = [layer_from_spec(ls, dtype=dtype) for ls in spec["lstm"]]
        head = [layer_from_spec(ds, dtype=dtype) for ds in spec["head"]]
        return cls(
            branches,
            lstm_layers,
            head,
            rows=spec["rows"],
            window_len=spec["window_len"],
            n_classes=spec["n_classes"],
            meta=spec.get("meta"),
        )
