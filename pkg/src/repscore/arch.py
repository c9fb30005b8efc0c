"""Builders for the three CNN-LSTM input-processing structures.

Every network is CNN blocks (conv -> 2x2 max-pool -> dropout or batchnorm)
applied per window with shared weights, a masking layer, an LSTM stack and a
dense head 512 -> 128 -> 3 with softmax output.  The variants differ in how
the stacked IMU channels enter the convolutions:

- ``baseline``: windows of the full channel matrix, 2D kernels;
- ``imu_centric``: one CNN stack per IMU over its 6-row band, kernels (1 x k),
  branch outputs concatenated before the masking layer;
- ``channel_centric``: identical to the baseline but every kernel is forced to
  height 1, so convolution runs along time only, shared across all channels.
"""

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .nn import LSTM, BatchNorm, Conv2D, Dense, Dropout, MaxPool2D
from .nn.network import Branch, RepetitionNetwork

VARIANTS = ("baseline", "imu_centric", "channel_centric")
SCHEMES = ("inc_filters_fixed_kernel", "inc_filters_dec_kernel")
REGULARIZATIONS = ("dropout_0.2", "batchnorm")
ACTIVATION_CHOICES = ("relu", "elu", "lrelu")
CNN_BLOCK_CHOICES = (1, 2, 3)
LSTM_LAYER_CHOICES = (1, 2)
BATCH_SIZE_CHOICES = (4, 8, 16, 32)

BLOCK_FILTERS = (16, 32, 64)
FIXED_KERNELS = ((5, 5), (5, 5), (5, 5))
DECREASING_KERNELS = ((9, 9), (5, 5), (3, 3))
DROPOUT_RATE = 0.2


@dataclass
class ModelConfig:
    """One full hyperparameter assignment.

    The searchable axes (activation, cnn_blocks, scheme, regularization,
    lstm_layers, batch_size) cover every combination of the sweep space;
    ``variant`` selects the input-processing structure and ``windows`` the
    number of equal-size windows a repetition is split into.  LSTM width and
    the dense head are fixed.
    """

    variant: str = "baseline"
    cnn_blocks: int = 2
    scheme: str = "inc_filters_fixed_kernel"
    regularization: str = "dropout_0.2"
    lstm_layers: int = 2
    activation: str = "elu"
    batch_size: int = 16
    windows: int = 10
    lstm_units: int = 256
    dense_units: tuple = (512, 128, 3)

    def __post_init__(self):
        self.dense_units = tuple(self.dense_units)
        self.validate()

    def validate(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.cnn_blocks not in CNN_BLOCK_CHOICES:
            raise ValueError(f"cnn_blocks must be in {CNN_BLOCK_CHOICES}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.regularization not in REGULARIZATIONS:
            raise ValueError(f"regularization must be one of {REGULARIZATIONS}")
        if self.lstm_layers not in LSTM_LAYER_CHOICES:
            raise ValueError(f"lstm_layers must be in {LSTM_LAYER_CHOICES}")
        if self.activation not in ACTIVATION_CHOICES:
            raise ValueError(f"activation must be one of {ACTIVATION_CHOICES}")
        if self.batch_size not in BATCH_SIZE_CHOICES:
            raise ValueError(f"batch_size must be in {BATCH_SIZE_CHOICES}")
        if self.windows < 1:
            raise ValueError("windows must be >= 1")
        if self.dense_units[-1] != 3:
            raise ValueError("the dense head must end in 3 outputs (ratings 1/2/3)")

    def to_dict(self):
        d = asdict(self)
        d["dense_units"] = list(self.dense_units)
        return d

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    @classmethod
    def from_json(cls, s):
        return cls.from_dict(json.loads(s))


#: Winning combination of the hyperparameter search.
BEST_CONFIG = ModelConfig(
    variant="baseline",
    cnn_blocks=2,
    scheme="inc_filters_fixed_kernel",
    regularization="dropout_0.2",
    lstm_layers=2,
    activation="elu",
    batch_size=16,
)


def block_plan(config):
    """Per-block (filters, (kh, kw)) for a config.

    The fixed-kernel scheme uses (5x5) throughout; the decreasing scheme uses
    the first N of (9x9), (5x5), (3x3).  The IMU-centric and channel-centric
    structures convolve along time only, so kernel heights collapse to 1.
    """
    kernels = FIXED_KERNELS if config.scheme == "inc_filters_fixed_kernel" else DECREASING_KERNELS
    plan = []
    for b in range(config.cnn_blocks):
        kh, kw = kernels[b]
        if config.variant in ("imu_centric", "channel_centric"):
            kh = 1
        plan.append((BLOCK_FILTERS[b], (kh, kw)))
    return plan


def _build_stack(config, plan, seed_seq, dtype):
    layers = []
    in_channels = 1
    for filters, kernel in plan:
        conv_seed, reg_seed = seed_seq.spawn(2)
        layers.append(
            Conv2D(in_channels, filters, kernel, activation=config.activation,
                   seed=np.random.default_rng(conv_seed), dtype=dtype)
        )
        layers.append(MaxPool2D((2, 2)))
        if config.regularization == "dropout_0.2":
            layers.append(Dropout(DROPOUT_RATE, seed=np.random.default_rng(reg_seed)))
        else:
            layers.append(BatchNorm(filters, dtype=dtype))
        in_channels = filters
    return layers


def build_model(config, layout, window_len, seed=0, dtype=np.float64):
    """Construct a :class:`RepetitionNetwork` for ``config`` on ``layout``.

    ``window_len`` fixes the per-window time extent (padded length / windows);
    it sizes the flattened CNN output that feeds the LSTM stack.  ``seed``
    makes initialization and dropout reproducible.
    """
    config.validate()
    rows = layout.rows
    plan = block_plan(config)
    if isinstance(seed, np.random.SeedSequence):
        root, seed_repr = seed, None
    else:
        root, seed_repr = np.random.SeedSequence(seed), int(seed)
    branch_seq, lstm_seq, head_seq = root.spawn(3)

    branches = []
    if config.variant == "imu_centric":
        for b, _imu in enumerate(layout.imu_ids):
            stack = _build_stack(config, plan, branch_seq.spawn(1)[0], dtype)
            branches.append(Branch(6 * b, 6 * (b + 1), stack, window_len))
    else:
        stack = _build_stack(config, plan, branch_seq.spawn(1)[0], dtype)
        branches.append(Branch(0, rows, stack, window_len))

    feature_dim = sum(b.feature_dim for b in branches)
    lstm_layers = []
    in_dim = feature_dim
    for i in range(config.lstm_layers):
        lstm_layers.append(
            LSTM(
                in_dim,
                config.lstm_units,
                return_sequences=(i < config.lstm_layers - 1),
                seed=np.random.default_rng(lstm_seq.spawn(1)[0]),
                dtype=dtype,
            )
        )
        in_dim = config.lstm_units

    head = []
    for i, units in enumerate(config.dense_units):
        act = "linear" if i == len(config.dense_units) - 1 else config.activation
        head.append(
            Dense(in_dim, units, activation=act,
                  seed=np.random.default_rng(head_seq.spawn(1)[0]), dtype=dtype)
        )
        in_dim = units

    meta = {"config": config.to_dict(), "imu_ids": list(layout.imu_ids), "seed": seed_repr}
    return RepetitionNetwork(branches, lstm_layers, head, rows=rows,
                             window_len=window_len, n_classes=3, meta=meta)


def forward_classify(network, windows, mask, batch_size=64):
    """Class probabilities for a preprocessed batch; rows sum to 1."""
    return network.predict_proba(np.asarray(windows), np.asarray(mask), batch_size=batch_size)
