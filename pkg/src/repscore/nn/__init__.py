"""Minimal deterministic neural-network engine.

Only the layer types the repetition-rating networks need are implemented:
2D convolution with "same" padding, 2x2 max pooling, dense, dropout, batch
normalization, masked LSTM, masking and softmax.  Everything runs on plain
numpy arrays, double precision by default, with hand-written backward passes
that are verified against central finite differences in the test suite.
"""

from .activations import ACTIVATIONS, ELU_ALPHA, LRELU_SLOPE, apply_activation
from .checkpoint import load_checkpoint, save_checkpoint
from .init import glorot_uniform
from .layers import (
    LSTM,
    BatchNorm,
    Conv2D,
    Dense,
    Dropout,
    Masking,
    MaxPool2D,
    Param,
    Softmax,
)
from .loss import softmax_crossentropy
from .network import Branch, RepetitionNetwork
from .optim import Adam

__all__ = [
    "ACTIVATIONS",
    "ELU_ALPHA",
    "LRELU_SLOPE",
    "apply_activation",
    "Adam",
    "BatchNorm",
    "Branch",
    "Conv2D",
    "Dense",
    "Dropout",
    "LSTM",
    "Masking",
    "MaxPool2D",
    "Param",
    "RepetitionNetwork",
    "Softmax",
    "glorot_uniform",
    "load_checkpoint",
    "save_checkpoint",
    "softmax_crossentropy",
]
