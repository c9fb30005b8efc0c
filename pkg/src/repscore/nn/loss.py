"""Categorical cross-entropy with fused softmax."""

import numpy as np

from ..errors import NumericError


def softmax_crossentropy(logits, onehot):
    """Mean categorical cross-entropy of softmax(logits) against one-hot labels.

    Returns ``(loss, probs, dlogits)`` where ``dlogits`` is the gradient of the
    mean loss with respect to the logits.  Rejects non-finite logits and labels
    that are not valid one-hot rows.
    """
    logits = np.asarray(logits)
    onehot = np.asarray(onehot)
    if logits.shape != onehot.shape:
        raise ValueError(f"logits shape {logits.shape} != labels shape {onehot.shape}")
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite logits passed to softmax_crossentropy")
    if not (np.all((onehot == 0) | (onehot == 1)) and np.all(onehot.sum(axis=-1) == 1)):
        raise ValueError("labels must be one-hot rows")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    log_probs = shifted - log_z
    probs = np.exp(log_probs)
    n = logits.shape[0]
    losses = -(onehot * log_probs).sum(axis=-1)
    loss = losses.mean()
    dlogits = (probs - onehot) / n
    return loss, probs, dlogits
