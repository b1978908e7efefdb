"""Softmax cross-entropy, numerically stabilized."""
from __future__ import annotations

import numpy as np

from ..mask import ValidationError


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax of a (batch, classes) array, stabilized by max subtraction."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits.

    The gradient of the mean loss is (softmax - one_hot) / batch_size.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise ValidationError(f"logits must be (batch, classes), got shape {logits.shape}")
    b, c = logits.shape
    if labels.shape != (b,):
        raise ValidationError(f"labels shape {labels.shape} does not match batch size {b}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValidationError(f"labels must lie in [0, {c}), got range [{labels.min()}, {labels.max()}]")

    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(b)
    losses = log_z - shifted[rows, labels]
    loss = float(losses.mean())

    grad = softmax(logits)
    grad[rows, labels] -= 1.0
    grad /= b
    return loss, grad
