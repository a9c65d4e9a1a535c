"""Stateless numeric helpers."""

import numpy as np


def softmax_time_distributed(logits):
    """Row-wise softmax over the last axis, stable under large logits.

    Accepts (T, K) or any (..., K); each row sums to 1.
    """
    logits = np.asarray(logits)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits):
    logits = np.asarray(logits)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def sigmoid(x):
    # exp overflow at very negative x saturates to inf, giving an exact 0
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))
