"""Central finite differences for gradient verification.

Meant to run on float64 copies of layers/models; at float32 the
difference quotient noise floor sits above real bugs.
"""

import numpy as np


def numeric_gradient(f, x, step=1e-5):
    """Central-difference gradient of scalar f at x, coordinate by coordinate."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + step
        fp = f(x)
        flat[idx] = orig - step
        fm = f(x)
        flat[idx] = orig
        gflat[idx] = (fp - fm) / (2.0 * step)
    return grad


def finite_diff_check(f, x, analytic_grad, step=1e-5):
    """Max relative error between analytic_grad and the central-difference
    gradient of f at x.

    The denominator max(1, |analytic|, |numeric|) keeps tiny entries from
    inflating the ratio.
    """
    numeric = numeric_gradient(f, x, step=step)
    analytic = np.asarray(analytic_grad, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))
