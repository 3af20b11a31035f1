"""Log-domain helpers shared by the dynamic programs."""

import numpy as np


def logsumexp(a, axis=-1):
    """Stable ``log(sum(exp(a)))`` along ``axis``.

    Slices that are entirely ``-inf`` reduce to ``-inf`` without warnings.
    """
    a = np.asarray(a, dtype=float)
    m = np.max(a, axis=axis, keepdims=True)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.sum(np.exp(a - safe), axis=axis, keepdims=True)
        out = np.log(s) + safe
    out = np.where(np.isneginf(m), -np.inf, out)
    return np.squeeze(out, axis=axis)


def logaddexp_many(arrays):
    """Elementwise log-sum-exp of a list of equally shaped arrays."""
    m = arrays[0]
    for arr in arrays[1:]:
        m = np.maximum(m, arr)
    safe = np.where(np.isfinite(m), m, 0.0)
    total = np.zeros_like(m)
    with np.errstate(invalid="ignore"):
        for arr in arrays:
            total += np.exp(arr - safe)
    with np.errstate(divide="ignore"):
        out = np.log(total) + safe
    return np.where(np.isneginf(m), -np.inf, out)
