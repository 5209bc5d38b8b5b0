"""Pure numpy implementations of the hot kernels.

Every function here has a twin in ``_kernels.pyx`` with the same signature and
bit-identical results; ``kernels.py`` picks one at import time.
"""
import numpy as np


def adam_update(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
    """In-place Adam update of ``p``, ``m`` and ``v`` (all C-contiguous float64).

    ``bc1``/``bc2`` are the bias-correction denominators ``1 - beta**t``.
    """
    c1 = 1.0 - beta1
    c2 = 1.0 - beta2
    m *= beta1
    m += c1 * g
    v *= beta2
    v += (c2 * g) * g
    p -= (lr * (m / bc1)) / (np.sqrt(v / bc2) + eps)


def sample_from_cdf(u, cdf, rows):
    """Inverse-CDF sampling: for sample ``i`` use row ``rows[i]`` of ``cdf``.

    Returns the smallest ``j`` with ``u[i] < cdf[rows[i], j]`` (clipped to the last class).
    """
    k = cdf.shape[1]
    out = (cdf[rows] <= u[:, None]).sum(axis=1)
    np.minimum(out, k - 1, out=out)
    return out.astype(np.int64)


def vote(labels, n_classes, u):
    """Row-wise mode of an ``(n, s)`` int64 label matrix.

    Ties go to the ``floor(u[i] * n_ties)``-th tied class in ascending order.
    Returns ``(winners, counts)``.
    """
    n = labels.shape[0]
    counts = np.zeros((n, n_classes), dtype=np.int64)
    rows = np.arange(n)
    for j in range(labels.shape[1]):
        np.add.at(counts, (rows, labels[:, j]), 1)
    best = counts.max(axis=1)
    is_max = counts == best[:, None]
    n_ties = is_max.sum(axis=1)
    pick = np.floor(u * n_ties).astype(np.int64)
    np.minimum(pick, n_ties - 1, out=pick)
    rank = np.cumsum(is_max, axis=1) - 1
    winners = np.argmax(is_max & (rank == pick[:, None]), axis=1).astype(np.int64)
    return winners, counts


def confusion(true, pred, n_classes):
    """``n_classes x n_classes`` count matrix, rows = true class, columns = predicted."""
    flat = true.astype(np.int64) * n_classes + pred.astype(np.int64)
    return np.bincount(flat, minlength=n_classes * n_classes).reshape(n_classes, n_classes)
