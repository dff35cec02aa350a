"""Pure-Python/numpy implementations of the hot kernels.

These mirror ``_ckernels.pyx`` signature for signature and are used when the
compiled extension is unavailable (or ``ADAPTMIT_PURE_PYTHON=1``).
"""
from __future__ import annotations

import numpy as np


def tally_shots(uniforms: np.ndarray, p: float, true_bit: int):
    """Apply bit flips to ``true_bit`` repeated across each row and decode.

    ``uniforms`` has shape (shots, d); bit j of a shot flips when
    ``uniforms[i, j] < p``. Returns ``(decode_errors, detection_events, hist)``
    where ``hist[k]`` counts outcomes whose bitstring, read left to right, is
    the binary expansion of ``k``.
    """
    u = np.ascontiguousarray(uniforms, dtype=np.float64)
    shots, d = u.shape
    bits = (u < p).astype(np.int64) ^ int(true_bit)
    ones = bits.sum(axis=1)
    b_hat = (2 * ones > d).astype(np.int64)
    decode_errors = int(np.count_nonzero(b_hat != true_bit))
    detections = int(np.count_nonzero((ones != 0) & (ones != d)))
    weights = 1 << np.arange(d - 1, -1, -1, dtype=np.int64)
    hist = np.bincount(bits @ weights, minlength=1 << d).astype(np.int64)
    return decode_errors, detections, hist


def bmu_batch(weights: np.ndarray, data: np.ndarray):
    """Best-matching unit index and Euclidean distance for every row of ``data``.

    Ties go to the lowest unit index.
    """
    w = np.ascontiguousarray(weights, dtype=np.float64)
    x = np.ascontiguousarray(data, dtype=np.float64)
    idx = np.empty(x.shape[0], dtype=np.int64)
    dist = np.empty(x.shape[0], dtype=np.float64)
    for i in range(x.shape[0]):
        diff = w - x[i]
        d2 = np.einsum("ij,ij->i", diff, diff)
        k = int(np.argmin(d2))
        idx[i] = k
        dist[i] = np.sqrt(d2[k])
    return idx, dist


def som_train_steps(
    weights: np.ndarray,
    grid_d2: np.ndarray,
    data: np.ndarray,
    order: np.ndarray,
    lr: np.ndarray,
    radius: np.ndarray,
) -> None:
    """Online SOM updates, in place on ``weights``.

    Step k presents ``data[order[k]]`` with learning rate ``lr[k]`` and
    Gaussian neighbourhood radius ``radius[k]``; ``grid_d2`` holds squared
    lattice distances between units.
    """
    w = weights
    for k in range(order.shape[0]):
        x = data[order[k]]
        diff = x - w
        d2 = np.einsum("ij,ij->i", diff, diff)
        b = int(np.argmin(d2))
        r = radius[k]
        h = np.exp(-grid_d2[b] / (2.0 * r * r))
        w += (lr[k] * h)[:, None] * diff
