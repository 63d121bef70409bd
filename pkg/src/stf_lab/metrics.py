"""Two-sample diagnostics: energy distance and moment comparisons.

The energy distance is the V-statistic

    D(X, Y) = 2 E||X - Y|| - E||X - X'|| - E||Y - Y'||

with all expectations over every ordered pair including the diagonal, so
identical sample sets give exactly 0 and singleton sets give 2 ||x - y||.
Pairwise norms are accumulated in row chunks to bound memory.
"""

from __future__ import annotations

import numpy as np


def _mean_pairwise_norm(x: np.ndarray, y: np.ndarray, chunk: int = 256) -> float:
    total = 0.0
    for lo in range(0, x.shape[0], chunk):
        hi = min(lo + chunk, x.shape[0])
        diff = x[lo:hi, None, :] - y[None, :, :]
        total += np.sqrt(np.einsum("ijd,ijd->ij", diff, diff)).sum()
    return total / (x.shape[0] * y.shape[0])


def energy_distance(x: np.ndarray, y: np.ndarray) -> float:
    """V-statistic energy distance between two sample sets of equal dimension."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if x.shape[0] == 0 or y.shape[0] == 0:
        raise ValueError("empty sample set")
    if x.shape[1] != y.shape[1]:
        raise ValueError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
    return 2.0 * _mean_pairwise_norm(x, y) - _mean_pairwise_norm(x, x) - _mean_pairwise_norm(y, y)


def moment_diagnostics(x: np.ndarray, y: np.ndarray) -> dict:
    """Mean/covariance discrepancies between two sample sets."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if x.shape[1] != y.shape[1]:
        raise ValueError("dimension mismatch")
    mean_gap = float(np.linalg.norm(x.mean(axis=0) - y.mean(axis=0)))
    cx = np.cov(x, rowvar=False).reshape(x.shape[1], x.shape[1])
    cy = np.cov(y, rowvar=False).reshape(y.shape[1], y.shape[1])
    cov_gap = float(np.linalg.norm(cx - cy) / max(np.linalg.norm(cy), 1e-300))
    return {"mean_gap": mean_gap, "cov_rel_frobenius_gap": cov_gap}
