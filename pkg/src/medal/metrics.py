"""Structure-preservation metrics: LCMC and random triplet accuracy."""

from __future__ import annotations

from typing import Sequence

import numpy as np

__all__ = ["knn_indices", "lcmc", "triplet_accuracy", "k_range"]


def _arr(X) -> np.ndarray:
    return np.asarray(getattr(X, "values", getattr(X, "coords", X)), dtype=np.float64)


def _sq_dists_block(X: np.ndarray, rows: slice) -> np.ndarray:
    diff = X[rows, None, :] - X[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def knn_indices(X, k: int, block_elems: int = 2_000_000) -> np.ndarray:
    """Brute-force ``k`` nearest neighbours of every row, excluding itself.

    Distance ties are broken by ascending index.
    """
    X = _arr(X)
    n, p = X.shape
    if not 1 <= k < n:
        raise ValueError(f"k={k} out of range [1, {n - 1}]")
    out = np.empty((n, k), dtype=np.int64)
    step = max(1, block_elems // max(1, n * p))
    for start in range(0, n, step):
        stop = min(n, start + step)
        D = _sq_dists_block(X, slice(start, stop))
        D[np.arange(stop - start), np.arange(start, stop)] = np.inf
        out[start:stop] = np.argsort(D, axis=1, kind="stable")[:, :k]
    return out


def k_range(lo: int, hi: int, step: int = 1) -> list[int]:
    """Inclusive integer range, e.g. ``k_range(5, 50, 5)``."""
    return list(range(lo, hi + 1, step))


def lcmc(X, Z, k_values: Sequence[int] | int) -> tuple[dict[int, float], float]:
    """Local Continuity Meta-Criterion per ``k`` and its mean.

    ``LCMC(k) = sum_i |N_k^X(i) & N_k^Z(i)| / (n k) - k / (n - 1)``
    """
    X, Z = _arr(X), _arr(Z)
    if X.shape[0] != Z.shape[0]:
        raise ValueError("X and Z must have the same number of rows")
    n = X.shape[0]
    ks = [int(k_values)] if np.isscalar(k_values) else [int(k) for k in k_values]
    if not ks:
        raise ValueError("empty k list")
    for k in ks:
        if not 1 <= k < n:
            raise ValueError(f"k={k} out of range [1, {n - 1}]")
    kmax = max(ks)
    NX = knn_indices(X, kmax)
    NZ = knn_indices(Z, kmax)
    scores = {}
    for k in ks:
        overlap = 0
        for i in range(n):
            overlap += len(np.intersect1d(NX[i, :k], NZ[i, :k], assume_unique=True))
        scores[k] = overlap / (n * k) - k / (n - 1)
    return scores, float(np.mean(list(scores.values())))


def triplet_accuracy(X, Z, n_triplets: int = 5000, seed: int = 0) -> float:
    """Fraction of random triplets whose distance order agrees between X and Z.

    For anchor ``i`` and distinct ``j, k`` the relation is the sign of
    ``d(i, j) - d(i, k)``; equality counts as its own relation.
    """
    X, Z = _arr(X), _arr(Z)
    n = X.shape[0]
    if n < 3:
        raise ValueError("triplet accuracy needs at least 3 points")
    if Z.shape[0] != n:
        raise ValueError("X and Z must have the same number of rows")
    rng = np.random.default_rng(seed)
    i = rng.integers(0, n, n_triplets)
    j = rng.integers(0, n - 1, n_triplets)
    j += j >= i
    k = rng.integers(0, n - 2, n_triplets)
    lo, hi = np.minimum(i, j), np.maximum(i, j)
    k += k >= lo
    k += k >= hi

    def order(A):
        dij = np.sum((A[i] - A[j]) ** 2, axis=1)
        dik = np.sum((A[i] - A[k]) ** 2, axis=1)
        return np.sign(dij - dik)

    return float(np.mean(order(X) == order(Z)))
