"""Shallow reference detectors: k-NN mean distance and PCA reconstruction error."""

import warnings

import numpy as np

from .data import Dataset
from .rbm import expand

# Max float64 cells in one broadcast distance block (~32 MB).
_KNN_BLOCK_CELLS = 1 << 22


def numeric_matrix(data: Dataset) -> np.ndarray:
    """Numeric view of mixed data: nominal one-hot, everything else as stored."""
    return np.array(expand(tuple(data.schema), data.values))


def _as_2d(x, name):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"{name} must be a 2-D matrix")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} has non-finite entries")
    return x


def knn_score(train, query=None, k: int = 10) -> np.ndarray:
    """Mean Euclidean distance from each query row to its ``k`` nearest
    training rows. With ``query=None`` the training rows are scored and each
    row is excluded from its own neighbour list.
    """
    train = _as_2d(train, "train")
    self_scoring = query is None
    query = train if self_scoring else _as_2d(query, "query")
    if query.shape[1] != train.shape[1]:
        raise ValueError("train and query have different widths")
    available = train.shape[0] - (1 if self_scoring else 0)
    if k < 1 or k > available:
        raise ValueError(f"k={k} but only {available} neighbours are available")
    step = max(1, _KNN_BLOCK_CELLS // max(1, train.shape[0] * train.shape[1]))
    out = np.empty(query.shape[0])
    for start in range(0, query.shape[0], step):
        q = query[start : start + step]
        d = np.sqrt(np.sum((q[:, None, :] - train[None, :, :]) ** 2, axis=-1))
        if self_scoring:
            d[np.arange(q.shape[0]), np.arange(start, start + q.shape[0])] = np.inf
        out[start : start + q.shape[0]] = np.sort(d, axis=1)[:, :k].mean(axis=1)
    return out


def pca_components(train, discard_fraction: float):
    """Mean and the leading principal axes (columns) that together hold at
    least ``1 - discard_fraction`` of the total variance."""
    if not 0 < discard_fraction < 1:
        raise ValueError("discard_fraction must lie in (0, 1)")
    train = _as_2d(train, "train")
    if train.shape[0] < 2:
        raise ValueError("PCA needs at least two training rows")
    mean = train.mean(axis=0)
    centered = train - mean
    cov = centered.T @ centered / (train.shape[0] - 1)
    evals, evecs = np.linalg.eigh(cov)
    # eigh is ascending; reversing puts equal eigenvalues in descending index order
    evals, evecs = np.clip(evals[::-1], 0.0, None), evecs[:, ::-1]
    total = evals.sum()
    if total <= 0:
        return mean, evecs[:, :0], total
    cum = np.cumsum(evals)
    n_keep = int(np.searchsorted(cum, (1.0 - discard_fraction) * total * (1 - 1e-12))) + 1
    return mean, evecs[:, : min(n_keep, evals.size)], total


def pca_score(train, query=None, discard_fraction: float = 0.05) -> np.ndarray:
    """Squared reconstruction error of mean-centred rows after projecting onto
    the kept principal axes. Set ``discard_fraction`` to the expected outlier
    rate."""
    mean, axes, total = pca_components(train, discard_fraction)
    query = np.asarray(train if query is None else query, dtype=np.float64)
    if total <= 0:
        warnings.warn("training data has zero variance; PCA scores are all zero", RuntimeWarning, stacklevel=2)
        return np.zeros(query.shape[0])
    centered = query - mean
    resid = centered - (centered @ axes) @ axes.T
    return np.sum(resid * resid, axis=1)
