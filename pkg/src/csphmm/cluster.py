"""Lloyd k-means with k-means++ seeding and farthest-point empty-cluster repair."""

import numpy as np
from scipy.spatial.distance import cdist


def _plusplus(X, k, rng):
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = cdist(X, centers[:1], "sqeuclidean")[:, 0]
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[i] = X[rng.integers(n)]
        else:
            centers[i] = X[min(int(np.searchsorted(np.cumsum(d2), rng.random() * total)), n - 1)]
        d2 = np.minimum(d2, cdist(X, centers[i : i + 1], "sqeuclidean")[:, 0])
    return centers


def kmeans(X, k, rng=None, max_iter=100, tol=1e-8):
    """Cluster rows of ``X`` into ``k`` groups.

    Returns ``(centroids, labels, distortions)`` where ``distortions[i]`` is the
    mean squared quantization error after the i-th assignment step.
    """
    X = np.asarray(X, dtype=float)
    rng = np.random.default_rng(rng)
    if k < 1 or k > X.shape[0]:
        raise ValueError(f"need 1 <= k <= {X.shape[0]}, got {k}")
    centers = _plusplus(X, k, rng)
    trace = []
    for _ in range(max_iter):
        d2 = cdist(X, centers, "sqeuclidean")
        labels = d2.argmin(axis=1)
        dmin = d2[np.arange(len(X)), labels]
        trace.append(float(dmin.mean()))
        new = centers.copy()
        counts = np.bincount(labels, minlength=k)
        for j in range(k):
            if counts[j]:
                new[j] = X[labels == j].mean(axis=0)
        for j in np.flatnonzero(counts == 0):
            far = int(dmin.argmax())
            new[j] = X[far]
            dmin[far] = 0.0
        shift = np.sqrt(((new - centers) ** 2).sum(axis=1)).max()
        centers = new
        if shift < tol:
            break
    d2 = cdist(X, centers, "sqeuclidean")
    labels = d2.argmin(axis=1)
    trace.append(float(d2[np.arange(len(X)), labels].mean()))
    return centers, labels, trace
