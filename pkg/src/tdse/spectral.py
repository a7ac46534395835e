"""Spectral clustering of industry index series.

Fully connected Gaussian graph -> symmetric normalized Laplacian -> the k
smallest eigenvectors -> k-means on the embedded rows. The number of
clusters can be picked with an elbow rule.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (ConvergenceFailure, NonPositiveSigma, RangeTooNarrow, TooFewRows,
                     ZeroDegreeRow)


@dataclass
class IndustryMatrix:
    industries: list[str]
    features: np.ndarray  # (n, l)

    def __post_init__(self):
        self.industries = [str(s) for s in self.industries]
        self.features = np.asarray(self.features, dtype=float)
        if self.features.ndim == 1:
            self.features = self.features[:, None]
        if len(self.industries) != self.features.shape[0]:
            raise ValueError("one feature row per industry required")
        if len(self.industries) < 2 or self.features.shape[1] < 1:
            raise TooFewRows("need at least 2 industries and 1 feature")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("industry features must be finite")

    def sorted(self) -> "IndustryMatrix":
        order = sorted(range(len(self.industries)), key=lambda i: self.industries[i])
        return IndustryMatrix([self.industries[i] for i in order], self.features[order])


@dataclass
class Clustering:
    k: int
    assignment: dict[str, int]
    centroids: np.ndarray  # (k, k) in embedded space
    inertia: float = 0.0  # k-means objective in embedded space
    feature_inertia: float = 0.0  # within-cluster SSE of the raw features
    sigma: float = float("nan")
    eigenvalues: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def members(self, cluster: int) -> list[str]:
        return sorted(n for n, c in self.assignment.items() if c == cluster)

    def groups(self) -> list[list[str]]:
        return [self.members(c) for c in range(self.k)]


def pairwise_distances(features) -> np.ndarray:
    x = np.asarray(features, dtype=float)
    sq = np.sum(x * x, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2 * x @ x.T, 0.0)
    np.fill_diagonal(d2, 0.0)
    return np.sqrt(d2)


def median_sigma(features) -> float:
    """Median of the off-diagonal pairwise distances (1.0 if they are all 0)."""
    d = pairwise_distances(features)
    iu = np.triu_indices(len(d), 1)
    med = float(np.median(d[iu])) if len(iu[0]) else 0.0
    return med if med > 0 else 1.0


def similarity_matrix(m: IndustryMatrix, sigma: float, squared: bool = False) -> np.ndarray:
    """A_ij = exp(-d_ij / (2 sigma^2)) with plain Euclidean d (``squared`` uses d^2)."""
    if not sigma > 0:
        raise NonPositiveSigma(f"sigma must be positive, got {sigma}")
    d = pairwise_distances(m.features)
    if squared:
        d = d * d
    a = np.exp(-d / (2.0 * sigma * sigma))
    np.fill_diagonal(a, 1.0)
    return a


def normalized_laplacian(a) -> np.ndarray:
    """D^{-1/2} (D - A) D^{-1/2}."""
    a = np.asarray(a, dtype=float)
    deg = a.sum(axis=1)
    if np.any(deg <= 0):
        raise ZeroDegreeRow(f"rows with zero degree: {np.flatnonzero(deg <= 0).tolist()}")
    inv = 1.0 / np.sqrt(deg)
    lap = np.diag(deg) - a
    out = inv[:, None] * lap * inv[None, :]
    return 0.5 * (out + out.T)


def jacobi_eigh(m, tol: float = 1e-14, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi eigen-decomposition of a symmetric matrix.

    Returns ascending eigenvalues and the matching orthonormal eigenvectors
    (columns), each column signed so its largest-magnitude entry is positive.
    """
    a = np.array(m, dtype=float)
    n = a.shape[0]
    if a.shape != (n, n) or not np.allclose(a, a.T, atol=1e-12 * max(1.0, np.abs(a).max(initial=0))):
        raise ValueError("matrix must be square and symmetric")
    v = np.eye(n)
    scale = max(np.linalg.norm(a), 1e-300)
    for _ in range(max_sweeps):
        off = np.linalg.norm(a - np.diag(np.diag(a)))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) < 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta != 0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rp, rq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                cp, cq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * cp - s * cq
                a[:, q] = s * cp + c * cq
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        off = np.linalg.norm(a - np.diag(np.diag(a)))
        if off > 1e-10 * scale:
            raise ConvergenceFailure(f"Jacobi did not converge in {max_sweeps} sweeps (off={off:.3g})")
    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    w, v = w[order], v[:, order]
    for j in range(n):
        i = int(np.argmax(np.abs(v[:, j])))
        if v[i, j] < 0:
            v[:, j] = -v[:, j]
    return w, v


def smallest_eigenvectors(m, k: int) -> tuple[np.ndarray, np.ndarray]:
    """(eigenvalues[:k], Z) with Z the n x k matrix of matching eigenvectors."""
    n = np.shape(m)[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} must lie in [1, {n}]")
    w, v = jacobi_eigh(m)
    return w[:k], v[:, :k]


# -------------------------------------------------------------------- k-means


def _sse(x, labels, k) -> float:
    return float(sum(np.sum((x[labels == c] - x[labels == c].mean(axis=0)) ** 2)
                     for c in range(k) if np.any(labels == c)))


def _plusplus(x, k, rng) -> np.ndarray:
    n = len(x)
    centers = [x[rng.integers(n)]]
    for _ in range(1, k):
        d2 = np.min([np.sum((x - c) ** 2, axis=1) for c in centers], axis=0)
        total = d2.sum()
        idx = rng.integers(n) if total <= 0 else rng.choice(n, p=d2 / total)
        centers.append(x[idx])
    return np.array(centers)


def _repair_empty(x, labels, centers, k):
    for c in range(k):
        if not np.any(labels == c):
            d2 = np.sum((x - centers[labels]) ** 2, axis=1)
            # only steal from clusters that keep at least one point
            counts = np.bincount(labels, minlength=k)
            d2[counts[labels] <= 1] = -1.0
            far = int(np.argmax(d2))
            labels[far] = c
            centers[c] = x[far]
    return labels


def _lloyd(x, centers, k, max_iter=300, trace=None):
    labels = None
    for _ in range(max_iter):
        d2 = np.sum((x[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        new = np.argmin(d2, axis=1)
        new = _repair_empty(x, new, centers, k)
        if trace is not None:
            trace.append(_sse(x, new, k))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        centers = np.array([x[labels == c].mean(axis=0) for c in range(k)])
    return labels


def _hartigan(x, labels, k, max_pass=100):
    """Single-point transfers that strictly lower the SSE (fixes Lloyd local minima)."""
    labels = labels.copy()
    for _ in range(max_pass):
        moved = False
        for i in range(len(x)):
            a = labels[i]
            na = np.sum(labels == a)
            if na <= 1:
                continue
            ca = x[labels == a].mean(axis=0)
            cost_out = na / (na - 1) * np.sum((x[i] - ca) ** 2)
            best, gain = a, 0.0
            for b in range(k):
                if b == a:
                    continue
                nb = np.sum(labels == b)
                cb = x[labels == b].mean(axis=0)
                cost_in = nb / (nb + 1) * np.sum((x[i] - cb) ** 2)
                if cost_out - cost_in > gain + 1e-12:
                    best, gain = b, cost_out - cost_in
            if best != a:
                labels[i] = best
                moved = True
        if not moved:
            break
    return labels


def _canonical(labels, k):
    """Relabel clusters in order of first appearance."""
    mapping = {}
    for lab in labels:
        if lab not in mapping:
            mapping[lab] = len(mapping)
    for c in range(k):
        mapping.setdefault(c, len(mapping))
    return np.array([mapping[lab] for lab in labels])


def kmeans(rows, k: int, seed: int = 0, restarts: int = 10) -> tuple[np.ndarray, np.ndarray, float]:
    """Best-of-``restarts`` k-means (k-means++ seeding, Lloyd, Hartigan polish).

    Returns (labels, centroids, inertia); labels are numbered by first
    appearance so the result does not depend on internal cluster order.
    """
    x = np.asarray(rows, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = len(x)
    if k < 1 or n < k:
        raise TooFewRows(f"k-means needs n >= k (n={n}, k={k})")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        labels = _lloyd(x, _plusplus(x, k, rng), k)
        labels = _hartigan(x, labels, k)
        sse = _sse(x, labels, k)
        if best is None or sse < best[1] - 1e-12:
            best = (labels, sse)
    labels = _canonical(best[0], k)
    centroids = np.array([x[labels == c].mean(axis=0) for c in range(k)])
    return labels, centroids, best[1]


# ---------------------------------------------------------------- composition


def embed(m: IndustryMatrix, k: int, sigma: float | None = None, squared: bool = False,
          row_normalize: bool = False) -> tuple[np.ndarray, np.ndarray, float]:
    """Rows of the k smallest Laplacian eigenvectors; returns (Z, eigenvalues, sigma)."""
    sigma = median_sigma(m.features) if sigma is None else sigma
    lap = normalized_laplacian(similarity_matrix(m, sigma, squared))
    w, z = smallest_eigenvectors(lap, k)
    if row_normalize:
        norms = np.linalg.norm(z, axis=1, keepdims=True)
        z = z / np.where(norms > 0, norms, 1.0)
    return z, w, sigma


def _cluster_fixed_k(m: IndustryMatrix, k: int, sigma, seed, squared, row_normalize) -> Clustering:
    z, w, sigma = embed(m, k, sigma, squared, row_normalize)
    labels, centroids, inertia = kmeans(z, k, seed)
    return Clustering(
        k=k,
        assignment={name: int(c) for name, c in zip(m.industries, labels)},
        centroids=centroids,
        inertia=inertia,
        feature_inertia=_sse(m.features, labels, k),
        sigma=sigma,
        eigenvalues=w,
    )


def elbow_choice(inertias: Sequence[float], ks: Sequence[int]) -> int:
    """k with the largest second difference; ties -> smallest k; all-zero -> ks[0]."""
    inertias = np.asarray(inertias, dtype=float)
    if np.all(np.abs(inertias) <= 1e-12 * max(1.0, np.abs(inertias).max(initial=0))):
        return int(ks[0])
    second = inertias[:-2] - 2 * inertias[1:-1] + inertias[2:]
    tol = 1e-12 * max(1.0, np.abs(inertias).max())
    best = second.max()
    i = int(np.flatnonzero(second >= best - tol)[0])
    return int(ks[i + 1])


def elbow_select_k(m: IndustryMatrix, sigma: float | None = None, k_range: Sequence[int] | None = None,
                   seed: int = 0, squared: bool = False, row_normalize: bool = False) -> tuple[int, list[float]]:
    """Run the clustering for each k and apply the elbow rule to the
    within-cluster SSE of the raw industry features."""
    m = m.sorted()
    n = len(m.industries)
    ks = list(k_range) if k_range is not None else list(range(2, n))
    ks = [k for k in ks if 1 <= k <= n]
    if len(ks) < 3:
        raise RangeTooNarrow(f"elbow needs >= 3 candidate k, got {ks}")
    sigma = median_sigma(m.features) if sigma is None else sigma
    inertias = [_cluster_fixed_k(m, k, sigma, seed, squared, row_normalize).feature_inertia for k in ks]
    return elbow_choice(inertias, ks), inertias


def cluster_industries(m: IndustryMatrix, sigma: float | None = None, k: int | str = "auto", seed: int = 0,
                       squared: bool = False, row_normalize: bool = False,
                       k_range: Sequence[int] | None = None) -> Clustering:
    """Full pipeline. Rows are sorted by industry name first so the result
    does not depend on input order."""
    m = m.sorted()
    sigma = median_sigma(m.features) if sigma is None else sigma
    if k == "auto":
        k, _ = elbow_select_k(m, sigma, k_range, seed, squared, row_normalize)
    return _cluster_fixed_k(m, int(k), sigma, seed, squared, row_normalize)


def write_clustering_csv(c: Clustering, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["industry", "cluster"])
        for name in sorted(c.assignment):
            w.writerow([name, c.assignment[name]])
