"""Per-view visual vocabularies: seeded k-means fitting and quantization.

Vocabularies are fit per view with Lloyd's algorithm (k-means++ seeding)
so that every run is reproducible from (samples, k, seed, max_iter) alone.
Quantization maps each descriptor to its nearest centroid in Euclidean
distance, ties broken toward the lower centroid index.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imaging import FeatureField


@dataclass(frozen=True)
class Vocabulary:
    view: int
    centroids: np.ndarray  # (k, dim) float64
    seed: int | None = None

    def __post_init__(self) -> None:
        c = self.centroids
        if c.ndim != 2 or c.shape[0] < 1:
            raise ValueError(f"centroids must be (k, dim) with k >= 1, got {c.shape}")
        if not np.isfinite(c).all():
            raise ValueError("centroids must be finite")

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


@dataclass(frozen=True)
class WordGrid:
    """Word index in [0, k) per anchor location."""

    words: np.ndarray  # (height, width) int
    k: int

    def __post_init__(self) -> None:
        w = self.words
        if w.ndim != 2:
            raise ValueError(f"words must be 2-D, got shape {w.shape}")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if w.size and (w.min() < 0 or w.max() >= self.k):
            raise ValueError("word indices must lie in [0, k)")

    @property
    def height(self) -> int:
        return self.words.shape[0]

    @property
    def width(self) -> int:
        return self.words.shape[1]


def _nearest(points: np.ndarray, centroids: np.ndarray, block: int = 1024):
    """Exact nearest-centroid assignment, chunked to bound memory.

    Distances are computed as literal squared differences so that a
    brute-force rescan reproduces the assignment bit for bit; np.argmin
    returns the first minimum, which realizes the lowest-index tie rule.
    """
    n = points.shape[0]
    assign = np.empty(n, dtype=np.int64)
    dist = np.empty(n, dtype=np.float64)
    for start in range(0, n, block):
        chunk = points[start : start + block]
        d2 = np.sum((chunk[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
        assign[start : start + block] = np.argmin(d2, axis=1)
        dist[start : start + block] = d2[np.arange(len(chunk)), assign[start : start + block]]
    return assign, dist


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: first centroid uniform, then D^2 weighting."""
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]), dtype=np.float64)
    centroids[0] = points[rng.integers(n)]
    d2 = np.sum((points - centroids[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            # all mass covered; fall back to an unused distinct point
            remaining = np.flatnonzero(d2 > 0)
            idx = remaining[0] if remaining.size else rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centroids[j] = points[idx]
        d2 = np.minimum(d2, np.sum((points - centroids[j]) ** 2, axis=1))
    return centroids


def kmeans_fit(
    samples: np.ndarray,
    k: int,
    seed: int = 0,
    max_iter: int = 100,
    view: int = 0,
) -> Vocabulary:
    """Fit a k-word vocabulary with seeded k-means++ / Lloyd iterations.

    Stops when assignments are unchanged or after max_iter sweeps; the
    within-cluster inertia is non-increasing across sweeps.  A cluster
    that empties is reseeded to the sample farthest from its assigned
    centroid, keeping the vocabulary at exactly k words.
    """
    pts = np.asarray(samples, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ValueError("samples must be a nonempty (n, dim) array")
    n_distinct = np.unique(pts, axis=0).shape[0]
    if k > n_distinct:
        raise ValueError(f"k={k} exceeds {n_distinct} distinct samples")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(pts, k, rng)
    assign = np.full(pts.shape[0], -1, dtype=np.int64)
    for _ in range(max_iter):
        new_assign, d2 = _nearest(pts, centroids)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            members = assign == j
            if members.any():
                centroids[j] = pts[members].mean(axis=0)
        empties = np.flatnonzero(~np.isin(np.arange(k), assign))
        for j in empties:
            far = int(np.argmax(d2))
            centroids[j] = pts[far]
            d2[far] = 0.0
    return Vocabulary(view=view, centroids=centroids, seed=seed)


def inertia(samples: np.ndarray, vocab: Vocabulary) -> float:
    """Sum of squared distances to each sample's nearest centroid."""
    pts = np.asarray(samples, dtype=np.float64)
    _, d2 = _nearest(pts, vocab.centroids)
    return float(d2.sum())


def quantize(field: FeatureField, vocab: Vocabulary) -> WordGrid:
    """Map every location of a feature field to its nearest visual word."""
    if field.dim != vocab.dim:
        raise ValueError(f"feature dim {field.dim} != centroid dim {vocab.dim}")
    flat = field.vectors.reshape(-1, field.dim).astype(np.float64)
    assign, _ = _nearest(flat, vocab.centroids)
    return WordGrid(assign.reshape(field.height, field.width), k=vocab.k)


def sample_training_features(
    fields: list[FeatureField], n: int, seed: int = 0
) -> np.ndarray:
    """Draw n descriptors uniformly from the pooled fields.

    Sampling is without replacement (a permutation when n equals the pool
    size) and falls back to with-replacement draws only when n exceeds
    the pool.
    """
    if not fields:
        raise ValueError("no feature fields to sample from")
    pool = np.concatenate([f.vectors.reshape(-1, f.dim) for f in fields], axis=0)
    rng = np.random.default_rng(seed)
    total = pool.shape[0]
    idx = rng.choice(total, size=n, replace=n > total)
    return pool[idx].astype(np.float64)


def export_centroids_csv(vocab: Vocabulary, path: str | Path) -> None:
    """Write centroids as plain CSV, one centroid per row."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in vocab.centroids:
            writer.writerow(f"{x:.17g}" for x in row)


def read_centroids_csv(path: str | Path, view: int = 0) -> Vocabulary:
    """Load a vocabulary from its CSV export (seed provenance is lost)."""
    centroids = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    return Vocabulary(view=view, centroids=centroids, seed=None)
