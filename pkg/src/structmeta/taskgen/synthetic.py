"""Planted-cluster binary task databases.

Each cluster owns a base decision boundary through the origin. Tasks in a
cluster tilt that boundary by a small vector drawn from the orthogonal
complement of all cluster bases, which keeps within-cluster boundaries close
(cosine >= (1 - p^2) / (1 + p^2) for tilt norm p) and cross-cluster cosines
at most p^2 / (1 + p^2) away from the layout's base cosine. Every task draws
inputs from the same standard normal sampler; only the labelling differs.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError
from .data import BINARY_TASK, Dataset, TaskDatabase

LAYOUTS = ("orthogonal", "conflicting")


def cluster_assignment(K: int, n_clusters: int) -> np.ndarray:
    """Contiguous, balanced cluster labels (sizes differ by at most one)."""
    return (np.arange(K) * n_clusters) // K


def planted_boundaries(
    K: int,
    n_clusters: int,
    dim: int,
    seed: int,
    layout: str = "orthogonal",
    tilt: float = 0.2,
) -> tuple[np.ndarray, np.ndarray]:
    """Unit boundary normals, shape (K, dim), and their cluster labels.

    ``orthogonal`` gives mutually orthogonal cluster bases. ``conflicting``
    places the bases on a regular simplex (pairwise cosine -1/(n-1)), so no
    single boundary serves two clusters.
    """
    if not K >= n_clusters >= 1:
        raise ConfigError(f"need K >= n_clusters >= 1, got K={K}, n_clusters={n_clusters}")
    if dim < 2:
        raise ConfigError("dim must be at least 2")
    if n_clusters > dim:
        raise ConfigError(f"{n_clusters} cluster bases do not fit in {dim} dimensions")
    if layout not in LAYOUTS:
        raise ConfigError(f"unknown layout {layout!r}")
    rng = np.random.default_rng([seed, 1])
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    if layout == "orthogonal" or n_clusters == 1:
        bases = q[:, :n_clusters].T
    else:
        simplex = np.eye(n_clusters) - 1.0 / n_clusters
        simplex /= np.linalg.norm(simplex, axis=1, keepdims=True)
        bases = simplex @ q[:, :n_clusters].T
    complement = q[:, n_clusters:]
    clusters = cluster_assignment(K, n_clusters)
    normals = np.empty((K, dim))
    for t in range(K):
        w = bases[clusters[t]].copy()
        if complement.shape[1] and tilt > 0:
            u = complement @ rng.standard_normal(complement.shape[1])
            w += tilt * u / np.linalg.norm(u)
        normals[t] = w / np.linalg.norm(w)
    return normals, clusters


def _draw(rng, dim, count, accept, batch=256, max_rounds=2000):
    got = []
    total = 0
    for _ in range(max_rounds):
        x = rng.standard_normal((batch, dim))
        x = x[accept(x)]
        got.append(x)
        total += len(x)
        if total >= count:
            return np.concatenate(got)[:count]
    return None


def gen_synthetic_tasks(
    K: int,
    n_clusters: int,
    dim: int,
    n_per_task: int,
    noise: float = 0.0,
    seed: int = 0,
    layout: str = "orthogonal",
    tilt: float = 0.2,
    max_positives: int = 100,
) -> TaskDatabase:
    """Balanced binary tasks with planted cluster structure.

    Positives satisfy ``w_t . x > 0``. Each negative is taken from the positive
    region of another, randomly chosen task while staying on the negative side
    of ``w_t``; with K = 1 (or when that region is too thin to sample) it is a
    plain negative-side draw. ``noise`` is a label-flip probability.
    """
    if n_per_task < 4:
        raise ConfigError("n_per_task must be at least 4")
    if not 0 <= noise < 0.5:
        raise ConfigError("noise is a flip probability in [0, 0.5)")
    n_pos = n_per_task // 2
    n_neg = n_per_task - n_pos
    if n_pos > max_positives:
        raise ConfigError(f"{n_pos} positives per task exceeds the ceiling of {max_positives}")
    normals, clusters = planted_boundaries(K, n_clusters, dim, seed, layout, tilt)
    datasets = []
    for t in range(K):
        rng = np.random.default_rng([seed, 2, t])
        w = normals[t]
        pos = _draw(rng, dim, n_pos, lambda x: x @ w > 0)
        others = [o for o in range(K) if o != t]
        negs = []
        picks = rng.choice(others, size=n_neg) if others else np.full(n_neg, -1)
        for o in picks:
            x = None
            if o >= 0:
                v = normals[o]
                x = _draw(rng, dim, 1, lambda z: (z @ v > 0) & (z @ w <= 0), batch=64, max_rounds=50)
            if x is None:
                x = _draw(rng, dim, 1, lambda z: z @ w <= 0, batch=8)
            negs.append(x[0])
        inputs = np.concatenate([pos, np.array(negs)])
        labels = np.concatenate([np.ones(n_pos, np.int64), np.zeros(n_neg, np.int64)])
        if noise > 0:
            flip = rng.random(labels.size) < noise
            labels = np.where(flip, 1 - labels, labels)
        order = rng.permutation(labels.size)
        datasets.append(Dataset(inputs[order], labels[order], BINARY_TASK, f"task-{t:03d}"))
    return TaskDatabase(datasets, ground_truth_clusters=clusters)


def gen_pretrain_corpus(dim: int, n: int = 400, n_classes: int = 4, seed: int = 0) -> Dataset:
    """Multiclass corpus on the same input sampler: label = argmax of random projections."""
    if n_classes < 2 or n < n_classes:
        raise ConfigError("need n_classes >= 2 and n >= n_classes")
    rng = np.random.default_rng([seed, 5])
    proj = rng.standard_normal((n_classes, dim))
    x = rng.standard_normal((n, dim))
    return Dataset(x, np.argmax(x @ proj.T, axis=1), "multiclass-domain", "pretrain", n_classes)
