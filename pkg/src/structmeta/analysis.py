"""Similarity matrices, spectral embeddings, neighbour queries and clustering."""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.cluster import KMeans

from .errors import NumericalError, StructMetaError
from .metaengine.core import loss_grad
from .models import ArchSpec


@dataclass
class SimilarityMatrix:
    values: np.ndarray
    names: list

    @property
    def K(self) -> int:
        return self.values.shape[0]

    def symmetrized(self) -> np.ndarray:
        return 0.5 * (self.values + self.values.T)


@dataclass
class Embedding:
    coords: np.ndarray
    singular_values: np.ndarray
    vt: np.ndarray
    names: list | None = None

    @property
    def d(self) -> int:
        return self.coords.shape[1]


def full_similarity_matrix(arch: ArchSpec, paramsets, db) -> SimilarityMatrix:
    """Entry (i, j) = ∇L_i(Θ_i) · ∇L_j(Θ_i) over the training split."""
    if len(paramsets) != db.K:
        raise ValueError(f"{len(paramsets)} parameter sets for {db.K} tasks")
    S = np.empty((db.K, db.K))
    for i, p in enumerate(paramsets):
        grads = [loss_grad(arch, p, d) for d in db.datasets]
        for j, gj in enumerate(grads):
            S[i, j] = float(np.dot(grads[i], gj))
            if not np.isfinite(S[i, j]):
                raise NumericalError(f"non-finite similarity at ({i}, {j})", task=i)
    return SimilarityMatrix(S, db.names)


def truncated_svd(
    S,
    d: int,
    symmetrize: bool = True,
    oversample: int = 10,
    tol: float = 1e-10,
    max_iter: int = 1000,
    seed: int = 0,
) -> Embedding:
    """Top-``d`` singular triplets by randomized subspace iteration.

    Iterates until the leading ``d`` singular values change by less than
    ``tol`` relative to the largest one. Coordinates are left singular vectors
    scaled by the singular values; each column's sign is fixed so that its
    largest-magnitude entry is positive.
    """
    names = S.names if isinstance(S, SimilarityMatrix) else None
    A = np.asarray(S.values if isinstance(S, SimilarityMatrix) else S, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got {A.shape}")
    K = A.shape[0]
    if not 1 <= d <= K:
        raise ValueError(f"d={d} must lie in [1, {K}]")
    if symmetrize:
        A = 0.5 * (A + A.T)
    width = min(K, d + oversample)
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(A @ rng.standard_normal((K, width)))
    prev = None
    for it in range(max_iter):
        B = Q.T @ A
        s = np.linalg.svd(B, compute_uv=False)[:d]
        scale = max(s[0], np.finfo(float).tiny)
        if width == K or (prev is not None and np.max(np.abs(s - prev)) <= tol * scale):
            break
        prev = s
        Q, _ = np.linalg.qr(A @ (A.T @ Q))
    else:
        warnings.warn(f"subspace iteration stopped after {max_iter} rounds without converging")
    Ub, s, Vt = np.linalg.svd(Q.T @ A, full_matrices=False)
    U = (Q @ Ub)[:, :d]
    s, Vt = s[:d], Vt[:d]
    flip = np.sign(U[np.argmax(np.abs(U), axis=0), np.arange(d)])
    flip[flip == 0] = 1.0
    U, Vt = U * flip, Vt * flip[:, None]
    return Embedding(U * s, s, Vt, names)


def reconstruction_error(S, emb: Embedding, symmetrize: bool = True) -> float:
    A = np.asarray(S.values if isinstance(S, SimilarityMatrix) else S, dtype=np.float64)
    if symmetrize:
        A = 0.5 * (A + A.T)
    return float(np.linalg.norm(A - emb.coords @ emb.vt))


def nearest_tasks(emb: Embedding, query: int, k: int) -> list:
    """``k`` nearest tasks by Euclidean distance, ties to the lower index."""
    K = emb.coords.shape[0]
    if not 0 <= query < K:
        raise IndexError(f"query {query} outside [0, {K})")
    if not 0 < k < K:
        raise ValueError(f"k={k} must lie in [1, {K - 1}]")
    dist = np.linalg.norm(emb.coords - emb.coords[query], axis=1)
    order = [int(j) for j in np.lexsort((np.arange(K), dist)) if j != query]
    return order[:k]


def adjusted_rand_index(a, b) -> float:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError("labelings differ in length")
    n = a.size
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)

    def pairs(x):
        return float((x * (x - 1) // 2).sum())

    index = pairs(table)
    row, col = pairs(table.sum(axis=1)), pairs(table.sum(axis=0))
    total = n * (n - 1) / 2
    expected = row * col / total if total else 0.0
    top = 0.5 * (row + col)
    if top == expected:
        return 1.0
    return (index - expected) / (top - expected)


def affinity(S) -> np.ndarray:
    """Symmetrised, non-negative, zero-diagonal affinity from a similarity matrix."""
    A = np.asarray(S.values if isinstance(S, SimilarityMatrix) else S, dtype=np.float64)
    A = np.maximum(0.5 * (A + A.T), 0.0)
    np.fill_diagonal(A, 0.0)
    return A


def spectral_cluster(S, n_clusters: int, restarts: int = 10, seed: int = 0) -> np.ndarray:
    """Normalised-affinity spectral embedding followed by k-means (best of ``restarts``).

    Labels are renumbered in order of first appearance.
    """
    A = affinity(S)
    K = A.shape[0]
    if not 1 <= n_clusters <= K:
        raise ValueError(f"n_clusters={n_clusters} must lie in [1, {K}]")
    if not np.any(A):
        warnings.warn("affinity matrix is all zero; returning a single cluster")
        return np.zeros(K, dtype=np.int64)
    deg = A.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0))
    M = A * inv_sqrt[:, None] * inv_sqrt[None, :]
    _, vecs = np.linalg.eigh(M)
    X = vecs[:, ::-1][:, :n_clusters]
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    X = X / np.where(norms > 0, norms, 1.0)
    best, best_inertia = None, np.inf
    for r in range(restarts):
        km = KMeans(n_clusters=n_clusters, n_init=1, random_state=seed + r).fit(X)
        if km.inertia_ < best_inertia - 1e-12:
            best, best_inertia = km.labels_, km.inertia_
    _, first = np.unique(best, return_index=True)
    remap = {old: new for new, old in enumerate(best[np.sort(first)])}
    return np.array([remap[l] for l in best], dtype=np.int64)


# -- exports ------------------------------------------------------------------

def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_similarity_csv(S: SimilarityMatrix, path) -> None:
    lines = [",".join(["task", *S.names])]
    for name, row in zip(S.names, S.values):
        lines.append(",".join([name, *map(_fmt, row)]))
    _atomic_write(Path(path), "\n".join(lines) + "\n")


def read_similarity_csv(path) -> SimilarityMatrix:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:1] != ["task"]:
        raise StructMetaError(f"{path}: missing header row")
    names = rows[0][1:]
    values = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    if values.shape != (len(names), len(names)):
        raise StructMetaError(f"{path}: expected a {len(names)}x{len(names)} matrix")
    return SimilarityMatrix(values, names)


def write_embedding_csv(emb: Embedding, path) -> Path:
    """Coordinates to ``path``; singular values to ``<stem>_singular_values.csv``."""
    path = Path(path)
    names = emb.names or [str(i) for i in range(emb.coords.shape[0])]
    lines = [",".join(["task", *[f"c{k}" for k in range(emb.d)]])]
    for name, row in zip(names, emb.coords):
        lines.append(",".join([name, *map(_fmt, row)]))
    _atomic_write(path, "\n".join(lines) + "\n")
    side = path.with_name(path.stem + "_singular_values.csv")
    _atomic_write(side, "index,singular_value\n" + "".join(f"{k},{_fmt(s)}\n" for k, s in enumerate(emb.singular_values)))
    return side


def read_embedding_csv(path) -> tuple[list, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:1] != ["task"]:
        raise StructMetaError(f"{path}: missing header row")
    try:
        coords = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    except ValueError as exc:
        raise StructMetaError(f"{path}: non-numeric coordinate") from exc
    if coords.ndim != 2 or coords.shape[1] != len(rows[0]) - 1:
        raise StructMetaError(f"{path}: ragged rows")
    return [r[0] for r in rows[1:]], coords


def cluster_report(names, labels, truth=None) -> dict:
    report = {
        "n_clusters": int(len(set(np.asarray(labels).tolist()))),
        "ari": None if truth is None else adjusted_rand_index(labels, truth),
        "assignments": [
            {"task": n, "label": int(l), **({} if truth is None else {"truth": int(t)})}
            for n, l, t in zip(names, labels, truth if truth is not None else [None] * len(names))
        ],
    }
    return report


def write_cluster_report(report: dict, path) -> None:
    _atomic_write(Path(path), json.dumps(report, indent=2, sort_keys=True) + "\n")
