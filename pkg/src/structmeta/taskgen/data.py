from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError, SplitError

BINARY_TASK = "binary-task"
MULTICLASS_DOMAIN = "multiclass-domain"
KINDS = (BINARY_TASK, MULTICLASS_DOMAIN)


@dataclass(eq=False)
class Dataset:
    """One task's (or domain's) labelled sample set."""

    inputs: np.ndarray
    labels: np.ndarray
    kind: str = BINARY_TASK
    name: str = ""
    n_classes: int = 2

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.kind not in KINDS:
            raise DataError(f"unknown dataset kind {self.kind!r}")
        if self.inputs.shape[:1] != self.labels.shape:
            raise DataError(f"{self.name}: {self.inputs.shape[0]} inputs vs {self.labels.size} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise DataError(f"{self.name}: labels outside [0, {self.n_classes})")
        if self.kind == BINARY_TASK and self.n_classes != 2:
            raise DataError(f"{self.name}: binary tasks have exactly 2 classes")

    @property
    def n(self) -> int:
        return int(self.labels.size)

    @property
    def sample_shape(self) -> tuple:
        return tuple(self.inputs.shape[1:])

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.inputs[idx], self.labels[idx], self.kind, self.name, self.n_classes)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.name == other.name
            and self.n_classes == other.n_classes
            and self.inputs.shape == other.inputs.shape
            and np.array_equal(self.inputs, other.inputs)
            and np.array_equal(self.labels, other.labels)
        )


@dataclass(eq=False)
class TaskDatabase:
    datasets: list
    heldout: list = field(default_factory=list)
    ground_truth_clusters: np.ndarray | None = None
    families: list | None = None

    def __post_init__(self):
        if self.ground_truth_clusters is not None:
            self.ground_truth_clusters = np.asarray(self.ground_truth_clusters, dtype=np.int64)
            if self.ground_truth_clusters.shape != (self.K,):
                raise DataError("cluster labels must cover every task")
        if self.heldout and len(self.heldout) != self.K:
            raise DataError("heldout list must parallel the datasets")
        if self.families is not None and len(self.families) != self.K:
            raise DataError("family list must parallel the datasets")
        shapes = {d.sample_shape for d in self.datasets}
        if len(shapes) > 1:
            raise DataError(f"datasets disagree on input shape: {sorted(shapes)}")

    @property
    def K(self) -> int:
        return len(self.datasets)

    @property
    def names(self) -> list:
        return [d.name for d in self.datasets]

    def __eq__(self, other):
        if not isinstance(other, TaskDatabase):
            return NotImplemented
        gc_a, gc_b = self.ground_truth_clusters, other.ground_truth_clusters
        return (
            self.datasets == other.datasets
            and self.heldout == other.heldout
            and (gc_a is None) == (gc_b is None)
            and (gc_a is None or np.array_equal(gc_a, gc_b))
            and self.families == other.families
        )


def split(db: TaskDatabase, heldout_fraction: float, seed: int) -> TaskDatabase:
    """Stratified per-class train/held-out split of every dataset."""
    if not 0 < heldout_fraction < 1:
        raise SplitError(f"heldout fraction must lie in (0, 1), got {heldout_fraction}")
    if db.heldout:
        raise SplitError("database is already split")
    train, held = [], []
    for t, data in enumerate(db.datasets):
        rng = np.random.default_rng([seed, t])
        keep, out = [], []
        for c in range(data.n_classes):
            members = np.flatnonzero(data.labels == c)
            if members.size == 0:
                continue
            if members.size < 2:
                raise SplitError(f"{data.name}: class {c} has fewer than 2 samples")
            n_out = int(np.clip(round(members.size * heldout_fraction), 1, members.size - 1))
            perm = rng.permutation(members)
            out.append(perm[:n_out])
            keep.append(perm[n_out:])
        train.append(data.subset(np.sort(np.concatenate(keep))))
        held.append(data.subset(np.sort(np.concatenate(out))))
    return TaskDatabase(train, held, db.ground_truth_clusters, db.families)
