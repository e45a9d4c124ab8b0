"""Reader for the CIFAR-10 binary distribution (``cifar-10-batches-bin``)."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from ..errors import FormatError
from .data import MULTICLASS_DOMAIN, Dataset

log = logging.getLogger(__name__)

FILES = [f"data_batch_{k}.bin" for k in range(1, 6)] + ["test_batch.bin"]
RECORD = 1 + 3 * 32 * 32


def read_batch(path) -> tuple[np.ndarray, np.ndarray]:
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size % RECORD:
        raise FormatError(f"{path}: size {raw.size} is not a multiple of {RECORD}")
    rec = raw.reshape(-1, RECORD)
    labels = rec[:, 0].astype(np.int64)
    # stored as 3 colour planes of 32x32, row-major
    images = rec[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1).astype(np.float64) / 255.0
    return images, labels


def load_cifar10(directory, n_per_class: int | None = None, seed: int = 0) -> Dataset | None:
    """Load whichever of the six batch files exist; ``None`` if none do."""
    directory = Path(directory)
    present = [directory / f for f in FILES if (directory / f).exists()]
    if not present:
        log.warning("no CIFAR-10 batch files under %s; falling back to synthetic images", directory)
        return None
    parts = [read_batch(p) for p in present]
    images = np.concatenate([p[0] for p in parts])
    labels = np.concatenate([p[1] for p in parts])
    if n_per_class is not None:
        rng = np.random.default_rng([seed, 4])
        keep = np.concatenate(
            [rng.permutation(np.flatnonzero(labels == c))[:n_per_class] for c in range(10)]
        )
        keep.sort()
        images, labels = images[keep], labels[keep]
    return Dataset(images, labels, MULTICLASS_DOMAIN, "cifar10", 10)
