from __future__ import annotations

from collections import Counter

import numpy as np
from scipy import ndimage

from ..errors import ConfigError, DataError
from .data import MULTICLASS_DOMAIN, Dataset, TaskDatabase
from .transforms import TransformSpec, apply_transform, default_specs


def gen_base_images(n_per_class: int = 30, n_classes: int = 10, size: int = 8, seed: int = 0) -> Dataset:
    """Small multiclass RGB image set: a smooth random template per class plus noise.

    Stands in for CIFAR-10 when the real files are not available.
    """
    if n_per_class < 2 or n_classes < 2 or size < 4:
        raise ConfigError("need n_per_class >= 2, n_classes >= 2, size >= 4")
    rng = np.random.default_rng([seed, 3])
    templates = ndimage.gaussian_filter(
        rng.random((n_classes, size, size, 3)), sigma=(0, size / 6, size / 6, 0), mode="wrap"
    )
    lo = templates.min(axis=(1, 2, 3), keepdims=True)
    hi = templates.max(axis=(1, 2, 3), keepdims=True)
    templates = 0.15 + 0.7 * (templates - lo) / (hi - lo)
    labels = np.repeat(np.arange(n_classes), n_per_class)
    images = templates[labels] + 0.08 * rng.standard_normal((labels.size, size, size, 3))
    order = rng.permutation(labels.size)
    return Dataset(np.clip(images[order], 0, 1), labels[order], MULTICLASS_DOMAIN, "base", n_classes)


def gen_domain_db(base: Dataset, specs: list[TransformSpec] | None = None) -> TaskDatabase:
    """One domain per transform; labels are shared, only inputs change."""
    if base.kind != MULTICLASS_DOMAIN:
        raise DataError("domain databases need a multiclass base dataset")
    if specs is None:
        specs = default_specs()
    if not specs:
        raise ConfigError("at least one transform is required")
    for spec in specs:
        spec.validate()
    datasets = []
    for spec in specs:
        inputs = np.stack([apply_transform(img, spec) for img in base.inputs])
        datasets.append(Dataset(inputs, base.labels.copy(), MULTICLASS_DOMAIN, spec.name, base.n_classes))
    return TaskDatabase(datasets, families=[s.family for s in specs])


def family_counts(db: TaskDatabase) -> dict[str, int]:
    return dict(Counter(db.families or []))
