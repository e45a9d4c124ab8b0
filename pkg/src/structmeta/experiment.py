"""Experiment configuration and the glue between config files and the engine.

A config is one YAML document::

    seed: 0
    method: invenio            # invenio | shared | transfer | independent
    output_dir: runs/demo
    database:                  # exactly one of synthetic / domain / path
      synthetic: {K: 12, n_clusters: 3, dim: 8, n_per_task: 100, noise: 0.0,
                  layout: orthogonal, tilt: 0.2}
      heldout_fraction: 0.3
    model: {kind: mlp, hidden: [16]}   # mlp | task | domain | custom (arch: {...})
    meta: {alpha: 0.1, beta: 1.0, delta: 0.1, n_iter: 200, meta_test_batch: 4}
    transfer: {pretrain_steps: null, finetune_steps: null, lr: null, corpus_size: 400}
    analysis: {d: 2, symmetrize: true, n_clusters: 3}

The command-line ``--seed`` overrides ``seed``; the meta seed always follows
the root seed.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError
from .metaengine import MetaConfig
from .models import MULTICLASS, ArchSpec, domain_arch, mlp, task_arch
from .taskgen import (
    TaskDatabase,
    TransformSpec,
    default_specs,
    gen_base_images,
    gen_domain_db,
    gen_pretrain_corpus,
    gen_synthetic_tasks,
    load_cifar10,
    load_db,
    split,
)

METHODS = ("invenio", "shared", "transfer", "independent")
_TOP_KEYS = {"seed", "method", "output_dir", "database", "model", "meta", "transfer", "analysis"}
_SOURCES = ("synthetic", "domain", "path")


@dataclass
class ExperimentConfig:
    database: dict
    method: str = "invenio"
    meta: dict = field(default_factory=dict)
    model: dict = field(default_factory=lambda: {"kind": "mlp", "hidden": [16]})
    transfer: dict = field(default_factory=dict)
    analysis: dict = field(default_factory=lambda: {"d": 2, "symmetrize": True, "n_clusters": 3})
    output_dir: str = "runs/default"
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        sources = [k for k in _SOURCES if k in self.database]
        if len(sources) != 1:
            raise ConfigError(f"database needs exactly one of {_SOURCES}, found {sources or 'none'}")
        self.meta_config()

    @property
    def source(self) -> str:
        return next(k for k in _SOURCES if k in self.database)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a mapping")
        unknown = set(d) - _TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "database" not in d:
            raise ConfigError("config has no database section")
        d = copy.deepcopy(d)
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                raw = yaml.safe_load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file {path} not found") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        return cls.from_dict(raw or {})

    def with_overrides(self, seed=None, method=None, output_dir=None) -> "ExperimentConfig":
        d = self.to_dict()
        if seed is not None:
            d["seed"] = seed
        if method is not None:
            d["method"] = method
        if output_dir is not None:
            d["output_dir"] = str(output_dir)
        return ExperimentConfig.from_dict(d)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "method": self.method,
            "output_dir": self.output_dir,
            "database": copy.deepcopy(self.database),
            "model": copy.deepcopy(self.model),
            "meta": copy.deepcopy(self.meta),
            "transfer": copy.deepcopy(self.transfer),
            "analysis": copy.deepcopy(self.analysis),
        }

    def echo(self) -> dict:
        """Everything that influences results (the output location does not)."""
        d = self.to_dict()
        d.pop("output_dir")
        d["meta"] = self.meta_config().to_dict()
        return d

    def meta_config(self) -> MetaConfig:
        return MetaConfig.from_dict({**self.meta, "seed": self.seed})


def build_database(cfg: ExperimentConfig, base_dir: Path | None = None) -> TaskDatabase:
    db_cfg = cfg.database
    if "path" in db_cfg:
        path = Path(db_cfg["path"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        if not path.exists():
            raise ConfigError(f"database file {path} does not exist")
        return load_db(path)
    if "synthetic" in db_cfg:
        s = dict(db_cfg["synthetic"])
        try:
            db = gen_synthetic_tasks(seed=cfg.seed, **s)
        except TypeError as exc:
            raise ConfigError(f"bad synthetic database parameters: {exc}") from exc
    else:
        db = gen_domain_db(_domain_base(cfg), _domain_specs(db_cfg["domain"]))
    frac = db_cfg.get("heldout_fraction", 0.3)
    return split(db, frac, cfg.seed) if frac else db


def _domain_base(cfg: ExperimentConfig):
    d = cfg.database["domain"] or {}
    base = None
    if d.get("cifar_dir"):
        base = load_cifar10(d["cifar_dir"], d.get("n_per_class", 30), cfg.seed)
    if base is None:
        base = gen_base_images(d.get("n_per_class", 30), d.get("n_classes", 10), d.get("image_size", 8), cfg.seed)
    return base


def _domain_specs(d) -> list:
    specs = (d or {}).get("specs", "default")
    if specs == "default":
        return default_specs()
    if not isinstance(specs, list):
        raise ConfigError("domain specs must be 'default' or a list")
    return [TransformSpec(s["family"], dict(s.get("params", {}))) for s in specs]


def build_arch(cfg: ExperimentConfig, db: TaskDatabase) -> ArchSpec:
    m = cfg.model or {}
    kind = m.get("kind", "mlp")
    shape = db.datasets[0].sample_shape
    multiclass = db.datasets[0].kind == "multiclass-domain"
    n_out = db.datasets[0].n_classes if multiclass else 1
    final_relu = bool(m.get("final_relu", False))
    if kind == "mlp":
        sizes = [int(np.prod(shape)), *m.get("hidden", [16]), n_out]
        arch = mlp(sizes, MULTICLASS if multiclass else "binary-bce", shape)
        return ArchSpec(arch.layers, arch.input_shape, arch.loss, final_relu)
    if kind == "task":
        return task_arch(shape[0], final_relu)
    if kind == "domain":
        return domain_arch(shape[0], n_out, final_relu)
    if kind == "custom":
        return ArchSpec.from_dict(m["arch"])
    raise ConfigError(f"unknown model kind {kind!r}")


def pretrain_corpus(cfg: ExperimentConfig, db: TaskDatabase):
    t = cfg.transfer or {}
    if "domain" in cfg.database:
        return _domain_base(cfg)
    dim = int(np.prod(db.datasets[0].sample_shape))
    return gen_pretrain_corpus(dim, t.get("corpus_size", 400), t.get("n_classes", 4), cfg.seed)


def content_hash(db_bytes: bytes, echo: dict) -> str:
    h = hashlib.sha256()
    h.update(b"database\0")
    h.update(db_bytes)
    h.update(b"\0config\0")
    h.update(json.dumps(echo, sort_keys=True).encode())
    return h.hexdigest()


def summarize(names, accs) -> dict:
    accs = np.asarray(accs, dtype=np.float64)
    return {
        "per_task": [{"task": n, "accuracy": float(a)} for n, a in zip(names, accs)],
        "median": float(np.median(accs)),
        "q25": float(np.quantile(accs, 0.25)),
        "q75": float(np.quantile(accs, 0.75)),
    }
