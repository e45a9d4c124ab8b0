"""Command-line runner: ``structmeta {gen,train,analyze,plot,report}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
divergence. Set ``STRUCTMETA_LOG`` (DEBUG, INFO, WARNING) for log verbosity.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from collections import Counter
from pathlib import Path

import numpy as np

from . import analysis
from .errors import ConfigError, DataError, NumericalError, StructMetaError
from .experiment import (
    ExperimentConfig,
    build_arch,
    build_database,
    content_hash,
    pretrain_corpus,
    summarize,
)
from .metaengine import accuracies, run_independent, run_invenio, run_shared_maml, run_transfer
from .models import ParamSet
from .plotting import scatter_svg
from .taskgen import dumps_db, family_counts

log = logging.getLogger("structmeta")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
DB_FILE = "database.smdb"


def _write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def _write_bytes(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


def _load_config(args) -> ExperimentConfig:
    if args.config is None:
        raise ConfigError("--config is required")
    cfg = ExperimentConfig.load(args.config)
    cfg = cfg.with_overrides(seed=args.seed, method=getattr(args, "method", None), output_dir=args.out)
    return cfg


def _outdir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _database(cfg: ExperimentConfig, config_path) -> tuple:
    """Build the database from the config and store it as ``<out>/database.smdb``.

    Generation is deterministic in (config, seed), so rebuilding always agrees
    with an earlier ``gen`` and never picks up a file from a different seed.
    """
    db = build_database(cfg, Path(config_path).parent if config_path else None)
    raw = dumps_db(db)
    _write_bytes(_outdir(cfg) / DB_FILE, raw)
    return db, raw


def cmd_gen(args) -> int:
    cfg = _load_config(args)
    out = _outdir(cfg)
    db, _ = _database(cfg, args.config)
    if db.families is not None:
        counts = family_counts(db)
        detail = ", ".join(f"{k}={v}" for k, v in counts.items())
        print(f"{db.K} domains ({detail})")
    elif db.ground_truth_clusters is not None:
        sizes = Counter(db.ground_truth_clusters.tolist())
        print(f"{db.K} tasks in {len(sizes)} clusters (sizes {[sizes[c] for c in sorted(sizes)]})")
    else:
        print(f"{db.K} tasks")
    print(f"wrote {out / DB_FILE}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = _outdir(cfg)
    db, raw = _database(cfg, args.config)
    arch = build_arch(cfg, db)
    meta = cfg.meta_config()
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    history_path = out / "history.jsonl"
    tmp_history = history_path.with_name(history_path.name + ".tmp")
    started = time.perf_counter()
    with open(tmp_history, "w") as hist:
        def record(rec):
            hist.write(json.dumps(rec, sort_keys=True) + "\n")

        def checkpoint(state):
            for p in state.paramsets:
                p.save(ckpt_dir / f"task-{p.task_id:04d}.bin")

        if cfg.method == "invenio":
            state = run_invenio(db, meta, arch, threads=args.threads, on_record=record, on_checkpoint=checkpoint)
            paramsets = state.paramsets
        elif cfg.method == "independent":
            paramsets = run_independent(db, meta, arch, threads=args.threads, on_record=record).paramsets
        elif cfg.method == "shared":
            shared = run_shared_maml(db, meta, arch, on_record=record)
            paramsets = [shared.copy() for _ in range(db.K)]
            for t, p in enumerate(paramsets):
                p.task_id = t
        else:
            t = cfg.transfer or {}
            paramsets = run_transfer(
                db, pretrain_corpus(cfg, db), meta, arch,
                t.get("pretrain_steps"), t.get("finetune_steps"), t.get("lr"), threads=args.threads,
            )
    tmp_history.replace(history_path)
    for p in paramsets:
        p.save(ckpt_dir / f"task-{p.task_id:04d}.bin")
    accs = accuracies(arch, paramsets, db)
    echo = cfg.echo()
    report = {
        "method": cfg.method,
        **summarize(db.names, accs),
        "config": echo,
        "input_hash": content_hash(raw, echo),
    }
    _write_text(out / "report.json", json.dumps(report, indent=2, sort_keys=True) + "\n")
    _write_text(out / "timing.json", json.dumps({"wall_clock_seconds": time.perf_counter() - started}) + "\n")
    print(f"{cfg.method}: median {report['median']:.4f} (q25 {report['q25']:.4f}, q75 {report['q75']:.4f}) over {db.K} tasks")
    return EXIT_OK


def _load_checkpoints(ckpt_dir: Path, arch, K: int) -> list:
    params = []
    for t in range(K):
        path = ckpt_dir / f"task-{t:04d}.bin"
        if not path.exists():
            raise DataError(f"missing checkpoint for task {t}: {path}")
        params.append(ParamSet.load(path, arch))
    return params


def cmd_analyze(args) -> int:
    cfg = _load_config(args)
    out = _outdir(cfg)
    db, _ = _database(cfg, args.config)
    arch = build_arch(cfg, db)
    params = _load_checkpoints(out / "checkpoints", arch, db.K)
    a = cfg.analysis or {}
    d = int(a.get("d", 2))
    S = analysis.full_similarity_matrix(arch, params, db)
    analysis.write_similarity_csv(S, out / "similarity.csv")
    emb = analysis.truncated_svd(S, min(d, db.K), symmetrize=bool(a.get("symmetrize", True)))
    analysis.write_embedding_csv(emb, out / "embedding.csv")
    n_clusters = int(a.get("n_clusters", 3))
    labels = analysis.spectral_cluster(S, min(n_clusters, db.K))
    report = analysis.cluster_report(db.names, labels, db.ground_truth_clusters)
    if db.families is not None:
        for row, fam in zip(report["assignments"], db.families):
            row["family"] = fam
    analysis.write_cluster_report(report, out / "clusters.json")
    ari = report["ari"]
    print(f"similarity {db.K}x{db.K}, embedding d={emb.d}, clusters={report['n_clusters']}"
          + ("" if ari is None else f", ARI={ari:.4f}"))
    return EXIT_OK


def _read_labels(path, names) -> list:
    path = Path(path)
    if path.suffix == ".json":
        rows = json.loads(path.read_text())["assignments"]
        lookup = {r["task"]: str(r.get("family", r["label"])) for r in rows}
    else:
        with open(path, newline="") as fh:
            lookup = {r[0]: r[1] for r in csv.reader(fh) if r and r[0] != "task"}
    missing = [n for n in names if n not in lookup]
    if missing:
        raise DataError(f"labels missing for tasks {missing[:5]}")
    return [lookup[n] for n in names]


def cmd_plot(args) -> int:
    emb_path = Path(args.embedding)
    try:
        names, coords = analysis.read_embedding_csv(emb_path)
    except (OSError, StructMetaError) as exc:
        raise DataError(f"cannot read embedding: {exc}") from exc
    if coords.shape[1] < 2:
        raise DataError("plotting needs an embedding with at least 2 coordinates")
    labels = _read_labels(args.labels, names) if args.labels else [n.split("-")[0] for n in names]
    out = Path(args.output) if args.output else emb_path.with_suffix(".svg")
    _write_text(out, scatter_svg(coords[:, :2], labels, names))
    print(f"wrote {out} ({len(names)} points, {len(set(labels))} labels)")
    return EXIT_OK


def cmd_report(args) -> int:
    dirs = args.dirs or ([args.out] if args.out else [])
    if not dirs:
        raise ConfigError("give one or more run directories")
    print(f"{'method':<12} {'median':>8} {'q25':>8} {'q75':>8}  run")
    for d in dirs:
        path = Path(d) / "report.json"
        if not path.exists():
            raise DataError(f"no report at {path}")
        r = json.loads(path.read_text())
        accs = [row["accuracy"] for row in r["per_task"]]
        if not np.isclose(np.median(accs), r["median"]):
            raise DataError(f"{path}: summary does not match per-task accuracies")
        print(f"{r['method']:<12} {r['median']:8.4f} {r['q25']:8.4f} {r['q75']:8.4f}  {d}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="structmeta", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment YAML file")
    common.add_argument("--seed", type=int, default=None, help="root seed (overrides the config)")
    common.add_argument("--out", default=None, help="output directory (overrides the config)")
    common.add_argument("--threads", type=int, default=1, help="worker threads for per-task work")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen", parents=[common], help="generate and store the task database").set_defaults(fn=cmd_gen)
    p = sub.add_parser("train", parents=[common], help="train with the chosen method")
    p.add_argument("--method", choices=("invenio", "shared", "transfer", "independent"), default=None)
    p.set_defaults(fn=cmd_train)
    sub.add_parser("analyze", parents=[common], help="similarity matrix, embedding and clusters").set_defaults(fn=cmd_analyze)
    p = sub.add_parser("plot", parents=[common], help="2-D scatter SVG of an embedding CSV")
    p.add_argument("--embedding", required=True)
    p.add_argument("--labels", default=None, help="CSV (task,label) or cluster report JSON")
    p.add_argument("--output", default=None)
    p.set_defaults(fn=cmd_plot)
    p = sub.add_parser("report", parents=[common], help="summarise one or more runs")
    p.add_argument("dirs", nargs="*")
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("STRUCTMETA_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, StructMetaError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
