"""Train over the 53 transformed image domains and embed them.

Writes ``similarity.csv``, ``embedding.csv`` and ``embedding.svg`` (coloured by
transform family) to ``--out`` and prints how well spectral clusters line up
with the five families.

    python3 scripts/domain_demo.py --config configs/domains.yaml --out runs/domain_demo
"""

import argparse
from pathlib import Path

import numpy as np

from structmeta.analysis import (
    adjusted_rand_index,
    full_similarity_matrix,
    spectral_cluster,
    truncated_svd,
    write_embedding_csv,
    write_similarity_csv,
)
from structmeta.experiment import ExperimentConfig, build_arch, build_database
from structmeta.metaengine import accuracies, run_invenio, run_shared_maml
from structmeta.plotting import scatter_svg
from structmeta.taskgen import family_counts


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", default=str(Path(__file__).parents[1] / "configs" / "domains.yaml"))
    ap.add_argument("--out", default="runs/domain_demo")
    ap.add_argument("--seed", type=int, default=None)
    args = ap.parse_args()

    cfg = ExperimentConfig.load(args.config).with_overrides(seed=args.seed)
    db = build_database(cfg, Path(args.config).parent)
    arch = build_arch(cfg, db)
    print(f"{db.K} domains {family_counts(db)}, {arch.n_params} parameters")

    meta = cfg.meta_config()
    state = run_invenio(db, meta, arch)
    print(f"median accuracy structured {np.median(accuracies(arch, state.paramsets, db)):.3f}, "
          f"shared {np.median(accuracies(arch, run_shared_maml(db, meta, arch), db)):.3f}")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    S = full_similarity_matrix(arch, state.paramsets, db)
    write_similarity_csv(S, out / "similarity.csv")
    emb = truncated_svd(S, 2)
    write_embedding_csv(emb, out / "embedding.csv")
    (out / "embedding.svg").write_text(scatter_svg(emb.coords, list(db.families), db.names))

    families = sorted(set(db.families))
    truth = [families.index(f) for f in db.families]
    labels = spectral_cluster(S, len(families))
    print(f"ARI of {len(families)} spectral clusters against transform families: "
          f"{adjusted_rand_index(labels, truth):.3f}")
    print(f"wrote {out}/similarity.csv, embedding.csv, embedding.svg")


if __name__ == "__main__":
    main()
