"""Median held-out accuracy as a function of the meta-test batch size.

    python3 scripts/batch_size_study.py --batches 1 2 4 8 12 --seeds 0 1 2
"""

import argparse

import numpy as np

from structmeta.metaengine import MetaConfig, accuracies, run_invenio
from structmeta.models import mlp
from structmeta.taskgen import gen_synthetic_tasks, split


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--batches", type=int, nargs="+", default=[1, 2, 4, 8, 12])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--K", type=int, default=24)
    ap.add_argument("--noise", type=float, default=0.1)
    ap.add_argument("--layout", choices=["orthogonal", "conflicting"], default="conflicting")
    ap.add_argument("--n-iter", type=int, default=100)
    args = ap.parse_args()

    arch = mlp([8, 16, 1])
    dbs = {
        seed: split(gen_synthetic_tasks(args.K, 3, 8, 100, noise=args.noise, seed=seed, layout=args.layout), 0.3, seed)
        for seed in args.seeds
    }
    print("batch  " + "  ".join(f"seed{s}" for s in args.seeds) + "  median")
    for batch in args.batches:
        per_seed = []
        for seed, db in dbs.items():
            cfg = MetaConfig(alpha=0.1, beta=1.0, delta=0.1, n_iter=args.n_iter, meta_test_batch=batch, seed=seed)
            per_seed.append(np.median(accuracies(arch, run_invenio(db, cfg, arch).paramsets, db)))
        cells = "  ".join(f"{a:5.3f}" for a in per_seed)
        print(f"{batch:5d}  {cells}  {np.median(per_seed):6.3f}")


if __name__ == "__main__":
    main()
