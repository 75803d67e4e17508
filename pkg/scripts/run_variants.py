"""Train named variants of the reference run and print their test scores.

    python scripts/run_variants.py reference no_aug --seeds 0 1 2 --cache .runs

Results are cached under ``--cache`` (keyed by config, seed and source
hash), the same cache the acceptance suite reads when DONLAB_RUN_CACHE is set.
"""

import argparse
import logging

import numpy as np
from threadpoolctl import threadpool_limits

from donlab.pipeline.presets import VARIANTS, train_and_report, variant_config


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("variants", nargs="+", choices=sorted(VARIANTS))
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--cache", default=".runs")
    p.add_argument("-v", "--verbose", action="store_true")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    with threadpool_limits(limits=1):
        for name in args.variants:
            cfg = variant_config(name)
            results = [train_and_report(cfg, s, args.cache)[0] for s in args.seeds]
            for r in results:
                print(f"{name:<22s} seed {r['seed']}  test AUC {r['test_auc']:.4f}  PCK@5 {r['test_pck5']:.4f}  "
                      f"untrained PCK@5 {r['untrained_pck5']:.4f}  cpu {r['cpu_seconds']:.0f}s", flush=True)
            aucs = [r["test_auc"] for r in results]
            print(f"{name:<22s} mean AUC {np.mean(aucs):.4f} ± {np.std(aucs):.4f}", flush=True)


if __name__ == "__main__":
    main()
