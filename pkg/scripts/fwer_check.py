"""Family-wise error of the permutation tests with Holm correction under the null."""
import argparse

import numpy as np

from bestscore.divisiveness import BinaryLabeledItems, run_permutation_tests


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--features", type=int, default=50)
    ap.add_argument("--replicates", type=int, default=500)
    ap.add_argument("--items", type=int, default=400)
    ap.add_argument("--samples", type=int, default=2000)
    ap.add_argument("--alpha", type=float, default=0.05)
    ap.add_argument("--rate", type=float, default=0.1, help="feature prevalence")
    ap.add_argument("--conservative", action="store_true")
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    classes = np.arange(args.items) % 2
    ids = tuple(map(str, range(args.items)))
    hits = 0
    for rep in range(args.replicates):
        present = rng.random((args.items, args.features)) < args.rate
        feats = tuple(frozenset(f"f{j}" for j in np.flatnonzero(r)) for r in present)
        res = run_permutation_tests(BinaryLabeledItems(ids, classes, feats), n_samples=args.samples,
                                    seed=rep, alpha=args.alpha, conservative=args.conservative)
        hits += any(r.rejected for r in res)
    rate = hits / args.replicates
    se = np.sqrt(rate * (1 - rate) / args.replicates)
    print(f"family-wise error {rate:.3f} +/- {se:.3f} (nominal {args.alpha})")


if __name__ == "__main__":
    main()
