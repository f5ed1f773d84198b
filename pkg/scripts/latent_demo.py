"""Deviance explained by 0..D latent traits on simulated (or supplied) binary responses."""
import argparse
import time

import numpy as np

from bestscore.latent import SaturatedModel, deviance, fit_latent, load_responses, null_model, simulate_responses


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--responses", help="CSV of 0/1 responses; simulated when omitted")
    ap.add_argument("--questions", type=int, default=10)
    ap.add_argument("--annotators", type=int, default=2000)
    ap.add_argument("--true-traits", type=int, default=1)
    ap.add_argument("--max-traits", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    if args.responses:
        R = load_responses(args.responses)
    else:
        W = rng.uniform(0.5, 1.5, (args.questions, args.true_traits))
        R = simulate_responses(args.annotators, W, rng.normal(0, 0.5, args.questions), rng)
    print(f"{'traits':>6} {'deviance':>10} {'% explained':>12} {'seconds':>8}")
    print(f"{'null':>6} {deviance(null_model(R), R).deviance:10.2f} {0.0:12.2f}")
    for d in range(1, args.max_traits + 1):
        start = time.perf_counter()
        rep = deviance(fit_latent(R, d, rng=np.random.default_rng(args.seed)), R)
        print(f"{d:>6} {rep.deviance:10.2f} {rep.percent_explained:12.2f} "
              f"{time.perf_counter() - start:8.1f}")
    sat = deviance(SaturatedModel.fit(R), R)
    print(f"{'sat.':>6} {sat.deviance:10.2f} {100.0:12.2f}")


if __name__ == "__main__":
    main()
