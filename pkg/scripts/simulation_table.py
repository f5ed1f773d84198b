"""Run the three simulation scenarios and print true oracle vs BEST estimate.

    python scripts/simulation_table.py [--examples 20000] [--rounds 10000] [--reference dev.jsonl]
"""
import argparse
import time

from bestscore.annotations import load_annotations
from bestscore.simulations import anecdotes_config, annotators_config, mixture_config, run_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--examples", type=int, default=20_000)
    ap.add_argument("--rounds", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--reference", help="real annotations for the anecdotes scenario")
    args = ap.parse_args()

    reference = load_annotations(args.reference) if args.reference else None
    configs = {
        "anecdotes": anecdotes_config(reference, args.examples if reference is None else None,
                                      args.rounds, args.seed),
        "annotators": annotators_config(3, args.examples, args.rounds, args.seed),
        "mixture": mixture_config(args.examples, args.rounds, args.seed),
    }
    print(f"{'scenario':<11} {'metric':<14} {'true':>9} {'BEST':>9} {'SE':>9} {'rel.err':>8}")
    for name, config in configs.items():
        start = time.perf_counter()
        rep = run_scenario(config)
        for metric, cmp in rep.results.items():
            est = cmp.best_estimate
            print(f"{name:<11} {metric:<14} {cmp.true_oracle:9.4f} {est.score:9.4f} "
                  f"{est.std_error:9.1e} {cmp.relative_error:8.2%}")
        print(f"{'':<11} fitted alpha {[round(a, 3) for a in rep.fitted_alpha]}, "
              f"{time.perf_counter() - start:.0f} s")


if __name__ == "__main__":
    main()
