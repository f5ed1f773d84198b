"""Finite-difference check of every analytic gradient on random instances."""
import argparse

import numpy as np

from bestscore.dirichlet import dm_nll, dm_nll_grad
from bestscore.losses import loss_counts, loss_dirichlet_multinomial, loss_soft


def central(f, x, h=1e-5):
    g = np.empty_like(x)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = h
        g[idx] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--instances", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    losses = {"loss_soft": loss_soft, "loss_counts": loss_counts,
              "loss_dirichlet_multinomial": loss_dirichlet_multinomial}
    errors = {name: [] for name in [*losses, "dm_nll_grad"]}
    for _ in range(args.instances):
        K = int(rng.choice([2, 5]))
        totals = rng.integers(1, 51, int(rng.integers(1, 6)))
        counts = np.stack([rng.multinomial(t, rng.dirichlet(np.ones(K))) for t in totals])
        z = rng.normal(0, 1.5, counts.shape)
        for name, loss in losses.items():
            num = central(lambda v: loss(v, counts)[0], z)
            errors[name].append(np.linalg.norm(loss(z, counts)[1] - num) / np.linalg.norm(num))
        alpha = np.exp(rng.uniform(np.log(0.1), np.log(10), K))
        num = central(lambda a: dm_nll(a, counts), alpha)
        errors["dm_nll_grad"].append(np.linalg.norm(dm_nll_grad(alpha, counts) - num) / np.linalg.norm(num))
    for name, errs in errors.items():
        print(f"{name:<28} median {np.median(errs):.1e}  max {np.max(errs):.1e}")


if __name__ == "__main__":
    main()
