"""Command-line front end.

Every subcommand prints one JSON report on stdout (or writes it to ``--out``)
and a short human-readable summary on stderr. Exit codes: 0 success, 1 data
error, 2 usage error; errors are printed as ``{"error": ...}`` on stderr.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import annotations as ann_io
from .annotations import DataError
from .best import DEFAULT_ROUNDS, best_scores
from .dirichlet import DirichletPrior, fit_prior
from .divisiveness import DEFAULT_SAMPLES, load_items, report, run_permutation_tests
from .latent import DEFAULT_NODES, annotator_scores, deviance, fit_latent, load_responses
from .losses import apply_temperature, fit_temperature, logits_from, scaled_xent
from .metrics import canonical_metric, evaluate
from .simulations import SCENARIOS, run_scenario

log = logging.getLogger("bestscore")

EXIT_OK, EXIT_DATA, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- argument types -----------------------------------------------------------


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1: {text!r}")
    return value


def _nonneg_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be nonnegative: {text!r}")
    return value


def _level(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0 < value < 1:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1): {text!r}")
    return value


def _metric(text: str) -> str:
    try:
        return canonical_metric(text)
    except ValueError as err:
        raise argparse.ArgumentTypeError(str(err)) from None


def _alpha_list(text: str) -> tuple[float, ...]:
    try:
        values = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {text!r}") from None
    if len(values) < 2 or not all(math.isfinite(v) and v > 0 for v in values):
        raise argparse.ArgumentTypeError("alpha needs at least 2 positive entries")
    return values


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    common.add_argument("--classes", metavar="FILE", help="JSON list of class names for the report")
    common.add_argument("--out", metavar="FILE", help="write the JSON report here instead of stdout")
    common.add_argument("-q", "--quiet", action="store_true", help="no summary on stderr")

    loader = _Parser(add_help=False)
    loader.add_argument("--format", choices=("jsonl", "csv"), help="annotation file format")
    loader.add_argument("--drop-empty", action="store_true",
                        help="drop zero-annotation rows instead of failing")

    parser = _Parser(prog="bestscore", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit-prior", parents=[common, loader],
                       help="maximum likelihood Dirichlet prior for annotation counts")
    p.add_argument("--annotations", required=True, metavar="FILE")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=_positive_int, default=500)

    p = sub.add_parser("best", parents=[common, loader], help="BEST oracle score estimate")
    p.add_argument("--annotations", required=True, metavar="FILE")
    p.add_argument("--metric", type=_metric, default="xentropy_soft")
    p.add_argument("--rounds", type=_positive_int, default=DEFAULT_ROUNDS)
    p.add_argument("--alpha", type=_alpha_list, help="fixed prior, e.g. 0.6,1.1,0.1 (default: fit)")

    p = sub.add_parser("evaluate", parents=[common, loader], help="score predictions")
    p.add_argument("--annotations", required=True, metavar="FILE")
    p.add_argument("--predictions", required=True, metavar="FILE")
    p.add_argument("--pred-format", choices=("jsonl", "csv"))
    p.add_argument("--metric", type=_metric, default="xentropy_soft")

    p = sub.add_parser("calibrate", parents=[common, loader], help="temperature scaling")
    p.add_argument("--annotations", required=True, metavar="FILE")
    p.add_argument("--predictions", required=True, metavar="FILE")
    p.add_argument("--pred-format", choices=("jsonl", "csv"))
    p.add_argument("--calibrated-out", metavar="FILE",
                   help="also write the temperature-scaled probabilities here")

    p = sub.add_parser("simulate", parents=[common], help="simulation check of the estimator")
    p.add_argument("--scenario", required=True, choices=sorted(SCENARIOS))
    p.add_argument("--reference", metavar="FILE",
                   help="real annotations to fit the anecdotes scenario's prior to")
    p.add_argument("--format", choices=("jsonl", "csv"), help="format of --reference")
    p.add_argument("--rounds", type=_positive_int, default=DEFAULT_ROUNDS)
    p.add_argument("--examples", type=_positive_int, help="number of simulated examples")
    p.add_argument("--annotators", type=_positive_int, default=3,
                   help="annotators per example (annotators scenario)")

    p = sub.add_parser("permtest", parents=[common], help="feature permutation tests")
    p.add_argument("--items", required=True, metavar="FILE")
    p.add_argument("--alpha", type=_level, default=0.05)
    p.add_argument("--samples", type=_positive_int, default=DEFAULT_SAMPLES)
    p.add_argument("--conservative", action="store_true", help="use (k+1)/(n+1) p-values")
    p.add_argument("--significant-only", action="store_true")

    p = sub.add_parser("latent", parents=[common], help="latent trait deviance analysis")
    p.add_argument("--responses", required=True, metavar="FILE")
    p.add_argument("--traits", type=_nonneg_int, required=True)
    p.add_argument("--nodes", type=_positive_int, default=DEFAULT_NODES,
                   help="Gauss-Hermite nodes per dimension")
    p.add_argument("--loadings-out", metavar="FILE", help="CSV of question loadings")
    p.add_argument("--scores-out", metavar="FILE", help="CSV of annotator trait scores")
    return parser


# -- subcommands --------------------------------------------------------------


def _load_annotations(args, path=None):
    return ann_io.load_annotations(path or args.annotations, format=args.format,
                                   drop_empty=getattr(args, "drop_empty", False))


def _cmd_fit_prior(args):
    fit = fit_prior(_load_annotations(args), tol=args.tol, max_iter=args.max_iter)
    out = fit.to_dict()
    summary = (f"alpha = {np.round(fit.prior.alpha, 4).tolist()} after {fit.iterations} "
               f"iterations ({'converged' if fit.converged else 'NOT converged'})")
    return out, summary


def _cmd_best(args):
    annotations = _load_annotations(args)
    prior = DirichletPrior(args.alpha) if args.alpha else None
    est = best_scores(annotations, [args.metric], args.rounds, args.seed, prior)[args.metric]
    summary = f"BEST {est.metric.kind} = {est.score:.4f} +/- {est.std_error:.4f} ({args.rounds} rounds)"
    return est.to_dict(), summary


def _aligned(args):
    annotations = _load_annotations(args)
    predictions = ann_io.load_predictions(args.predictions, format=args.pred_format)
    return ann_io.align(annotations, predictions), predictions


def _cmd_evaluate(args):
    ev, _ = _aligned(args)
    value = evaluate(ev, args.metric)
    out = value.to_dict(args.metric)
    out["n"] = ev.annotations.n
    return out, f"{args.metric} = {value.value:.4f} on {ev.annotations.n} examples"


def _cmd_calibrate(args):
    ev, predictions = _aligned(args)
    kind = ev.predictions.kind
    z = logits_from(ev.predictions.values, kind)
    counts = ev.annotations.counts
    scaler = fit_temperature(z, ev.annotations)
    before = scaled_xent(z, counts, 1.0)
    after = scaled_xent(z, counts, scaler.T)
    if args.calibrated_out:
        calibrated = apply_temperature(z, scaler, ids=ev.predictions.ids)
        ann_io.save_predictions(calibrated, args.calibrated_out)
    out = {"T": scaler.T, "xentropy_before": before, "xentropy_after": after}
    return out, f"T = {scaler.T:.4f}; cross-entropy {before:.4f} -> {after:.4f}"


def _cmd_simulate(args):
    kwargs = {"rounds": args.rounds, "seed": args.seed}
    if args.examples:
        kwargs["n_examples"] = args.examples
    if args.scenario == "anecdotes":
        if args.reference:
            kwargs["reference"] = ann_io.load_annotations(args.reference, format=args.format)
    elif args.reference:
        raise UsageError("--reference only applies to --scenario anecdotes")
    if args.scenario == "annotators":
        kwargs["annotators"] = args.annotators
    config = SCENARIOS[args.scenario](**kwargs)
    start = time.perf_counter()
    result = run_scenario(config)
    elapsed = time.perf_counter() - start
    lines = [f"scenario {args.scenario}: {config.n_examples} examples, {config.rounds} rounds, "
             f"{elapsed:.1f} s"]
    for name, cmp in result.results.items():
        label = "abs error" if cmp.absolute else "rel error"
        lines.append(f"  {name:14s} true {cmp.true_oracle:.4f}  BEST {cmp.best_estimate.score:.4f}"
                     f"  {label} {100 * cmp.relative_error:.2f}%")
    return result.to_dict(), "\n".join(lines)


def _cmd_permtest(args):
    items = load_items(args.items)
    results = run_permutation_tests(items, n_samples=args.samples, seed=args.seed,
                                    alpha=args.alpha, conservative=args.conservative)
    out = report(results, items, args.alpha, args.samples, args.seed, args.significant_only)
    return out, f"{out['n_rejected']} of {out['n_features']} features significant at {args.alpha}"


def _write_matrix(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _cmd_latent(args):
    if args.traits <= 2 and args.nodes < 5:
        raise UsageError("--nodes must be at least 5 for up to 2 traits")
    responses = load_responses(args.responses)
    if responses.dropped:
        log.warning("dropped %d incomplete annotator rows", responses.dropped)
    rng = np.random.default_rng(args.seed)
    model = fit_latent(responses, args.traits, quadrature_nodes=args.nodes, rng=rng)
    rep = deviance(model, responses)
    out = {"traits": args.traits, "n_annotators": responses.n, "n_questions": responses.m,
           "dropped": responses.dropped, "converged": bool(model.converged), **rep.to_dict()}
    traits = [f"trait{j + 1}" for j in range(model.d)]
    if args.loadings_out:
        _write_matrix(args.loadings_out, ["question", *traits, "intercept"],
                      [[q, *map(float, model.W[q]), float(model.b[q])] for q in range(model.m)])
    if args.scores_out:
        scores = annotator_scores(model, responses)
        _write_matrix(args.scores_out, ["annotator", *traits],
                      [[i, *map(float, row)] for i, row in enumerate(scores)])
    summary = (f"{args.traits}-trait model: deviance {rep.deviance:.2f}, "
               f"{rep.percent_explained:.1f}% of the null deviance explained")
    return out, summary


COMMANDS = {
    "fit-prior": _cmd_fit_prior,
    "best": _cmd_best,
    "evaluate": _cmd_evaluate,
    "calibrate": _cmd_calibrate,
    "simulate": _cmd_simulate,
    "permtest": _cmd_permtest,
    "latent": _cmd_latent,
}


def _emit_error(message: str) -> None:
    print(json.dumps({"error": message}), file=sys.stderr)


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s",
                        stream=sys.stderr)
    logging.captureWarnings(True)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as err:
        _emit_error(str(err))
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        classes = ann_io.load_class_names(args.classes) if args.classes else None
        report_, summary = COMMANDS[args.command](args)
        if classes is not None:
            report_["classes"] = list(classes)
        text = json.dumps(report_, allow_nan=False)
    except UsageError as err:
        _emit_error(str(err))
        return EXIT_USAGE
    except (DataError, OSError, ValueError, FloatingPointError, KeyError) as err:
        message = str(err) if not isinstance(err, KeyError) else f"missing field {err}"
        _emit_error(message)
        return EXIT_DATA
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    if not args.quiet:
        print(summary, file=sys.stderr)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
