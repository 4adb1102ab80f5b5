"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 failed check.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import data
from .fir import CSV_HEADER, PHASE_THRESHOLD, analyze_network_kernels
from .gradcheck import gradient_check
from .harness import (
    DESK_TEST,
    DESK_TRAIN,
    TrainingConfig,
    aggregate_table,
    evaluate,
    load_dataset,
    load_raw,
    load_results,
    parse_conditions,
    prepare_splits,
    run_condition,
    write_curves,
    write_summary,
)
from .kernels import T2BMode, count_parameters
from .network import CONDITION_NAMES, CheckpointError, load_checkpoint, count_network_parameters
from .stats import wilcoxon_rank_sum

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CHECK = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _seeds(text: str) -> list[int]:
    """``5`` means seeds 0..4; ``3,7,11`` lists them explicitly."""
    if "," in text:
        return [int(s) for s in text.split(",")]
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("need at least one seed")
    return list(range(n))


def cmd_train(args) -> int:
    conditions = parse_conditions(args.condition)
    config = TrainingConfig(
        lr=args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        t2b_mode=args.t2b_mode,
        split_seed=args.split_seed,
    )
    splits = load_dataset(args.dataset, args.full_scale, config.train_fraction, config.split_seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = []
    for condition in conditions:
        results += run_condition(condition, splits, config, args.seeds, out=out, jobs=args.jobs)
    rows = aggregate_table(load_results(out))
    write_summary(out / "summary.csv", rows)
    write_curves(out / "curves.csv", load_results(out))
    for r in results:
        print(f"{r.condition} seed {r.seed}: test acc {r.test['acc']:.2f}% ce {r.test['ce']:.4f}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    net = load_checkpoint(args.checkpoint)
    norm = net.metadata.get("normalization")
    z = data.ZScore(norm["mean"], norm["std"]) if norm else None
    train_raw, test_raw = load_raw(args.dataset, args.split_seed)
    subset = None
    if args.dataset.split(":")[0] == "mnist" and not args.full_scale:
        subset = (DESK_TRAIN, DESK_TEST)
    splits = prepare_splits(train_raw, test_raw, 0.9, args.split_seed, subset, args.dataset, z)
    acc, ce = evaluate(net, splits.test.images, splits.test.labels)
    print(json.dumps({"condition": net.condition.name, "n": len(splits.test), "acc": acc, "ce": ce}))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    failed = False
    for condition in parse_conditions(args.condition):
        res = gradient_check(condition, eps=args.eps)
        ok = res.passed(args.tolerance)
        failed |= not ok
        print(
            f"{res.condition}: {res.checked} parameters, worst relative error "
            f"{res.worst_error:.2e} ({res.worst_param}{list(res.worst_index)}) "
            f"{'PASS' if ok else 'FAIL'}"
        )
    return EXIT_CHECK if failed else EXIT_OK


def cmd_analyze(args) -> int:
    net = load_checkpoint(args.checkpoint)
    rows, ok = analyze_network_kernels(net, args.threshold)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        writer.writerows(rows)
    finally:
        if args.out:
            fh.close()
    return EXIT_OK if ok else EXIT_CHECK


def cmd_params(args) -> int:
    for condition in parse_conditions(args.condition):
        features, classifier = count_network_parameters(condition)
        if args.detail:
            per_kernel = ", ".join(
                f"{c.value}={count_parameters(c, 5)}" for c in (condition.layer1, condition.layer2)
            )
            print(f"{condition.name}: features {features} ({per_kernel}), classifier {classifier}")
        else:
            print(features)
    return EXIT_OK


def cmd_compare(args) -> int:
    a, b = (load_results(p) for p in args.results)
    report = wilcoxon_rank_sum(
        [r.test["acc"] for r in a], [r.test["acc"] for r in b], str(args.results[0]), str(args.results[1])
    )
    print(
        json.dumps(
            {
                "a": report.label_a,
                "b": report.label_b,
                "samples_a": report.samples_a,
                "samples_b": report.samples_b,
                "rank_sum": report.statistic,
                "p_value": report.p_value,
                "method": report.method,
                "degenerate": report.degenerate,
                "verdict": report.verdict,
            },
            indent=2,
        )
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="symnet", description="Symmetric-filter CNN experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="progress logging")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train conditions and write results")
    p.add_argument("--condition", required=True, help=f"one of {', '.join(CONDITION_NAMES)}, a comma list, or 'all'")
    p.add_argument("--dataset", default="synthetic", help="mnist[:DIR], idx:TRI,TRL,TEI,TEL, manifest:TRAIN,TEST, synthetic[:N]")
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--seeds", type=_seeds, default=[0], help="count (5 -> 0..4) or comma list")
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--batch-size", type=int, default=1)
    p.add_argument("--t2b-mode", choices=[m.value for m in T2BMode], default=T2BMode.LITERAL.value)
    p.add_argument("--full-scale", action="store_true", help="use all of MNIST instead of the 6000/1000 subset")
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default="results")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="test-set metrics of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--full-scale", action="store_true")
    p.add_argument("--split-seed", type=int, default=0)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check on a reduced network")
    p.add_argument("--condition", required=True)
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.add_argument("--eps", type=float, default=1e-6)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("analyze-filters", help="linear-phase report for every conv kernel (CSV)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--threshold", type=float, default=PHASE_THRESHOLD)
    p.add_argument("--out", help="CSV path (default stdout)")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("params", help="feature-extraction parameter count")
    p.add_argument("--condition", required=True)
    p.add_argument("--detail", action="store_true", help="also show per-kernel and classifier counts")
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("compare", help="rank-sum test between two result sets")
    p.add_argument("--results", nargs=2, required=True, metavar=("A", "B"))
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(asctime)s %(levelname)s %(message)s",
    )
    try:
        return args.func(args)
    except (data.DataError, CheckpointError, OSError) as exc:
        print(f"symnet: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"symnet: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
