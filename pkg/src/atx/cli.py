"""``atx`` command line: train, beta-search, size-sweep, compare, gen-data.

Exit codes: 0 success, 1 usage error (bad arguments or spec), 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import experiments as ex
from .data.synthetic import generate_synthetic

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _seeds(args, spec):
    reps = args.reps if args.reps is not None else spec.train.repetitions
    if reps < 1:
        raise UsageError("--reps must be >= 1")
    base = args.seed if args.seed is not None else spec.train.seed
    return [base + r for r in range(reps)]


def _teacher(args, spec, required):
    if args.teacher is None:
        if required:
            raise UsageError("attention transfer needs --teacher <checkpoint>")
        return None
    if not Path(args.teacher).exists():
        raise UsageError(f"teacher checkpoint not found: {args.teacher}")
    return ex.load_teacher(args.teacher, spec.teacher)


def cmd_train(args) -> int:
    spec = ex.load_spec(args.spec)
    at = spec.train.mode == "attention_transfer"
    if args.teacher is not None and not at:
        raise UsageError("--teacher is only used when train.mode = 'attention_transfer'")
    teacher = _teacher(args, spec, required=at)
    seeds = _seeds(args, spec)
    data = ex.prepare_data(spec, args.out)
    summary = ex.run_repetitions(spec.train, spec.student, data, teacher, args.out, seeds)
    print(ex.format_report(summary), end="")
    return EXIT_OK


def cmd_beta_search(args) -> int:
    spec = ex.load_spec(args.spec)
    if args.grid:
        spec.beta_grid = tuple(args.grid)
    if not spec.beta_grid:
        raise UsageError("beta grid is empty")
    if any(not b > 0 for b in spec.beta_grid):
        raise UsageError("beta grid values must be > 0")
    teacher = _teacher(args, spec, required=True)
    data = ex.prepare_data(spec, args.out)
    seed = args.seed if args.seed is not None else spec.train.seed
    result = ex.beta_search(spec, data, teacher, args.out, seed)
    for beta, metric in result["table"]:
        print(f"beta {beta:g}\t{metric:.6f}")
    print(f"best beta {result['best_beta']:g}")
    return EXIT_OK


def cmd_size_sweep(args) -> int:
    spec = ex.load_spec(args.spec)
    if args.sizes:
        spec.sizes = tuple(args.sizes)
    if not spec.sizes:
        raise UsageError("size sweep needs sizes (sweep.sizes or --sizes)")
    teacher = _teacher(args, spec, required=False)
    seeds = _seeds(args, spec)
    data = ex.prepare_data(spec, args.out)
    curves = ex.size_sweep(spec, data, teacher, args.out, seeds)
    for mode, rows in curves.items():
        for size, metric, ci, _ in rows:
            print(f"{mode}\t{size}\t{metric:.6f}\t{ci:.6f}")
    return EXIT_OK


def cmd_compare(args) -> int:
    if len(args.runs) < 2:
        raise UsageError("compare needs at least two run directories")
    result = ex.compare_runs(args.runs, args.out)
    print(ex.comparison_markdown(result["rows"]), end="")
    return EXIT_OK


def cmd_gen_data(args) -> int:
    spec = ex.load_spec(args.spec)
    if spec.synthetic is None:
        raise UsageError("gen-data needs a [dataset.synthetic] table in the spec")
    seed = args.seed if args.seed is not None else spec.synthetic_seed
    corpus = generate_synthetic(spec.synthetic, seed, args.out)
    (Path(args.out) / "synthetic_spec.json").write_text(
        json.dumps({"seed": seed, **dataclasses.asdict(spec.synthetic)}, indent=2, sort_keys=True)
    )
    print(f"{corpus.manifest_path}\t{len(corpus.manifest)} images\tlinear probe AUC {corpus.probe_auc:.3f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="atx", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def verbose(p):
        p.add_argument("-v", "--verbose", action="store_true", help="log every epoch")

    def common(p, teacher=True, reps=True):
        verbose(p)
        p.add_argument("--spec", required=True, help="experiment spec (TOML)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, help="base seed (default: train.seed)")
        if teacher:
            p.add_argument("--teacher", help="teacher checkpoint for attention transfer")
        if reps:
            p.add_argument("--reps", type=int, help="repetitions (default: train.repetitions)")

    p = sub.add_parser("train", help="train the student for each repetition seed")
    common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("beta-search", help="grid search over beta on the validation split")
    common(p, reps=False)
    p.add_argument("--grid", type=float, nargs="+", help="override sweep.beta_grid")
    p.set_defaults(fn=cmd_beta_search)

    p = sub.add_parser("size-sweep", help="test metric against training-set size")
    common(p)
    p.add_argument("--sizes", type=int, nargs="+", help="override sweep.sizes")
    p.set_defaults(fn=cmd_size_sweep)

    p = sub.add_parser("compare", help="compare run directories")
    p.add_argument("runs", nargs="+", help="run directories (epochs.csv or rep_*/epochs.csv)")
    p.add_argument("--out", help="where to write the tables and plot")
    verbose(p)
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("gen-data", help="write the spec's synthetic corpus")
    common(p, teacher=False, reps=False)
    p.set_defaults(fn=cmd_gen_data)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage().strip())
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (UsageError, ex.SpecError) as exc:
        print(f"atx {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        print(f"atx {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
