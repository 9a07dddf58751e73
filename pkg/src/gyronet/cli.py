"""``gyronet`` command line: data generation, training, evaluation and the check suites.

Exit codes: 0 success, 1 failed check or aborted training, 2 bad config,
3 bad data or checkpoint.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import checkpoint, data
from .config import ConfigError, load_config

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DATA = 0, 1, 2, 3


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--seed", type=int, help="base random seed")
    p.add_argument("--out", help="output file or directory")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gyronet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a PREFIX dataset or a separable ball-point file")
    _common(p)
    p.add_argument("--task", choices=("prefix", "ballpoints"), default="prefix")
    p.add_argument("--z", type=float, default=10.0, help="percent of prefix tokens replaced")
    p.add_argument("--n-train", type=int, default=50_000)
    p.add_argument("--n-valid", type=int, default=5_000)
    p.add_argument("--n-test", type=int, default=5_000)
    p.add_argument("--vocab", type=int, default=100)
    p.add_argument("--max-len", type=int, default=20)
    p.add_argument("--n", type=int, default=2000, help="ball points to draw")
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--margin", type=float, default=0.05)
    p.add_argument("--offset", type=float, default=0.2, help="hyperplane offset from the origin")

    for name, text in (("train", "train one model"), ("best-of", "train cfg.runs seeds, pick by validation")):
        p = sub.add_parser(name, help=text)
        _common(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=data.SPLITS, default="test")
    p.add_argument("--data", help="dataset directory (defaults to the checkpoint's)")

    p = sub.add_parser("compare-mlr", help="three-variant binary MLR comparison")
    _common(p)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--positive-ids", help="file with one positive id per line (default: labels in the file)")
    p.add_argument("--variant", choices=("all", "hyperbolic", "euclidean_direct", "log0_euclidean"), default="all")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--train-frac", type=float, default=0.8)

    for name in ("gradcheck", "props"):
        p = sub.add_parser(name, help=f"run the {name} suite and write a CSV report")
        _common(p)
    p = sub.choices["gradcheck"]
    p.add_argument("--points", type=int, default=100, help="random points per target")
    return parser


def parse_overrides(extra: list[str]) -> dict[str, str]:
    """``--key value`` pairs (or ``--key=value``) left over after argparse."""
    out: dict[str, str] = {}
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or len(tok) == 2:
            raise ConfigError(f"unexpected argument {tok!r}")
        key, eq, val = tok[2:].partition("=")
        if not eq:
            if i + 1 >= len(extra):
                raise ConfigError(f"override {tok} has no value")
            val = extra[i + 1]
            i += 1
        out[key] = val
        i += 1
    return out


def _config(args, extra):
    overrides = parse_overrides(extra)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    return load_config(args.config, overrides)


def _write(out: str | None, text: str) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8", newline="\n")
    else:
        sys.stdout.write(text)


def cmd_gen_data(args, extra) -> int:
    if extra:
        raise ConfigError(f"unexpected arguments {extra}")
    seed = args.seed or 0
    if args.task == "prefix":
        out = args.out or "prefix-data"
        data.gen_prefix_dataset(out, args.z, args.n_train, args.n_valid, args.n_test, args.vocab,
                                args.max_len, seed)
        print(f"wrote {out}")
        return EXIT_OK
    points, _ = data.gen_separable_ballpoints(args.n, args.dim, args.c, args.margin, seed, offset=args.offset)
    out = args.out or "ballpoints.tsv"
    data.save_embeddings(out, points)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_train(args, extra) -> int:
    from .train import train

    cfg = _config(args, extra)
    out = args.out or "run"
    result = train(cfg, out_dir=out)
    best = result.record(result.best_epoch, "test")
    print(f"best epoch {result.best_epoch}: valid {result.best_valid_accuracy:.4f} test {best.accuracy:.4f}")
    return EXIT_OK


def cmd_best_of(args, extra) -> int:
    from .train import best_of_runs

    cfg = _config(args, extra)
    result = best_of_runs(cfg, args.out or "best-of")
    sys.stdout.write(result.to_csv())
    print(f"selected run {result.selected}: test accuracy {result.test_accuracy:.4f}")
    return EXIT_OK


def cmd_eval(args, extra) -> int:
    from .train import evaluate, metrics_csv

    if extra:
        raise ConfigError(f"unexpected arguments {extra}")
    ckpt = checkpoint.load(args.checkpoint)
    data_dir = args.data or ckpt.config.data
    if not data_dir:
        raise data.DataError("no dataset directory given")
    _, splits = data.load_prefix_dataset(data_dir)
    rec = evaluate(ckpt, splits[args.split], args.split)
    _write(args.out, metrics_csv([rec]))
    return EXIT_OK


def cmd_compare_mlr(args, extra) -> int:
    from .train import MLR_VARIANTS, compare_mlr

    if extra:
        raise ConfigError(f"unexpected arguments {extra}")
    seed = args.seed or 0
    points = data.load_embeddings(args.embeddings)
    if args.positive_ids:
        ids = [line.strip() for line in Path(args.positive_ids).read_text(encoding="utf-8").splitlines()
               if line.strip()]
    else:
        ids = [i for i, lab in zip(points.ids, points.labels) if lab == 1]
    train_pts, test_pts = data.split_subtree_task(points, ids, args.train_frac, seed)
    variants = MLR_VARIANTS if args.variant == "all" else (args.variant,)
    lines = ["variant,train_f1,test_f1,test_accuracy\n"]
    for v in variants:
        r = compare_mlr(train_pts, test_pts, v, epochs=args.epochs, seed=seed)
        lines.append(f"{v},{r.train_f1!r},{r.test_f1!r},{r.test_accuracy!r}\n")
    _write(args.out, "".join(lines))
    return EXIT_OK


def cmd_suite(args, extra) -> int:
    from . import props

    if extra:
        raise ConfigError(f"unexpected arguments {extra}")
    seed = args.seed or 0
    if args.command == "gradcheck":
        report = props.run_gradcheck_suite(seed, points=args.points)
    else:
        report = props.run_property_suite(seed)
    _write(args.out, report.to_csv())
    failed = [r.name for r in report.rows if not r.passed]
    print(f"{len(report.rows) - len(failed)}/{len(report.rows)} passed", file=sys.stderr)
    for name in failed:
        print(f"FAILED {name}", file=sys.stderr)
    return EXIT_FAIL if failed else EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "best-of": cmd_best_of,
    "eval": cmd_eval,
    "compare-mlr": cmd_compare_mlr,
    "gradcheck": cmd_suite,
    "props": cmd_suite,
}


def main(argv: list[str] | None = None) -> int:
    from .train import TrainingError

    args, extra = build_parser().parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args, extra)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (data.DataError, checkpoint.CheckpointError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingError as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
