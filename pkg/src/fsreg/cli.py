"""Command-line entry points: gen-data, train, eval, bench."""

from __future__ import annotations

import argparse
import sys

from .config import ConfigError, RunConfig, load_config


def _add_config_flags(p: argparse.ArgumentParser, checkpoint: bool = False):
    p.add_argument("--config", default=None, help="key = value config file")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--out", default=None, help="override output directory")
    p.add_argument("--ordering", choices=("raster", "reverse", "column"),
                   default=None, help="override sweep token ordering")
    p.add_argument("--fixed-depth", type=int, default=None, metavar="N",
                   help="bypass the depth policy with a constant depth")
    if checkpoint:
        p.add_argument("--checkpoint", required=True,
                       help="checkpoint file to evaluate")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="fsreg",
        description="focus-sweep image-to-point-cloud registration")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic dataset")
    _add_config_flags(g)
    g.add_argument("--count", type=int, default=None,
                   help="override config n_samples")

    t = sub.add_parser("train", help="train a model from scratch")
    _add_config_flags(t)

    e = sub.add_parser("eval", help="evaluate a checkpoint (greedy depths)")
    _add_config_flags(e, checkpoint=True)
    e.add_argument("--split", choices=("train", "val", "test"), default="test")
    e.add_argument("--no-mmd", action="store_true",
                   help="skip the feature-spread statistic")

    b = sub.add_parser("bench", help="scaling and feature-spread benchmarks")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", default=None, help="directory for CSV output")
    b.add_argument("--repeats", type=int, default=3)
    return p


def _config_from(args: argparse.Namespace) -> RunConfig:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out"] = args.out
    if getattr(args, "ordering", None) is not None:
        overrides["ordering"] = args.ordering
    if getattr(args, "fixed_depth", None) is not None:
        overrides["fixed_depth"] = args.fixed_depth
    return load_config(args.config, overrides)


def cmd_gen_data(args) -> int:
    from .synthgen import gen_dataset

    cfg = _config_from(args)
    count = args.count if args.count is not None else cfg.n_samples
    out_dir = args.out if args.out is not None else cfg.dataset
    written = gen_dataset(cfg.scene_spec(), count, cfg.seed, out_dir)
    counts = " ".join(f"{s}:{len(p)}" for s, p in written.items())
    print(f"wrote {count} samples under {out_dir} ({counts})")
    return 0


def cmd_train(args) -> int:
    from .train import run_train

    cfg = _config_from(args)
    report = run_train(cfg, log=print)
    print(f"metrics: {report.csv_path}")
    print(f"checkpoint: {report.checkpoint_path}")
    return 0


def cmd_eval(args) -> int:
    from .train import run_eval

    cfg = _config_from(args)
    report = run_eval(cfg, args.checkpoint, split=args.split,
                      with_mmd=not args.no_mmd, log=print)
    print(f"mean IR {report.mean_ir:.4f}  FMR {report.fmr:.4f}  "
          f"RR {report.rr_rate:.4f}")
    print("depth histogram: " +
          " ".join(f"{a}:{v:.3f}" for a, v in sorted(report.depth_hist.items())))
    print(f"rows: {report.csv_path}")
    print(f"summary: {report.summary_path}")
    return 0


def cmd_bench(args) -> int:
    from .bench import run_bench

    report = run_bench(seed=args.seed, out=args.out, repeats=args.repeats,
                       log=print)
    for path in report.files:
        print(f"wrote {path}")
    return 0


_COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train,
             "eval": cmd_eval, "bench": cmd_bench}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
