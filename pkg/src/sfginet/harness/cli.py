"""Command line entry point: ``sfginet <command> ...``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .. import models as M
from ..core import GroundMetric
from ..data import build_dataset, load_dataset, load_pointcloud_file, load_spec, save_dataset
from ..errors import SfgiError
from ..ot import SinkhornConfig, sinkhorn, wasserstein_exact


def _sidecar(path, suffix: str) -> Path:
    path = Path(path)
    return path.with_name(path.stem + suffix)


def cmd_gen_data(args) -> int:
    spec = load_spec(args.spec)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    ds = build_dataset(spec)
    save_dataset(ds, args.output)
    print(f"wrote {len(ds.train)} train and {len(ds.val)} val pairs to {args.output}", file=sys.stderr)
    return 0


def cmd_train(args) -> int:
    from .plots import plot_loss_curve
    from .train import load_train_config, train, write_epoch_curve, write_loss_curve

    cfg = load_train_config(args.config)
    ds = load_dataset(args.data)
    result = train(cfg, ds)
    M.save_model(result.model, args.output, {"train_config": cfg.to_dict(), "best_epoch": result.best_epoch})
    write_loss_curve(result, _sidecar(args.output, ".loss.csv"))
    write_epoch_curve(result, _sidecar(args.output, ".epochs.csv"))
    plot_loss_curve(result, _sidecar(args.output, ".loss.png"))
    print(f"best epoch {result.best_epoch}, val mean rel. error {result.best_val:.6g}", file=sys.stderr)
    return 0


def cmd_eval(args) -> int:
    from .evaluate import evaluate, unseen_pairs, write_report, write_summary
    from .plots import plot_eval

    model = M.load_model(args.checkpoint)
    ds = load_dataset(args.data)
    if args.unseen_range:
        n = args.n_pairs or len(ds.val)
        pairs = unseen_pairs(ds.spec, args.unseen_range, n, args.seed)
        mode = f"unseen[{args.unseen_range[0]},{args.unseen_range[1]}]"
    else:
        pairs = {"train": ds.train, "val": ds.val, "all": ds.pairs}[args.split]
        if args.n_pairs:
            pairs = pairs[: args.n_pairs]
        mode = args.split
    report = evaluate(model, pairs)
    write_report(report, args.output)
    write_summary(report, _sidecar(args.output, ".summary.csv"), {"model": model.kind, "pairs": mode})
    plot_eval(report, _sidecar(args.output, ".png"))
    print(f"{model.kind} {mode}: mean rel. error {report.mean_rel_error:.6g} +- {report.std_rel_error:.6g} "
          f"over {report.n_pairs} pairs", file=sys.stderr)
    return 0


def cmd_bench(args) -> int:
    from .bench import load_bench_config, run_bench_config, write_bench
    from .plots import plot_bench

    rows = run_bench_config(load_bench_config(args.config))
    if args.output:
        with open(args.output, "w", newline="") as fh:
            write_bench(rows, fh)
        plot_bench(rows, _sidecar(args.output, ".png"))
    else:
        write_bench(rows, sys.stdout)
    return 0


def cmd_sketch_verify(args) -> int:
    from .plots import plot_sketch
    from .sketch_verify import load_sketch_config, verify, write_rows

    rows = verify(load_sketch_config(args.config))
    write_rows(rows, args.output)
    plot_sketch(rows, _sidecar(args.output, ".png"))
    bad = sum(not r.within for r in rows)
    print(f"{len(rows) - bad}/{len(rows)} round trips within bound", file=sys.stderr)
    return 0 if bad == 0 else 1


def cmd_ot(args) -> int:
    A = load_pointcloud_file(args.a)
    B = load_pointcloud_file(args.b)
    if args.solver == "exact":
        d = wasserstein_exact(A, B, args.p, args.metric).distance
    else:
        d = sinkhorn(A, B, args.p, args.metric, SinkhornConfig(epsilon=args.eps)).distance
    print(f"{d:.9f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sfginet", description="Neural Wasserstein distance approximation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate and label a pair dataset")
    p.add_argument("spec", help="dataset spec JSON (fields of DatasetSpec, or {\"preset\": name, ...})")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("config", help="train config JSON")
    p.add_argument("--data", required=True)
    p.add_argument("-o", "--output", required=True, help="checkpoint path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="mean relative error of a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--unseen-range", nargs=2, type=int, metavar=("LO", "HI"))
    p.add_argument("--split", choices=("train", "val", "all"), default="val")
    p.add_argument("--n-pairs", type=int)
    p.add_argument("--seed", type=int, default=12345, help="seed for unseen-size pairs")
    p.add_argument("-o", "--output", required=True, help="report CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="time distance evaluations")
    p.add_argument("config", help="bench config JSON")
    p.add_argument("-o", "--output", help="CSV path (default: standard output)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sketch-verify", help="check sketch round-trip errors on random sets")
    p.add_argument("config", help="sketch config JSON")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_sketch_verify)

    p = sub.add_parser("ot", help="distance between two point-cloud files")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--p", type=int, choices=(1, 2), default=1)
    p.add_argument("--solver", choices=("exact", "sinkhorn"), default="exact")
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--metric", choices=[m.value for m in GroundMetric], default="L2")
    p.set_defaults(func=cmd_ot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (SfgiError, OSError, json.JSONDecodeError) as exc:
        print(f"sfginet {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
