"""Command-line entry point: ``uavqml {gen,features,train,bench,report}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import bench, dataio

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


def _add_config_args(p: argparse.ArgumentParser):
    p.add_argument("--config", help="experiment config JSON (defaults apply when omitted)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config entry by dotted path, e.g. train.epochs=20")
    p.add_argument("--out-dir", help="output directory (defaults to the config's output_dir)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uavqml", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic flow dataset")
    _add_config_args(p)
    p.add_argument("--out", required=True, help="dataset CSV path (a provenance JSON is written alongside)")

    p = sub.add_parser("features", help="split, balance and standardize a dataset CSV")
    p.add_argument("--dataset", required=True)
    p.add_argument("--column-map", help="JSON file mapping canonical names to CSV headers")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--ratio", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--balance", default="UNDERSAMPLE", choices=["UNDERSAMPLE", "NONE"])
    p.add_argument("--pmr-window", type=float, default=0.1)

    p = sub.add_parser("train", help="train one model and write a checkpoint and trace")
    _add_config_args(p)
    p.add_argument("--model", required=True, help="svm | qkernel | qnn:L | hybrid:L | qtnn:H,L")

    p = sub.add_parser("bench", help="run the configured model grid")
    _add_config_args(p)
    p.add_argument("--parallel", action="store_true",
                   help=f"fit models in worker processes (count from ${bench.WORKERS_ENV})")

    p = sub.add_parser("report", help="print a saved report")
    p.add_argument("report", help="report.json written by bench")
    p.add_argument("--format", choices=["table", "csv", "json"], default="table")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except bench.ConfigError as exc:
        print(f"uavqml: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (dataio.DatasetError, FileNotFoundError) as exc:
        print(f"uavqml: error: {exc}", file=sys.stderr)
        return EXIT_FAILED


def _dispatch(args) -> int:
    if args.command == "gen":
        cfg = bench.load_config(args.config, args.overrides)
        if cfg["data"]["source"] != "synth":
            raise bench.ConfigError("gen needs data.source = synth")
        ds = bench.load_dataset(cfg)
        path = dataio.write_dataset(ds, args.out)
        print(f"wrote {len(ds)} flows to {path}")
        return EXIT_OK

    if args.command == "features":
        cmap = dataio.load_column_map(args.column_map) if args.column_map else None
        info = bench.run_features(args.dataset, args.out_dir, args.ratio, args.seed, args.balance,
                                  args.pmr_window, cmap)
        print(json.dumps(info, indent=2))
        return EXIT_OK

    if args.command == "train":
        cfg = bench.load_config(args.config, args.overrides)
        ckpt = bench.run_train(cfg, args.model, args.out_dir)
        print(f"trained {ckpt['tag']} (seed {ckpt['seed']})")
        return EXIT_OK

    if args.command == "bench":
        cfg = bench.load_config(args.config, args.overrides)
        report = bench.run_bench(cfg, args.out_dir, args.parallel)
        print(bench.format_table(report))
        failed = [r["tag"] for r in report["rows"] if r["status"] != "ok"]
        if failed:
            print(f"failed models: {', '.join(failed)}", file=sys.stderr)
            return EXIT_FAILED
        return EXIT_OK

    if args.command == "report":
        with open(args.report) as fh:
            report = json.load(fh)
        if args.format == "json":
            print(json.dumps(report, indent=2))
        elif args.format == "csv":
            sys.stdout.write(bench.report_csv(report))
        else:
            print(bench.format_table(report))
        return EXIT_OK
    raise AssertionError(args.command)


if __name__ == "__main__":
    sys.exit(main())
