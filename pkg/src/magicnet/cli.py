"""Command-line experiment runner.

    magicnet --config experiment.json [--out DIR] [--seed-override 1 2 3]
             [--trace] [--replay DUMP.csv] [--dump-streams]

Everything but these flags lives in the JSON config file; see the README
for a documented example.  Exit code 2 signals a configuration problem
(nothing is written in that case).
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from .runner import ExperimentConfig, replay, run
from .streams import ConfigurationError, StreamDataError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="magicnet",
        description="Run a streaming continual-learning experiment.")
    parser.add_argument("--config", required=True, help="JSON experiment config")
    parser.add_argument("--out", default=None,
                        help="output directory (overrides the config's 'out')")
    parser.add_argument("--seed-override", type=int, nargs="+", default=None,
                        metavar="SEED", help="replace the config's seed list")
    parser.add_argument("--trace", action="store_true",
                        help="also write per-point prediction traces")
    parser.add_argument("--replay", default=None, metavar="DUMP",
                        help="replay a dumped stream instead of generating one")
    parser.add_argument("--dump-streams", action="store_true",
                        help="write each generated stream as a replayable dump")
    return parser


def _print_summary(out_dir: Path) -> None:
    rows = []
    for path in sorted(out_dir.glob("summary_seed*.csv")):
        with path.open(newline="") as fh:
            reader = csv.DictReader(fh)
            rows.extend(reader)
    if not rows:
        return
    print(f"{'configuration':<16} {'learner':<7} {'start':>8} {'end':>8} "
          f"{'AVG':>8} {'BWT':>8}")
    for row in rows:
        def fmt(key):
            try:
                return f"{float(row[key]):8.4f}"
            except (ValueError, TypeError):
                return f"{'nan':>8}"
        print(f"{row['configuration_id']:<16} {row['learner']:<7} "
              f"{fmt('start')} {fmt('end')} {fmt('avg')} {fmt('bwt')}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = ExperimentConfig.from_json(args.config)
        if args.seed_override:
            config.seeds = list(args.seed_override)
        if args.trace:
            config.trace = True
        if args.dump_streams:
            config.dump_streams = True
        out = args.out if args.out is not None else config.out
        if out is None:
            raise ConfigurationError("out: set it in the config or pass --out")
        if args.replay:
            out_dir = replay(config, args.replay, out)
        else:
            out_dir = run(config, out)
    except (ConfigurationError, StreamDataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    _print_summary(Path(out_dir))
    print(f"results written to {out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
