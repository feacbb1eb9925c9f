"""Command-line driver: gen-data, optimize, calibrate, verify, report.

Exit codes: 0 success, 1 validation or input error, 2 verification failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline
from .config import ConfigError, load
from .partition_opt import GAFailure
from .reach import ReachError

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_VERIFY = 2


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", required=True, help="config file (YAML/JSON) or preset name: mc, car")
    p.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
    p.add_argument("--out", default=None, help="output directory (overrides the config)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="confreach", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="simulate the reg/conf/test trajectory splits")
    _common(p)

    p = sub.add_parser("optimize", help="search cuts and confidences on the reg split")
    _common(p)
    p.add_argument("--confidence", choices=("fixed", "dynamic"), default=None,
                   help="uniform alpha/M or optimized per-region confidences (default: config)")

    p = sub.add_parser("calibrate", help="regional and timewise bounds from the conf split")
    _common(p)

    p = sub.add_parser("verify", help="flowpipe under the calibrated noise bounds")
    _common(p)
    p.add_argument("--bounds", choices=("state", "time"), default="state")
    p.add_argument("--max-branches", type=int, default=None, help="branch budget per step")

    p = sub.add_parser("report", help="comparison table and per-step interval files")
    _common(p)
    p.add_argument("metrics", nargs="*", help="metrics files (default: every metrics_*.json in the output dir)")
    return parser


def run(args: argparse.Namespace) -> int:
    cfg = load(args.config, seed=args.seed, output=args.out)
    if args.command == "gen-data":
        man = pipeline.gen_data(cfg)
        pipeline.check_disjoint(man)
        for name, s in man["splits"].items():
            print(f"{name}: {s['n']} trajectories -> {cfg.output / 'data' / s['file']}")
    elif args.command == "optimize":
        dyn = None if args.confidence is None else args.confidence == "dynamic"
        res = pipeline.optimize(cfg, dyn)
        print(f"M={res['n_regions']} loss={res['loss']:.6g} alphas={[round(a, 6) for a in res['alphas']]}")
    elif args.command == "calibrate":
        res = pipeline.calibrate(cfg)
        print(f"etas={res['state']['etas']}")
        print(f"test coverage: state {res['coverage']['state']:.4f}, time {res['coverage']['time']:.4f}")
    elif args.command == "verify":
        if args.max_branches is not None and args.max_branches < 1:
            raise ConfigError("--max-branches must be >= 1")
        m = pipeline.verify(cfg, args.bounds, args.max_branches)
        print(json.dumps({k: m[k] for k in ("method", "max_branches", "rss", "max_rss", "safe_distance")}))
    elif args.command == "report":
        rows = pipeline.report(cfg, args.metrics)
        print((cfg.output / "report.md").read_text(), end="")
        print(f"{len(rows)} rows -> {cfg.output / 'report.csv'}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except ReachError as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except GAFailure as exc:
        print(f"partition search failed: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ConfigError, pipeline.PipelineError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
