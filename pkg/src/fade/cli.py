"""Command-line entry point: ``fade <command> [options]``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import experiments
from .config import ExperimentConfig, load_config, parse_config
from .errors import ConfigError, FormatError, InvalidGraphError


def _points(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fade", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("enumerate", help="enumerate cell DAGs and write the bucket grid as JSON")
    p.add_argument("--max-vertices", type=int, default=5)
    p.add_argument("--bins", type=int, default=8)
    p.add_argument("--out", default="grid.json")

    def common(p):
        p.add_argument("--config", help="flat 'key = value' config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--out-dir", default="runs", help="directory for all artifacts")
        return p

    common(sub.add_parser("validate-ranks", help="correlate path ranks with from-scratch accuracies"))
    common(sub.add_parser("search", help="run the pseudo-gradient outer search"))
    p = common(sub.add_parser("baseline", help="random search or GP-UCB baseline"))
    p.add_argument("--method", choices=("rs", "bo"), required=True)
    p.add_argument("--oracle", action="store_true", help="score proposals with the concave oracle")
    p = common(sub.add_parser("eval", help="train architectures generated from feature points"))
    p.add_argument("--point", type=_points, required=True,
                   help="3 coordinates (shared by all cells) or 3*depth coordinates")
    common(sub.add_parser("oracle-search", help="outer search against the concave oracle"))
    return parser


def _config(args) -> ExperimentConfig:
    base = load_config(args.config) if args.config else ExperimentConfig()
    overrides = "\n".join(args.set)
    if args.seed is not None:
        overrides += f"\nseed = {args.seed}"
    return parse_config(overrides, base)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    try:
        if args.command == "enumerate":
            grid = experiments.enumerate_grid(args.max_vertices, args.bins, args.out)
            print(f"{len(grid.dags)} dags in {len(grid.buckets)} buckets -> {args.out}")
            return 0
        cfg = _config(args)
        out = Path(args.out_dir)
        if args.command == "validate-ranks":
            report = experiments.validate_ranks(cfg, out, argv)
            print(f"spearman={report['spearman']} pearson={report['pearson']} n={report['n']}")
        elif args.command == "search":
            result = experiments.search(cfg, out, argv)
            for e in result["history"]:
                print(f"epoch {e.epoch}: median accuracy {e.value:.4f}")
        elif args.command == "baseline":
            run = experiments.oracle_baseline if args.oracle else experiments.baseline
            history = run(cfg, args.method, out, argv)
            print(f"best value {max(e.value for e in history):.4f} over {len(history)} proposals")
        elif args.command == "eval":
            pts = args.point * cfg.depth if len(args.point) == 3 else args.point
            if len(pts) != 3 * cfg.depth:
                raise ConfigError(f"--point needs 3 or {3 * cfg.depth} coordinates")
            doc = experiments.evaluate(cfg, pts, out, argv)
            print(json.dumps({k: doc[k] for k in ("median_accuracy", "accuracies")}))
        elif args.command == "oracle-search":
            doc = experiments.oracle_search(cfg, out, argv)
            print(f"final anchors {doc['final_anchors']} max error {doc['max_abs_error']:.4f}")
    except (ConfigError, FormatError, InvalidGraphError, FileNotFoundError) as e:
        print(f"fade: error: {e}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        print("fade: interrupted; completed epochs were flushed", file=sys.stderr)
        return 130
    return 0
