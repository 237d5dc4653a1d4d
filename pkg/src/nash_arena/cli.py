"""Command line entry point ``nash-arena``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .game import sample_preference_matrix
from .harness import ConfigError, ExperimentConfig, _collect_traces, render_plot, run_experiment


def _cmd_sample(args) -> int:
    game = sample_preference_matrix(args.n, args.m, args.seed)
    if args.out in (None, "-"):
        print(game.to_json())
    else:
        game.save(args.out)
    return 0


def _cmd_run(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    result = run_experiment(cfg)
    for r in result.failures:
        print(f"cell {r['game_id']}/{r['algorithm']} aborted: {r['error']}", file=sys.stderr)
    print(f"{len(result.rows) - len(result.failures)}/{len(result.rows)} cells ok; "
          f"summary at {Path(cfg.output_dir) / 'summary.csv'}")
    return 0 if result.ok else 1


def _cmd_report(args) -> int:
    root = Path(args.dir)
    direct = root / "constants.json"
    if direct.is_file():
        print(direct.read_text().strip())
        return 0
    found = sorted(root.glob("*/constants.json"))
    if not found:
        print(f"no constants.json under {root}", file=sys.stderr)
        return 1
    report = {p.parent.name: json.loads(p.read_text()) for p in found}
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def _cmd_plot(args) -> int:
    traces = _collect_traces(Path(args.dir))
    if args.style == "kl":
        traces = [(k, v) for k, v in traces if v and v[0].get("kl_to_star") is not None]
    if not traces:
        print(f"no traces to plot under {args.dir}", file=sys.stderr)
        return 1
    render_plot(traces, args.style, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nash-arena",
                                     description="Solve skew-symmetric preference games.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="sample a preference game and write it as JSON")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default=None, help="output file (default: stdout)")
    p.set_defaults(func=_cmd_sample)

    for name in ("run", "sweep"):
        p = sub.add_parser(name, help=f"{name} an experiment config")
        p.add_argument("--config", required=True)
        p.set_defaults(func=_cmd_run)

    p = sub.add_parser("report", help="print instance constants of a run directory")
    p.add_argument("--dir", required=True)
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("plot", help="plot every trace under a directory")
    p.add_argument("--dir", required=True)
    p.add_argument("--style", choices=("gap", "kl"), default="gap")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
