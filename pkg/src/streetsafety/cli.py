"""Command-line driver.

    streetsafety simulate --out city/ [--n-points 500] [--seed 0]
    streetsafety all --config city/config.json [--stages extract,prep] [--seed 1] [--out dir]
    streetsafety extract|prep|train|explain|causal|matrix --config ...
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, load_config
from .pipeline import STAGES, StageError, run_pipeline, write_json

SUBCOMMANDS = (*STAGES, "simulate", "all")


def _stage_list(text: str) -> list[str]:
    stages = [s.strip() for s in text.split(",") if s.strip()]
    aliases = {"indicators": "extract"}
    stages = [aliases.get(s, s) for s in stages]
    bad = sorted(set(stages) - set(STAGES))
    if bad:
        raise argparse.ArgumentTypeError(f"unknown stages {bad}; choose from {', '.join(STAGES)}")
    return stages


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="streetsafety", description=__doc__.splitlines()[0] if __doc__ else None)
    parser.add_argument("--version", action="version", version=f"streetsafety {__version__}")
    parser.add_argument("--help-json", action="store_true", help="print the command surface as JSON and exit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command")
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=f"run the {name} stage" if name in STAGES else None)
        p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
        if name == "simulate":
            p.help = "write a synthetic city (masks, CSVs, mapping, schema, config)"
            p.add_argument("--out", required=True, help="directory to create")
            p.add_argument("--n-points", type=int, default=500)
            p.add_argument("--seed", type=int, default=0)
            p.add_argument("--size", type=int, default=64, help="mask side length in pixels")
            p.add_argument("--bootstrap", type=int, default=50, help="B written into the generated config")
            continue
        p.add_argument("--config", required=True, help="run configuration JSON")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--out", help="override the output directory")
        if name == "all":
            p.help = "run every stage in order"
            p.add_argument("--stages", type=_stage_list, default=list(STAGES),
                           help=f"comma-separated subset of {','.join(STAGES)}")
    return parser


def help_json(parser: argparse.ArgumentParser) -> dict:
    def describe(p):
        return [{"flags": a.option_strings or [a.dest], "dest": a.dest, "required": a.required,
                 "default": a.default if a.default is not argparse.SUPPRESS else None, "help": a.help}
                for a in p._actions if not isinstance(a, (argparse._HelpAction, argparse._SubParsersAction))]

    subs = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    return {"prog": parser.prog, "version": __version__, "options": describe(parser),
            "commands": {name: describe(p) for name, p in subs.choices.items()}}


def simulate(args) -> int:
    from .synth import write_synthetic_city

    out = Path(args.out)
    paths = write_synthetic_city(out, n_points=args.n_points, seed=args.seed, size=args.size)
    config = {
        "seed": args.seed,
        "paths": {k: str(Path(v).relative_to(out)) for k, v in paths.items()},
        "out_dir": "results",
        "train": {"rounds": 100, "max_depth": 4, "learning_rate": 0.1},
        "causal": {"bootstrap": args.bootstrap},
        "shap_max_samples": 200,
        "fishnet_cell": 0.01,
    }
    write_json(out / "config.json", config)
    print(out / "config.json")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.help_json:
        print(json.dumps(help_json(parser), indent=2, default=str))
        return 0
    if args.command is None:
        parser.print_help()
        return 2
    if args.command == "simulate":
        return simulate(args)
    try:
        cfg = load_config(args.config)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    stages = args.stages if args.command == "all" else [args.command]
    try:
        status = run_pipeline(cfg, stages, args.out)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if status:
        manifest = json.loads((Path(args.out or cfg.out_dir) / "manifest.json").read_text())
        for name, info in manifest["stages"].items():
            if info.get("status") != "ok" and name in stages:
                print(f"error: stage {name}: {info.get('error')}", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
