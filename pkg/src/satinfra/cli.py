"""Command-line driver: ``satinfra <stage> --config cfg.yaml [--seed N] [--jobs N]``.

Failures print a one-line JSON report on stderr and exit with status 2.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

from . import pipeline
from .config import load_config

EXIT_FAILURE = 2


def _parser():
    p = argparse.ArgumentParser(prog="satinfra", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in (*pipeline.STAGES, "run"):
        s = sub.add_parser(name, help="run every stage in order" if name == "run" else f"run the {name} stage")
        s.add_argument("--config", required=True, help="YAML pipeline config")
        s.add_argument("--seed", type=int, default=None, help="override the config's global seed")
        s.add_argument("--jobs", type=int, default=None, help="tile-level worker processes")
    fx = sub.add_parser("make-fixture", help="write the synthetic fixture into a directory")
    fx.add_argument("directory")
    fx.add_argument("--seed", type=int, default=0)
    fx.add_argument("--region-km", type=int, default=4)
    fx.add_argument("--epochs", type=int, default=6)
    fx.add_argument("--ensemble-size", type=int, default=3)
    return p


def _report(command, exc):
    if isinstance(exc, pipeline.StageError):
        rep = exc.report()
    else:
        rep = {"stage": command, "error": type(exc).__name__, "message": str(exc), "path": None}
    print(json.dumps(rep, sort_keys=True), file=sys.stderr)


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "make-fixture":
            from .fixture import write_fixture

            path = write_fixture(args.directory, seed=args.seed, region_km=args.region_km, epochs=args.epochs,
                                 ensemble_size=args.ensemble_size)
            print(path)
            return 0
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        if args.jobs is not None:
            if args.jobs < 1:
                raise ValueError("--jobs must be >= 1")
            cfg = replace(cfg, jobs=args.jobs)
        if args.command == "run":
            result = pipeline.run_all(cfg)
        else:
            result = pipeline.RUNNERS[args.command](cfg)
        if args.command in ("benchmark", "run"):
            for label, table in result.items():
                print(f"[{label}]\n{table}")
        return 0
    except (pipeline.StageError, ValueError, OSError, RuntimeError) as exc:
        _report(args.command, exc)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
