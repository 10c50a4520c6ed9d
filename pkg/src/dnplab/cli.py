"""Command line entry point: ``dnplab run|validate <config.json>``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .experiments import EXIT_CONFIG, EXIT_OK, ConfigError, load_config, run, validate


def _parser():
    ap = argparse.ArgumentParser(prog="dnplab", description="Doubly nonlinear p-Laplace experiment runner")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("--out", default=None, help="output directory (default: config 'output' or ./out/<kind>)")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--sanity-p2", action="store_true", help="allow p = 2 sanity runs")
    v = sub.add_parser("validate", help="check a config without running it")
    v.add_argument("config")
    v.add_argument("--sanity-p2", action="store_true")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "validate":
        errors = validate(cfg, sanity_p2=args.sanity_p2)
        print(json.dumps({"config": args.config, "errors": errors}, indent=2, ensure_ascii=False))
        return EXIT_OK if not errors else EXIT_CONFIG

    out = args.out or (cfg.get("output") if isinstance(cfg, dict) else None)
    if out is None:
        out = Path("out") / str(cfg.get("kind", "experiment") if isinstance(cfg, dict) else "experiment")
    res = run(cfg, out, seed=args.seed, sanity_p2=args.sanity_p2, base_dir=Path(args.config).parent)
    if res.status != EXIT_OK:
        print(res.message, file=sys.stderr)
        return res.status
    print(json.dumps({"status": "ok", "out": str(out), "files": res.files}, indent=2, ensure_ascii=False))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
