"""Command line entry point: ``fracctl run <config>`` and ``fracctl preset ...``."""

from __future__ import annotations

import argparse
import json
import sys

from .config import PRESETS, load_config, load_preset_text
from .errors import FracCtlError


def _parser():
    p = argparse.ArgumentParser(prog="fracctl", description="Fractional stochastic inclusions with impulses.")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the experiment described by a config file")
    run.add_argument("config")
    run.add_argument("--seed", type=int)
    run.add_argument("--samples", type=int)
    run.add_argument("--steps", type=int)
    run.add_argument("--out")
    run.add_argument("--workers", type=int, help="worker threads (default: FRACCTL_WORKERS or CPU count)")
    preset = sub.add_parser("preset", help="list or show built-in scenarios")
    psub = preset.add_subparsers(dest="action", required=True)
    psub.add_parser("list")
    show = psub.add_parser("show")
    show.add_argument("name")
    return p


def _error(exc, code=2):
    obj = {"error": type(exc).__name__, "message": str(exc)}
    for attr in ("key", "lineno"):
        if getattr(exc, attr, None) is not None:
            obj[attr] = getattr(exc, attr)
    print(json.dumps(obj), file=sys.stderr)
    return code


def main(argv=None):
    args = _parser().parse_args(argv)
    if args.command == "preset":
        if args.action == "list":
            print("\n".join(PRESETS))
            return 0
        try:
            sys.stdout.write(load_preset_text(args.name))
        except FracCtlError as e:
            return _error(e)
        return 0

    from .experiments import run_experiment

    try:
        cfg = load_config(args.config)
        overrides = {k: getattr(args, k) for k in ("seed", "samples", "steps", "out") if getattr(args, k) is not None}
        if overrides:
            cfg = cfg.replace(**overrides)
        summary = run_experiment(cfg, workers=args.workers)
    except (FracCtlError, ValueError, OSError) as e:
        return _error(e, 1 if isinstance(e, OSError) else 2)
    print(json.dumps({"status": "ok", "experiment": summary["experiment"], "out": cfg.out or "out"}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
