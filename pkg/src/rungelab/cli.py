"""Command-line entry point: experiment dispatch, cache management, reports.

Exit status contract: 0 on pass, 2 when an experiment runs but a declared
tolerance fails, 1 on configuration or runtime errors.
"""

from __future__ import annotations

import argparse
import json
import os
import struct
import sys

from .errors import RungelabError, ConfigurationError
from .experiments import ExperimentConfig, run_experiment
from . import store


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a JSON experiment config."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(
            f"malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return ExperimentConfig.from_dict(raw)


def _load_config(path, args) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        cfg = parse_config(fh.read())
    if args.out:
        cfg.data["output"]["dir"] = args.out
    if args.cache:
        cfg.data["cache"]["dir"] = args.cache
    if args.jobs:
        cfg.data["jobs"] = int(args.jobs)
    if args.seed is not None:
        cfg.data["seed"] = int(args.seed)
    return cfg


def _cmd_run(args):
    cfg = _load_config(args.config, args)
    report = run_experiment(cfg)
    csv_path, side_path = report.write(cfg["output"]["dir"])
    for name, ok in sorted(report.flags.items()):
        print(f"{'PASS' if ok else 'FAIL'} {cfg.tag}.{name}")
    print(f"report: {csv_path}")
    print(f"sidecar: {side_path}")
    return 0 if report.passed else 2


def _cmd_verify(args):
    cfg = _load_config(args.config, args)
    cfg.data["tag"] = "verify_solver"
    report = run_experiment(cfg)
    csv_path, _ = report.write(cfg["output"]["dir"])
    for name, ok in sorted(report.flags.items()):
        print(f"{'PASS' if ok else 'FAIL'} verify_solver.{name}")
    print(f"report: {csv_path}")
    return 0 if report.passed else 2


def _cmd_cache(args):
    cache_dir = args.cache or "cache"
    if args.action == "ls":
        if not os.path.isdir(cache_dir):
            print(f"(no cache directory {cache_dir})")
            return 0
        names = sorted(os.listdir(cache_dir))
        for name in names:
            path = os.path.join(cache_dir, name)
            try:
                with open(path, "rb") as fh:
                    head = fh.read(store._HEADER.size)
                magic, version, kind, prov, length = store._HEADER.unpack(head)
                kind_name = {v: k for k, v in store.KINDS.items()}.get(kind, "?")
                print(f"{name}  kind={kind_name} version={version} "
                      f"provenance={prov:#018x} payload={length}B")
            except (OSError, struct.error):
                print(f"{name}  (unreadable)")
        if not names:
            print("(cache empty)")
        return 0
    if args.action == "rm":
        if os.path.isdir(cache_dir):
            for name in os.listdir(cache_dir):
                if name.endswith(".rgfo"):
                    os.unlink(os.path.join(cache_dir, name))
        print(f"cleared {cache_dir}")
        return 0
    raise ConfigurationError(f"unknown cache action {args.action!r}")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="rungelab",
        description="Staggered-grid Maxwell laboratory: approximation and stability experiments")
    parser.add_argument("--out", help="report output directory")
    parser.add_argument("--cache", help="operator cache directory")
    parser.add_argument("--jobs", type=int, help="parallel map width")
    parser.add_argument("--seed", type=int, help="base seed override")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the experiment configured in a JSON file")
    p_run.add_argument("config")
    p_run.set_defaults(func=_cmd_run)

    p_verify = sub.add_parser("verify", help="run the solver verification study")
    p_verify.add_argument("config")
    p_verify.set_defaults(func=_cmd_verify)

    p_cache = sub.add_parser("cache", help="inspect or clear the operator cache")
    p_cache.add_argument("action", choices=["ls", "rm"])
    p_cache.set_defaults(func=_cmd_cache)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except RungelabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
