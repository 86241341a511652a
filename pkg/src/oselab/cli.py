"""Command line entry point: ``oselab <subcommand> --scenario ...``."""

from __future__ import annotations

import argparse
import json
import os
import sys
import traceback
from pathlib import Path

import numpy as np

from ._version import __version__
from .drivers import DRIVERS, RunContext
from .errors import ConfigError, OselabError
from .scenario import builtin_names, load_scenario

OUTPUT_ROOT_ENV = "OSELAB_OUTPUT_ROOT"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oselab", description="Oseledets splitting experiments.")
    parser.add_argument("--version", action="version", version=f"oselab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", required=True,
                        help=f"scenario file or built-in name ({', '.join(builtin_names())})")
    common.add_argument("--out", help=f"output directory (default: ${OUTPUT_ROOT_ENV}/<scenario>/<command>)")
    common.add_argument("--seed", type=int, help="override [scenario] seed")
    common.add_argument("--threads", type=int, default=1, help="worker processes")
    common.add_argument("--single-thread", action="store_true", help="run everything inline")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one scenario value (repeatable)")
    for name in DRIVERS:
        sub.add_parser(name, parents=[common])
    return parser


def output_dir(args, scenario_name: str) -> Path:
    if args.out:
        return Path(args.out)
    root = Path(os.environ.get(OUTPUT_ROOT_ENV, "oselab_runs"))
    return root / scenario_name / args.command


def _write_error(out: Path | None, exc: BaseException, code: int):
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / "error.json").write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
        except OSError:
            pass
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    workers = 1 if args.single_thread else max(1, args.threads)
    out = Path(args.out) if args.out else None
    try:
        scen = load_scenario(args.scenario, args.overrides, args.seed)
        out = output_dir(args, scen.name)
        rc = RunContext(scen, out, args.command, workers)
        status = DRIVERS[args.command](scen, rc)
        manifest = rc.finish(status)
        print(json.dumps({"command": args.command, "out": str(out), "status": status,
                          "files": sorted(manifest["files"])}, sort_keys=True))
        return status
    except OselabError as exc:
        _write_error(out, exc, exc.exit_code)
        return exc.exit_code
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        traceback.print_exc()
        _write_error(out, exc, 4)
        return 4
    except (ValueError, KeyError) as exc:
        # malformed values that slipped past validation are configuration problems
        _write_error(out, exc, ConfigError.exit_code)
        return ConfigError.exit_code


if __name__ == "__main__":
    sys.exit(main())
