"""
Tensorformer command line
Verbs: train, reconstruct, eval, gradcheck, bench, ablate

    python -m cli train --config runs.ini --seed 7
    python -m cli gradcheck --scope full

Exit codes: 0 success, 1 unexpected failure, 2 config error, 3 I/O error,
4 empty result, 5 check failure
"""

import argparse
import os
import sys
import traceback
from typing import List, Optional

# Add parent directory to path for imports (must be before other imports)
parent_dir = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if parent_dir not in sys.path:
    sys.path.insert(0, parent_dir)

from dotenv import load_dotenv

from cli.config import COMMANDS, load_run_config, parse_assignments
from cli.errors import EXIT_UNEXPECTED, CommandError

# BLAS/OpenMP pools are sized when numpy is first imported
THREAD_VARIABLES = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")

HELP = {
    "train": "train a network on analytic shapes",
    "reconstruct": "point cloud + checkpoint -> OBJ mesh",
    "eval": "Chamfer-L1, normal consistency and IoU of a mesh",
    "gradcheck": "finite-difference gradient check and gradient-spread study",
    "bench": "time and memory of the attention kernels",
    "ablate": "train every attention kind on one shape and compare IoU",
}


def pin_threads() -> None:
    """Single-threaded numerics for bit-reproducible runs"""
    for name in THREAD_VARIABLES:
        os.environ[name] = "1"
    os.environ["TENSORFORMER_DETERMINISTIC"] = "1"


def _env_flag(name: str) -> bool:
    return os.getenv(name, "0").lower() in ("1", "true", "yes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tensorformer", description="Matrix-attention surface reconstruction")
    verbs = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        verb = verbs.add_parser(command, help=HELP[command])
        verb.add_argument("--config", help="INI file with a [%s] section" % command)
        verb.add_argument("--seed", type=int, help="overrides the seed key")
        verb.add_argument("--deterministic", action="store_true", help="pin numeric libraries to one thread")
        verb.add_argument("--out", help="output directory")
        verb.add_argument("--set", dest="assignments", action="append", default=[], metavar="KEY=VALUE",
                          help="override one config key (repeatable)")
        if command == "gradcheck":
            verb.add_argument("--scope", choices=["ops", "attention", "block", "full"])
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)

    if args.deterministic or args.command == "gradcheck" or _env_flag("TENSORFORMER_DETERMINISTIC"):
        pin_threads()

    try:
        overrides = parse_assignments(args.assignments)
        if args.seed is not None:
            overrides["seeds" if args.command == "ablate" else "seed"] = str(args.seed)
        if args.out:
            overrides["out"] = args.out
        if getattr(args, "scope", None):
            overrides["scope"] = args.scope
        resolved = load_run_config(args.command, args.config, overrides)

        from cli import commands

        return commands.run(args.command, resolved)

    except CommandError as error:
        print(f"\n✗ {error.detail}", file=sys.stderr)
        return error.exit_code
    except Exception as error:
        print(f"\n✗ Unexpected error: {error}", file=sys.stderr)
        traceback.print_exc()
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
