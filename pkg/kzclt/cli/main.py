#!/usr/bin/env python3
"""
Desk-scale checks of the central limit theorems for the Kontsevich-Zorich cocycle.

Usage:

    kzclt estimate --config configs/tautological-brownian.json --out ./artifacts/brownian
    kzclt estimate --config configs/tautological-geodesic.json --out ./artifacts/geodesic
    kzclt report --config configs/report.json --out ./artifacts/report
    kzclt poisson --config configs/poisson-grid.json --out ./artifacts/poisson --threads 4
    kzclt origami --config configs/origami-ew.json --out ./artifacts/origami

Every artifact is a function of the config and the seed: reruns are byte-identical whatever
--threads is. A failed run exits with status 2 for config errors and 1 otherwise, and writes
error.json to the output directory.
"""

import argparse
import sys
from pathlib import Path
from typing import Optional

from kzclt.cli.config import SUBCOMMANDS, parse_config
from kzclt.cli.run import RUNNERS, write_manifest
from kzclt.clt.publishers import write_json
from kzclt.common.errors import KzcltError, ParseError, RangeError, UnknownKey
from kzclt.common.logging import get_logger, set_verbose

logger = get_logger(__file__)

CONFIG_ERRORS = (ParseError, UnknownKey, RangeError)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description=__doc__,
        formatter_class=argparse.RawTextHelpFormatter,  # Preserves whitespace in the help text.
    )
    parser.add_argument("subcommand", choices=SUBCOMMANDS, help="What to run.")
    parser.add_argument(
        "--config", type=Path, default=None, help="A JSON run config. Defaults apply without one."
    )
    parser.add_argument("--out", type=Path, required=True, help="The directory for the artifacts.")
    parser.add_argument("--seed", type=int, default=None, help="Overrides the config seed.")
    parser.add_argument(
        "--threads",
        type=int,
        default=1,
        help="Worker threads. The artifacts do not depend on this.",
    )
    parser.add_argument("--verbose", action="store_true", help="Log at the debug level.")
    return parser


def _fail(out_dir: Path, error: KzcltError, status: int) -> int:
    logger.error(f"{error.code}: {error.message}")
    write_json(out_dir / "error.json", error.to_dict())
    return status


def main(args: Optional[list[str]] = None) -> int:
    parsed_args = build_parser().parse_args(args)
    set_verbose(parsed_args.verbose)

    out_dir: Path = parsed_args.out
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "error.json").unlink(missing_ok=True)

    try:
        try:
            text = parsed_args.config.read_text(encoding="utf-8") if parsed_args.config else ""
        except (OSError, UnicodeDecodeError) as error:
            raise ParseError(f"Could not read {parsed_args.config}: {error}", field="config")
        config = parse_config(text, check=False).with_overrides(
            parsed_args.subcommand, parsed_args.seed
        )
        logger.info(f"Running {config.subcommand} with seed {config.seed}")
        artifacts = RUNNERS[config.subcommand](config, out_dir, max(parsed_args.threads, 1))
        manifest = write_manifest(out_dir, config, artifacts)
    except CONFIG_ERRORS as error:
        return _fail(out_dir, error, 2)
    except KzcltError as error:
        return _fail(out_dir, error, 1)
    except (ValueError, OSError, KeyError, TypeError) as error:
        return _fail(out_dir, KzcltError(f"{type(error).__name__}: {error}"), 1)

    for path in [*artifacts, manifest]:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
