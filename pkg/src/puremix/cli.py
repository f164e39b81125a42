"""Command-line entry point.

One subcommand per pipeline stage, all driven by a YAML config file.
Exit codes: 0 success, 1 configuration/input problems, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .aligner import AlignerConfigError, AnnotatorTransportError
from .config import ConfigError, load_config
from .evalkit import DegenerateAgreementError, StatsError
from .mixer import MixerError
from .ontology import OntologyError
from .pipeline import STAGES, PrerequisiteError, ValidationFailure, run_stage

logger = logging.getLogger(__name__)

_INPUT_ERRORS = (
    ConfigError,
    PrerequisiteError,
    ValidationFailure,
    OntologyError,
    AlignerConfigError,
    StatsError,
    DegenerateAgreementError,
    MixerError,
)

_STAGE_HELP = {
    "ontology": "refine the label taxonomy and emit the leaf vocabulary",
    "segment": "slice corpus recordings into windows and drop near-silence",
    "align": "run the annotation cascade to keep single-event segments",
    "standardize": "resample accepted segments to the target rate",
    "mix": "sample recipes and render SNR-controlled mixtures",
    "stats": "summarize label and source-count balance of a manifest",
    "eval": "compute separation metrics and listening-test statistics",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="puremix",
        description="Mine single-event audio segments and synthesize labeled sound mixtures.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    subparsers = parser.add_subparsers(dest="stage", required=True)
    for stage in STAGES:
        sub = subparsers.add_parser(stage, help=_STAGE_HELP[stage])
        sub.add_argument("--config", required=True, help="YAML config file")
        sub.add_argument("--seed", type=int, default=None, help="override the config seed")
        sub.add_argument("--workers", type=int, default=None, help="worker threads")
        sub.add_argument(
            "--resume",
            action="store_true",
            help="reuse completed per-mixture outputs from an interrupted run",
        )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = load_config(args.config)
        if args.seed is not None:
            config.seed = args.seed
        if args.workers is not None:
            config.workers = args.workers
        result = run_stage(args.stage, config, resume=args.resume)
    except _INPUT_ERRORS as exc:
        logger.error("%s", exc)
        return 1
    except AnnotatorTransportError as exc:
        logger.error("annotation service unavailable: %s", exc)
        return 2
    except KeyboardInterrupt:
        logger.error("interrupted")
        return 2
    except Exception as exc:  # noqa: BLE001 - boundary: report, don't crash
        logger.exception("stage %s failed: %s", args.stage, exc)
        return 2
    for path in result.outputs[:4]:
        logger.info("-> %s", path)
    if len(result.outputs) > 4:
        logger.info("-> ... and %d more", len(result.outputs) - 4)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
