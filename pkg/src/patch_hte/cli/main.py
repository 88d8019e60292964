"""
Command-line entry point: ``patch-hte <command> [options]``.

Exit codes: 0 success, 2 usage or schema error, 3 data-quality breach,
4 internal invariant violation. A manifest is written for every run.
"""

from __future__ import annotations

import argparse
import contextlib
import io
import logging
import sys
from pathlib import Path

from patch_hte import __version__
from patch_hte.cli.commands import COMMANDS
from patch_hte.cli.manifest import RunRecorder
from patch_hte.config.settings import CACHE_DIR, get_settings
from patch_hte.errors import PatchHteError

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)-7s %(name)s: %(message)s"


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="JSON or YAML run config (default: bundled defaults)")
    common.add_argument("--seed", type=int, default=None, help="global seed, overrides the config")
    common.add_argument("--threads", type=int, default=None, help="worker processes for batch fits")
    common.add_argument("--out", type=Path, default=None, help="output directory, overrides the config")
    common.add_argument("--matches", type=Path, default=None, help="matches.csv, overrides the config")
    common.add_argument("--player-matches", type=Path, default=None, help="player_matches.csv, overrides the config")
    common.add_argument("--champions", type=Path, default=None, help="champions.csv, overrides the config")
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = argparse.ArgumentParser(prog="patch-hte", description="Heterogeneous effects of game patches")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("ingest", parents=[common], help="validate telemetry and write the rejects report")
    sub.add_parser("features", parents=[common], help="derive per-(user, match) history features")
    fit = sub.add_parser("fit", parents=[common], help="fit causal trees")
    fit.add_argument(
        "scope",
        help="team:<X.Y>-<X.Y> | player:<champion>:<X.Y>-<X.Y> | batch | frame:<frame csv>",
    )
    sub.add_parser("analyze", parents=[common], help="write ATE, win-rate, heatmap and tree reports")
    synth = sub.add_parser("synth", parents=[common], help="generate a synthetic frame from a JSON spec")
    synth.add_argument("spec", type=Path, help="synthetic spec (JSON)")
    sub.add_parser("report", parents=[common], help="trim fitted trees and summarize them")
    return parser


def _overrides(args: argparse.Namespace, config) -> dict:
    inputs = {
        name: getattr(args, name)
        for name in ("matches", "player_matches", "champions")
        if getattr(args, name) is not None
    }
    return dict(
        seed=args.seed,
        threads=args.threads,
        output_dir=args.out,
        inputs=config.inputs.model_copy(update=inputs) if inputs else None,
    )


def _usage_failure(argv: list[str], code: int, message: str) -> None:
    """Record a manifest for a command line argparse refused."""
    lenient = argparse.ArgumentParser(add_help=False, exit_on_error=False)
    lenient.add_argument("--out", type=Path, default=None)
    try:
        known, rest = lenient.parse_known_args(argv)
        out_dir = known.out
    except (argparse.ArgumentError, SystemExit):
        out_dir, rest = None, argv
    command = next((a for a in rest if a in COMMANDS), "usage")
    try:
        path = RunRecorder(command).write(out_dir or CACHE_DIR / "default", code, message or "usage error")
    except OSError as e:
        logger.warning(f"[cli] Could not write the manifest: {e}")
        return
    logger.info(f"[cli] Manifest written to {path} (exit {code})")


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    captured = io.StringIO()
    try:
        with contextlib.redirect_stderr(captured):
            args = parser.parse_args(argv)
    except SystemExit as e:
        sys.stderr.write(captured.getvalue())
        code = int(e.code or 0)
        if code:
            lines = captured.getvalue().strip().splitlines()
            _usage_failure(argv, code, lines[-1] if lines else "")
        return code

    logging.basicConfig(level=args.log_level, format=LOG_FORMAT)
    rec = RunRecorder(args.command)
    out_dir = args.out or CACHE_DIR / "default"
    exit_code, error = 0, None
    try:
        config = get_settings(args.config)
        config = config.with_overrides(**_overrides(args, config))
        out_dir = config.output_path()
        rec.use_config(config)
        logger.info(f"[cli] {args.command}: output in {out_dir}, seed {config.seed}, {config.threads} thread(s)")
        exit_code = COMMANDS[args.command](config, rec, args)
    except PatchHteError as e:
        exit_code, error = e.exit_code, str(e)
        logger.error(f"[cli] {args.command} failed: {e}")
    except Exception as e:  # anything unexpected is a bug
        exit_code, error = 4, f"{type(e).__name__}: {e}"
        logger.exception(f"[cli] {args.command} crashed")
    finally:
        path = rec.write(out_dir, exit_code, error)
        logger.info(f"[cli] Manifest written to {path} (exit {exit_code})")
    return exit_code


if __name__ == "__main__":
    sys.exit(main())
