#!/usr/bin/env python3
"""kmer-nematic command line: simulate | enumerate | coarsegrain | analyze | plot.

Each subcommand is an action module under `actions/` with its own
`main(argv)`; this dispatcher only routes to it. Exit codes are shared by all
of them: 0 success, 1 invalid request, 2 runtime failure.

Env vars (loaded from `.env` if present):
- KMER_LOG_FILE (optional, default: kmer_nematic.log; empty disables the file)
- KMER_LOG_LEVEL (optional, default: INFO)
"""

from __future__ import annotations

import argparse
import importlib
import logging
import os
import sys
from typing import Callable, Dict, List, Optional

from dotenv import load_dotenv

from core.errors import ConfigError, KmerError


logger = logging.getLogger("kmer-nematic")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2

COMMANDS: Dict[str, str] = {
    "simulate": "actions.simulate",
    "enumerate": "actions.enumerate_states",
    "coarsegrain": "actions.coarsegrain_trace",
    "analyze": "actions.analyze_runs",
    "plot": "actions.plot_results",
}


class ArgumentParser(argparse.ArgumentParser):
    """argparse with usage errors raised as ConfigError (exit code 1)."""

    def error(self, message: str):  # type: ignore[override]
        raise ConfigError("arguments", message)


def setup_logging(log_file: Optional[str] = None, level: Optional[str] = None) -> None:
    """Configure the root handlers once per process."""
    path = log_file if log_file is not None else os.getenv("KMER_LOG_FILE", "kmer_nematic.log")
    lvl = (level or os.getenv("KMER_LOG_LEVEL", "INFO")).upper()
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if path:
        handlers.insert(0, logging.FileHandler(path, encoding="utf-8"))
    logging.basicConfig(
        level=getattr(logging, lvl, logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=handlers,
    )


def run_guarded(body: Callable[[], int]) -> int:
    """Run an action body and map failures to exit codes."""
    try:
        return body()
    except ConfigError as e:
        logger.error(f"Invalid request: {e}")
        print(f"ERROR: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (KmerError, OSError, ValueError) as e:
        logger.error(f"Failed: {e}")
        print(f"ERROR: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        logger.error("Interrupted")
        print("ERROR: interrupted", file=sys.stderr)
        return EXIT_RUNTIME


def _usage() -> str:
    return "usage: python -m core.kmer_cli {" + ",".join(COMMANDS) + "} [options]"


def main(argv: List[str]) -> int:
    load_dotenv()
    if not argv or argv[0] in {"-h", "--help"}:
        print(_usage())
        print("Run a subcommand with --help for its options.")
        return EXIT_OK if argv else EXIT_CONFIG

    command, rest = argv[0], argv[1:]
    module_name = COMMANDS.get(command)
    if module_name is None:
        print(f"ERROR: unknown command {command!r}", file=sys.stderr)
        print(_usage(), file=sys.stderr)
        return EXIT_CONFIG

    module = importlib.import_module(module_name)
    return int(module.main(rest))


if __name__ == "__main__":
    raise SystemExit(main(sys.argv[1:]))
