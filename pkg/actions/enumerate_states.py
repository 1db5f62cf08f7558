#!/usr/bin/env python3
"""Print the exact partition polynomial of a small box as JSON.

Examples:
  python -m actions.enumerate_states --L 2 --k 2 --containment fully_contained
  python -m actions.enumerate_states --L 4 --height 1 --k 2 --z 0.25 --z 1
  python -m actions.enumerate_states --config run.json --cross-check

Env vars (loaded from `.env` if present):
- KMER_ENUM_LIMIT (optional, default: 32): refuse boxes with more candidate
  rod positions than this unless --allow-large is given
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List

from dotenv import load_dotenv

from core.errors import ConfigError, InvariantViolation, LatticeError
from core.kmer_cli import ArgumentParser, run_guarded, setup_logging
from core.lattice import BoundaryCondition, BoxSpec, Containment
from core.oracle import independent_set_counts, partition_polynomial
from core.run_config import parse_config


logger = logging.getLogger("kmer-nematic")


def _box_from_args(args) -> BoxSpec:
    if args.config:
        if args.L is not None or args.height is not None or args.k is not None:
            raise ConfigError("arguments", "--config cannot be combined with --L/--height/--k")
        return parse_config(args.config).box
    if args.L is None or args.k is None:
        raise ConfigError("arguments", "either --config or both --L and --k are required")
    try:
        return BoxSpec(
            L=args.L,
            k=args.k,
            containment=Containment(args.containment),
            bc=BoundaryCondition(args.bc),
            height=args.height,
        )
    except LatticeError as e:
        raise ConfigError("box", str(e)) from None


def enumerate_box(
    box: BoxSpec,
    *,
    activities: List[float],
    limit=None,
    allow_large: bool = False,
    cross_check: bool = False,
) -> Dict[str, Any]:
    poly = partition_polynomial(box, limit=limit, allow_large=allow_large)
    out: Dict[str, Any] = poly.to_dict()
    out["n_configs"] = poly.n_configs
    if activities:
        out["evaluations"] = [
            {"z": z, "Z": poly.evaluate(z), "mean_rods": poly.mean_rods(z)} for z in activities
        ]
    if cross_check:
        counts = independent_set_counts(box, limit=limit, allow_large=allow_large)
        if tuple(counts) != poly.coefficients:
            raise InvariantViolation(
                f"enumerators disagree: {list(poly.coefficients)} vs {counts}"
            )
        out["cross_checked"] = True
    logger.info(f"Enumerated {poly.n_configs} configurations on {box.L}x{box.Ly} k={box.k}")
    return out


def _parse_args(argv: List[str]):
    p = ArgumentParser(description="Exact partition polynomial of a small box")
    p.add_argument("--config", default=None, help="Take the box from a run config (or manifest)")
    p.add_argument("--L", type=int, default=None, help="Box width (columns)")
    p.add_argument("--height", type=int, default=None, help="Box height (default: L)")
    p.add_argument("--k", type=int, default=None, help="Rod length")
    p.add_argument("--bc", default="open", choices=[b.value for b in BoundaryCondition])
    p.add_argument(
        "--containment",
        default=Containment.CENTER_IN_BOX.value,
        choices=[c.value for c in Containment],
    )
    p.add_argument("--limit", type=int, default=None, help="Candidate-position guard (default: env KMER_ENUM_LIMIT or 32)")
    p.add_argument("--allow-large", action="store_true", help="Enumerate past the guard (warns)")
    p.add_argument("--z", type=float, action="append", default=[], help="Evaluate Z and <|R|> at this activity (repeatable)")
    p.add_argument("--cross-check", action="store_true", help="Compare against the bitmask independent-set count")
    p.add_argument("--out", default=None, help="Also write the JSON to this file")
    return p.parse_args(argv)


def main(argv: List[str]) -> int:
    load_dotenv()
    setup_logging()

    def body() -> int:
        args = _parse_args(argv)
        for z in args.z:
            if z < 0:
                raise ConfigError("z", f"activity must be >= 0, got {z}")
        result = enumerate_box(
            _box_from_args(args),
            activities=args.z,
            limit=args.limit,
            allow_large=args.allow_large,
            cross_check=args.cross_check,
        )
        text = json.dumps(result, indent=2, sort_keys=True)
        if args.out:
            Path(args.out).write_text(text + "\n", encoding="utf-8")
        print(text)
        return 0

    return run_guarded(body)


if __name__ == "__main__":
    raise SystemExit(main(sys.argv[1:]))
