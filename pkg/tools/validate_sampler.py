#!/usr/bin/env python3
"""Check the sampler against exact enumeration on tiny boxes.

Two checks per (box, z):
- stationarity: ||pi P - pi||_1 of the exact one-move kernel, must be <= 1e-12
- equivalence:  total-variation distance between the chain's visit counts
                over --moves moves and the exact Gibbs measure, must be <= --tv

Boxes: 2x2 and 1x4 (one row, four columns), k=2, fully contained, open.
A run of 10^6 moves per (box, z) takes a few seconds each.

Usage:
  python -m tools.validate_sampler
  python -m tools.validate_sampler --moves 200000 --z 0.5 --seed 7

Exit code 0 when every check passes, 1 otherwise.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Any, Dict, List

from dotenv import load_dotenv

from core.kmer_cli import setup_logging
from core.lattice import BoxSpec, Containment, RodConfig
from core.oracle import exact_measure, exact_transition_check
from core.sampler import ChainState, GrandCanonicalKernel, make_rng, state_histogram


BOXES = {
    "2x2": BoxSpec(L=2, k=2, containment=Containment.FULLY_CONTAINED),
    "1x4": BoxSpec(L=4, k=2, containment=Containment.FULLY_CONTAINED, height=1),
}
RESIDUAL_TOL = 1e-12


def _parse_args(argv: List[str]) -> argparse.Namespace:
    p = argparse.ArgumentParser(description="Validate the sampler against the exact oracle")
    p.add_argument("--moves", type=int, default=1_000_000, help="Moves per (box, z) (default: 10^6)")
    p.add_argument("--z", type=float, action="append", default=None, help="Activity (repeatable; default 0.25, 0.5, 1)")
    p.add_argument("--seed", type=int, default=2024, help="Base seed")
    p.add_argument("--tv", type=float, default=0.02, help="Total-variation tolerance (default: 0.02)")
    return p.parse_args(argv)


def check(name: str, box: BoxSpec, z: float, moves: int, seed: int, tv_tol: float) -> Dict[str, Any]:
    kernel = GrandCanonicalKernel(box, z)
    residual = exact_transition_check(box, z, kernel)
    state = ChainState(config=RodConfig(box), rng=make_rng(seed))
    counts = state_histogram(kernel, state, moves)
    tv = exact_measure(box, z).total_variation(counts)
    return {
        "box": name,
        "z": z,
        "residual": residual,
        "residual_ok": residual <= RESIDUAL_TOL,
        "tv": tv,
        "tv_ok": tv <= tv_tol,
        "states_visited": len(counts),
        "acceptance_rates": state.acceptance_rates(),
    }


def main(argv: List[str]) -> int:
    load_dotenv()
    setup_logging()
    args = _parse_args(argv)
    activities = args.z or [0.25, 0.5, 1.0]

    ok = True
    for i, (name, box) in enumerate(sorted(BOXES.items())):
        for j, z in enumerate(activities):
            report = check(name, box, z, args.moves, args.seed + 100 * i + j, args.tv)
            ok = ok and report["residual_ok"] and report["tv_ok"]
            print(json.dumps(report, sort_keys=True))

    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


if __name__ == "__main__":
    raise SystemExit(main(sys.argv[1:]))
