#!/usr/bin/env python3
"""Run grand-canonical chains for one run config and write the results.

This is a small "action" script intended to be:
- runnable as a standalone CLI (`python -m actions.simulate --config run.json`)
- importable (run_experiment) by the dispatcher and the tests

Outputs in the run directory:
- manifest.json                 resolved config, seeds, code version, timings
- measurements_chain{i}.csv     one row per measured frame; the columns are sweep,
                                N, rho, M, event_indicator[_i], corr_dx_dy...,
                                rho_bulk, N_H, N_V, empty_tile_fraction,
                                spin_mean, tile_corr_d... (event_indicator is
                                an empty column when the config has no windows,
                                rho_bulk when the box has no bulk)
- contour_hist_chain{i}.json    contour-size counts over the chain's frames
- trace_chain{i}.jsonl.gz       sorted rod lists per frame (with --trace)
- summary.json                  merged estimates with error bars
- RUN_INCOMPLETE                present only while running or after a failure

Env vars (loaded from `.env` if present):
- KMER_OUTPUT_DIR (optional, default: runs)
- KMER_WORKERS (optional, default: 1)
"""

from __future__ import annotations

import json
import logging
import math
import os
import sys
from dataclasses import dataclass
from functools import partial
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import pandas as pd
from dotenv import load_dotenv

from core.coarsegrain import ContourHistogram, empty_tile_fraction, tile_spins
from core.errors import ConfigError
from core.kmer_cli import ArgumentParser, run_guarded, setup_logging
from core.lattice import BoxSpec, RodConfig
from core.observables import (
    EventSpec,
    bulk_density,
    bulk_tile_bounds,
    event_indicator,
    order_parameter,
    pair_product_average,
    tile_pair_product,
)
from core.run_config import RunConfig, RunManifest, parse_config
from core.sampler import map_chains, run_chain
from core.trace_io import TraceWriter


logger = logging.getLogger("kmer-nematic")

INCOMPLETE_MARKER = "RUN_INCOMPLETE"


def measurements_name(chain: int) -> str:
    return f"measurements_chain{chain}.csv"


def contour_name(chain: int) -> str:
    return f"contour_hist_chain{chain}.json"


def trace_name(chain: int) -> str:
    return f"trace_chain{chain}.jsonl.gz"


def separation_column(dx: int, dy: int) -> str:
    return f"corr_{dx}_{dy}"


def event_column(index: int) -> str:
    return "event_indicator" if index == 0 else f"event_indicator_{index}"


@dataclass(frozen=True)
class FrameMeasurer:
    """Every per-frame column of measurements.csv except `sweep`, in order."""

    box: BoxSpec
    events: Tuple[EventSpec, ...]
    separations: Tuple[Tuple[int, int], ...]
    tile_distances: Tuple[int, ...]

    @classmethod
    def for_config(cls, config: RunConfig) -> "FrameMeasurer":
        return cls(
            box=config.box,
            events=tuple(config.events()),
            separations=tuple(config.separations),
            tile_distances=tuple(config.tile_correlations),
        )

    def __call__(self, config: RodConfig) -> Dict[str, float]:
        box = self.box
        region = box.bulk_bounds()
        n = len(config)
        row: Dict[str, float] = {
            "N": n,
            "rho": n / box.area,
            "M": order_parameter(config),
        }
        for i, event in enumerate(self.events):
            row[event_column(i)] = event_indicator(config, event)
        if not self.events:
            row[event_column(0)] = math.nan
        occupied = config.centers != 0
        for dx, dy in self.separations:
            row[separation_column(dx, dy)] = pair_product_average(occupied, region, (dx, dy))
        row["rho_bulk"] = bulk_density(config, region)
        row["N_H"] = config.n_horizontal
        row["N_V"] = config.n_vertical

        spins = tile_spins(config)
        row["empty_tile_fraction"] = empty_tile_fraction(spins)
        tx0, tx1, ty0, ty1 = bulk_tile_bounds(box)
        bulk = spins.spins[ty0:ty1, tx0:tx1].astype(float)
        row["spin_mean"] = float(bulk.mean()) if bulk.size else 0.0
        for d in self.tile_distances:
            row[f"tile_corr_{d}"] = tile_pair_product(bulk, d)
        return row


@dataclass
class ContourRecorder:
    """Frame hook: contour histogram plus an optional trace writer."""

    histogram: ContourHistogram
    trace: Optional[TraceWriter] = None

    def __call__(self, sweep: int, config: RodConfig) -> None:
        self.histogram.add(tile_spins(config))
        if self.trace is not None:
            self.trace.write_frame(sweep, config)


def simulate_chain(config: RunConfig, out_dir: str, chain: int) -> Dict[str, Any]:
    """Run one chain and write its files; returns what the manifest records.

    Module-level so a process pool can pickle it.
    """
    out = Path(out_dir)
    params = config.sampler.with_chain(chain)
    trace = (
        TraceWriter(out / trace_name(chain), config.box, chain=chain, seed=params.seed)
        if config.trace
        else None
    )
    recorder = ContourRecorder(ContourHistogram(), trace)
    try:
        result = run_chain(config.box, params, [FrameMeasurer.for_config(config)], on_frame=recorder)
    finally:
        if trace is not None:
            trace.close()

    columns = list(result.series)
    sweeps = result.series[columns[0]].sweeps if columns else []
    frame = pd.DataFrame({"sweep": sweeps, **{c: result.series[c].values for c in columns}})
    for c in ("N", "N_H", "N_V", "event_indicator") + tuple(
        event_column(i) for i in range(1, len(config.windows))
    ):
        if c in frame and frame[c].notna().all():
            frame[c] = frame[c].astype(int)
    frame.to_csv(out / measurements_name(chain), index=False, lineterminator="\n")

    hist = recorder.histogram
    (out / contour_name(chain)).write_text(
        json.dumps(
            {
                "counts": {str(s): c for s, c in sorted(hist.counts.items())},
                "n_frames": hist.n_frames,
                "n_tile_frames": hist.n_tile_frames,
                "n_clean_frames": hist.n_clean_frames,
            },
            indent=2,
            sort_keys=True,
        ),
        encoding="utf-8",
    )
    files = [measurements_name(chain), contour_name(chain)]
    if trace is not None:
        files.append(trace_name(chain))
    return {
        "chain": chain,
        "acceptance_rates": result.acceptance_rates(),
        "final_rods": len(result.config),
        "elapsed_s": round(result.elapsed_s, 3),
        "files": files,
    }


def ensure_writable(out_dir: Path) -> None:
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write_probe"
        probe.write_text("", encoding="utf-8")
        probe.unlink()
    except OSError as e:
        raise ConfigError("output_dir", f"{out_dir} is not writable: {e}") from None


@dataclass
class ExperimentResult:
    out_dir: Path
    manifest: RunManifest
    summary: Dict[str, Any]


def run_experiment(config: RunConfig, *, workers: int = 1) -> ExperimentResult:
    """Validate, run every chain, merge, write manifest and summary."""
    from actions.analyze_runs import write_summary

    config.validate()
    out = Path(config.output_dir)
    ensure_writable(out)

    manifest = RunManifest.for_config(config)
    marker = out / INCOMPLETE_MARKER
    marker.write_text(json.dumps({"started_at": manifest.started_at}, indent=2), encoding="utf-8")
    manifest.write(out / "manifest.json")
    logger.info(f"Run {out}: {config.chains} chain(s), regime {manifest.regime}")

    try:
        outcomes: List[Dict[str, Any]] = map_chains(
            partial(simulate_chain, config, str(out)), range(config.chains), workers
        )  # type: ignore[assignment]
        for o in outcomes:
            manifest.acceptance_rates[str(o["chain"])] = o["acceptance_rates"]
            manifest.files.extend(o["files"])
        manifest.write(out / "manifest.json")
        summary = write_summary(out)
        manifest.files.append("summary.json")
    except BaseException:
        manifest.finish("failed")
        manifest.write(out / "manifest.json")
        logger.error(f"Run {out} did not complete; {INCOMPLETE_MARKER} left in place")
        raise

    manifest.finish("complete")
    manifest.write(out / "manifest.json")
    marker.unlink()
    logger.info(f"Run {out} complete")
    return ExperimentResult(out_dir=out, manifest=manifest, summary=summary)


def _parse_args(argv: List[str]):
    p = ArgumentParser(description="Run grand-canonical k-mer chains")
    p.add_argument("--config", required=True, help="Run config JSON (or a manifest.json)")
    p.add_argument("--seed", type=int, default=None, help="Override the config seed")
    p.add_argument("--chains", type=int, default=None, help="Override the number of chains")
    p.add_argument("--out", default=None, help="Output directory (default: config, then KMER_OUTPUT_DIR)")
    p.add_argument("--trace", action="store_true", help="Write configuration traces")
    p.add_argument(
        "--workers",
        type=int,
        default=None,
        help="Process pool size for chains (default: env KMER_WORKERS or 1)",
    )
    return p.parse_args(argv)


def main(argv: List[str]) -> int:
    load_dotenv()
    setup_logging()

    def body() -> int:
        args = _parse_args(argv)
        workers = args.workers if args.workers is not None else int(os.getenv("KMER_WORKERS", "1"))
        overrides = {"seed": args.seed, "chains": args.chains, "output_dir": args.out}
        if args.trace:
            overrides["trace"] = True
        config = parse_config(args.config, overrides=overrides)
        result = run_experiment(config, workers=workers)
        print(f"Run written to {result.out_dir}")
        print(json.dumps(result.summary.get("headline", {}), indent=2, sort_keys=True))
        return 0

    return run_guarded(body)


if __name__ == "__main__":
    raise SystemExit(main(sys.argv[1:]))
