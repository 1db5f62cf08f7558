#!/usr/bin/env python3
"""Summaries and cross-run fits for simulate output directories.

For every RUN_DIR this recomputes summary.json and correlations.csv from the
per-chain files. Given several runs it also writes, into --out:
- analysis.csv   one row per run (z, zk^2, bc, M, rho, rho_bulk, P(E),
                 empty-tile fraction, each with its error)
- analysis.json  event-decay and empty-tile fits per (L, k, bc) group, and
                 plus/minus comparisons for runs sharing (L, k, z)

Env vars (loaded from `.env` if present):
- KMER_OUTPUT_DIR (optional, default: runs): default for --out
"""

from __future__ import annotations

import json
import logging
import math
import os
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from dotenv import load_dotenv

from core.coarsegrain import CONTOUR_MIN_FRAMES, ContourHistogram, peierls_fit
from core.errors import ConfigError, InsufficientDataError
from core.kmer_cli import ArgumentParser, run_guarded, setup_logging
from core.observables import (
    Estimate,
    PairCorrelationEstimate,
    RunningStats,
    combine_estimates,
    compare_estimates,
    estimate,
    fit_correlation_decay,
    fit_event_decay,
    jackknife,
)
from core.run_config import RunConfig, load_manifest, parse_config


logger = logging.getLogger("kmer-nematic")

SUMMARY_SCHEMA_VERSION = 1

MEASUREMENT_COLUMNS = (
    "sweep",
    "N",
    "rho",
    "M",
    "event_indicator",
    "rho_bulk",
    "N_H",
    "N_V",
    "empty_tile_fraction",
    "spin_mean",
)


def _finite(value: Optional[float]) -> Optional[float]:
    if value is None:
        return None
    value = float(value)
    return value if math.isfinite(value) else None


def _json_safe(obj: Any) -> Any:
    """Replace NaN and infinities with None, recursively."""
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _finite(obj)
    return obj


def _est_dict(e: Estimate) -> Dict[str, Any]:
    return {"value": _finite(e.value), "error": _finite(e.error), "n": int(e.n)}


def _safe_estimate(values: Sequence[float]) -> Estimate:
    """Blocking estimate, or the bare mean with a NaN error for short series."""
    try:
        return estimate(values)
    except InsufficientDataError:
        arr = np.asarray(values, dtype=float)
        return Estimate(float(arr.mean()) if arr.size else math.nan, math.nan, int(arr.size))


def _safe_jackknife(columns, estimator: Callable[..., float]) -> Estimate:
    try:
        return jackknife(columns, estimator)
    except InsufficientDataError:
        return Estimate(math.nan, math.nan, len(columns[0]))


def _merge(parts: List[Estimate]) -> Estimate:
    parts = [p for p in parts if p.n > 0]
    if not parts:
        return Estimate(math.nan, math.nan, 0)
    return combine_estimates(parts)


def load_chains(run_dir: Path, config: RunConfig) -> List[pd.DataFrame]:
    from actions.simulate import measurements_name

    frames = []
    for i in range(config.chains):
        path = run_dir / measurements_name(i)
        if not path.exists():
            raise ConfigError("run_dir", f"missing {path.name} in {run_dir}")
        df = pd.read_csv(path)
        if df.empty:
            raise InsufficientDataError(f"{path.name} in {run_dir} holds no measured frames")
        missing = sorted(set(MEASUREMENT_COLUMNS) - set(df.columns))
        if missing:
            raise ConfigError("run_dir", f"{path.name} in {run_dir} lacks columns {missing}")
        frames.append(df)
    return frames


def load_contours(run_dir: Path, config: RunConfig) -> ContourHistogram:
    from actions.simulate import contour_name

    merged = ContourHistogram()
    for i in range(config.chains):
        path = run_dir / contour_name(i)
        if not path.exists():
            continue
        data = json.loads(path.read_text(encoding="utf-8"))
        merged = merged.merge(
            ContourHistogram(
                counts={int(s): int(c) for s, c in data["counts"].items()},
                n_frames=int(data["n_frames"]),
                n_tile_frames=int(data["n_tile_frames"]),
                n_clean_frames=int(data["n_clean_frames"]),
            )
        )
    return merged


def summarize_run(run_dir) -> Dict[str, Any]:
    """Merged estimates for one run directory (per-chain accumulators merged)."""
    from actions.simulate import event_column, separation_column

    run = Path(run_dir)
    manifest = load_manifest(run / "manifest.json")
    config = parse_config(manifest)
    chains = load_chains(run, config)
    z = config.sampler.z
    k = config.box.k

    columns: Dict[str, Any] = {}
    for name in chains[0].columns:
        if name == "sweep":
            continue
        if all(df[name].isna().all() for df in chains):
            columns[name] = {"mean": None, "error": None, "count": 0}
            continue
        stats = RunningStats()
        for df in chains:
            stats = stats.merge(_running(df[name]))
        merged = _merge([_safe_estimate(df[name].to_numpy()) for df in chains])
        columns[name] = {
            "mean": _finite(stats.mean),
            "error": _finite(merged.error),
            "count": stats.count,
        }

    order_ratio = _merge(
        [
            _safe_jackknife(
                [df["N_H"].to_numpy(), df["N_V"].to_numpy()],
                lambda h, v: (h - v) / (h + v) if h + v > 0 else 0.0,
            )
            for df in chains
        ]
    )

    correlations: List[PairCorrelationEstimate] = []
    for dx, dy in config.separations:
        col = separation_column(dx, dy)
        pair = _merge([_safe_estimate(df[col].to_numpy()) for df in chains])
        trunc = _merge(
            [
                _safe_jackknife([df[col].to_numpy(), df["rho_bulk"].to_numpy()], lambda p, r: p - r * r)
                for df in chains
            ]
        )
        correlations.append(PairCorrelationEstimate((dx, dy), pair, trunc))

    tile_connected = {}
    for d in config.tile_correlations:
        col = f"tile_corr_{d}"
        tile_connected[str(d)] = _est_dict(
            _merge(
                [
                    _safe_jackknife([df[col].to_numpy(), df["spin_mean"].to_numpy()], lambda p, m: p - m * m)
                    for df in chains
                ]
            )
        )

    events = []
    for i, window in enumerate(config.windows):
        col = event_column(i)
        events.append({"window": window.to_dict(), **_est_dict(_merge([_safe_estimate(df[col].to_numpy()) for df in chains]))})

    regime = config.regime()
    rho_bulk = columns["rho_bulk"]["mean"] or 0.0
    try:
        corr_fit: Dict[str, Any] = fit_correlation_decay(correlations, rho_bulk, regime.epsilon, k).to_dict()
    except InsufficientDataError as e:
        corr_fit = {"refused": str(e)}

    histogram = load_contours(run, config)
    if histogram.n_frames >= CONTOUR_MIN_FRAMES:
        contour = peierls_fit(histogram).to_dict()
    else:
        contour = {"refused": f"{histogram.n_frames} frames (need {CONTOUR_MIN_FRAMES})"}
    contour["histogram"] = histogram.rows()

    rho = columns["rho"]
    summary = {
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "run_dir": run.name,
        "box": config.box.to_dict(),
        "z": z,
        "chains": config.chains,
        "regime": regime.to_dict(),
        "columns": columns,
        "order_parameter_ratio": _est_dict(order_ratio),
        "density_over_z": (
            {"value": _finite(rho["mean"] / z), "error": _finite((rho["error"] or math.nan) / z)}
            if z > 0
            else None
        ),
        "events": events,
        "correlations": [
            {
                "separation": list(c.separation),
                "distance": c.distance,
                "pair": _est_dict(c.pair),
                "truncated": _est_dict(c.truncated),
            }
            for c in correlations
        ],
        "correlation_decay": corr_fit,
        "tile_spin_connected": tile_connected,
        "contours": contour,
        "acceptance_rates": manifest.get("acceptance_rates", {}),
    }
    summary["headline"] = {
        "M": columns["M"]["mean"],
        "M_err": columns["M"]["error"],
        "rho": rho["mean"],
        "rho_err": rho["error"],
        "event_probability": events[0]["value"] if events else None,
        "tau": contour.get("tau"),
    }
    return summary


def _running(series: pd.Series) -> RunningStats:
    stats = RunningStats()
    stats.add_many(series.to_numpy(dtype=float))
    return stats


def write_summary(run_dir) -> Dict[str, Any]:
    run = Path(run_dir)
    summary = summarize_run(run)
    (run / "summary.json").write_text(json.dumps(_json_safe(summary), indent=2, sort_keys=True), encoding="utf-8")
    rows = [
        {
            "dx": c["separation"][0],
            "dy": c["separation"][1],
            "distance": c["distance"],
            "truncated": c["truncated"]["value"],
            "truncated_err": c["truncated"]["error"],
        }
        for c in summary["correlations"]
    ]
    pd.DataFrame(rows, columns=["dx", "dy", "distance", "truncated", "truncated_err"]).to_csv(
        run / "correlations.csv", index=False, lineterminator="\n"
    )
    logger.info(f"Wrote {run / 'summary.json'}")
    return summary


# -- cross-run analysis ------------------------------------------------------


def analysis_row(summary: Dict[str, Any]) -> Dict[str, Any]:
    box = summary["box"]
    cols = summary["columns"]
    event = summary["events"][0] if summary["events"] else {"value": None, "error": None}
    return {
        "run": summary["run_dir"],
        "L": box["L"],
        "height": box["height"],
        "k": box["k"],
        "bc": box["bc"],
        "containment": box["containment"],
        "z": summary["z"],
        "zk2": summary["regime"]["zk2"],
        "M": cols["M"]["mean"],
        "M_err": cols["M"]["error"],
        "rho": cols["rho"]["mean"],
        "rho_err": cols["rho"]["error"],
        "rho_bulk": cols["rho_bulk"]["mean"],
        "rho_bulk_err": cols["rho_bulk"]["error"],
        "event_probability": event["value"],
        "event_probability_err": event["error"],
        "empty_tile_fraction": cols["empty_tile_fraction"]["mean"],
        "empty_tile_fraction_err": cols["empty_tile_fraction"]["error"],
        "n": cols["M"]["count"],
    }


def _estimate(row: pd.Series, name: str) -> Estimate:
    value, err = row[name], row[f"{name}_err"]
    return Estimate(
        float(value) if pd.notna(value) else math.nan,
        float(err) if pd.notna(err) else 0.0,
        int(row["n"]),
    )


def _decay_fits(table: pd.DataFrame, column: str) -> Dict[str, Any]:
    fits: Dict[str, Any] = {}
    for (L, k, bc), group in table.groupby(["L", "k", "bc"], sort=True):
        key = f"L={L},k={k},bc={bc}"
        group = group.sort_values("zk2")
        if group["zk2"].nunique() < 2:
            continue
        try:
            fit = fit_event_decay(
                group["zk2"].tolist(),
                [_estimate(r, column) for _, r in group.iterrows()],
            )
        except InsufficientDataError as e:
            fits[key] = {"refused": str(e)}
            continue
        fits[key] = fit.to_dict()
    return fits


def _plus_minus(table: pd.DataFrame) -> List[Dict[str, Any]]:
    out = []
    for (L, k, z), group in table.groupby(["L", "k", "z"], sort=True):
        plus = group[group["bc"] == "plus"]
        minus = group[group["bc"] == "minus"]
        if plus.empty or minus.empty:
            continue
        p, m = plus.iloc[0], minus.iloc[0]
        out.append(
            {
                "L": int(L),
                "k": int(k),
                "z": float(z),
                "plus_run": p["run"],
                "minus_run": m["run"],
                "M_plus_minus_gap": abs(float(p["M"]) - float(m["M"])),
                "M": compare_estimates(_estimate(p, "M"), _estimate(m, "M")).to_dict(),
                "rho": compare_estimates(_estimate(p, "rho"), _estimate(m, "rho")).to_dict(),
                "rho_bulk": compare_estimates(_estimate(p, "rho_bulk"), _estimate(m, "rho_bulk")).to_dict(),
            }
        )
    return out


def compare_runs(summaries: Sequence[Dict[str, Any]], out_dir) -> Dict[str, Any]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table = pd.DataFrame([analysis_row(s) for s in summaries]).sort_values(["L", "k", "bc", "z", "run"])
    table.to_csv(out / "analysis.csv", index=False, lineterminator="\n")
    analysis = {
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "runs": table["run"].tolist(),
        "event_decay": _decay_fits(table.dropna(subset=["event_probability"]), "event_probability"),
        "empty_tile_decay": _decay_fits(table.dropna(subset=["empty_tile_fraction"]), "empty_tile_fraction"),
        "plus_minus": _plus_minus(table),
    }
    (out / "analysis.json").write_text(json.dumps(_json_safe(analysis), indent=2, sort_keys=True), encoding="utf-8")
    logger.info(f"Wrote {out / 'analysis.csv'} and {out / 'analysis.json'}")
    return analysis


def _parse_args(argv: List[str]):
    p = ArgumentParser(description="Summarize and compare simulate runs")
    p.add_argument("run_dirs", nargs="+", help="Run directories written by simulate")
    p.add_argument(
        "--out",
        default=None,
        help="Where analysis.csv/analysis.json go (default: env KMER_OUTPUT_DIR or runs)",
    )
    return p.parse_args(argv)


def main(argv: List[str]) -> int:
    load_dotenv()
    setup_logging()

    def body() -> int:
        args = _parse_args(argv)
        summaries = [write_summary(d) for d in args.run_dirs]
        for s in summaries:
            print(f"{s['run_dir']}: {json.dumps(s['headline'], sort_keys=True)}")
        out = args.out if args.out is not None else os.getenv("KMER_OUTPUT_DIR", "runs")
        analysis = compare_runs(summaries, out)
        print(f"Analysis written to {out} ({len(analysis['runs'])} runs)")
        return 0

    return run_guarded(body)


if __name__ == "__main__":
    raise SystemExit(main(sys.argv[1:]))
