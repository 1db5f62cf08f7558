#!/usr/bin/env python3
"""SVG plots from analyze / coarsegrain CSV output.

Kinds and the CSV they read:
- order        analysis.csv      M vs z, one series per bc
- event        analysis.csv      log P(E) vs zk^2, one series per (L, k, bc)
- empty_tiles  analysis.csv      log empty-tile fraction vs zk^2
- correlation  correlations.csv  |truncated correlation| vs distance (log y)
- contours     contours.csv      P(s) vs contour size s (log y)

Several CSVs may be given; each becomes its own series. Output SVGs are
byte-stable for equal input (fixed hash salt, no date metadata).

Env vars (loaded from `.env` if present):
- KMER_OUTPUT_DIR (optional, default: runs): default directory for --out
"""

from __future__ import annotations

import logging
import math
import os
import sys
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
from dotenv import load_dotenv  # noqa: E402

from core.errors import ConfigError  # noqa: E402
from core.kmer_cli import ArgumentParser, run_guarded, setup_logging  # noqa: E402


logger = logging.getLogger("kmer-nematic")

# kind -> (x column, y column, y error column, group columns, log y, axis labels)
PLOT_KINDS: Dict[str, Tuple[str, str, str, Tuple[str, ...], bool, Tuple[str, str]]] = {
    "order": ("z", "M", "M_err", ("bc",), False, ("activity z", "order parameter M")),
    "event": (
        "zk2",
        "event_probability",
        "event_probability_err",
        ("L", "k", "bc"),
        True,
        ("z k^2", "P(E)"),
    ),
    "empty_tiles": (
        "zk2",
        "empty_tile_fraction",
        "empty_tile_fraction_err",
        ("L", "k", "bc"),
        True,
        ("z k^2", "empty-tile fraction"),
    ),
    "correlation": ("distance", "truncated", "truncated_err", (), True, ("|d|", "|rho(d) - rho^2|")),
    "contours": ("size", "probability", "", (), True, ("contour size s", "P(s)")),
}


def publication_figure(width: float = 6.0, height: float = 0.0):
    """Figure and axes with fixed fonts and a golden-ratio default height."""
    plt.rcParams["svg.hashsalt"] = "kmer-nematic"
    plt.rcParams["font.family"] = "sans-serif"
    plt.rcParams["font.size"] = 10
    golden_ratio = (math.sqrt(5) - 1.0) / 2.0
    fig, ax = plt.subplots(figsize=(width, height or width * golden_ratio))
    return fig, ax


def _load(inputs: Sequence[str]) -> List[Tuple[str, pd.DataFrame]]:
    if not inputs:
        raise ConfigError("inputs", "no CSV files given")
    frames = []
    for path in inputs:
        p = Path(path)
        if not p.exists():
            raise ConfigError("inputs", f"file not found: {p}")
        df = pd.read_csv(p)
        frames.append((p.parent.name or p.stem, df))
    if all(df.empty for _, df in frames):
        raise ConfigError("inputs", "every input CSV is empty")
    return frames


def _series(
    label: str,
    df: pd.DataFrame,
    x: str,
    y: str,
    yerr: str,
    log_y: bool,
) -> Tuple[str, np.ndarray, np.ndarray, np.ndarray]:
    for col in (x, y):
        if col not in df.columns:
            raise ConfigError("inputs", f"{label}: missing column {col!r}")
    xs = df[x].to_numpy(dtype=float)
    ys = df[y].to_numpy(dtype=float)
    es = df[yerr].to_numpy(dtype=float) if yerr and yerr in df.columns else np.zeros_like(ys)
    es = np.nan_to_num(es, nan=0.0)
    if log_y:
        ys = np.abs(ys)
        keep = np.isfinite(xs) & np.isfinite(ys) & (ys > 0)
    else:
        keep = np.isfinite(xs) & np.isfinite(ys)
    order = np.argsort(xs[keep], kind="stable")
    return label, xs[keep][order], ys[keep][order], es[keep][order]


def emit_plot(kind: str, inputs: Sequence[str], out) -> Path:
    """Write one SVG plot of `kind` from `inputs`; returns the SVG path."""
    if kind not in PLOT_KINDS:
        raise ConfigError("kind", f"unknown plot kind {kind!r}", sorted(PLOT_KINDS))
    x, y, yerr, groups, log_y, (xlabel, ylabel) = PLOT_KINDS[kind]

    series = []
    for label, df in _load(inputs):
        if groups and all(g in df.columns for g in groups):
            for key, part in df.groupby(list(groups), sort=True):
                key = key if isinstance(key, tuple) else (key,)
                name = ", ".join(f"{g}={v}" for g, v in zip(groups, key))
                series.append(_series(f"{label}: {name}" if len(inputs) > 1 else name, part, x, y, yerr, log_y))
        else:
            series.append(_series(label, df, x, y, yerr, log_y))
    series = [s for s in series if s[1].size]
    if not series:
        raise ConfigError("inputs", f"no plottable points for {kind}")

    fig, ax = publication_figure()
    try:
        for label, xs, ys, es in series:
            if log_y:
                # keep lower error bars above zero on the log axis
                lower = np.minimum(es, ys * (1 - 1e-9))
                ax.errorbar(xs, ys, yerr=[lower, es], fmt="o-", capsize=3, label=label)
            else:
                ax.errorbar(xs, ys, yerr=es, fmt="o-", capsize=3, label=label)
        if log_y:
            ax.set_yscale("log")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if len(series) > 1:
            ax.legend(fontsize=8)
        fig.tight_layout()

        target = Path(out)
        if target.suffix != ".svg":
            target = target / f"{kind}.svg"
        target.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(target, format="svg", metadata={"Date": None})
    finally:
        plt.close(fig)
    logger.info(f"Wrote {kind} plot to {target}")
    return target


def _parse_args(argv: List[str]):
    p = ArgumentParser(description="Plot analyze / coarsegrain CSV output as SVG")
    p.add_argument("--kind", required=True, choices=sorted(PLOT_KINDS))
    p.add_argument("inputs", nargs="+", help="CSV files")
    p.add_argument(
        "--out",
        default=None,
        help="SVG file, or a directory for {kind}.svg (default: env KMER_OUTPUT_DIR or runs)",
    )
    return p.parse_args(argv)


def main(argv: List[str]) -> int:
    load_dotenv()
    setup_logging()

    def body() -> int:
        args = _parse_args(argv)
        out = args.out if args.out is not None else os.getenv("KMER_OUTPUT_DIR", "runs")
        path = emit_plot(args.kind, args.inputs, out)
        print(f"Plot written to {path}")
        return 0

    return run_guarded(body)


if __name__ == "__main__":
    raise SystemExit(main(sys.argv[1:]))
