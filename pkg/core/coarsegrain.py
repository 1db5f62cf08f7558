"""Tile coarse-graining, defect tiles and contours.

The box is covered by square tiles of side l = k // 2 anchored at the origin;
trailing columns or rows that do not fill a tile are dropped. A tile's spin is
+1 if it holds horizontal rod centers only, -1 for vertical only, 0 if empty.
Two centers in one tile are less than k apart along both axes, so rods of
opposite orientation there would cross; a mixed tile is therefore a hard-core
bug upstream and raises InvariantViolation.

A defect tile is a 0 tile or either member of a nearest-neighbor (+1, -1)
pair. Contours are the 4-connected components of the defect set.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np
from scipy import ndimage, stats

from core.errors import InsufficientDataError, InvariantViolation, LatticeError
from core.fitting import LinearFit, weighted_linear_fit
from core.lattice import BoxSpec, Orientation, RodConfig


logger = logging.getLogger("kmer-nematic")

Tile = Tuple[int, int]

PEIERLS_MIN_EVENTS = 10
PEIERLS_MIN_BINS = 3
CONTOUR_MIN_FRAMES = 100


@dataclass
class SpinField:
    """Tile spins indexed [ty, tx]; `discarded` is (columns, rows) dropped."""

    tile_side: int
    spins: np.ndarray
    discarded: Tuple[int, int] = (0, 0)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.spins.shape  # type: ignore[return-value]

    @property
    def n_tiles(self) -> int:
        return int(self.spins.size)

    def spin(self, tile: Tile) -> int:
        tx, ty = tile
        return int(self.spins[ty, tx])

    def flipped(self) -> "SpinField":
        return SpinField(self.tile_side, -self.spins, self.discarded)

    def mean(self) -> float:
        return float(self.spins.mean()) if self.spins.size else 0.0

    def to_records(self, sweep: int) -> List[Dict[str, int]]:
        ty, tx = np.indices(self.spins.shape)
        return [
            {"sweep": int(sweep), "tx": int(x), "ty": int(y), "spin": int(s)}
            for x, y, s in zip(tx.ravel(), ty.ravel(), self.spins.ravel())
        ]

    @classmethod
    def from_array(cls, spins, tile_side: int = 1) -> "SpinField":
        arr = np.asarray(spins, dtype=np.int8)
        if arr.ndim != 2 or not np.isin(arr, (-1, 0, 1)).all():
            raise ValueError("spin field must be a 2D array of -1, 0, +1")
        return cls(tile_side=tile_side, spins=arr)


def _tile_blocks(config: RodConfig) -> Tuple[np.ndarray, Tuple[int, int]]:
    """Center grid reshaped to (ty, row-in-tile, tx, column-in-tile)."""
    box = config.box
    side = box.tile_side
    nx, ny = box.L // side, box.Ly // side
    blocks = config.centers[: ny * side, : nx * side].reshape(ny, side, nx, side)
    return blocks, (box.L - nx * side, box.Ly - ny * side)


def tile_spins(config: RodConfig, box: Optional[BoxSpec] = None) -> SpinField:
    box = box or config.box
    if box != config.box:
        raise LatticeError("configuration belongs to a different box")
    blocks, discarded = _tile_blocks(config)
    has_h = (blocks == int(Orientation.HORIZONTAL)).any(axis=(1, 3))
    has_v = (blocks == int(Orientation.VERTICAL)).any(axis=(1, 3))
    mixed = has_h & has_v
    if mixed.any():
        ty, tx = np.argwhere(mixed)[0]
        raise InvariantViolation(f"tile {(int(tx), int(ty))} holds rods of both orientations")
    spins = has_h.astype(np.int8) - has_v.astype(np.int8)
    return SpinField(tile_side=box.tile_side, spins=spins, discarded=discarded)


def defect_mask(field: SpinField) -> np.ndarray:
    s = field.spins
    mask = s == 0
    horizontal = (s[:, :-1] * s[:, 1:]) == -1
    vertical = (s[:-1, :] * s[1:, :]) == -1
    mask[:, :-1] |= horizontal
    mask[:, 1:] |= horizontal
    mask[:-1, :] |= vertical
    mask[1:, :] |= vertical
    return mask


def defect_tiles(field: SpinField) -> Set[Tile]:
    return {(int(tx), int(ty)) for ty, tx in np.argwhere(defect_mask(field))}


@dataclass(frozen=True)
class Contour:
    tiles: FrozenSet[Tile]

    @property
    def size(self) -> int:
        return len(self.tiles)


def contours(field: SpinField) -> List[Contour]:
    """4-connected defect components, ordered by their first tile (row-major)."""
    labels, n = ndimage.label(defect_mask(field))
    if n == 0:
        return []
    out: List[Contour] = []
    for index in range(1, n + 1):
        ys, xs = np.nonzero(labels == index)
        out.append(Contour(frozenset(zip(xs.tolist(), ys.tolist()))))
    return out


def contour_sizes(field: SpinField) -> np.ndarray:
    """Component sizes only; cheaper than building Contour objects."""
    labels, n = ndimage.label(defect_mask(field))
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    return np.bincount(labels.ravel())[1:]


@dataclass
class ContourHistogram:
    """Contour counts by size, accumulated over frames; merge is associative."""

    counts: Dict[int, int] = field(default_factory=dict)
    n_frames: int = 0
    n_tile_frames: int = 0
    n_clean_frames: int = 0

    def add(self, field: SpinField) -> None:
        sizes = contour_sizes(field)
        self.n_frames += 1
        self.n_tile_frames += field.n_tiles
        if sizes.size == 0:
            self.n_clean_frames += 1
            return
        values, freq = np.unique(sizes, return_counts=True)
        for s, c in zip(values.tolist(), freq.tolist()):
            self.counts[s] = self.counts.get(s, 0) + c

    def merge(self, other: "ContourHistogram") -> "ContourHistogram":
        counts = dict(self.counts)
        for s, c in other.counts.items():
            counts[s] = counts.get(s, 0) + c
        return ContourHistogram(
            counts=counts,
            n_frames=self.n_frames + other.n_frames,
            n_tile_frames=self.n_tile_frames + other.n_tile_frames,
            n_clean_frames=self.n_clean_frames + other.n_clean_frames,
        )

    def probability(self, size: int) -> float:
        """Probability that a given tile belongs to a contour of `size` tiles."""
        if self.n_tile_frames == 0:
            return 0.0
        return size * self.counts.get(size, 0) / self.n_tile_frames

    def rows(self) -> List[Dict[str, float]]:
        return [
            {"size": s, "count": self.counts[s], "probability": self.probability(s)}
            for s in sorted(self.counts)
        ]


@dataclass
class ContourStatistics:
    histogram: ContourHistogram
    fit: Optional[LinearFit]
    refused: Optional[str] = None

    @property
    def tau(self) -> Optional[float]:
        return None if self.fit is None else -self.fit.slope

    @property
    def tau_err(self) -> Optional[float]:
        return None if self.fit is None else self.fit.slope_err

    @property
    def tau_positive_95(self) -> bool:
        return self.fit is not None and self.fit.slope_negative_95

    def to_dict(self) -> Dict[str, object]:
        return {
            "schema_version": 1,
            "n_frames": self.histogram.n_frames,
            "n_clean_frames": self.histogram.n_clean_frames,
            "tau": self.tau,
            "tau_err": self.tau_err,
            "tau_positive_95": self.tau_positive_95,
            "fit": None if self.fit is None else self.fit.to_dict(),
            "refused": self.refused,
        }


def peierls_fit(
    histogram: ContourHistogram,
    *,
    min_events: int = PEIERLS_MIN_EVENTS,
) -> ContourStatistics:
    """Fit log P(s) = a - tau * s over sizes with >= min_events contours.

    Each bin is weighted by its Poisson relative error 1/sqrt(count).
    """
    sizes = sorted(s for s, c in histogram.counts.items() if c >= min_events)
    if len(sizes) < PEIERLS_MIN_BINS:
        reason = f"{len(sizes)} size bins with >= {min_events} events (need {PEIERLS_MIN_BINS})"
        logger.warning(f"Peierls fit refused: {reason}")
        return ContourStatistics(histogram=histogram, fit=None, refused=reason)
    y = [math.log(histogram.probability(s)) for s in sizes]
    sigma = [1.0 / math.sqrt(histogram.counts[s]) for s in sizes]
    return ContourStatistics(histogram=histogram, fit=weighted_linear_fit(sizes, y, sigma))


def contour_statistics(
    fields: Iterable[SpinField],
    *,
    min_frames: int = CONTOUR_MIN_FRAMES,
    min_events: int = PEIERLS_MIN_EVENTS,
) -> ContourStatistics:
    histogram = ContourHistogram()
    for f in fields:
        histogram.add(f)
    if histogram.n_frames < min_frames:
        raise InsufficientDataError(
            f"contour statistics need >= {min_frames} fields, got {histogram.n_frames}"
        )
    return peierls_fit(histogram, min_events=min_events)


# -- per-tile statistics -----------------------------------------------------


def empty_tile_fraction(field: SpinField) -> float:
    if field.n_tiles == 0:
        return 0.0
    return float(np.count_nonzero(field.spins == 0)) / field.n_tiles


def rods_per_tile(config: RodConfig, box: Optional[BoxSpec] = None) -> float:
    """Mean number of rod centers in a nonempty tile."""
    blocks, _ = _tile_blocks(config)
    per_tile = np.count_nonzero(blocks, axis=(1, 3))
    occupied = np.count_nonzero(per_tile)
    if occupied == 0:
        return 0.0
    return float(per_tile.sum()) / occupied


@dataclass
class RowOccupancy:
    """Rod centers per row (horizontal tile) or per column (vertical tile)."""

    orientation: Orientation
    profile: Tuple[int, ...]

    @property
    def occupied(self) -> int:
        return sum(1 for c in self.profile if c)


def _tile_window(config: RodConfig, tile: Tile) -> np.ndarray:
    side = config.box.tile_side
    tx, ty = tile
    nx, ny = config.box.L // side, config.box.Ly // side
    if not (0 <= tx < nx and 0 <= ty < ny):
        raise LatticeError(f"tile {tile} is outside the {nx}x{ny} tiling")
    return config.centers[ty * side : (ty + 1) * side, tx * side : (tx + 1) * side]


def row_occupancy_stats(config: RodConfig, tile: Tile) -> RowOccupancy:
    window = _tile_window(config, tile)
    if (window == int(Orientation.HORIZONTAL)).any():
        return RowOccupancy(Orientation.HORIZONTAL, tuple(np.count_nonzero(window, axis=1).tolist()))
    if (window == int(Orientation.VERTICAL)).any():
        return RowOccupancy(Orientation.VERTICAL, tuple(np.count_nonzero(window, axis=0).tolist()))
    raise LatticeError(f"tile {tile} is empty; row occupancy is undefined")


def collect_row_occupancy(config: RodConfig, orientation: Orientation) -> List[int]:
    """Occupied-line counts for every tile not of the opposite spin.

    Empty tiles contribute 0, so the sample is the unconditioned count that
    the independent-row model predicts.
    """
    field_ = tile_spins(config)
    ny, nx = field_.shape
    out: List[int] = []
    for ty in range(ny):
        for tx in range(nx):
            spin = int(field_.spins[ty, tx])
            if spin == 0:
                out.append(0)
            elif spin == int(orientation):
                out.append(row_occupancy_stats(config, (tx, ty)).occupied)
    return out


@dataclass
class RowOccupancyComparison:
    tile_side: int
    empirical: np.ndarray
    binomial: np.ndarray
    p_hat: float
    n_samples: int

    @property
    def total_variation(self) -> float:
        return 0.5 * float(np.abs(self.empirical - self.binomial).sum())

    def rows(self) -> List[Dict[str, float]]:
        return [
            {"occupied_rows": j, "empirical": float(e), "binomial": float(b)}
            for j, (e, b) in enumerate(zip(self.empirical, self.binomial))
        ]


def row_occupancy_distribution(samples: Sequence[int], tile_side: int) -> RowOccupancyComparison:
    """Empirical occupied-row distribution against binomial(l, p_hat)."""
    counts = np.asarray(samples, dtype=int)
    if counts.size == 0:
        raise InsufficientDataError("no row-occupancy samples")
    if counts.min() < 0 or counts.max() > tile_side:
        raise ValueError(f"row counts must lie in [0, {tile_side}]")
    empirical = np.bincount(counts, minlength=tile_side + 1) / counts.size
    p_hat = float(counts.mean()) / tile_side
    binomial = stats.binom.pmf(np.arange(tile_side + 1), tile_side, p_hat)
    return RowOccupancyComparison(tile_side, empirical, binomial, p_hat, int(counts.size))


__all__ = [
    "Contour",
    "ContourHistogram",
    "ContourStatistics",
    "RowOccupancy",
    "RowOccupancyComparison",
    "SpinField",
    "Tile",
    "collect_row_occupancy",
    "contour_sizes",
    "contour_statistics",
    "contours",
    "defect_mask",
    "defect_tiles",
    "empty_tile_fraction",
    "peierls_fit",
    "rods_per_tile",
    "row_occupancy_distribution",
    "row_occupancy_stats",
    "tile_spins",
]
