"""Estimators for densities, correlations, order and events, with error bars.

Error bars come from the automatic blocking method (Jonsson 2018, a
hypothesis-test refinement of Flyvbjerg-Petersen blocking): the series is
halved by pair averaging until the remaining autocorrelation is no longer
significant at the 1% level. Ratio estimators (order parameter, truncated
correlations, connected correlations) use a blocked jackknife instead.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from core.coarsegrain import tile_spins
from core.errors import ConfigError, InsufficientDataError
from core.fitting import LinearFit, weighted_linear_fit
from core.lattice import BoundaryCondition, BoxSpec, Orientation, RodConfig


logger = logging.getLogger("kmer-nematic")

Bounds = Tuple[int, int, int, int]
Separation = Tuple[int, int]

MIN_SERIES_LENGTH = 16


# -- series and error bars ---------------------------------------------------


@dataclass
class Estimate:
    value: float
    error: float
    n: int = 0

    def to_dict(self) -> Dict[str, float]:
        return {"value": self.value, "error": self.error, "n": self.n}

    def __str__(self) -> str:
        return f"{self.value:.6g} ± {self.error:.2g}"


@dataclass
class BlockingResult:
    mean: float
    stderr: float
    level_errors: List[float]
    level_sizes: List[int]
    plateau_level: int
    plateau_found: bool

    def estimate(self) -> Estimate:
        return Estimate(self.mean, self.stderr, self.level_sizes[0] if self.level_sizes else 0)


@dataclass
class ObservableSeries:
    """Time series of one measured quantity, indexed by sweep."""

    name: str
    sweeps: List[int] = field(default_factory=list)
    values: List[float] = field(default_factory=list)

    def append(self, sweep: int, value: float) -> None:
        self.sweeps.append(int(sweep))
        self.values.append(float(value))

    def __len__(self) -> int:
        return len(self.values)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    def mean(self) -> float:
        return float(self.array.mean()) if self.values else float("nan")

    def blocking(self) -> BlockingResult:
        return error_bars(self)

    @classmethod
    def from_array(
        cls,
        name: str,
        values: Sequence[float],
        sweeps: Optional[Sequence[int]] = None,
    ) -> "ObservableSeries":
        vals = [float(v) for v in values]
        sw = [int(s) for s in sweeps] if sweeps is not None else list(range(len(vals)))
        return cls(name=name, sweeps=sw, values=vals)


def error_bars(series, *, min_length: int = MIN_SERIES_LENGTH) -> BlockingResult:
    """Blocking analysis over doubling bin sizes.

    The mean uses the whole series; the blocking runs on its last 2^d
    samples. `plateau_found` is False when the autocorrelation test never
    passes, in which case the last level is reported and a warning logged.
    """
    values = series.array if isinstance(series, ObservableSeries) else np.asarray(series, dtype=float)
    n = len(values)
    if n < min_length:
        raise InsufficientDataError(f"series of length {n} is shorter than {min_length}")

    mean = float(values.mean())
    d = int(math.floor(math.log2(n)))
    x = values[n - 2**d :]

    var = np.zeros(d)
    gamma = np.zeros(d)
    sizes: List[int] = []
    level_errors: List[float] = []
    for i in range(d):
        m = len(x)
        mu = x.mean()
        var[i] = x.var()
        gamma[i] = float(((x[:-1] - mu) * (x[1:] - mu)).sum()) / m
        sizes.append(m)
        level_errors.append(math.sqrt(var[i] / (m - 1)))
        x = 0.5 * (x[0::2] + x[1::2])

    if not np.any(var > 0):
        return BlockingResult(mean, 0.0, level_errors, sizes, 0, True)

    ratio = np.divide(gamma, var, out=np.zeros(d), where=var > 0) ** 2
    M = np.cumsum((ratio * np.asarray(sizes, dtype=float))[::-1])[::-1]

    level = d - 1
    found = False
    for i in range(d):
        if M[i] < stats.chi2.ppf(0.99, d - i):
            level = i
            found = True
            break
    if not found:
        name = getattr(series, "name", "series")
        logger.warning(f"Blocking of {name} found no plateau; error bar is a lower bound")

    stderr = math.sqrt(var[level] / sizes[level])
    return BlockingResult(mean, stderr, level_errors, sizes, level, found)


def estimate(values: Sequence[float]) -> Estimate:
    result = error_bars(values)
    return Estimate(result.mean, result.stderr, len(values))


def jackknife(
    columns: Sequence[Sequence[float]],
    estimator: Callable[..., float],
    *,
    n_blocks: int = 32,
) -> Estimate:
    """Blocked jackknife of estimator(mean(col_0), mean(col_1), ...)."""
    arrays = [np.asarray(c, dtype=float) for c in columns]
    n = len(arrays[0])
    if any(len(a) != n for a in arrays):
        raise ValueError("jackknife columns must have equal length")
    if n < 2:
        raise InsufficientDataError("jackknife needs at least 2 samples")

    nb = max(2, min(int(n_blocks), n))
    b = n // nb
    used = nb * b
    trimmed = [a[n - used :] for a in arrays]
    totals = [a.sum() for a in trimmed]
    block_sums = [a.reshape(nb, b).sum(axis=1) for a in trimmed]

    full = float(estimator(*[t / used for t in totals]))
    loo = np.array(
        [
            estimator(*[(totals[c] - block_sums[c][i]) / (used - b) for c in range(len(trimmed))])
            for i in range(nb)
        ],
        dtype=float,
    )
    err = math.sqrt((nb - 1) / nb * float(((loo - loo.mean()) ** 2).sum()))
    return Estimate(full, err, n)


@dataclass
class RunningStats:
    """Mergeable (count, sum, sum of squares) accumulator."""

    count: int = 0
    total: float = 0.0
    total_sq: float = 0.0

    def add(self, value: float) -> None:
        self.count += 1
        self.total += value
        self.total_sq += value * value

    def add_many(self, values: Sequence[float]) -> None:
        arr = np.asarray(values, dtype=float)
        self.count += int(arr.size)
        self.total += float(arr.sum())
        self.total_sq += float((arr * arr).sum())

    def merge(self, other: "RunningStats") -> "RunningStats":
        return RunningStats(
            self.count + other.count,
            self.total + other.total,
            self.total_sq + other.total_sq,
        )

    @property
    def mean(self) -> float:
        return self.total / self.count if self.count else float("nan")

    @property
    def variance(self) -> float:
        if self.count < 2:
            return 0.0
        m = self.mean
        return max(0.0, (self.total_sq - self.count * m * m) / (self.count - 1))

    def to_dict(self) -> Dict[str, float]:
        return {"count": self.count, "total": self.total, "total_sq": self.total_sq}


def combine_estimates(parts: Sequence[Estimate]) -> Estimate:
    """Merge independent per-chain estimates, weighting by sample count."""
    if not parts:
        raise InsufficientDataError("nothing to combine")
    total = sum(p.n for p in parts)
    if total == 0:
        raise InsufficientDataError("estimates carry no samples")
    value = sum(p.value * p.n for p in parts) / total
    err = math.sqrt(sum((p.error * p.n) ** 2 for p in parts)) / total
    return Estimate(value, err, total)


@dataclass
class Comparison:
    difference: float
    error: float

    @property
    def sigmas(self) -> float:
        if self.error == 0:
            return 0.0 if self.difference == 0 else math.inf
        return abs(self.difference) / self.error

    @property
    def consistent_3sigma(self) -> bool:
        return self.sigmas <= 3.0

    def to_dict(self) -> Dict[str, object]:
        return {
            "difference": self.difference,
            "error": self.error,
            "sigmas": self.sigmas,
            "consistent_3sigma": self.consistent_3sigma,
        }


def compare_estimates(a: Estimate, b: Estimate) -> Comparison:
    return Comparison(a.value - b.value, math.hypot(a.error, b.error))


# -- per-configuration observables -------------------------------------------


@dataclass
class DensitySample:
    rho: float
    n_field: np.ndarray


def density(config: RodConfig) -> DensitySample:
    """Per-site center indicator n_x and the box density N / A."""
    n_field = config.centers != 0
    return DensitySample(rho=len(config) / config.box.area, n_field=n_field)


def bulk_density(config: RodConfig, bounds: Optional[Bounds] = None) -> float:
    x0, x1, y0, y1 = bounds if bounds is not None else config.box.bulk_bounds()
    window = config.centers[y0:y1, x0:x1]
    if window.size == 0:
        return float("nan")
    return float(np.count_nonzero(window)) / window.size


def order_parameter(config: RodConfig) -> float:
    """M = (N_H - N_V) / (N_H + N_V), 0 for the empty configuration."""
    n = config.n_horizontal + config.n_vertical
    if n == 0:
        return 0.0
    return (config.n_horizontal - config.n_vertical) / n


def symmetrized_order_parameter(frames: Iterable[RodConfig]) -> float:
    """Mean of M over each frame and its x <-> y reflection. Exactly 0."""
    total = 0.0
    count = 0
    for config in frames:
        total += order_parameter(config) + order_parameter(config.transposed())
        count += 2
    return total / count if count else 0.0


# -- pair correlations -------------------------------------------------------


def _shifted(a: np.ndarray, dx: int, dy: int) -> Tuple[np.ndarray, np.ndarray]:
    """Aligned views (a[x], a[x + d]) over all x with both points inside."""
    h, w = a.shape
    if abs(dx) >= w or abs(dy) >= h:
        raise InsufficientDataError(f"displacement {(dx, dy)} does not fit a {w}x{h} region")
    first = a[max(0, -dy) : h - max(0, dy), max(0, -dx) : w - max(0, dx)]
    second = a[max(0, dy) : h - max(0, -dy), max(0, dx) : w - max(0, -dx)]
    return first, second


def default_separations(k: int, *, max_distance: Optional[int] = None) -> List[Separation]:
    """Axis-aligned multiples of floor(k/2) up to 4k."""
    step = max(1, k // 2)
    limit = 4 * k if max_distance is None else int(max_distance)
    out: List[Separation] = []
    for m in range(1, limit // step + 1):
        out.append((m * step, 0))
        out.append((0, m * step))
    return out


def fitting_separations(box: BoxSpec, separations: Sequence[Separation]) -> List[Separation]:
    """The separations that fit inside the analysis region of `box`."""
    x0, x1, y0, y1 = box.bulk_bounds()
    return [(dx, dy) for dx, dy in separations if abs(dx) < x1 - x0 and abs(dy) < y1 - y0]


def pair_product_average(n_field: np.ndarray, bounds: Bounds, separation: Separation) -> float:
    """Translation average of n_x n_{x+d} over x, x+d in the region."""
    x0, x1, y0, y1 = bounds
    a, b = _shifted(n_field[y0:y1, x0:x1], *separation)
    return float(np.count_nonzero(a & b)) / a.size


@dataclass
class PairCorrelationEstimate:
    separation: Separation
    pair: Estimate
    truncated: Estimate

    @property
    def distance(self) -> float:
        return math.hypot(*self.separation)


def truncated_correlation(
    pair_values: Sequence[float],
    density_values: Sequence[float],
    *,
    n_blocks: int = 32,
) -> Estimate:
    """rho(d) - rho^2 with a jackknife error."""
    return jackknife([pair_values, density_values], lambda p, r: p - r * r, n_blocks=n_blocks)


def pair_correlation(
    frames: Iterable[RodConfig],
    separations: Sequence[Separation],
    *,
    bounds: Optional[Bounds] = None,
) -> List[PairCorrelationEstimate]:
    frames = list(frames)
    if not frames:
        raise InsufficientDataError("no frames")
    region = bounds if bounds is not None else frames[0].box.bulk_bounds()
    rho = [bulk_density(c, region) for c in frames]
    out: List[PairCorrelationEstimate] = []
    for sep in separations:
        pairs = [pair_product_average(c.centers != 0, region, sep) for c in frames]
        out.append(
            PairCorrelationEstimate(
                separation=tuple(sep),
                pair=estimate(pairs),
                truncated=truncated_correlation(pairs, rho),
            )
        )
    return out


# -- events ------------------------------------------------------------------


@dataclass(frozen=True)
class EventSpec:
    """Window of side `side` centered at `center`; all rods in it have `target`.

    By default the window must hold at least `min_rods` centers; with
    `include_vacuous` an empty window also counts.
    """

    center: Tuple[int, int]
    side: int
    target: Orientation
    min_rods: int = 1
    include_vacuous: bool = False

    def bounds(self) -> Bounds:
        cx, cy = self.center
        x0 = cx - (self.side - 1) // 2
        y0 = cy - (self.side - 1) // 2
        return (x0, x0 + self.side, y0, y0 + self.side)

    def validate(self, box: BoxSpec) -> None:
        if self.side < 1:
            raise ConfigError("windows.side", f"window side must be >= 1, got {self.side}")
        if self.min_rods < 1:
            raise ConfigError("windows.min_rods", f"must be >= 1, got {self.min_rods}")
        x0, x1, y0, y1 = self.bounds()
        if x0 < 0 or y0 < 0 or x1 > box.L or y1 > box.Ly:
            raise ConfigError("windows.center", f"window {self.bounds()} leaves the box")
        if box.bc is not BoundaryCondition.OPEN:
            bx0, bx1, by0, by1 = box.bulk_bounds()
            if x0 < bx0 or y0 < by0 or x1 > bx1 or y1 > by1:
                raise ConfigError(
                    "windows.center",
                    f"window {self.bounds()} overlaps the {box.peel_width}-thick peel",
                )

    @classmethod
    def centered(cls, box: BoxSpec, target: Orientation, **kwargs) -> "EventSpec":
        return cls(
            center=(box.L // 2, box.Ly // 2),
            side=max(1, box.k // 2),
            target=target,
            **kwargs,
        )

    def to_dict(self) -> Dict[str, object]:
        return {
            "center": list(self.center),
            "side": self.side,
            "orientation": self.target.name.lower(),
            "min_rods": self.min_rods,
            "include_vacuous": self.include_vacuous,
        }


def event_indicator(config: RodConfig, event: EventSpec) -> int:
    x0, x1, y0, y1 = event.bounds()
    window = config.centers[y0:y1, x0:x1]
    n_target = int(np.count_nonzero(window == int(event.target)))
    n_other = int(np.count_nonzero(window == -int(event.target)))
    if n_other:
        return 0
    if n_target >= event.min_rods:
        return 1
    return int(event.include_vacuous and n_target == 0)


def event_probability(frames: Iterable[RodConfig], event: EventSpec) -> Estimate:
    indicators = [event_indicator(c, event) for c in frames]
    return estimate(indicators)


# -- cluster property --------------------------------------------------------


def site_field(config: RodConfig) -> np.ndarray:
    """n_x over the bulk region, as floats."""
    x0, x1, y0, y1 = config.box.bulk_bounds()
    return (config.centers[y0:y1, x0:x1] != 0).astype(float)


def bulk_tile_bounds(box: BoxSpec) -> Bounds:
    """(tx0, tx1, ty0, ty1) of the tiles lying entirely in the bulk region."""
    side = box.tile_side
    x0, x1, y0, y1 = box.bulk_bounds()
    tx0, ty0 = -(-x0 // side), -(-y0 // side)
    tx1 = max(tx0, min(box.L // side, x1 // side))
    ty1 = max(ty0, min(box.Ly // side, y1 // side))
    return (tx0, tx1, ty0, ty1)


def tile_field(config: RodConfig) -> np.ndarray:
    """Tile spins over the tiles lying entirely in the bulk region."""
    tx0, tx1, ty0, ty1 = bulk_tile_bounds(config.box)
    return tile_spins(config).spins[ty0:ty1, tx0:tx1].astype(float)


def tile_pair_product(spins: np.ndarray, distance: int) -> float:
    """Mean of s_t s_{t+d} over axis-aligned tile pairs at distance d."""
    h, w = spins.shape
    parts = []
    if distance < w:
        parts.append((spins[:, :-distance] * spins[:, distance:]).ravel())
    if distance < h:
        parts.append((spins[:-distance, :] * spins[distance:, :]).ravel())
    if not parts:
        raise InsufficientDataError(f"tile distance {distance} does not fit a {w}x{h} tile field")
    return float(np.concatenate(parts).mean())


FIELD_KINDS: Dict[str, Callable[[RodConfig], np.ndarray]] = {
    "n": site_field,
    "spin": tile_field,
}


@dataclass
class ClusterProbeResult:
    displacement: Separation
    connected: Estimate

    @property
    def distance(self) -> float:
        return math.hypot(*self.displacement)


def connected_products(
    field_a: np.ndarray,
    field_b: np.ndarray,
    displacement: Separation,
) -> Tuple[float, float, float]:
    """Per-frame (mean A_x B_{x+a}, mean A_x, mean B_{x+a}) over valid x."""
    a, _ = _shifted(field_a, *displacement)
    _, b = _shifted(field_b, *displacement)
    return float((a * b).mean()), float(a.mean()), float(b.mean())


def cluster_property_probe(
    frames: Iterable[RodConfig],
    a,
    b,
    displacements: Sequence[Separation],
    *,
    n_blocks: int = 32,
) -> List[ClusterProbeResult]:
    """<A B_a> - <A><B> at each displacement, A and B given as field kinds.

    `a` and `b` are "n" (site indicator), "spin" (tile spin) or any callable
    mapping a configuration to a 2D field. Displacements are in units of the
    field's own lattice (sites for "n", tiles for "spin").
    """
    fa_fn = FIELD_KINDS[a] if isinstance(a, str) else a
    fb_fn = FIELD_KINDS[b] if isinstance(b, str) else b
    fields = [(fa_fn(c), fb_fn(c)) for c in frames]
    if not fields:
        raise InsufficientDataError("no frames")
    out: List[ClusterProbeResult] = []
    for disp in sorted(displacements, key=lambda d: math.hypot(*d)):
        rows = np.array([connected_products(fa, fb, disp) for fa, fb in fields])
        connected = jackknife(
            [rows[:, 0], rows[:, 1], rows[:, 2]],
            lambda p, ma, mb: p - ma * mb,
            n_blocks=n_blocks,
        )
        out.append(ClusterProbeResult(tuple(disp), connected))
    return out


# -- fits --------------------------------------------------------------------


def _log_points(values: Sequence[float], errors: Sequence[float], counts: Sequence[int]):
    """log(value) and its error, dropping nonpositive values.

    A zero error bar (all frames identical) is replaced by the binomial
    floor 1/sqrt(count) in relative terms.
    """
    keep, ly, ls = [], [], []
    for i, (v, e, n) in enumerate(zip(values, errors, counts)):
        if not v > 0:
            continue
        rel = e / v if e > 0 else 1.0 / math.sqrt(max(n, 1))
        keep.append(i)
        ly.append(math.log(v))
        ls.append(rel)
    return keep, ly, ls


@dataclass
class DecayFit:
    """Fit of log(quantity) against a control variable."""

    constant: float
    constant_err: float
    confident: bool
    fit: LinearFit

    def to_dict(self) -> Dict[str, object]:
        return {
            "constant": self.constant,
            "constant_err": self.constant_err,
            "confident_95": self.confident,
            "fit": self.fit.to_dict(),
        }


def fit_event_decay(
    zk2: Sequence[float],
    probabilities: Sequence[Estimate],
) -> DecayFit:
    """c-hat from log P(E) ~ a - c * zk^2 (confident when c > 0 at 95%)."""
    keep, ly, ls = _log_points(
        [p.value for p in probabilities],
        [p.error for p in probabilities],
        [p.n for p in probabilities],
    )
    fit = weighted_linear_fit([zk2[i] for i in keep], ly, ls)
    return DecayFit(-fit.slope, fit.slope_err, fit.slope_negative_95, fit)


def fit_correlation_decay(
    correlations: Sequence[PairCorrelationEstimate],
    rho: float,
    epsilon: float,
    k: int,
) -> DecayFit:
    """c'-hat from |rho(d)/rho^2 - 1| ~ eps^(c' |d| / k)."""
    if not 0 < epsilon < 1:
        raise InsufficientDataError(f"epsilon {epsilon} gives no decay scale")
    if rho <= 0:
        raise InsufficientDataError("density is zero")
    scale = rho * rho
    keep, ly, ls = _log_points(
        [abs(c.truncated.value) / scale for c in correlations],
        [c.truncated.error / scale for c in correlations],
        [c.truncated.n for c in correlations],
    )
    x = [correlations[i].distance / k for i in keep]
    fit = weighted_linear_fit(x, ly, ls)
    log_eps = math.log(epsilon)
    return DecayFit(fit.slope / log_eps, fit.slope_err / abs(log_eps), fit.slope_negative_95, fit)


__all__ = [
    "BlockingResult",
    "ClusterProbeResult",
    "Comparison",
    "DecayFit",
    "DensitySample",
    "Estimate",
    "EventSpec",
    "LinearFit",
    "ObservableSeries",
    "PairCorrelationEstimate",
    "RunningStats",
    "bulk_density",
    "bulk_tile_bounds",
    "cluster_property_probe",
    "combine_estimates",
    "compare_estimates",
    "connected_products",
    "default_separations",
    "density",
    "error_bars",
    "estimate",
    "event_indicator",
    "event_probability",
    "fit_correlation_decay",
    "fit_event_decay",
    "fitting_separations",
    "jackknife",
    "order_parameter",
    "pair_correlation",
    "pair_product_average",
    "site_field",
    "symmetrized_order_parameter",
    "tile_field",
    "tile_pair_product",
    "truncated_correlation",
    "weighted_linear_fit",
]
