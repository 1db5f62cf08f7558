"""Exact enumeration of rod configurations on tiny boxes.

The oracle is the ground truth the sampler and the estimators are checked
against. Candidate rod positions are listed row-major, horizontal before
vertical, and configurations are produced by a depth-first search that only
descends into compatible additions, so every allowed configuration (the empty
one included) is produced exactly once and in a reproducible order.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from core.errors import InvariantViolation, StateSpaceTooLarge
from core.lattice import BoxSpec, Orientation, Rod, RodConfig, footprint


logger = logging.getLogger("kmer-nematic")

DEFAULT_ENUM_LIMIT = 32


def _enum_limit(limit: Optional[int]) -> int:
    if limit is not None:
        return int(limit)
    return int(os.getenv("KMER_ENUM_LIMIT", str(DEFAULT_ENUM_LIMIT)))


def candidate_rods(box: BoxSpec) -> List[Rod]:
    """Every rod that is legal on its own (containment and bc), in DFS order."""
    empty = RodConfig(box)
    rods: List[Rod] = []
    for y in range(box.Ly):
        for x in range(box.L):
            for orientation in (Orientation.HORIZONTAL, Orientation.VERTICAL):
                rod = Rod(orientation, x, y)
                if empty.is_compatible(rod):
                    rods.append(rod)
    return rods


def _guarded_candidates(
    box: BoxSpec,
    limit: Optional[int],
    allow_large: bool,
) -> List[Rod]:
    rods = candidate_rods(box)
    lim = _enum_limit(limit)
    if len(rods) > lim:
        if not allow_large:
            raise StateSpaceTooLarge(candidates=len(rods), limit=lim)
        logger.warning(f"Enumerating {len(rods)} candidate rod positions (limit {lim}); this may not finish")
    return rods


def enumerate_configs(
    box: BoxSpec,
    *,
    limit: Optional[int] = None,
    allow_large: bool = False,
) -> Iterator[RodConfig]:
    """Yield every allowed configuration of `box` exactly once.

    Each yielded RodConfig is an independent copy; the stream itself is
    single-consumer.
    """
    rods = _guarded_candidates(box, limit, allow_large)
    config = RodConfig(box)

    def _dfs(start: int) -> Iterator[RodConfig]:
        yield config.copy()
        for i in range(start, len(rods)):
            rod = rods[i]
            if config.is_compatible(rod):
                config.apply(rod)
                yield from _dfs(i + 1)
                config.remove(rod)

    yield from _dfs(0)


def independent_set_counts(
    box: BoxSpec,
    *,
    limit: Optional[int] = None,
    allow_large: bool = False,
) -> List[int]:
    """Count independent sets of the rod-overlap graph by size.

    This works on bitmasks only (no occupancy grid), so it is an independent
    check of enumerate_configs.
    """
    rods = _guarded_candidates(box, limit, allow_large)
    n = len(rods)
    covers = [set(footprint(r, box)) for r in rods]
    conflict = [0] * n
    for i in range(n):
        for j in range(i + 1, n):
            if covers[i] & covers[j]:
                conflict[i] |= 1 << j
                conflict[j] |= 1 << i

    counts = [0] * (n + 1)
    # stack of (remaining candidates mask, chosen count)
    stack: List[Tuple[int, int]] = [((1 << n) - 1, 0)]
    while stack:
        remaining, size = stack.pop()
        if remaining == 0:
            counts[size] += 1
            continue
        v = (remaining & -remaining).bit_length() - 1
        rest = remaining & ~(1 << v)
        stack.append((rest, size))
        stack.append((rest & ~conflict[v], size + 1))

    while len(counts) > 1 and counts[-1] == 0:
        counts.pop()
    return counts


@dataclass(frozen=True)
class PartitionPolynomial:
    """Z(z) = sum_n c_n z^n with exact integer coefficients."""

    box: BoxSpec
    coefficients: Tuple[int, ...]

    @property
    def degree(self) -> int:
        return len(self.coefficients) - 1

    def evaluate(self, z: float) -> float:
        total = 0.0
        for c in reversed(self.coefficients):
            total = total * z + c
        return total

    __call__ = evaluate

    def mean_rods(self, z: float) -> float:
        """<|R|> = z d/dz log Z."""
        num = sum(n * c * z**n for n, c in enumerate(self.coefficients))
        return num / self.evaluate(z)

    @property
    def n_configs(self) -> int:
        return sum(self.coefficients)

    def to_dict(self) -> Dict[str, object]:
        return {
            "schema_version": 1,
            "L": self.box.L,
            "height": self.box.Ly,
            "k": self.box.k,
            "bc": self.box.bc.value,
            "containment": self.box.containment.value,
            "coefficients": list(self.coefficients),
        }


def partition_polynomial(
    box: BoxSpec,
    *,
    limit: Optional[int] = None,
    allow_large: bool = False,
) -> PartitionPolynomial:
    counts: Dict[int, int] = {}
    for config in enumerate_configs(box, limit=limit, allow_large=allow_large):
        counts[len(config)] = counts.get(len(config), 0) + 1
    coeffs = tuple(counts.get(n, 0) for n in range(max(counts) + 1))
    return PartitionPolynomial(box=box, coefficients=coeffs)


@dataclass
class ExactMeasure:
    """The finite-volume Gibbs measure z^{|R|} / Z over enumerated states."""

    box: BoxSpec
    z: float
    states: List[RodConfig]
    weights: np.ndarray

    @property
    def normalization(self) -> float:
        return float(self.weights.sum())

    def probabilities(self) -> np.ndarray:
        return self.weights / self.weights.sum()

    def index(self) -> Dict[frozenset, int]:
        return {s.key(): i for i, s in enumerate(self.states)}

    def expectation(self, observable: Callable[[RodConfig], float]) -> float:
        values = np.array([float(observable(s)) for s in self.states])
        return float(np.dot(self.probabilities(), values))

    def total_variation(self, counts: Dict[frozenset, int]) -> float:
        """TV distance between empirical state counts and the exact measure.

        Counts on states outside the enumeration are mass the measure lacks.
        """
        total = sum(counts.values())
        if total == 0:
            raise ValueError("no samples")
        index = self.index()
        empirical = np.zeros(len(self.states))
        outside = 0
        for key, c in counts.items():
            i = index.get(key)
            if i is None:
                outside += c
            else:
                empirical[i] += c
        empirical /= total
        return 0.5 * (float(np.abs(empirical - self.probabilities()).sum()) + outside / total)


def exact_measure(
    box: BoxSpec,
    z: float,
    *,
    limit: Optional[int] = None,
    allow_large: bool = False,
) -> ExactMeasure:
    states = list(enumerate_configs(box, limit=limit, allow_large=allow_large))
    weights = np.array([float(z) ** len(s) for s in states])
    return ExactMeasure(box=box, z=float(z), states=states, weights=weights)


def exact_expectation(
    box: BoxSpec,
    z: float,
    observable: Callable[[RodConfig], float],
    *,
    limit: Optional[int] = None,
) -> float:
    return exact_measure(box, z, limit=limit).expectation(observable)


def transition_matrix(measure: ExactMeasure, kernel) -> np.ndarray:
    """Dense one-move transition matrix of `kernel` over the measure's states.

    `kernel` must expose transition_probabilities(config) -> {key: prob}.
    """
    index = measure.index()
    n = len(measure.states)
    P = np.zeros((n, n))
    for i, state in enumerate(measure.states):
        for key, prob in kernel.transition_probabilities(state).items():
            j = index.get(key)
            if j is None:
                raise InvariantViolation(
                    f"kernel moved {sorted(state.key())} to a state outside the enumeration"
                )
            P[i, j] += prob
    return P


def exact_transition_check(box: BoxSpec, z: float, kernel) -> float:
    """Stationarity residual ||pi P - pi||_1 of `kernel` against the Gibbs vector."""
    measure = exact_measure(box, z)
    P = transition_matrix(measure, kernel)
    pi = measure.probabilities()
    rows = P.sum(axis=1)
    if not np.allclose(rows, 1.0, atol=1e-12):
        raise InvariantViolation(f"transition rows do not sum to 1 (max dev {np.abs(rows - 1).max()})")
    return float(np.abs(pi @ P - pi).sum())


def swap_orientations(keys: Sequence[frozenset]) -> List[frozenset]:
    """Map configuration keys through the x <-> y reflection."""
    return [frozenset(r.transposed() for r in key) for key in keys]


__all__ = [
    "ExactMeasure",
    "PartitionPolynomial",
    "candidate_rods",
    "enumerate_configs",
    "exact_expectation",
    "exact_measure",
    "exact_transition_check",
    "independent_set_counts",
    "partition_polynomial",
    "swap_orientations",
    "transition_matrix",
]
