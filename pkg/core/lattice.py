"""Square-lattice geometry for two-orientation hard rods (k-mers).

A rod is a 1×k particle lying along one lattice axis, identified by its
orientation and its center site. For even k the center is the left (bottom)
cell of the two middle cells, so a rod centered at (x, y) covers
x - (k-1)//2 ... x - (k-1)//2 + k - 1 along its axis.

RodConfig keeps two numpy grids next to the rod set: a padded occupancy grid
(site -> rod id, -1 when free) for O(k) hard-core checks, and a center grid
(+1 horizontal center, -1 vertical center, 0 none) that the observables and
the coarse-graining read directly.
"""

from __future__ import annotations

import enum
import math
import os
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from core.errors import InvariantViolation, LatticeError, RejectedMoveError


Site = Tuple[int, int]


class Orientation(enum.IntEnum):
    """Rod orientation. The integer value doubles as the tile spin."""

    HORIZONTAL = 1
    VERTICAL = -1

    @property
    def symbol(self) -> str:
        return "H" if self is Orientation.HORIZONTAL else "V"

    def flipped(self) -> "Orientation":
        if self is Orientation.HORIZONTAL:
            return Orientation.VERTICAL
        return Orientation.HORIZONTAL

    @classmethod
    def parse(cls, value: str) -> "Orientation":
        v = str(value).strip().lower()
        if v in {"h", "horizontal", "+", "+1", "1"}:
            return cls.HORIZONTAL
        if v in {"v", "vertical", "-", "-1"}:
            return cls.VERTICAL
        raise LatticeError(f"unknown orientation: {value!r}")


class Containment(str, enum.Enum):
    CENTER_IN_BOX = "center_in_box"
    FULLY_CONTAINED = "fully_contained"


class BoundaryCondition(str, enum.Enum):
    OPEN = "open"
    PLUS = "plus"
    MINUS = "minus"

    @property
    def forced_orientation(self) -> Optional[Orientation]:
        """Orientation imposed on rods centered in the internal peel."""
        if self is BoundaryCondition.PLUS:
            return Orientation.HORIZONTAL
        if self is BoundaryCondition.MINUS:
            return Orientation.VERTICAL
        return None

    def flipped(self) -> "BoundaryCondition":
        if self is BoundaryCondition.PLUS:
            return BoundaryCondition.MINUS
        if self is BoundaryCondition.MINUS:
            return BoundaryCondition.PLUS
        return self


@dataclass(frozen=True, order=True)
class Rod:
    orientation: Orientation
    x: int
    y: int

    @property
    def center(self) -> Site:
        return (self.x, self.y)

    def rotated(self) -> "Rod":
        return Rod(self.orientation.flipped(), self.x, self.y)

    def shifted(self, dx: int, dy: int) -> "Rod":
        return Rod(self.orientation, self.x + dx, self.y + dy)

    def transposed(self) -> "Rod":
        return Rod(self.orientation.flipped(), self.y, self.x)

    def as_row(self) -> Tuple[str, int, int]:
        return (self.orientation.symbol, self.x, self.y)


@dataclass(frozen=True)
class BoxSpec:
    """Finite box with free edges.

    `L` is the number of columns; `height` defaults to `L` (square box).
    """

    L: int
    k: int
    containment: Containment = Containment.CENTER_IN_BOX
    bc: BoundaryCondition = BoundaryCondition.OPEN
    height: Optional[int] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "containment", Containment(self.containment))
        object.__setattr__(self, "bc", BoundaryCondition(self.bc))
        if self.height is None:
            object.__setattr__(self, "height", self.L)
        if int(self.L) < 1 or int(self.height) < 1:
            raise LatticeError(f"box sides must be >= 1, got {self.L}x{self.height}")
        if int(self.k) < 2:
            raise LatticeError(f"rod length k must be >= 2, got {self.k}")

    @property
    def Ly(self) -> int:
        return int(self.height)  # type: ignore[arg-type]

    @property
    def area(self) -> int:
        return self.L * self.Ly

    @property
    def peel_width(self) -> int:
        return 2 * self.k

    @property
    def offset(self) -> int:
        return (self.k - 1) // 2

    @property
    def tile_side(self) -> int:
        return self.k // 2

    @property
    def is_square(self) -> bool:
        return self.L == self.Ly

    def contains(self, site: Site) -> bool:
        x, y = site
        return 0 <= x < self.L and 0 <= y < self.Ly

    def edge_distance(self, site: Site) -> int:
        x, y = site
        return min(x, y, self.L - 1 - x, self.Ly - 1 - y)

    def transposed(self) -> "BoxSpec":
        return BoxSpec(
            L=self.Ly,
            k=self.k,
            containment=self.containment,
            bc=self.bc.flipped(),
            height=self.L,
        )

    def with_bc(self, bc: BoundaryCondition) -> "BoxSpec":
        return BoxSpec(self.L, self.k, self.containment, bc, self.height)

    def bulk_bounds(self) -> Tuple[int, int, int, int]:
        """(x0, x1, y0, y1) half-open rectangle of sites outside the peel.

        Open boxes have no peel constraint, so the whole box is returned.
        """
        if self.bc is BoundaryCondition.OPEN:
            return (0, self.L, 0, self.Ly)
        w = self.peel_width
        return (w, max(w, self.L - w), w, max(w, self.Ly - w))

    @property
    def has_bulk(self) -> bool:
        """False for plus/minus boxes with min(L, height) <= 4k."""
        x0, x1, y0, y1 = self.bulk_bounds()
        return x1 > x0 and y1 > y0

    def to_dict(self) -> Dict[str, object]:
        return {
            "L": self.L,
            "height": self.Ly,
            "k": self.k,
            "containment": self.containment.value,
            "bc": self.bc.value,
        }


def footprint(rod: Rod, box: BoxSpec) -> List[Site]:
    """The k sites covered by `rod`, in increasing order along its axis."""
    start = -box.offset
    if rod.orientation is Orientation.HORIZONTAL:
        return [(rod.x + start + i, rod.y) for i in range(box.k)]
    return [(rod.x, rod.y + start + i) for i in range(box.k)]


def in_peel(site: Site, box: BoxSpec) -> bool:
    """True iff `site` lies in the first 2k layers next to the box edge."""
    if not box.contains(site):
        raise LatticeError(f"site {site} is outside the {box.L}x{box.Ly} box")
    return box.edge_distance(site) < box.peel_width


@dataclass(frozen=True)
class RegimeParams:
    z: float
    k: int
    epsilon: float
    in_regime: bool
    epsilon0: float
    k0: int

    @property
    def zk(self) -> float:
        return self.z * self.k

    @property
    def zk2(self) -> float:
        return self.z * self.k * self.k

    @property
    def density_window(self) -> bool:
        # k^-2 << rho << k^-1 with rho ~ z
        return self.zk2 > 1.0 and self.zk < 1.0

    def to_dict(self) -> Dict[str, object]:
        return {
            "z": self.z,
            "k": self.k,
            "epsilon": self.epsilon,
            "in_regime": self.in_regime,
            "epsilon0": self.epsilon0,
            "k0": self.k0,
            "zk": self.zk,
            "zk2": self.zk2,
            "density_window": self.density_window,
        }


def regime_epsilon(
    z: float,
    k: int,
    *,
    epsilon0: Optional[float] = None,
    k0: Optional[int] = None,
) -> RegimeParams:
    """Regime parameter eps = max{zk, exp(-zk^2)} and the in-regime flag.

    The threshold constants are not known in closed form; they default to
    KMER_EPSILON0 / KMER_K0 from the environment.
    """
    if z < 0:
        raise LatticeError(f"activity must be >= 0, got {z}")
    if k < 2:
        raise LatticeError(f"rod length k must be >= 2, got {k}")
    eps0 = float(epsilon0) if epsilon0 is not None else float(os.getenv("KMER_EPSILON0", "0.5"))
    kk0 = int(k0) if k0 is not None else int(os.getenv("KMER_K0", "7"))
    eps = max(z * k, math.exp(-z * k * k))
    return RegimeParams(
        z=float(z),
        k=int(k),
        epsilon=eps,
        in_regime=bool(eps <= eps0 and k >= kk0),
        epsilon0=eps0,
        k0=kk0,
    )


@dataclass(eq=False)
class RodConfig:
    """Hard-core rod configuration owned by a single chain or caller."""

    box: BoxSpec
    occupancy: np.ndarray = field(init=False, repr=False)
    centers: np.ndarray = field(init=False, repr=False)
    n_horizontal: int = field(init=False, default=0)
    n_vertical: int = field(init=False, default=0)

    def __post_init__(self) -> None:
        pad = self.box.k
        self._pad = pad
        self.occupancy = np.full(
            (self.box.Ly + 2 * pad, self.box.L + 2 * pad), -1, dtype=np.int64
        )
        self.centers = np.zeros((self.box.Ly, self.box.L), dtype=np.int8)
        self._ids: Dict[Rod, int] = {}
        self._rods: List[Rod] = []
        self._pos: Dict[Rod, int] = {}
        self._next_id = 0

    # -- views ---------------------------------------------------------------

    def __len__(self) -> int:
        return len(self._rods)

    def __iter__(self) -> Iterator[Rod]:
        return iter(self._rods)

    def __contains__(self, rod: object) -> bool:
        return rod in self._pos

    @property
    def rods(self) -> List[Rod]:
        return list(self._rods)

    def rod_at(self, index: int) -> Rod:
        """Rod by position in the internal list (used for uniform picks)."""
        return self._rods[index]

    def key(self) -> frozenset:
        return frozenset(self._rods)

    def sorted_rods(self) -> List[Rod]:
        return sorted(self._rods)

    def owner_of(self, site: Site) -> Optional[int]:
        x, y = site
        v = int(self.occupancy[y + self._pad, x + self._pad])
        return None if v < 0 else v

    # -- geometry ------------------------------------------------------------

    def _footprint_view(self, rod: Rod) -> np.ndarray:
        p = self._pad
        start = -self.box.offset
        if rod.orientation is Orientation.HORIZONTAL:
            x0 = rod.x + start + p
            return self.occupancy[rod.y + p, x0 : x0 + self.box.k]
        y0 = rod.y + start + p
        return self.occupancy[y0 : y0 + self.box.k, rod.x + p]

    def _fits_box(self, rod: Rod) -> bool:
        box = self.box
        if not (0 <= rod.x < box.L and 0 <= rod.y < box.Ly):
            return False
        if box.containment is Containment.FULLY_CONTAINED:
            lo = -box.offset
            hi = lo + box.k - 1
            if rod.orientation is Orientation.HORIZONTAL:
                return rod.x + lo >= 0 and rod.x + hi < box.L
            return rod.y + lo >= 0 and rod.y + hi < box.Ly
        return True

    def _respects_bc(self, rod: Rod) -> bool:
        forced = self.box.bc.forced_orientation
        if forced is None or rod.orientation is forced:
            return True
        return self.box.edge_distance(rod.center) >= self.box.peel_width

    def is_compatible(self, rod: Rod, ignore: Optional[Rod] = None) -> bool:
        """Hard core, containment and boundary condition checks for `rod`.

        `ignore` names a rod already in the configuration whose sites count as
        free (the rod being moved or rotated).
        """
        if not self._fits_box(rod) or not self._respects_bc(rod):
            return False
        view = self._footprint_view(rod)
        if ignore is None:
            return bool((view < 0).all())
        rid = self._ids.get(ignore, -2)
        return bool(((view < 0) | (view == rid)).all())

    # -- mutation ------------------------------------------------------------

    def apply(self, rod: Rod, *, check: bool = True) -> "RodConfig":
        if check and not self.is_compatible(rod):
            raise RejectedMoveError(f"rod {rod} is not compatible with the configuration")
        self._insert(rod)
        return self

    def remove(self, rod: Rod) -> "RodConfig":
        if rod not in self._pos:
            raise RejectedMoveError(f"rod {rod} is not in the configuration")
        self._delete(rod)
        return self

    def replace(self, old: Rod, new: Rod, *, check: bool = True) -> "RodConfig":
        """Move `old` to `new` (translation or rotation) as one mutation."""
        if old not in self._pos:
            raise RejectedMoveError(f"rod {old} is not in the configuration")
        if check and not self.is_compatible(new, ignore=old):
            raise RejectedMoveError(f"rod {new} is not compatible with the configuration")
        self._delete(old)
        self._insert(new)
        return self

    def _insert(self, rod: Rod) -> None:
        rid = self._next_id
        self._next_id += 1
        self._footprint_view(rod)[...] = rid
        self.centers[rod.y, rod.x] = int(rod.orientation)
        self._ids[rod] = rid
        self._pos[rod] = len(self._rods)
        self._rods.append(rod)
        if rod.orientation is Orientation.HORIZONTAL:
            self.n_horizontal += 1
        else:
            self.n_vertical += 1

    def _delete(self, rod: Rod) -> None:
        self._footprint_view(rod)[...] = -1
        self.centers[rod.y, rod.x] = 0
        del self._ids[rod]
        # swap-remove keeps uniform picking O(1)
        i = self._pos.pop(rod)
        last = self._rods.pop()
        if last != rod:
            self._rods[i] = last
            self._pos[last] = i
        if rod.orientation is Orientation.HORIZONTAL:
            self.n_horizontal -= 1
        else:
            self.n_vertical -= 1

    # -- derived configurations ---------------------------------------------

    def copy(self) -> "RodConfig":
        other = RodConfig(self.box)
        for rod in self._rods:
            other._insert(rod)
        return other

    def transposed(self) -> "RodConfig":
        """x <-> y reflection: every rod swaps orientation and coordinates."""
        other = RodConfig(self.box.transposed())
        for rod in self.sorted_rods():
            other.apply(rod.transposed())
        return other

    @classmethod
    def from_rods(cls, box: BoxSpec, rods) -> "RodConfig":
        config = cls(box)
        for rod in rods:
            config.apply(rod)
        return config

    # -- invariants ----------------------------------------------------------

    def check_invariants(self) -> None:
        """Recompute every index from the rod list and compare."""
        box = self.box
        expected = np.full_like(self.occupancy, -1)
        centers = np.zeros_like(self.centers)
        n_h = 0
        forced = box.bc.forced_orientation
        for rod in self._rods:
            if not self._fits_box(rod):
                raise InvariantViolation(f"rod {rod} violates containment {box.containment.value}")
            if forced is not None and rod.orientation is not forced and not self._respects_bc(rod):
                raise InvariantViolation(f"rod {rod} violates bc {box.bc.value} in the peel")
            p = self._pad
            for x, y in footprint(rod, box):
                if expected[y + p, x + p] >= 0:
                    raise InvariantViolation(f"site {(x, y)} covered twice")
                expected[y + p, x + p] = self._ids[rod]
            centers[rod.y, rod.x] = int(rod.orientation)
            n_h += rod.orientation is Orientation.HORIZONTAL
        if not np.array_equal(expected, self.occupancy):
            raise InvariantViolation("occupancy index differs from the union of footprints")
        if not np.array_equal(centers, self.centers):
            raise InvariantViolation("center grid differs from the rod list")
        if n_h != self.n_horizontal or len(self._rods) - n_h != self.n_vertical:
            raise InvariantViolation("orientation counters are out of sync")


def apply_rod(config: RodConfig, rod: Rod) -> RodConfig:
    return config.apply(rod)


def remove_rod(config: RodConfig, rod: Rod) -> RodConfig:
    return config.remove(rod)


def is_compatible(config: RodConfig, rod: Rod) -> bool:
    return config.is_compatible(rod)


__all__ = [
    "BoundaryCondition",
    "BoxSpec",
    "Containment",
    "Orientation",
    "RegimeParams",
    "Rod",
    "RodConfig",
    "Site",
    "apply_rod",
    "footprint",
    "in_peel",
    "is_compatible",
    "regime_epsilon",
    "remove_rod",
]
