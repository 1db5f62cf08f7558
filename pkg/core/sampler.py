"""Grand-canonical Metropolis-Hastings chain over rod configurations.

Targets pi(R) proportional to z^|R| on the configurations allowed by the box
(containment and boundary condition). One elementary move is drawn from the
move mix; a sweep is A = L * height moves. Insertion picks an orientation
(1/2) and a center (1/A) and is accepted with min(1, 2Az / (N+1)); deletion
picks one of the N rods and is accepted with min(1, N / (2Az)). Translation
and rotation keep N and are accepted whenever the moved rod is compatible.

Every move consumes exactly five uniforms: one selects the move type and the
other four drive the proposal, so a trajectory is a function of the seed
alone and `transition_probabilities` can reproduce the kernel exactly.
"""

from __future__ import annotations

import enum
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import partial
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from core.errors import ConfigError, InvariantViolation
from core.lattice import BoxSpec, Orientation, Rod, RodConfig
from core.observables import ObservableSeries


logger = logging.getLogger("kmer-nematic")

MOVES = ("insert", "delete", "translate", "rotate")
DIRECTIONS: Tuple[Tuple[int, int], ...] = ((1, 0), (-1, 0), (0, 1), (0, -1))

Measurer = Callable[[RodConfig], Mapping[str, float]]
FrameHook = Callable[[int, RodConfig], None]


@dataclass(frozen=True)
class MoveMix:
    insert: float = 0.4
    delete: float = 0.4
    translate: float = 0.1
    rotate: float = 0.1

    def validate(self) -> None:
        probs = self.as_tuple()
        if any(p < 0 for p in probs):
            raise ConfigError("move_mix", f"probabilities must be nonnegative, got {probs}")
        if not math.isclose(sum(probs), 1.0, abs_tol=1e-9):
            raise ConfigError("move_mix", f"probabilities must sum to 1, got {sum(probs)}")
        if not math.isclose(self.insert, self.delete, abs_tol=1e-12):
            raise ConfigError("move_mix", "insert and delete probabilities must be equal")

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.insert, self.delete, self.translate, self.rotate)

    def cumulative(self) -> Tuple[float, float, float]:
        a = self.insert
        b = a + self.delete
        c = b + self.translate
        return (a, b, c)

    def to_dict(self) -> Dict[str, float]:
        return dict(zip(MOVES, self.as_tuple()))


class InitMode(str, enum.Enum):
    EMPTY = "empty"
    SEEDED_NEMATIC = "seeded_nematic"


@dataclass(frozen=True)
class SamplerParams:
    z: float
    sweeps: int
    seed: int
    thermalization: int = 0
    move_mix: MoveMix = field(default_factory=MoveMix)
    measurement_interval: int = 1
    init: InitMode = InitMode.EMPTY
    chain_index: int = 0
    debug_checks: bool = False

    def validate(self) -> None:
        if not (self.z >= 0 and math.isfinite(self.z)):
            raise ConfigError("z", f"activity must be finite and >= 0, got {self.z}")
        if int(self.sweeps) <= 0:
            raise ConfigError("sweeps", f"must be > 0, got {self.sweeps}")
        if int(self.thermalization) < 0:
            raise ConfigError("thermalization", f"must be >= 0, got {self.thermalization}")
        if int(self.measurement_interval) < 1:
            raise ConfigError("measurement_interval", f"must be >= 1, got {self.measurement_interval}")
        if int(self.measurement_interval) > int(self.sweeps):
            raise ConfigError(
                "measurement_interval",
                f"interval {self.measurement_interval} exceeds {self.sweeps} sweeps, so no frame would be measured",
            )
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed", f"must be a 64-bit unsigned integer, got {self.seed}")
        if int(self.chain_index) < 0:
            raise ConfigError("chains", f"chain index must be >= 0, got {self.chain_index}")
        try:
            InitMode(self.init)
        except ValueError:
            raise ConfigError("init", f"unknown init mode {self.init!r}", [m.value for m in InitMode]) from None
        self.move_mix.validate()

    def with_chain(self, chain_index: int) -> "SamplerParams":
        return replace(self, chain_index=int(chain_index))


def make_rng(seed: int, chain_index: int = 0) -> np.random.Generator:
    """PCG64 stream for one chain; (seed, chain_index) pairs never collide."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(chain_index)])))


@dataclass(eq=False)
class ChainState:
    config: RodConfig
    rng: np.random.Generator
    step: int = 0
    attempts: Dict[str, int] = field(default_factory=lambda: {m: 0 for m in MOVES})
    accepts: Dict[str, int] = field(default_factory=lambda: {m: 0 for m in MOVES})

    def record(self, move: str, accepted: bool) -> bool:
        self.attempts[move] += 1
        if accepted:
            self.accepts[move] += 1
        return accepted

    def acceptance_rates(self) -> Dict[str, Optional[float]]:
        return {
            m: (self.accepts[m] / self.attempts[m]) if self.attempts[m] else None for m in MOVES
        }


class GrandCanonicalKernel:
    """One-move Metropolis kernel for z^|R| on a fixed box."""

    def __init__(self, box: BoxSpec, z: float, mix: Optional[MoveMix] = None):
        self.box = box
        self.z = float(z)
        self.mix = mix or MoveMix()
        self.mix.validate()
        self._cum = self.mix.cumulative()

    # acceptance functions

    def insertion_acceptance(self, n: int) -> float:
        return min(1.0, 2.0 * self.box.area * self.z / (n + 1))

    def deletion_acceptance(self, n: int) -> float:
        if n <= 0:
            return 0.0
        if self.z == 0:
            return 1.0
        return min(1.0, n / (2.0 * self.box.area * self.z))

    # proposals; u holds four uniforms in [0, 1)

    def _pick(self, u: float, n: int) -> int:
        return min(int(u * n), n - 1)

    def propose_insertion(self, state: ChainState, u: Sequence[float]) -> bool:
        config = state.config
        orientation = Orientation.HORIZONTAL if u[0] < 0.5 else Orientation.VERTICAL
        rod = Rod(orientation, self._pick(u[1], self.box.L), self._pick(u[2], self.box.Ly))
        if not config.is_compatible(rod):
            return state.record("insert", False)
        if u[3] >= self.insertion_acceptance(len(config)):
            return state.record("insert", False)
        config.apply(rod, check=False)
        return state.record("insert", True)

    def propose_deletion(self, state: ChainState, u: Sequence[float]) -> bool:
        config = state.config
        n = len(config)
        if n == 0 or u[3] >= self.deletion_acceptance(n):
            return state.record("delete", False)
        config.remove(config.rod_at(self._pick(u[0], n)))
        return state.record("delete", True)

    def propose_translation(self, state: ChainState, u: Sequence[float]) -> bool:
        config = state.config
        n = len(config)
        if n == 0:
            return state.record("translate", False)
        rod = config.rod_at(self._pick(u[0], n))
        moved = rod.shifted(*DIRECTIONS[self._pick(u[1], 4)])
        if not config.is_compatible(moved, ignore=rod):
            return state.record("translate", False)
        config.replace(rod, moved, check=False)
        return state.record("translate", True)

    def propose_rotation(self, state: ChainState, u: Sequence[float]) -> bool:
        config = state.config
        n = len(config)
        if n == 0:
            return state.record("rotate", False)
        rod = config.rod_at(self._pick(u[0], n))
        turned = rod.rotated()
        if not config.is_compatible(turned, ignore=rod):
            return state.record("rotate", False)
        config.replace(rod, turned, check=False)
        return state.record("rotate", True)

    # driving

    def step(self, state: ChainState, u: Optional[Sequence[float]] = None) -> bool:
        if u is None:
            u = state.rng.random(5).tolist()
        a, b, c = self._cum
        state.step += 1
        if u[0] < a:
            return self.propose_insertion(state, u[1:])
        if u[0] < b:
            return self.propose_deletion(state, u[1:])
        if u[0] < c:
            return self.propose_translation(state, u[1:])
        return self.propose_rotation(state, u[1:])

    def sweep(self, state: ChainState, *, check_each_move: bool = False) -> None:
        """A = L * height moves, with uniforms drawn as one block."""
        for u in state.rng.random((self.box.area, 5)).tolist():
            self.step(state, u)
            if check_each_move:
                state.config.check_invariants()

    # exact kernel

    def transition_probabilities(self, config: RodConfig) -> Dict[frozenset, float]:
        """P(config -> R') for every R' reachable in one move; self-loop included."""
        out: Dict[frozenset, float] = {}
        here = config.key()
        n = len(config)
        area = self.box.area

        def add(key: frozenset, p: float) -> None:
            if p > 0:
                out[key] = out.get(key, 0.0) + p

        acc = self.insertion_acceptance(n)
        if self.mix.insert > 0 and acc > 0:
            for y in range(self.box.Ly):
                for x in range(self.box.L):
                    for orientation in (Orientation.HORIZONTAL, Orientation.VERTICAL):
                        rod = Rod(orientation, x, y)
                        if config.is_compatible(rod):
                            add(here | {rod}, self.mix.insert / (2 * area) * acc)

        if n > 0:
            acc = self.deletion_acceptance(n)
            for rod in config:
                add(here - {rod}, self.mix.delete / n * acc)
                for dx, dy in DIRECTIONS:
                    moved = rod.shifted(dx, dy)
                    if config.is_compatible(moved, ignore=rod):
                        add((here - {rod}) | {moved}, self.mix.translate / (4 * n))
                turned = rod.rotated()
                if config.is_compatible(turned, ignore=rod):
                    add((here - {rod}) | {turned}, self.mix.rotate / n)

        moved_away = sum(p for key, p in out.items() if key != here)
        out[here] = max(0.0, 1.0 - moved_away)
        return out


def initial_state(box: BoxSpec, params: SamplerParams, rng: np.random.Generator) -> ChainState:
    """Empty start, or a sparse single-orientation fill of about z * A rods.

    The seeded fill uses the boundary condition's orientation (horizontal for
    open boxes).
    """
    config = RodConfig(box)
    if InitMode(params.init) is InitMode.SEEDED_NEMATIC:
        orientation = box.bc.forced_orientation or Orientation.HORIZONTAL
        attempts = int(round(params.z * box.area))
        xs = rng.integers(0, box.L, size=attempts)
        ys = rng.integers(0, box.Ly, size=attempts)
        for x, y in zip(xs.tolist(), ys.tolist()):
            rod = Rod(orientation, x, y)
            if config.is_compatible(rod):
                config.apply(rod, check=False)
        logger.info(f"Seeded {len(config)} {orientation.symbol} rods from {attempts} attempts")
    return ChainState(config=config, rng=rng)


@dataclass
class ChainResult:
    box: BoxSpec
    params: SamplerParams
    series: Dict[str, ObservableSeries]
    state: ChainState
    elapsed_s: float = 0.0

    @property
    def config(self) -> RodConfig:
        return self.state.config

    def acceptance_rates(self) -> Dict[str, Optional[float]]:
        return self.state.acceptance_rates()


def _record(series: Dict[str, ObservableSeries], sweep: int, values: Mapping[str, float]) -> None:
    for name, value in values.items():
        if name not in series:
            series[name] = ObservableSeries(name)
        series[name].append(sweep, value)


def run_chain(
    box: BoxSpec,
    params: SamplerParams,
    measurers: Sequence[Measurer] = (),
    *,
    on_frame: Optional[FrameHook] = None,
) -> ChainResult:
    """Thermalize, then measure every `measurement_interval` sweeps.

    Sweep indices in the series count from the start of the chain, so the
    first recorded sweep is thermalization + measurement_interval.
    """
    params.validate()
    kernel = GrandCanonicalKernel(box, params.z, params.move_mix)
    state = initial_state(box, params, make_rng(params.seed, params.chain_index))
    series: Dict[str, ObservableSeries] = {}
    started = time.monotonic()

    logger.info(
        f"Chain {params.chain_index}: {box.L}x{box.Ly} k={box.k} bc={box.bc.value} z={params.z}, "
        f"{params.thermalization}+{params.sweeps} sweeps"
    )

    def advance() -> None:
        kernel.sweep(state, check_each_move=params.debug_checks)
        if not params.debug_checks:
            state.config.check_invariants()

    for s in range(1, params.thermalization + 1):
        advance()
    if params.thermalization:
        logger.info(f"Chain {params.chain_index} thermalized: N={len(state.config)}")

    for s in range(1, params.sweeps + 1):
        advance()
        if s % params.measurement_interval:
            continue
        sweep = params.thermalization + s
        for measure in measurers:
            _record(series, sweep, measure(state.config))
        if on_frame is not None:
            on_frame(sweep, state.config)

    elapsed = time.monotonic() - started
    rates = {m: (round(r, 4) if r is not None else None) for m, r in state.acceptance_rates().items()}
    logger.info(f"Chain {params.chain_index} done in {elapsed:.1f}s: N={len(state.config)}, acceptance {rates}")
    return ChainResult(box=box, params=params, series=series, state=state, elapsed_s=elapsed)


def map_chains(job: Callable[[int], object], chain_indices: Sequence[int], workers: int = 1) -> List[object]:
    """Run job(i) for each chain index, in order, optionally on a process pool.

    `job` must be picklable (a module-level function or a functools.partial
    of one) when workers > 1.
    """
    indices = list(chain_indices)
    if workers <= 1 or len(indices) <= 1:
        return [job(i) for i in indices]
    with ProcessPoolExecutor(max_workers=min(workers, len(indices))) as pool:
        return list(pool.map(job, indices))


def _chain_job(box: BoxSpec, params: SamplerParams, measurers: Sequence[Measurer], chain_index: int) -> ChainResult:
    return run_chain(box, params.with_chain(chain_index), measurers)


def run_chains(
    box: BoxSpec,
    params: SamplerParams,
    chains: int,
    measurers: Sequence[Measurer] = (),
    *,
    workers: int = 1,
) -> List[ChainResult]:
    """Independent chains 0..chains-1 sharing `params` but not their streams."""
    if chains < 1:
        raise ConfigError("chains", f"must be >= 1, got {chains}")
    params.validate()
    return map_chains(partial(_chain_job, box, params, tuple(measurers)), range(chains), workers)  # type: ignore[return-value]


def state_histogram(
    kernel: GrandCanonicalKernel,
    state: ChainState,
    moves: int,
    *,
    block: int = 65536,
) -> Dict[frozenset, int]:
    """Visit counts per configuration after each of `moves` elementary moves."""
    counts: Dict[frozenset, int] = {}
    done = 0
    while done < moves:
        n = min(block, moves - done)
        for u in state.rng.random((n, 5)).tolist():
            kernel.step(state, u)
            key = state.config.key()
            counts[key] = counts.get(key, 0) + 1
        done += n
    return counts


def count_peel_violations(config: RodConfig) -> int:
    """Rods of the wrong orientation with centers in the peel (always 0)."""
    forced = config.box.bc.forced_orientation
    if forced is None:
        return 0
    return sum(
        1
        for rod in config
        if rod.orientation is not forced and config.box.edge_distance(rod.center) < config.box.peel_width
    )


def assert_peel_closed(config: RodConfig) -> None:
    bad = count_peel_violations(config)
    if bad:
        raise InvariantViolation(f"{bad} rods violate bc {config.box.bc.value} in the peel")


__all__ = [
    "ChainResult",
    "ChainState",
    "GrandCanonicalKernel",
    "InitMode",
    "MoveMix",
    "SamplerParams",
    "assert_peel_closed",
    "count_peel_violations",
    "initial_state",
    "make_rng",
    "map_chains",
    "run_chain",
    "run_chains",
    "state_histogram",
]
