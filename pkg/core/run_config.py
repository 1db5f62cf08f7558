"""Run configuration and run manifest.

A run config is a flat JSON object. Parsing is strict: unknown keys and
out-of-range values raise ConfigError naming the field, and every default is
filled in so the resolved config written to manifest.json reproduces the run
on its own. A manifest.json is accepted wherever a config is.
"""

from __future__ import annotations

import json
import logging
import os
import platform
import subprocess
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from core import __version__
from core.errors import ConfigError, LatticeError
from core.lattice import BoundaryCondition, BoxSpec, Containment, Orientation, RegimeParams, regime_epsilon
from core.observables import EventSpec, bulk_tile_bounds, default_separations
from core.sampler import InitMode, MoveMix, SamplerParams


logger = logging.getLogger("kmer-nematic")

SCHEMA_VERSION = 1
REQUIRED_KEYS = ("L", "k", "z", "sweeps", "seed")
ALLOWED_KEYS = frozenset(
    {
        "schema_version",
        "L",
        "height",
        "k",
        "containment",
        "bc",
        "z",
        "sweeps",
        "thermalization",
        "seed",
        "move_mix",
        "measurement_interval",
        "init",
        "chains",
        "output_dir",
        "trace",
        "windows",
        "separations",
        "tile_correlations",
        "regime",
        "debug_checks",
    }
)
WINDOW_KEYS = frozenset({"center", "orientation", "min_rods", "include_vacuous"})
REGIME_KEYS = frozenset({"epsilon0", "k0"})
DEFAULT_TILE_CORRELATIONS = (1, 2, 4, 8)


def _utc_now_iso() -> str:
    return datetime.now(timezone.utc).isoformat()


# -- typed field readers -----------------------------------------------------


def _int(data: Mapping[str, Any], key: str, default: Any = None, *, minimum: Optional[int] = None) -> int:
    value = data.get(key, default)
    if isinstance(value, bool) or not isinstance(value, int):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        else:
            raise ConfigError(key, f"expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(key, f"must be >= {minimum}, got {value}")
    return int(value)


def _float(data: Mapping[str, Any], key: str, default: Any = None, *, minimum: Optional[float] = None) -> float:
    value = data.get(key, default)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(key, f"expected a number, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(key, f"must be >= {minimum}, got {value}")
    return float(value)


def _bool(data: Mapping[str, Any], key: str, default: bool) -> bool:
    value = data.get(key, default)
    if not isinstance(value, bool):
        raise ConfigError(key, f"expected true or false, got {value!r}")
    return value


def _choice(data: Mapping[str, Any], key: str, enum_cls, default):
    value = data.get(key, default.value)
    try:
        return enum_cls(value)
    except ValueError:
        raise ConfigError(key, f"unknown value {value!r}", [m.value for m in enum_cls]) from None


def _reject_unknown(data: Mapping[str, Any], allowed, where: str) -> None:
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigError(where, f"unknown keys {unknown}", sorted(allowed))


# -- config ------------------------------------------------------------------


@dataclass(frozen=True)
class WindowSpec:
    center: Tuple[int, int]
    orientation: Orientation
    min_rods: int = 1
    include_vacuous: bool = False

    def event(self, box: BoxSpec) -> EventSpec:
        return EventSpec(
            center=self.center,
            side=max(1, box.tile_side),
            target=self.orientation,
            min_rods=self.min_rods,
            include_vacuous=self.include_vacuous,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "center": list(self.center),
            "orientation": self.orientation.name.lower(),
            "min_rods": self.min_rods,
            "include_vacuous": self.include_vacuous,
        }

    @classmethod
    def default_for(cls, box: BoxSpec) -> "WindowSpec":
        """Box-center window looking for the orientation the bc disfavors."""
        forced = box.bc.forced_orientation or Orientation.HORIZONTAL
        return cls(center=(box.L // 2, box.Ly // 2), orientation=forced.flipped())


@dataclass(frozen=True)
class RunConfig:
    box: BoxSpec
    sampler: SamplerParams
    chains: int = 1
    output_dir: str = "runs"
    trace: bool = False
    windows: Tuple[WindowSpec, ...] = ()
    separations: Tuple[Tuple[int, int], ...] = ()
    tile_correlations: Tuple[int, ...] = ()
    epsilon0: float = 0.5
    k0: int = 7

    def events(self) -> List[EventSpec]:
        return [w.event(self.box) for w in self.windows]

    def regime(self) -> RegimeParams:
        return regime_epsilon(self.sampler.z, self.box.k, epsilon0=self.epsilon0, k0=self.k0)

    def validate(self) -> None:
        self.sampler.validate()
        if self.chains < 1:
            raise ConfigError("chains", f"must be >= 1, got {self.chains}")
        for event in self.events():
            event.validate(self.box)
        x0, x1, y0, y1 = self.box.bulk_bounds()
        for dx, dy in self.separations:
            if (dx, dy) == (0, 0):
                raise ConfigError("separations", "separation (0, 0) is not a pair")
            if abs(dx) >= x1 - x0 or abs(dy) >= y1 - y0:
                raise ConfigError(
                    "separations",
                    f"separation {(dx, dy)} does not fit the {x1 - x0}x{y1 - y0} bulk region",
                )
        tx0, tx1, ty0, ty1 = bulk_tile_bounds(self.box)
        for d in self.tile_correlations:
            if d < 1:
                raise ConfigError("tile_correlations", f"tile distance must be >= 1, got {d}")
            if d >= max(tx1 - tx0, ty1 - ty0):
                raise ConfigError(
                    "tile_correlations",
                    f"tile distance {d} does not fit the {tx1 - tx0}x{ty1 - ty0} bulk tile field",
                )

    def with_overrides(
        self,
        *,
        seed: Optional[int] = None,
        chains: Optional[int] = None,
        output_dir: Optional[str] = None,
        trace: Optional[bool] = None,
    ) -> "RunConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, sampler=replace(cfg.sampler, seed=int(seed)))
        if chains is not None:
            cfg = replace(cfg, chains=int(chains))
        if output_dir is not None:
            cfg = replace(cfg, output_dir=str(output_dir))
        if trace is not None:
            cfg = replace(cfg, trace=bool(trace))
        cfg.validate()
        return cfg

    def to_dict(self) -> Dict[str, Any]:
        s = self.sampler
        return {
            "schema_version": SCHEMA_VERSION,
            "L": self.box.L,
            "height": self.box.Ly,
            "k": self.box.k,
            "containment": self.box.containment.value,
            "bc": self.box.bc.value,
            "z": s.z,
            "sweeps": s.sweeps,
            "thermalization": s.thermalization,
            "seed": s.seed,
            "move_mix": s.move_mix.to_dict(),
            "measurement_interval": s.measurement_interval,
            "init": InitMode(s.init).value,
            "debug_checks": s.debug_checks,
            "chains": self.chains,
            "output_dir": self.output_dir,
            "trace": self.trace,
            "windows": [w.to_dict() for w in self.windows],
            "separations": [list(p) for p in self.separations],
            "tile_correlations": list(self.tile_correlations),
            "regime": {"epsilon0": self.epsilon0, "k0": self.k0},
        }


def serialize(config: RunConfig) -> str:
    return json.dumps(config.to_dict(), indent=2, sort_keys=True)


def _parse_windows(raw: Any, box: BoxSpec) -> Tuple[WindowSpec, ...]:
    if raw is None:
        if not box.has_bulk:
            logger.warning("No default event window: the box has no bulk outside the peel")
            return ()
        return (WindowSpec.default_for(box),)
    if not isinstance(raw, list):
        raise ConfigError("windows", "expected a list of window objects")
    out: List[WindowSpec] = []
    for item in raw:
        if not isinstance(item, dict):
            raise ConfigError("windows", f"expected an object, got {item!r}")
        _reject_unknown(item, WINDOW_KEYS, "windows")
        center = item.get("center")
        if (
            not isinstance(center, (list, tuple))
            or len(center) != 2
            or not all(isinstance(c, int) and not isinstance(c, bool) for c in center)
        ):
            raise ConfigError("windows.center", f"expected [x, y] integers, got {center!r}")
        try:
            orientation = Orientation.parse(item.get("orientation", "vertical"))
        except LatticeError:
            raise ConfigError(
                "windows.orientation",
                f"unknown orientation {item.get('orientation')!r}",
                ["horizontal", "vertical"],
            ) from None
        out.append(
            WindowSpec(
                center=(int(center[0]), int(center[1])),
                orientation=orientation,
                min_rods=_int(item, "min_rods", 1, minimum=1),
                include_vacuous=_bool(item, "include_vacuous", False),
            )
        )
    return tuple(out)


def _parse_separations(raw: Any, box: BoxSpec) -> Tuple[Tuple[int, int], ...]:
    if raw is None:
        x0, x1, y0, y1 = box.bulk_bounds()
        return tuple(
            (dx, dy)
            for dx, dy in default_separations(box.k)
            if dx < x1 - x0 and dy < y1 - y0
        )
    if not isinstance(raw, list):
        raise ConfigError("separations", "expected a list of [dx, dy] pairs")
    out = []
    for item in raw:
        if (
            not isinstance(item, (list, tuple))
            or len(item) != 2
            or not all(isinstance(c, int) and not isinstance(c, bool) for c in item)
        ):
            raise ConfigError("separations", f"expected [dx, dy] integers, got {item!r}")
        out.append((int(item[0]), int(item[1])))
    return tuple(out)


def _parse_tile_correlations(raw: Any, box: BoxSpec) -> Tuple[int, ...]:
    if raw is None:
        tx0, tx1, ty0, ty1 = bulk_tile_bounds(box)
        tiles = max(tx1 - tx0, ty1 - ty0)
        return tuple(d for d in DEFAULT_TILE_CORRELATIONS if d < tiles)
    if not isinstance(raw, list) or not all(isinstance(d, int) and not isinstance(d, bool) for d in raw):
        raise ConfigError("tile_correlations", "expected a list of integer tile distances")
    return tuple(int(d) for d in raw)


def config_from_dict(data: Mapping[str, Any]) -> RunConfig:
    if not isinstance(data, Mapping):
        raise ConfigError("config", "expected a JSON object")
    _reject_unknown(data, ALLOWED_KEYS, "config")
    version = data.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"unsupported schema version {version!r}", [SCHEMA_VERSION])
    missing = [k for k in REQUIRED_KEYS if k not in data]
    if missing:
        raise ConfigError(missing[0], "required field is missing")

    L = _int(data, "L", minimum=1)
    height = _int(data, "height", L, minimum=1)
    k = _int(data, "k", minimum=2)
    containment = _choice(data, "containment", Containment, Containment.CENTER_IN_BOX)
    bc = _choice(data, "bc", BoundaryCondition, BoundaryCondition.OPEN)
    box = BoxSpec(L=L, k=k, containment=containment, bc=bc, height=height)
    if not box.has_bulk:
        logger.warning(
            f"Box {box.L}x{box.Ly} with k={k} and bc={bc.value} has no bulk outside the "
            f"{box.peel_width}-thick peel; bulk observables will be empty"
        )

    raw_mix = data.get("move_mix", {})
    if not isinstance(raw_mix, dict):
        raise ConfigError("move_mix", "expected an object")
    _reject_unknown(raw_mix, MoveMix().to_dict().keys(), "move_mix")
    defaults = MoveMix()
    mix = MoveMix(
        insert=_float(raw_mix, "insert", defaults.insert),
        delete=_float(raw_mix, "delete", defaults.delete),
        translate=_float(raw_mix, "translate", defaults.translate),
        rotate=_float(raw_mix, "rotate", defaults.rotate),
    )

    sweeps = _int(data, "sweeps", minimum=1)
    sampler = SamplerParams(
        z=_float(data, "z", minimum=0.0),
        sweeps=sweeps,
        seed=_int(data, "seed", minimum=0),
        thermalization=_int(data, "thermalization", sweeps // 10, minimum=0),
        move_mix=mix,
        measurement_interval=_int(data, "measurement_interval", 1, minimum=1),
        init=_choice(data, "init", InitMode, InitMode.EMPTY),
        debug_checks=_bool(data, "debug_checks", False),
    )

    raw_regime = data.get("regime", {})
    if not isinstance(raw_regime, dict):
        raise ConfigError("regime", "expected an object")
    _reject_unknown(raw_regime, REGIME_KEYS, "regime")
    epsilon0 = raw_regime.get("epsilon0")
    k0 = raw_regime.get("k0")

    output_dir = data.get("output_dir")
    if output_dir is not None and not isinstance(output_dir, str):
        raise ConfigError("output_dir", f"expected a path string, got {output_dir!r}")

    config = RunConfig(
        box=box,
        sampler=sampler,
        chains=_int(data, "chains", 1, minimum=1),
        output_dir=output_dir or os.getenv("KMER_OUTPUT_DIR", "runs"),
        trace=_bool(data, "trace", False),
        windows=_parse_windows(data.get("windows"), box),
        separations=_parse_separations(data.get("separations"), box),
        tile_correlations=_parse_tile_correlations(data.get("tile_correlations"), box),
        epsilon0=(
            _float(raw_regime, "epsilon0", minimum=0.0)
            if epsilon0 is not None
            else float(os.getenv("KMER_EPSILON0", "0.5"))
        ),
        k0=_int(raw_regime, "k0", minimum=2) if k0 is not None else int(os.getenv("KMER_K0", "7")),
    )
    config.validate()
    return config


def parse_config(
    source: Union[str, Path, Mapping[str, Any]],
    *,
    overrides: Optional[Mapping[str, Any]] = None,
) -> RunConfig:
    """Load a run config (or a manifest) from a path or a mapping.

    `overrides` are merged into the raw object before validation, so a CLI
    flag can supply a field the file leaves out.
    """
    if isinstance(source, Mapping):
        data: Any = dict(source)
    else:
        path = Path(source)
        if not path.exists():
            raise ConfigError("config", f"file not found: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError("config", f"{path} is not valid JSON: {e}") from None

    if isinstance(data, dict) and data.get("kind") == "manifest":
        data = data.get("config")
        if not isinstance(data, dict):
            raise ConfigError("config", "manifest carries no resolved config")
    if not isinstance(data, dict):
        raise ConfigError("config", "expected a JSON object")
    if overrides:
        data = {**data, **{k: v for k, v in overrides.items() if v is not None}}
    return config_from_dict(data)


# -- manifest ----------------------------------------------------------------


def _git_commit() -> Optional[str]:
    try:
        out = subprocess.run(
            ["git", "rev-parse", "HEAD"],
            cwd=str(Path(__file__).resolve().parents[1]),
            capture_output=True,
            text=True,
            timeout=5,
        )
    except (OSError, subprocess.SubprocessError):
        return None
    if out.returncode != 0:
        return None
    return out.stdout.strip() or None


def code_version() -> Dict[str, Optional[str]]:
    return {
        "package": __version__,
        "git_commit": _git_commit(),
        "python": platform.python_version(),
        "numpy": np.__version__,
    }


@dataclass
class RunManifest:
    config: Dict[str, Any]
    seeds: List[List[int]]
    code: Dict[str, Optional[str]] = field(default_factory=code_version)
    started_at: str = field(default_factory=_utc_now_iso)
    finished_at: Optional[str] = None
    status: str = "running"
    acceptance_rates: Dict[str, Dict[str, Optional[float]]] = field(default_factory=dict)
    regime: Dict[str, Any] = field(default_factory=dict)
    files: List[str] = field(default_factory=list)

    @classmethod
    def for_config(cls, config: RunConfig) -> "RunManifest":
        return cls(
            config=config.to_dict(),
            seeds=[[config.sampler.seed, i] for i in range(config.chains)],
            regime=config.regime().to_dict(),
        )

    def finish(self, status: str = "complete") -> None:
        self.status = status
        self.finished_at = _utc_now_iso()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": "manifest",
            "schema_version": SCHEMA_VERSION,
            "config": self.config,
            "seeds": self.seeds,
            "code_version": self.code,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "status": self.status,
            "acceptance_rates": self.acceptance_rates,
            "regime": self.regime,
            "files": sorted(self.files),
        }

    def write(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True), encoding="utf-8")


def load_manifest(path: Union[str, Path]) -> Dict[str, Any]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, dict) or data.get("kind") != "manifest":
        raise ConfigError("manifest", f"{path} is not a run manifest")
    return data


__all__ = [
    "RunConfig",
    "RunManifest",
    "SCHEMA_VERSION",
    "WindowSpec",
    "code_version",
    "config_from_dict",
    "load_manifest",
    "parse_config",
    "serialize",
]
