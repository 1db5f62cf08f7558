"""Exception types shared by the kmer-nematic modules.

Everything raised on purpose derives from KmerError so the CLI can map it to
an exit code: ConfigError means the request itself was invalid (exit 1),
anything else is a runtime failure (exit 2).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence


class KmerError(RuntimeError):
    """Base class for all deliberate kmer-nematic failures."""


class LatticeError(KmerError, ValueError):
    """Invalid geometry: bad box parameters or a query outside the box."""


class RejectedMoveError(KmerError):
    """A rod could not be applied or removed; the configuration is untouched."""


class InvariantViolation(KmerError, AssertionError):
    """A configuration invariant is broken. Always a bug upstream."""


class InsufficientDataError(KmerError, ValueError):
    """Not enough samples for the requested estimate or fit."""


@dataclass
class StateSpaceTooLarge(KmerError):
    """Raised by the oracle when a box is too large to enumerate."""

    candidates: int
    limit: int

    @property
    def estimate(self) -> int:
        # Upper bound on subsets of candidate positions before pruning.
        return 2 ** self.candidates

    def __str__(self) -> str:
        return (
            f"refusing to enumerate: {self.candidates} candidate rod positions "
            f"(limit {self.limit}, up to {self.estimate} subsets)"
        )


@dataclass
class ConfigError(KmerError, ValueError):
    """Raised when a run configuration or CLI request fails validation."""

    field: str
    message: str
    allowed: Optional[Sequence[Any]] = None

    def __str__(self) -> str:
        text = f"{self.field}: {self.message}"
        if self.allowed:
            text += f" (allowed: {', '.join(str(a) for a in self.allowed)})"
        return text

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {"field": self.field, "error": self.message}
        if self.allowed:
            data["allowed"] = list(self.allowed)
        return data


__all__ = [
    "ConfigError",
    "InsufficientDataError",
    "InvariantViolation",
    "KmerError",
    "LatticeError",
    "RejectedMoveError",
    "StateSpaceTooLarge",
]
