from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple


# eq=False keeps exceptions hashable; not frozen because contextlib assigns __context__.
@dataclass(eq=False)
class RoughChebError(Exception):
    message: str

    def __str__(self) -> str:  # pragma: no cover
        return self.message


@dataclass(eq=False)
class InvalidArgument(RoughChebError):
    pass


@dataclass(eq=False)
class InvalidState(RoughChebError):
    pass


@dataclass(eq=False)
class OutOfDomain(RoughChebError):
    point: Optional[Tuple[float, ...]] = None


@dataclass(eq=False)
class BuildFailure(RoughChebError):
    multi_index: Optional[Tuple[int, ...]] = None


@dataclass(eq=False)
class CompletionFailure(RoughChebError):
    diagnostics: Dict[str, Any] = field(default_factory=dict)


@dataclass(eq=False)
class SimulationFailure(RoughChebError):
    pass


@dataclass(eq=False)
class NoSolution(RoughChebError):
    band: Tuple[float, float] = (0.0, 0.0)


@dataclass(eq=False)
class SolverFailure(RoughChebError):
    iterations: int = 0


@dataclass(eq=False)
class UndefinedResult(RoughChebError):
    pass
