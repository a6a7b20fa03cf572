"""Core value types shared by the simulator, the model, and the repair loop.

Everything in this module is an immutable value.  Vectors are tuples of
Python floats rather than numpy arrays: they hash, they compare exactly,
and they round-trip through JSON without precision loss, which the replay
machinery depends on.  numpy only appears where linear algebra actually
happens (see :mod:`causalloop.model`).

The one piece of arithmetic that lives here is the perturbation scale
factor ``exp(-delta)``: a multiplicative dampening (delta > 0) or
amplification (delta < 0) applied to every modeled effect.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

# Hard cap on |delta|; exp(10) ~ 22026 is already far beyond anything a
# desk-scale scenario should produce.
DELTA_MAX = 10.0


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------


class CausalLoopError(Exception):
    """Base class for every error this package raises on purpose."""


class DomainError(CausalLoopError):
    """A numeric argument is outside its documented domain."""


class DimensionError(CausalLoopError):
    """Two vectors that must agree in length do not."""


class ConfigError(CausalLoopError):
    """A scenario or component configuration is invalid."""


class NotEnoughDataError(CausalLoopError):
    """An estimation routine was given fewer observations than it needs."""


class DegenerateDataError(CausalLoopError):
    """The data is numerically unusable (rank-deficient or constant)."""


class NotIdentifiableError(CausalLoopError):
    """The requested quantity cannot be recovered from the given effects."""


class ReplayError(CausalLoopError):
    """A recorded trace does not reproduce or cannot be interpreted."""


class InputError(CausalLoopError):
    """Malformed external input (trace files, CLI payloads)."""


# ---------------------------------------------------------------------------
# Value types
# ---------------------------------------------------------------------------


def _as_float_tuple(values, label: str) -> tuple[float, ...]:
    out = tuple(float(v) for v in values)
    for v in out:
        if not math.isfinite(v):
            raise DomainError(f"{label} contains non-finite value {v!r}")
    return out


@dataclass(frozen=True)
class StateVec:
    """State of the system at one tick: a finite float vector."""

    values: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", _as_float_tuple(self.values, "state"))

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, i: int) -> float:
        return self.values[i]


@dataclass(frozen=True)
class ActionVec:
    """Action applied at one tick: a finite float vector."""

    values: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", _as_float_tuple(self.values, "action"))

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, i: int) -> float:
        return self.values[i]


@dataclass(frozen=True)
class TimeIndex:
    """Discrete tick counter, starting at zero."""

    tick: int

    def __post_init__(self) -> None:
        if int(self.tick) != self.tick or self.tick < 0:
            raise DomainError(f"tick must be a non-negative integer, got {self.tick!r}")
        object.__setattr__(self, "tick", int(self.tick))


@dataclass(frozen=True)
class Perturbation:
    """Scalar perturbation delta; the effect multiplier is exp(-delta)."""

    delta: float

    def __post_init__(self) -> None:
        d = float(self.delta)
        if not math.isfinite(d):
            raise DomainError(f"delta must be finite, got {d!r}")
        if abs(d) > DELTA_MAX:
            raise DomainError(f"|delta| must be <= {DELTA_MAX}, got {d!r}")
        object.__setattr__(self, "delta", d)


@dataclass(frozen=True)
class CausalTuple:
    """One evaluation point of the causal function: (state, action, time, delta).

    ``delta`` is whatever the caller believes the perturbation to be -- for
    the agent that is its own running estimate, never the world's hidden
    truth.
    """

    state: StateVec
    action: ActionVec
    time: TimeIndex
    delta: Perturbation = field(default_factory=lambda: Perturbation(0.0))


@dataclass(frozen=True)
class Transition:
    """An evaluation point plus what was actually observed ``horizon`` ticks later."""

    tuple: CausalTuple
    horizon: int
    observed: StateVec

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise DomainError(f"horizon must be >= 1, got {self.horizon}")
        if len(self.observed) != len(self.tuple.state):
            raise DimensionError(
                f"observed has {len(self.observed)} dims, state has {len(self.tuple.state)}"
            )


@dataclass(frozen=True)
class PredictionError:
    """Mean squared error between a predicted and an observed state."""

    epsilon: float
    per_dim: tuple[float, ...]


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def scale_factor(delta: Perturbation | float) -> float:
    """Multiplier exp(-delta) applied to every causal effect.

    delta = 0 leaves effects untouched; positive delta dampens; negative
    delta amplifies.  Raises :class:`DomainError` outside [-DELTA_MAX, DELTA_MAX].
    """
    d = delta.delta if isinstance(delta, Perturbation) else float(delta)
    if not math.isfinite(d) or abs(d) > DELTA_MAX:
        raise DomainError(f"delta out of range: {d!r}")
    return math.exp(-d)


def loss(predicted: StateVec, observed: StateVec) -> PredictionError:
    """Per-dimension squared error and its mean."""
    if len(predicted) != len(observed):
        raise DimensionError(
            f"predicted has {len(predicted)} dims, observed has {len(observed)}"
        )
    per_dim = tuple((p - o) ** 2 for p, o in zip(predicted.values, observed.values))
    return PredictionError(epsilon=sum(per_dim) / len(per_dim), per_dim=per_dim)
