"""Shared domain types: model kinds, architectures, scenarios and phases.

Everything here is an immutable value type.  Widths and loads are ratios
to the input dimension (``gamma_l = n_l / d``, ``alpha = p / d``).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

# Points this close (relative) to a pole are flagged instead of evaluated.
BOUNDARY_RTOL = 1e-9


class DomainError(ValueError):
    """Raised when an operation is called outside its domain of validity."""


class ModelKind(enum.Enum):
    LR = "lr"
    RF = "rf"
    NN = "nn"

    @classmethod
    def parse(cls, value: "str | ModelKind") -> "ModelKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise DomainError(f"unknown model kind {value!r}") from None


@dataclass(frozen=True)
class Architecture:
    """Hidden-layer width ratios, in layer order."""

    widths: tuple[float, ...]

    def __init__(self, widths: Sequence[float]):
        widths = tuple(float(g) for g in widths)
        if not widths:
            raise DomainError("an architecture needs at least one hidden layer")
        for g in widths:
            if not (g > 0 and math.isfinite(g)):
                raise DomainError(f"width ratios must be positive and finite, got {g}")
        object.__setattr__(self, "widths", widths)

    @classmethod
    def equal(cls, gamma: float, depth: int) -> "Architecture":
        if depth < 1:
            raise DomainError("depth must be >= 1")
        return cls([gamma] * depth)

    @property
    def depth(self) -> int:
        return len(self.widths)

    def gamma_min(self) -> float:
        return min(self.widths)

    def argmin_layers(self) -> frozenset[int]:
        """1-based indices of the layers attaining the minimum width."""
        g = self.gamma_min()
        return frozenset(i + 1 for i, w in enumerate(self.widths) if w == g)

    def scaled(self, k: float) -> "Architecture":
        return Architecture([g * k for g in self.widths])


@dataclass(frozen=True)
class Scenario:
    alpha: float
    sigma2: float
    eta: float = 0.0

    def __post_init__(self):
        for name in ("alpha", "sigma2", "eta"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise DomainError(f"{name} must be finite, got {v}")
        if not self.alpha > 0:
            raise DomainError(f"alpha must be > 0, got {self.alpha}")
        if not self.sigma2 > 0:
            raise DomainError(f"sigma2 must be > 0, got {self.sigma2}")
        if self.eta < 0:
            raise DomainError(f"eta must be >= 0, got {self.eta}")

    @property
    def eta2(self) -> float:
        return self.eta * self.eta

    def noise_scale(self) -> float:
        """The common factor ``1 - alpha + eta^2``."""
        return 1.0 - self.alpha + self.eta2


class PhaseKind(enum.Enum):
    UNDER_SAMPLED = "UnderSampled"
    BOTTLENECKED = "Bottlenecked"
    OVER_SAMPLED = "OverSampled"
    BOUNDARY = "Boundary"


@dataclass(frozen=True)
class Phase:
    kind: PhaseKind
    # RF bottlenecked phase: 1-based layers attaining gamma_min.
    layers: frozenset[int] = frozenset()
    # For BOUNDARY: the pole the point sits on.
    pole: Optional[float] = None

    def __str__(self) -> str:
        return self.kind.value

    @property
    def is_boundary(self) -> bool:
        return self.kind is PhaseKind.BOUNDARY


@dataclass(frozen=True)
class TheoryResult:
    epsilon: float
    phase: Phase
    z: Optional[float] = None
    divergent: bool = False
    residual: Optional[float] = None
    flags: tuple[str, ...] = field(default_factory=tuple)

    @property
    def boundary(self) -> bool:
        return self.phase.is_boundary


def near(x: float, pole: float, rtol: float = BOUNDARY_RTOL) -> bool:
    return abs(x - pole) <= rtol * max(1.0, abs(pole))


def sigma_tilde2(s: Scenario) -> float:
    """Rescaled prior variance ``sigma^2 (1-alpha) / (1-alpha+eta^2)``."""
    if s.alpha >= 1:
        raise DomainError(f"rescaled prior variance needs alpha < 1, got {s.alpha}")
    return s.sigma2 / (1.0 + s.eta2 / (1.0 - s.alpha))


def classify_phase(
    kind: "ModelKind | str",
    s: Scenario,
    arch: Optional[Architecture] = None,
    rtol: float = BOUNDARY_RTOL,
) -> Phase:
    kind = ModelKind.parse(kind)
    a = s.alpha
    if kind is ModelKind.RF:
        if arch is None:
            raise DomainError("RF phase classification needs an architecture")
        gmin = arch.gamma_min()
        if near(gmin, 1.0, rtol):
            # gamma_min == 1: both poles coincide at alpha = 1.
            if near(a, 1.0, rtol):
                return Phase(PhaseKind.BOUNDARY, pole=1.0)
            return Phase(PhaseKind.UNDER_SAMPLED if a < 1 else PhaseKind.OVER_SAMPLED)
        if gmin < 1:
            if near(a, gmin, rtol):
                return Phase(PhaseKind.BOUNDARY, pole=gmin)
            if a < gmin:
                return Phase(PhaseKind.UNDER_SAMPLED)
            return Phase(PhaseKind.BOTTLENECKED, layers=arch.argmin_layers())
        if near(a, 1.0, rtol):
            return Phase(PhaseKind.BOUNDARY, pole=1.0)
        return Phase(PhaseKind.UNDER_SAMPLED if a < 1 else PhaseKind.OVER_SAMPLED)
    if kind is ModelKind.NN and arch is None:
        raise DomainError("NN phase classification needs an architecture")
    if near(a, 1.0, rtol):
        return Phase(PhaseKind.BOUNDARY, pole=1.0)
    return Phase(PhaseKind.UNDER_SAMPLED if a < 1 else PhaseKind.OVER_SAMPLED)


def divergent_result(phase: Phase, flags: tuple[str, ...] = ()) -> TheoryResult:
    return TheoryResult(
        epsilon=math.inf, phase=phase, divergent=True, flags=("boundary",) + flags
    )
