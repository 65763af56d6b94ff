"""Model parameters, regimes and the residual operator.

The equation is ``x^2 u'' = a x u' + b u - c (u' - 1)^2`` on x > 0 with
``u(0) = 0``.  ``residual`` evaluates

    E u = -x^2 u'' + a x u' + b u - c (u' - 1)^2

which vanishes on solutions, is negative on subsolutions and positive on
supersolutions.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import cached_property


class LiqodeError(Exception):
    """Base class for library errors."""


class DomainError(LiqodeError, ValueError):
    pass


class RegimeError(LiqodeError, ValueError):
    pass


class ArgumentError(LiqodeError, ValueError):
    pass


class PrecisionError(LiqodeError):
    def __init__(self, message, suggested=None):
        super().__init__(message)
        self.suggested = suggested


class BracketError(LiqodeError):
    def __init__(self, message, samples=None):
        super().__init__(message)
        self.samples = samples or []


class BlowUpError(LiqodeError):
    def __init__(self, message, x_last):
        super().__init__(message)
        self.x_last = x_last


class NumericError(LiqodeError):
    pass


class ConvergenceError(LiqodeError):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history or []


class Regime(enum.Enum):
    NO_SOLUTION = "no_solution"
    LINEAR_EXACT = "linear_exact"
    RICH = "rich"


@dataclass(frozen=True)
class ModelParams:
    a: float
    b: float
    c: float

    def __post_init__(self):
        for name in ("a", "b", "c"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ArgumentError(f"{name} must be finite, got {v!r}")
        if not self.c > 0:
            raise ArgumentError(f"c must be strictly positive, got {self.c!r}")

    @property
    def regime(self) -> Regime:
        # exact comparison on purpose: the trichotomy has no tolerance band
        s = self.a + self.b
        if s > 0:
            return Regime.RICH
        if s == 0:
            return Regime.LINEAR_EXACT
        return Regime.NO_SOLUTION

    @cached_property
    def k(self) -> float:
        """sqrt((a+b)/c); undefined when a+b < 0."""
        if self.regime is Regime.NO_SOLUTION:
            raise RegimeError(f"k is undefined for a+b={self.a + self.b!r} < 0")
        return math.sqrt((self.a + self.b) / self.c)

    def require(self, *regimes: Regime) -> None:
        if self.regime not in regimes:
            names = ", ".join(r.value for r in regimes)
            raise RegimeError(
                f"parameters (a={self.a}, b={self.b}, c={self.c}) are in regime "
                f"{self.regime.value}; expected {names}"
            )

    def as_dict(self) -> dict:
        return {"a": self.a, "b": self.b, "c": self.c}


@dataclass(frozen=True)
class StatePoint:
    x: float
    u: float
    du: float
    ddu: float = 0.0

    def __post_init__(self):
        if not self.x > 0:
            raise DomainError(f"x must be > 0 (the equation is singular at 0), got {self.x!r}")


def classify(params: ModelParams) -> Regime:
    return params.regime


def residual(params: ModelParams, p: StatePoint) -> float:
    if not p.x > 0:
        raise DomainError(f"x must be > 0, got {p.x!r}")
    x, u, du, ddu = p.x, p.u, p.du, p.ddu
    return -x * x * ddu + params.a * x * du + params.b * u - params.c * (du - 1.0) ** 2


def residual_terms(params: ModelParams, p: StatePoint) -> tuple[float, float, float, float]:
    """The four terms of E u, in order (-x^2 u'', a x u', b u, -c (u'-1)^2)."""
    x = p.x
    return (-(x * x) * p.ddu, params.a * x * p.du, params.b * p.u, -params.c * (p.du - 1.0) ** 2)


def ode_ddu(params: ModelParams, x, u, du):
    """u'' forced by the equation.  Works elementwise on arrays."""
    return (params.a * x * du + params.b * u - params.c * (du - 1.0) ** 2) / (x * x)


def ode_dddu(params: ModelParams, x, du, ddu):
    """u''' from differentiating the equation once (no finite differences)."""
    a, b, c = params.a, params.b, params.c
    return ((a - 2.0) * x * ddu + (a + b) * du - 2.0 * c * (du - 1.0) * ddu) / (x * x)
