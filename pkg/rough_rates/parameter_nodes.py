import math
from collections.abc import Callable

from rough_rates.parameter_net import ParameterInput


class BoundedFloatInput(ParameterInput):
    """A real input restricted to an interval; out-of-range values raise ``ValueError``."""

    def __init__(
        self,
        name: str,
        lower: float = -math.inf,
        upper: float = math.inf,
        lower_open: bool = False,
        upper_open: bool = False,
    ) -> None:
        super().__init__(name)
        self.lower = lower
        self.upper = upper
        self._lower_open = lower_open
        self._upper_open = upper_open

    def _interval(self) -> str:
        left = "(" if self._lower_open else "["
        right = ")" if self._upper_open else "]"
        return f"{left}{self.lower}, {self.upper}{right}"

    def validate(self, value: float) -> float:
        number = float(value)
        too_low = number <= self.lower if self._lower_open else number < self.lower
        too_high = number >= self.upper if self._upper_open else number > self.upper
        if math.isnan(number) or too_low or too_high:
            raise ValueError(f"Parameter {self.name}={number} outside {self._interval()}")
        return number


class LevelCountInput(ParameterInput):
    def validate(self, value: int) -> int:
        if int(value) != value or value < 1:
            raise ValueError(f"Parameter {self.name} must be a positive integer, got {value}")
        return int(value)


def bumped(factor: float, scale: float = 1.0) -> Callable[[float, float], float]:
    """The formula base, η ↦ scale · (1 + factor · η) · base."""

    def formula(base: float, eta: float) -> float:
        return scale * (1.0 + factor * eta) * base

    return formula


def fractional_part(p: float) -> float:
    return p - math.floor(p)


def theta_exponents(p: float, gamma_second: float, levels: int) -> tuple[float, ...]:
    """θ_n = n (1/p − 1/(2γ'')) − (1 − {p}) / p for n = 1..N."""
    return tuple(
        n * (1.0 / p - 1.0 / (2 * gamma_second)) - (1.0 - fractional_part(p)) / p
        for n in range(1, levels + 1)
    )


def select_case(p: float, gamma_prime: float, tolerance: float = 1e-12) -> int:
    """
    Which regime of the higher-level estimates applies: 1 if 1/(2γ') + 2/p > 1, 2 on the
    critical line and 3 below it.
    """
    excess = 1.0 / (2 * gamma_prime) + 2.0 / p - 1.0
    if abs(excess) < tolerance:
        return 2
    return 1 if excess > 0 else 3
