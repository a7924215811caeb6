"""
Distance bounds between Gaussian rough paths, level by level.

All multiplicative constants of the estimates are set to 1; the returned numbers are meant for
comparing scaling exponents, never absolute sizes.
"""

import logging
import math
from collections.abc import Set
from dataclasses import dataclass
from typing import Any

import numpy as np
import numpy.typing as npt
from scipy.special import zeta

from rough_rates.gaussian_processes import (
    JointGaussianPair,
    PairCovarianceGrids,
    pair_covariance_grids,
)
from rough_rates.parameter_net import (
    DerivedParameter,
    ParameterNetBuilder,
    ParameterNode,
    ParameterState,
)
from rough_rates.parameter_nodes import (
    BoundedFloatInput,
    LevelCountInput,
    bumped,
    fractional_part,
    select_case,
    theta_exponents,
)
from rough_rates.tensor_algebra import FloatArray, neoclassical_constant
from rough_rates.variation_metrics import Control, CovarianceGrid, Rectangle

LOGGER = logging.getLogger(__name__)

DIRECT_SUM_LIMIT = 2**20
MAX_SPLIT_LOG = 690.0


class BoundParameters:
    """
    Exponent bookkeeping for the distance estimates, held in a persistent parameter graph.

    :meth:`build` starts from ρ, γ and the bump η and derives ρ' = (1 + η)ρ, p = 2(1 + 2η)ρ,
    γ' = (1 + η)γ and γ'' = (1 + 2η)γ; :meth:`explicit` takes p, γ' and γ'' directly.
    Both derive {p}, θ_1..θ_N and the regime of the higher-level estimates.
    """

    def __init__(self, state: ParameterState, changed: Set[str] = frozenset()) -> None:
        self._state = state
        self.changed = frozenset(changed)

    @classmethod
    def build(
        cls,
        rho: float,
        gamma: float,
        eta: float = 0.01,
        sigma: float | None = None,
        delta: float = 0.01,
        epsilon: float = 0.0,
        levels: int = 3,
    ) -> "BoundParameters":
        builder = ParameterNetBuilder()
        rho_node = builder.add_input(BoundedFloatInput("rho", 1.0, 1.5, upper_open=True), rho)
        gamma_node = builder.add_input(BoundedFloatInput("gamma", 1.0), gamma)
        eta_node = builder.add_input(BoundedFloatInput("eta", 0.0, lower_open=True), eta)
        builder.add_derived(DerivedParameter("rho_prime", bumped(1.0), [rho_node, eta_node]))
        p_node = builder.add_derived(DerivedParameter("p", bumped(2.0, 2.0), [rho_node, eta_node]))
        gamma_prime = builder.add_derived(
            DerivedParameter("gamma_prime", bumped(1.0), [gamma_node, eta_node])
        )
        gamma_second = builder.add_derived(
            DerivedParameter("gamma_second", bumped(2.0), [gamma_node, eta_node])
        )
        if sigma is None:
            sigma = 2.0 * (1.0 + 2.0 * eta) * gamma
        cls._add_common(builder, p_node, gamma_prime, gamma_second, sigma, delta, epsilon, levels)
        result = cls(builder.build())
        result._check_structure()
        return result

    @classmethod
    def explicit(
        cls,
        p: float,
        gamma_prime: float,
        gamma_second: float | None = None,
        rho: float = 1.0,
        gamma: float | None = None,
        sigma: float | None = None,
        delta: float = 0.01,
        epsilon: float = 0.0,
        levels: int = 3,
    ) -> "BoundParameters":
        builder = ParameterNetBuilder()
        builder.add_input(BoundedFloatInput("rho", 1.0, 1.5, upper_open=True), rho)
        builder.add_input(BoundedFloatInput("gamma", 1.0), gamma_prime if gamma is None else gamma)
        p_node = builder.add_input(BoundedFloatInput("p", 2.0, lower_open=True), p)
        gamma_prime_node = builder.add_input(BoundedFloatInput("gamma_prime", 1.0), gamma_prime)
        second = gamma_prime if gamma_second is None else gamma_second
        gamma_second_node = builder.add_input(BoundedFloatInput("gamma_second", 1.0), second)
        if sigma is None:
            sigma = 2.0 * second
        cls._add_common(
            builder, p_node, gamma_prime_node, gamma_second_node, sigma, delta, epsilon, levels
        )
        return cls(builder.build())

    @staticmethod
    def _add_common(
        builder: ParameterNetBuilder,
        p_node: ParameterNode,
        gamma_prime: ParameterNode,
        gamma_second: ParameterNode,
        sigma: float,
        delta: float,
        epsilon: float,
        levels: int,
    ) -> None:
        builder.add_input(BoundedFloatInput("sigma", 1.0), sigma)
        builder.add_input(BoundedFloatInput("delta", 0.0), delta)
        builder.add_input(BoundedFloatInput("epsilon", 0.0), epsilon)
        levels_node = builder.add_input(LevelCountInput("levels"), levels)
        builder.add_derived(DerivedParameter("fractional_p", fractional_part, [p_node]))
        builder.add_derived(
            DerivedParameter("theta", theta_exponents, [p_node, gamma_second, levels_node])
        )
        builder.add_derived(DerivedParameter("case", select_case, [p_node, gamma_prime]))

    def _check_structure(self) -> None:
        if self.gamma < self.rho:
            raise ValueError(f"Need gamma >= rho, got {self.gamma} < {self.rho}")
        if not 1.0 / self.gamma + 1.0 / self.rho > 1.0:
            raise ValueError(f"Need 1/gamma + 1/rho > 1, got gamma={self.gamma}, rho={self.rho}")

    def value(self, name: str) -> Any:
        return self._state.value(name)

    def with_value(self, name: str, value: Any) -> "BoundParameters":
        """A new parameter set with one input changed and every dependent value recomputed."""
        state, changed = self._state.update({name: value})
        LOGGER.debug("Changing %s to %s updated %s", name, value, sorted(changed))
        result = BoundParameters(state, changed)
        if "eta" in result.names:
            result._check_structure()
        return result

    @property
    def names(self) -> list[str]:
        return self._state.names

    @property
    def rho(self) -> float:
        return float(self.value("rho"))

    @property
    def gamma(self) -> float:
        return float(self.value("gamma"))

    @property
    def p(self) -> float:
        return float(self.value("p"))

    @property
    def gamma_prime(self) -> float:
        return float(self.value("gamma_prime"))

    @property
    def gamma_second(self) -> float:
        return float(self.value("gamma_second"))

    @property
    def sigma(self) -> float:
        return float(self.value("sigma"))

    @property
    def delta(self) -> float:
        return float(self.value("delta"))

    @property
    def epsilon(self) -> float:
        return float(self.value("epsilon"))

    @property
    def levels(self) -> int:
        return int(self.value("levels"))

    @property
    def fractional_p(self) -> float:
        return float(self.value("fractional_p"))

    @property
    def theta(self) -> tuple[float, ...]:
        return tuple(self.value("theta"))

    @property
    def case(self) -> int:
        return int(self.value("case"))

    def violations(self) -> list[str]:
        """Invariants of the estimates that the current values break."""
        problems = []
        if not 2 * self.rho < self.p:
            problems.append(f"p={self.p} must exceed 2 rho={2 * self.rho}")
        if not self.p < 3.0:
            problems.append(f"p={self.p} must stay below 3 for third-level bounds")
        if self.gamma_prime < self.gamma or self.gamma_second < self.gamma_prime:
            problems.append("need gamma <= gamma' <= gamma''")
        if self.sigma < 2 * self.gamma_second:
            problems.append(f"sigma={self.sigma} below 2 gamma''={2 * self.gamma_second}")
        for n, theta in enumerate(self.theta, start=1):
            if not theta > 0.0:
                problems.append(f"theta_{n}={theta:.6g} is not positive")
        return problems

    def check(self) -> "BoundParameters":
        problems = self.violations()
        if problems:
            raise ValueError("Invalid bound parameters: " + "; ".join(problems))
        return self

    def dump(self) -> dict[str, Any]:
        return self._state.dump()

    def __repr__(self) -> str:
        return f"BoundParameters({self.dump()})"


def _window_indices(f: CovarianceGrid, rectangle: Rectangle | None) -> Rectangle:
    return f.full_rectangle() if rectangle is None else rectangle


def _anchored(values: FloatArray) -> FloatArray:
    """F(u, v) = f([s, u] x [s', v]) for the window's lower-left corner (s, s')."""
    return values - values[:1, :] - values[:, :1] + values[0, 0]


def young_2d_sum(
    f: CovarianceGrid,
    g: CovarianceGrid,
    rectangle: Rectangle | None = None,
    rule: str = "lower_left",
    anchored: bool = False,
) -> float:
    """
    Discrete 2D Young integral Σ_cells f(cell) g(cell increment). ``rule`` picks where f is read
    on each cell ("lower_left" or "corner_average"); ``anchored`` integrates the rectangular
    increment f([s, u] x [s', v]) instead of f(u, v).
    """
    if not (np.array_equal(f.s_grid, g.s_grid) and np.array_equal(f.t_grid, g.t_grid)):
        raise ValueError("Young sums need a common grid")
    window = _window_indices(f, rectangle)
    integrand = f.window(window)
    if anchored:
        integrand = _anchored(integrand)
    increments = np.diff(np.diff(g.window(window), axis=0), axis=1)
    if rule == "lower_left":
        cell_values = integrand[:-1, :-1]
    elif rule == "corner_average":
        cell_values = 0.25 * (
            integrand[:-1, :-1] + integrand[1:, :-1] + integrand[:-1, 1:] + integrand[1:, 1:]
        )
    else:
        raise ValueError(f"Unknown Young sum rule {rule!r}")
    return float((cell_values * increments).sum())


def _grid_window(grid: npt.ArrayLike, s: float, t: float) -> tuple[FloatArray, Rectangle]:
    times = np.asarray(grid, dtype=float)
    first = int(np.argmin(np.abs(times - s)))
    last = int(np.argmin(np.abs(times - t)))
    scale = max(abs(times[-1] - times[0]), 1.0)
    if abs(times[first] - s) > 1e-12 * scale or abs(times[last] - t) > 1e-12 * scale:
        raise ValueError(f"Interval [{s}, {t}] must have grid endpoints")
    if not first < last:
        raise ValueError(f"Interval start {s} must be before its end {t}")
    return times, (first, last, first, last)


def _midpoint_operators(size: int) -> tuple[FloatArray, FloatArray]:
    """S maps node values to ½x_m + ½x_{m+1} − x_0, D to x_{m+1} − x_m."""
    cells = size - 1
    rows = np.arange(cells)
    average = np.zeros((cells, size))
    average[rows, rows] += 0.5
    average[rows, rows + 1] += 0.5
    average[:, 0] -= 1.0
    difference = np.zeros((cells, size))
    difference[rows, rows] = -1.0
    difference[rows, rows + 1] = 1.0
    return average, difference


@dataclass(frozen=True)
class SecondLevelL2:
    """L² norms of the level-2 difference for one diagonal and one off-diagonal entry."""

    diagonal: float
    off_diagonal: float
    diagonal_majorant: float
    dim: int

    def matrix(self) -> FloatArray:
        result = np.full((self.dim, self.dim), self.off_diagonal)
        np.fill_diagonal(result, self.diagonal)
        return result

    @property
    def frobenius(self) -> float:
        """|X^2_{s,t} − Y^2_{s,t}|_{L²} for the Frobenius norm."""
        off = self.dim * (self.dim - 1) * self.off_diagonal**2
        return math.sqrt(self.dim * self.diagonal**2 + off)


def _check_independent(pair: JointGaussianPair) -> None:
    if not pair.independent_components:
        raise ValueError("Level-2 formulas need independent components")


def _iterated_integral_moment(f: CovarianceGrid, window: Rectangle) -> float:
    """
    E[∫ X^i_{s,u} dX^j_u ∫ Y^i_{s,v} dY^j_v] for i != j, where f is R_XY on the grid.

    On piecewise-linear paths the integrand of each cell is its midpoint value, so the moment
    is the 2D Young sum of the anchored f, read as a corner average, against f itself.
    """
    return young_2d_sum(f, f, window, rule="corner_average", anchored=True)


def off_diagonal_l2_squared(grids: PairCovarianceGrids, window: Rectangle) -> float:
    """E[(∫ X^i dX^j − ∫ Y^i dY^j)²] over the window's interval, for i != j."""
    return (
        _iterated_integral_moment(grids.xx, window)
        - 2 * _iterated_integral_moment(grids.xy, window)
        + _iterated_integral_moment(grids.yy, window)
    )


def second_level_l2_exact(
    pair: JointGaussianPair, grid: npt.ArrayLike, s: float, t: float
) -> SecondLevelL2:
    """
    Exact L² distance of the level-2 components of the piecewise-linear processes on the grid.

    Off-diagonal entries go through :func:`off_diagonal_l2_squared`; the diagonal entries are
    ½ (X^i_{s,t})² and use the Gaussian fourth moments.
    """
    _check_independent(pair)
    times, window = _grid_window(grid, s, t)
    grids = pair_covariance_grids(pair, times)
    off_squared = off_diagonal_l2_squared(grids, window)
    first, last = window[0], window[1]
    var_x = grids.xx.rectangular_increment(first, last, first, last)
    var_y = grids.yy.rectangular_increment(first, last, first, last)
    cov = grids.xy.rectangular_increment(first, last, first, last)
    fourth = 3 * var_x**2 - 2 * (var_x * var_y + 2 * cov**2) + 3 * var_y**2
    diagonal = 0.5 * math.sqrt(max(fourth, 0.0))
    distance = math.sqrt(max(var_x - 2 * cov + var_y, 0.0))
    majorant = 0.5 * math.sqrt(3.0) * distance * (math.sqrt(var_x) + math.sqrt(var_y))
    return SecondLevelL2(
        diagonal=diagonal,
        off_diagonal=math.sqrt(max(off_squared, 0.0)),
        diagonal_majorant=majorant,
        dim=pair.dim,
    )


def levy_area_l2_exact(pair: JointGaussianPair, grid: npt.ArrayLike, s: float, t: float) -> float:
    """
    |A^X_{s,t} − A^Y_{s,t}|_{L²} for the Lévy area A = ½(∫X^1 dX^2 − ∫X^2 dX^1) of the first two
    components.
    """
    _check_independent(pair)
    if pair.dim < 2:
        raise ValueError("Lévy area needs at least two components")
    times, window = _grid_window(grid, s, t)
    grids = pair_covariance_grids(pair, times)
    off_squared = off_diagonal_l2_squared(grids, window)
    nodes = times[window[0] : window[1] + 1]
    c_xx, c_xy, c_yy = pair.blocks(nodes, nodes)
    blocks = {"xx": c_xx, "xy": c_xy, "yx": c_xy.T, "yy": c_yy}
    average, difference = _midpoint_operators(nodes.shape[0])

    # cross moments E[∫X^1 dX^2 ∫Y^2 dY^1]
    def mixed(left: str, right: str) -> float:
        forward = average @ blocks[left + right] @ difference.T
        backward = average @ blocks[right + left] @ difference.T
        return float((forward * backward.T).sum())

    swapped = mixed("x", "x") - mixed("x", "y") - mixed("y", "x") + mixed("y", "y")
    return math.sqrt(max(0.5 * (off_squared - swapped), 0.0))


def level12_bound_rhs(
    params: BoundParameters, control: Control, epsilon_raw: float, s: int, t: int, n: int
) -> float:
    """ε_raw^{1 − ρ/γ} ω(s, t)^{1/(2γ) + (n − 1)/(2ρ)} for n = 1, 2 on grid indices s < t."""
    if n not in (1, 2):
        raise ValueError(f"Level must be 1 or 2, got {n}")
    if epsilon_raw < 0.0:
        raise ValueError(f"Distance must be non-negative, got {epsilon_raw}")
    exponent = 1.0 / (2 * params.gamma) + (n - 1) / (2 * params.rho)
    return float(epsilon_raw ** (1.0 - params.rho / params.gamma) * control.value(s, t) ** exponent)


def _power_sum(a: float, start: int, stop: int) -> float:
    """Σ_{L=start}^{stop} L^{-a}, with an Euler-Maclaurin tail for long ranges."""
    if stop < start:
        return 0.0
    if stop - start < DIRECT_SUM_LIMIT:
        return float((np.arange(start, stop + 1, dtype=float) ** -a).sum())
    head_stop = start + DIRECT_SUM_LIMIT - 1
    head = float((np.arange(start, head_stop + 1, dtype=float) ** -a).sum())
    lower, upper = float(head_stop), float(stop)
    if abs(a - 1.0) < 1e-15:
        integral = math.log(upper / lower)
    else:
        integral = (upper ** (1 - a) - lower ** (1 - a)) / (1 - a)
    correction = 0.5 * (upper**-a - lower**-a) - a / 12.0 * (upper ** (-a - 1) - lower ** (-a - 1))
    return head + integral + correction


@dataclass(frozen=True)
class RawThirdLevel:
    value: float
    split: int


def raw_third_level_sum(params: BoundParameters, omega_st: float, epsilon: float) -> RawThirdLevel:
    """
    ε Σ_{L<=N} (ω/L)^{1/(2γ') + 2/p} + Σ_{L>N} (ω/L)^{3/p}, with N the integer for which
    (ω/(N + 1))^e <= ε < (ω/N)^e, e = 1/p − 1/(2γ').
    """
    p, gamma_prime = params.p, params.gamma_prime
    e = 1.0 / p - 1.0 / (2 * gamma_prime)
    if not e > 0.0:
        raise ValueError("The split needs 1/p > 1/(2 gamma')")
    if omega_st <= 0.0:
        return RawThirdLevel(0.0, 0)
    if epsilon <= 0.0:
        raise ValueError("The split needs a positive epsilon")
    if math.log(omega_st) - math.log(epsilon) / e > MAX_SPLIT_LOG:
        raise ValueError("The split index overflows; epsilon is too small for this exponent")
    split = max(math.ceil(omega_st * epsilon ** (-1.0 / e)) - 1, 0)
    a = 1.0 / (2 * gamma_prime) + 2.0 / p
    head = epsilon * omega_st**a * _power_sum(a, 1, split)
    tail = omega_st ** (3.0 / p) * float(zeta(3.0 / p, float(split + 1)))
    return RawThirdLevel(head + tail, split)


@dataclass(frozen=True)
class LevelBound:
    case: int
    bound: float
    assumption_holds: bool
    raw: RawThirdLevel | None = None


def _check_third_level(params: BoundParameters) -> None:
    if not 2 * params.rho < params.p < 3.0:
        raise ValueError(f"Third-level bounds need p in (2 rho, 3), got p={params.p}")


def _log_term(params: BoundParameters, omega_0t: float, epsilon: float, log_form: str) -> float:
    p = params.p
    if log_form == "statement":
        exponent = 1.0 - p / (2 * params.gamma_prime)
    elif log_form == "proof":
        exponent = p / (3.0 - p)
    else:
        raise ValueError(f"Unknown log form {log_form!r}")
    if epsilon <= 0.0:
        return 0.0 if omega_0t <= 0.0 else math.inf
    if omega_0t <= 0.0:
        return 1.0
    return 1.0 + max(math.log(omega_0t / epsilon**exponent), 0.0)


def level_n_bound(
    params: BoundParameters,
    omega_st: float,
    omega_0t: float,
    epsilon: float,
    n: int,
    log_form: str = "statement",
) -> LevelBound:
    """The case-dependent level-n distance estimate with unit constant."""
    if n < 1:
        raise ValueError(f"Level must be positive, got {n}")
    if epsilon < 0.0 or omega_st < 0.0:
        raise ValueError("Epsilon and the control must be non-negative")
    p, gamma_prime = params.p, params.gamma_prime
    case = select_case(p, gamma_prime)
    assumption = epsilon < omega_st ** (1.0 / p - 1.0 / (2 * gamma_prime))
    shape = 1.0 / (2 * gamma_prime) + (n - 1) / p
    if n <= 2 or case == 1:
        bound = epsilon * omega_st**shape
    elif case == 2:
        if epsilon == 0.0:
            bound = 0.0
        else:
            bound = epsilon * _log_term(params, omega_0t, epsilon, log_form) * omega_st**shape
    else:
        exponent = (3.0 - p) / (1.0 - p / (2 * gamma_prime))
        bound = epsilon**exponent * omega_st ** ((n - 1 + params.fractional_p) / p)
    return LevelBound(case, float(bound), assumption)


def third_level_bound(
    params: BoundParameters,
    omega_st: float,
    omega_0t: float,
    epsilon: float,
    log_form: str = "statement",
) -> LevelBound:
    _check_third_level(params)
    result = level_n_bound(params, omega_st, omega_0t, epsilon, 3, log_form)
    raw = None
    e = 1.0 / params.p - 1.0 / (2 * params.gamma_prime)
    if epsilon > 0.0 and omega_st > 0.0 and e > 0.0:
        if math.log(omega_st) - math.log(epsilon) / e <= MAX_SPLIT_LOG:
            raw = raw_third_level_sum(params, omega_st, epsilon)
        else:
            LOGGER.debug("Raw third-level sum skipped, split index out of range")
    return LevelBound(result.case, result.bound, result.assumption_holds, raw)


def main_theorem_exponent(rho: float, gamma: float, delta: float) -> tuple[float, int]:
    """ζ = 1 − ρ/γ when 1/(2γ) + 1/ρ > 1 (case 1), else ζ = 3 − 2ρ − δ (case 2)."""
    if not 1.0 <= rho < 1.5:
        raise ValueError(f"Need rho in [1, 3/2), got {rho}")
    if gamma < rho:
        raise ValueError(f"Need gamma >= rho, got {gamma} < {rho}")
    if not 1.0 / gamma + 1.0 / rho > 1.0:
        raise ValueError(f"Need 1/gamma + 1/rho > 1, got gamma={gamma}, rho={rho}")
    if delta < 0.0:
        raise ValueError(f"Slack must be non-negative, got {delta}")
    if 1.0 / (2 * gamma) + 1.0 / rho > 1.0:
        return 1.0 - rho / gamma, 1
    return 3.0 - 2 * rho - delta, 2


def critical_gamma(rho: float) -> float:
    """The γ at which 1/(2γ) + 1/ρ = 1; infinite for ρ = 1."""
    if not 1.0 <= rho < 1.5:
        raise ValueError(f"Need rho in [1, 3/2), got {rho}")
    if rho == 1.0:
        return math.inf
    return rho / (2 * (rho - 1.0))


def wong_zakai_rate_predicted(rho: float, delta: float) -> float:
    """Almost sure rate exponent 3/(2ρ) − 1 − δ of the piecewise-linear approximations."""
    if not 1.0 <= rho < 1.5:
        raise ValueError(f"Need rho in [1, 3/2), got {rho}")
    ceiling = 3.0 / (2 * rho) - 1.0
    if not 0.0 < delta < ceiling:
        raise ValueError(f"Need delta in (0, {ceiling}), got {delta}")
    return ceiling - delta


def sigma_metric_gamma(rho: float, sigma: float, eta: float = 0.01) -> float:
    """The largest γ with σ >= 2(1 + 2η)γ and 1/γ + 1/ρ > 1."""
    if not eta > 0.0:
        raise ValueError(f"Bump must be positive, got {eta}")
    gamma = sigma / (2 * (1.0 + 2 * eta))
    if rho > 1.0:
        gamma = min(gamma, rho / (rho - 1.0) * (1.0 - 1e-9))
    if gamma < rho:
        raise ValueError(f"sigma={sigma} is too small for rho={rho}")
    return gamma


def sigma_metric_rate(rho: float, sigma: float, eta: float = 0.01, delta: float = 0.01) -> float:
    """
    Predicted decay exponent in k of the σ-variation distance between X and its k-mesh
    interpolation: γ is taken as large as σ >= 2(1 + 2η)γ and 1/γ + 1/ρ > 1 allow, the distance
    scales like sup|X − X^(k)|_{L²}^ζ and the sup-L² distance like k^{-1/(2ρ)}.
    """
    gamma = sigma_metric_gamma(rho, sigma, eta)
    zeta_exponent, _ = main_theorem_exponent(rho, gamma, delta)
    return zeta_exponent / (2 * rho)


def heat_holder_exponent(p: float) -> float:
    """Time Hölder exponent 1/4 − 1/(2p) of the heat field in the p-variation metric."""
    if not p > 2.0:
        raise ValueError(f"Need p > 2, got {p}")
    return 0.25 - 1.0 / (2 * p)


def neoclassical_level_bound(n: int, p: float, omega: float) -> float:
    """c_n ω^{n/p} with c_n = 2^n / (n/p)!, the factorial decay bound for level n."""
    if n < 1 or p < 1.0:
        raise ValueError(f"Need n >= 1 and p >= 1, got n={n}, p={p}")
    return neoclassical_constant(n, p) * omega ** (n / p)
