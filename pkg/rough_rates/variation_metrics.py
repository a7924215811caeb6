"""
Partition-supremum metrics.

1D quantities (p-variation of a level, the inhomogeneous distance) are suprema over partitions
drawn from the functional's grid and are solved exactly by dynamic programming over a table of
pair weights. 2D quantities work on a :class:`CovarianceGrid` and its rectangular increments.
"""

import itertools
import logging
from collections.abc import Callable, Iterator
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from rough_rates.path_signatures import MultiplicativeFunctional
from rough_rates.tensor_algebra import FloatArray

LOGGER = logging.getLogger(__name__)

SUPERADDITIVITY_TOLERANCE = 1e-10
EXACT_INTERIOR_LIMIT = 8
Rectangle = tuple[int, int, int, int]


def _frozen(array: npt.ArrayLike) -> FloatArray:
    result = np.array(array, dtype=float)
    result.setflags(write=False)
    return result


class Control:
    """
    A control on a grid: ``values[i, j]`` is ω(t_i, t_j) for i <= j.

    The constructor checks the diagonal and the sign; superadditivity is measured with
    :meth:`superadditivity_violation` since it only holds up to roundoff.
    """

    def __init__(self, grid: npt.ArrayLike, values: npt.ArrayLike) -> None:
        times = _frozen(grid)
        table = np.triu(np.array(values, dtype=float))
        size = times.shape[0]
        if table.shape != (size, size):
            raise ValueError(f"Control table must be {size}x{size}, got {table.shape}")
        if np.any(np.diag(table) != 0.0):
            raise ValueError("A control vanishes on the diagonal")
        if np.any(table < 0.0) or not np.all(np.isfinite(table)):
            raise ValueError("A control takes finite non-negative values")
        table.setflags(write=False)
        self._grid = times
        self._values = table

    @classmethod
    def from_function(
        cls, grid: npt.ArrayLike, function: Callable[[FloatArray, FloatArray], FloatArray]
    ) -> "Control":
        """``function`` is evaluated on broadcast (s, t) arrays."""
        times = np.asarray(grid, dtype=float)
        table = np.asarray(function(times[:, None], times[None, :]), dtype=float)
        table = np.triu(np.broadcast_to(table, (times.shape[0],) * 2), k=1)
        return cls(times, table)

    @property
    def grid(self) -> FloatArray:
        return self._grid

    @property
    def values(self) -> FloatArray:
        return self._values

    def value(self, i: int, j: int) -> float:
        if i > j:
            raise ValueError(f"Control is evaluated on ordered pairs, got {i} > {j}")
        return float(self._values[i, j])

    def superadditivity_violation(self) -> float:
        """Largest ω(t_i, t_j) + ω(t_j, t_k) − ω(t_i, t_k) over i < j < k (0 when none)."""
        worst = 0.0
        size = self._grid.shape[0]
        for j in range(1, size - 1):
            left = self._values[:j, j][:, None]
            right = self._values[j, j + 1 :][None, :]
            excess = left + right - self._values[:j, j + 1 :]
            worst = max(worst, float(excess.max()))
        return worst

    def is_superadditive(self, tolerance: float = SUPERADDITIVITY_TOLERANCE) -> bool:
        return self.superadditivity_violation() <= tolerance

    def __repr__(self) -> str:
        return f"Control(points={self._grid.shape[0]}, total={self._values[0, -1]:.6g})"


class CovarianceGrid:
    """Values f(s_i, t_j) of a two-parameter function on a product grid."""

    def __init__(
        self, s_grid: npt.ArrayLike, t_grid: npt.ArrayLike, values: npt.ArrayLike
    ) -> None:
        s_times = _frozen(s_grid)
        t_times = _frozen(t_grid)
        table = _frozen(values)
        if table.shape != (s_times.shape[0], t_times.shape[0]):
            raise ValueError(
                f"Values of shape {table.shape} do not match a "
                f"{s_times.shape[0]}x{t_times.shape[0]} grid"
            )
        if not np.all(np.isfinite(table)):
            raise ValueError("Covariance grid values must be finite")
        self._s_grid = s_times
        self._t_grid = t_times
        self._values = table

    @classmethod
    def from_function(
        cls,
        s_grid: npt.ArrayLike,
        t_grid: npt.ArrayLike,
        function: Callable[[FloatArray, FloatArray], FloatArray],
    ) -> "CovarianceGrid":
        s_times = np.asarray(s_grid, dtype=float)
        t_times = np.asarray(t_grid, dtype=float)
        table = np.asarray(function(s_times[:, None], t_times[None, :]), dtype=float)
        return cls(s_times, t_times, np.broadcast_to(table, (s_times.shape[0], t_times.shape[0])))

    @property
    def s_grid(self) -> FloatArray:
        return self._s_grid

    @property
    def t_grid(self) -> FloatArray:
        return self._t_grid

    @property
    def values(self) -> FloatArray:
        return self._values

    @property
    def shape(self) -> tuple[int, int]:
        return (int(self._s_grid.shape[0]), int(self._t_grid.shape[0]))

    @property
    def is_square(self) -> bool:
        return bool(np.array_equal(self._s_grid, self._t_grid))

    def is_symmetric(self, tolerance: float = 1e-12) -> bool:
        return self.is_square and bool(
            np.allclose(self._values, self._values.T, rtol=0.0, atol=tolerance)
        )

    def full_rectangle(self) -> Rectangle:
        rows, columns = self.shape
        return (0, rows - 1, 0, columns - 1)

    def rectangular_increment(self, a: int, b: int, c: int, d: int) -> float:
        """f([s_a, s_b] x [t_c, t_d])."""
        f = self._values
        return float(f[b, d] - f[a, d] - f[b, c] + f[a, c])

    def window(self, rectangle: Rectangle | None = None) -> FloatArray:
        i0, i1, j0, j1 = self.full_rectangle() if rectangle is None else rectangle
        rows, columns = self.shape
        if not (i0 < i1 and j0 < j1):
            raise ValueError(f"Rectangle {rectangle} is empty")
        if i0 < 0 or j0 < 0 or i1 >= rows or j1 >= columns:
            raise ValueError(f"Rectangle {rectangle} leaves the {rows}x{columns} grid")
        return self._values[i0 : i1 + 1, j0 : j1 + 1]

    def __repr__(self) -> str:
        return f"CovarianceGrid(shape={self.shape})"


def _partition_suprema(weights: FloatArray, start: int = 0) -> FloatArray:
    """
    ``best[j]`` = sup over partitions start = u_0 < ... < u_m = j of Σ weights[u_k, u_{k+1}];
    entries before ``start`` are -inf.
    """
    size = weights.shape[0]
    best = np.full(size, -np.inf)
    best[start] = 0.0
    for i in range(start, size - 1):
        np.maximum(best[i + 1 :], best[i] + weights[i, i + 1 :], out=best[i + 1 :])
    return best


def _best_partition(weights: FloatArray) -> tuple[float, list[int]]:
    """Exact partition supremum over all indices together with one maximizing partition."""
    size = weights.shape[0]
    best = np.full(size, -np.inf)
    parent = np.zeros(size, dtype=int)
    best[0] = 0.0
    for i in range(size - 1):
        candidate = best[i] + weights[i, i + 1 :]
        better = candidate > best[i + 1 :]
        best[i + 1 :][better] = candidate[better]
        parent[i + 1 :][better] = i
    points = [size - 1]
    while points[-1] != 0:
        points.append(int(parent[points[-1]]))
    return float(best[-1]), points[::-1]


def _pair_weight_tables(
    x: MultiplicativeFunctional,
    y: MultiplicativeFunctional | None,
    levels: list[int],
    sigma: float,
) -> dict[int, FloatArray]:
    """Upper-triangular tables |X^n_{ij} − Y^n_{ij}|^{σ/n} for each requested level."""
    size = x.intervals + 1
    tables = {n: np.zeros((size, size)) for n in levels}
    for i in range(size - 1):
        rows_x = x.increments_from(i)
        rows_y = y.increments_from(i) if y is not None else None
        for n in levels:
            difference = rows_x[n][1:] if rows_y is None else rows_x[n][1:] - rows_y[n][1:]
            tables[n][i, i + 1 :] = np.linalg.norm(difference, axis=1) ** (sigma / n)
    return tables


def _check_pair(x: MultiplicativeFunctional, y: MultiplicativeFunctional, levels: int) -> None:
    if x.dim != y.dim:
        raise ValueError(f"Dimension mismatch: {x.dim} != {y.dim}")
    if not np.array_equal(x.grid, y.grid):
        raise ValueError("Functionals must live on the same grid")
    if levels > min(x.degree, y.degree):
        raise ValueError(f"Level count {levels} exceeds degrees {x.degree}, {y.degree}")


def _check_exponent(p: float, name: str = "p") -> None:
    if not p >= 1.0:
        raise ValueError(f"Exponent {name} must be at least 1, got {p}")


def p_variation_level(mf: MultiplicativeFunctional, n: int, p: float) -> float:
    if not 1 <= n <= mf.degree:
        raise ValueError(f"Level {n} outside 1..{mf.degree}")
    _check_exponent(p)
    weights = _pair_weight_tables(mf, None, [n], p)[n]
    return float(_partition_suprema(weights)[-1] ** (n / p))


def rho_pvar_distance(
    x: MultiplicativeFunctional, y: MultiplicativeFunctional, levels: int, sigma: float
) -> float:
    """max over n <= N of (sup_P Σ |X^n − Y^n|^{σ/n})^{n/σ}."""
    _check_pair(x, y, levels)
    _check_exponent(sigma, "sigma")
    if levels < 1:
        raise ValueError(f"Level count must be positive, got {levels}")
    tables = _pair_weight_tables(x, y, list(range(1, levels + 1)), sigma)
    return max(float(_partition_suprema(table)[-1] ** (n / sigma)) for n, table in tables.items())


def level_distances(
    x: MultiplicativeFunctional, y: MultiplicativeFunctional, levels: int, sigma: float
) -> list[float]:
    """The per-level terms whose maximum is :func:`rho_pvar_distance`."""
    _check_pair(x, y, levels)
    _check_exponent(sigma, "sigma")
    tables = _pair_weight_tables(x, y, list(range(1, levels + 1)), sigma)
    return [float(_partition_suprema(tables[n])[-1] ** (n / sigma)) for n in sorted(tables)]


def _partitions(size: int) -> Iterator[tuple[int, ...]]:
    interior = range(1, size - 1)
    for count in range(size - 1):
        for chosen in itertools.combinations(interior, count):
            yield (0,) + chosen + (size - 1,)


def p_variation_exhaustive(mf: MultiplicativeFunctional, n: int, p: float) -> float:
    """Enumerates every partition of the grid; for small grids only."""
    best = 0.0
    for partition in _partitions(mf.intervals + 1):
        total = sum(
            np.linalg.norm(mf.increment(a, b).level(n)) ** (p / n)
            for a, b in zip(partition, partition[1:])
        )
        best = max(best, total)
    return float(best ** (n / p))


def rho_distance_exhaustive(
    x: MultiplicativeFunctional, y: MultiplicativeFunctional, levels: int, sigma: float
) -> float:
    _check_pair(x, y, levels)
    result = 0.0
    for n in range(1, levels + 1):
        best = 0.0
        for partition in _partitions(x.intervals + 1):
            total = sum(
                np.linalg.norm(x.increment(a, b).level(n) - y.increment(a, b).level(n))
                ** (sigma / n)
                for a, b in zip(partition, partition[1:])
            )
            best = max(best, total)
        result = max(result, best ** (n / sigma))
    return float(result)


def random_control(
    x: MultiplicativeFunctional,
    y: MultiplicativeFunctional,
    p: float,
    epsilon: float,
    levels: int,
) -> Control:
    """
    Aggregated control ω̂ = Σ_n [ω^n_X + ω^n_Y + ε^{-p/n} ω^n_{X−Y}], where ω^n_Z(s, t) is the
    (p/n)-variation of Z^n on [s, t] raised to p/n. Then |X^n_{s,t}| <= ω̂^{n/p} and
    |X^n_{s,t} − Y^n_{s,t}| <= ε ω̂^{n/p} on every grid pair.
    """
    _check_pair(x, y, levels)
    _check_exponent(p)
    if not epsilon > 0.0:
        raise ValueError(f"Epsilon must be positive, got {epsilon}")
    level_list = list(range(1, levels + 1))
    own_x = _pair_weight_tables(x, None, level_list, p)
    own_y = _pair_weight_tables(y, None, level_list, p)
    joint = _pair_weight_tables(x, y, level_list, p)
    size = x.intervals + 1
    total = np.zeros((size, size))
    for n in level_list:
        weight = epsilon ** (-p / n)
        for table, factor in ((own_x[n], 1.0), (own_y[n], 1.0), (joint[n], weight)):
            for start in range(size - 1):
                total[start, start + 1 :] += factor * _partition_suprema(table, start)[start + 1 :]
    return Control(x.grid, total)


def v_infinity_2d(f: CovarianceGrid, rectangle: Rectangle | None = None) -> float:
    """max |f(A)| over grid sub-rectangles A of the rectangle."""
    values = f.window(rectangle)
    best = 0.0
    for a in range(values.shape[0] - 1):
        differences = values[a + 1 :] - values[a]
        best = max(best, float(np.ptp(differences, axis=1).max()))
    return best


def v_infinity_bruteforce(f: CovarianceGrid, rectangle: Rectangle | None = None) -> float:
    values = f.window(rectangle)
    rows, columns = values.shape
    best = 0.0
    for a, b in itertools.combinations(range(rows), 2):
        for c, d in itertools.combinations(range(columns), 2):
            increment = values[b, d] - values[a, d] - values[b, c] + values[a, c]
            best = max(best, abs(float(increment)))
    return best


@dataclass(frozen=True)
class Variation2D:
    """
    Result of a 2D variation computation. ``value`` is attained by an actual pair of dissections,
    so it is always a lower bound; ``exact`` marks the enumerated branch.
    """

    value: float
    exact: bool
    converged: bool
    iterations: int
    s_dissection: tuple[int, ...]
    t_dissection: tuple[int, ...]

    def __float__(self) -> float:
        return self.value


def _axis_weights(values: FloatArray, dissection: tuple[int, ...], rho: float) -> FloatArray:
    """w[c, d] = Σ_k |f([u_k, u_{k+1}] x [c, d])|^ρ for the fixed dissection u of the first axis."""
    strips = values[list(dissection[1:])] - values[list(dissection[:-1])]
    jumps = np.abs(strips[:, None, :] - strips[:, :, None]) ** rho
    return np.triu(jumps.sum(axis=0), k=1)


def _dissection_sum(
    values: FloatArray, s_cut: tuple[int, ...], t_cut: tuple[int, ...], rho: float
) -> float:
    block = values[np.ix_(s_cut, t_cut)]
    increments = np.diff(np.diff(block, axis=0), axis=1)
    return float((np.abs(increments) ** rho).sum())


def variation_2d_report(
    f: CovarianceGrid,
    rho: float,
    rectangle: Rectangle | None = None,
    max_iterations: int = 50,
) -> Variation2D:
    _check_exponent(rho, "rho")
    values = f.window(rectangle)
    transposed = values.shape[0] > values.shape[1]
    if transposed:
        values = values.T
    rows = values.shape[0]
    if rows - 2 <= EXACT_INTERIOR_LIMIT:
        best, best_s, best_t = -1.0, (0, rows - 1), (0, values.shape[1] - 1)
        for s_cut in _partitions(rows):
            total, t_cut = _best_partition(_axis_weights(values, s_cut, rho))
            if total > best:
                best, best_s, best_t = total, s_cut, tuple(t_cut)
        result = Variation2D(max(best, 0.0) ** (1.0 / rho), True, True, 1, best_s, best_t)
    else:
        result = _coordinate_ascent(values, rho, max_iterations)
    if transposed:
        result = Variation2D(
            result.value,
            result.exact,
            result.converged,
            result.iterations,
            result.t_dissection,
            result.s_dissection,
        )
    return result


def _coordinate_ascent(values: FloatArray, rho: float, max_iterations: int) -> Variation2D:
    full_s = tuple(range(values.shape[0]))
    full_t = tuple(range(values.shape[1]))
    best = _dissection_sum(values, full_s, full_t, rho)
    best_s, best_t = full_s, full_t
    s_cut = full_s
    converged = False
    iterations = 0
    current = -np.inf
    while iterations < max_iterations:
        iterations += 1
        _, t_list = _best_partition(_axis_weights(values, s_cut, rho))
        t_cut = tuple(t_list)
        total, s_list = _best_partition(_axis_weights(values.T, t_cut, rho))
        s_cut = tuple(s_list)
        if total > best:
            best, best_s, best_t = total, s_cut, t_cut
        if total <= current * (1.0 + 1e-14):
            converged = True
            break
        current = total
    if not converged:
        LOGGER.warning("2D variation ascent stopped after %d iterations", iterations)
    LOGGER.debug("2D variation ascent: %d iterations, value %.6g", iterations, best)
    return Variation2D(max(best, 0.0) ** (1.0 / rho), False, converged, iterations, best_s, best_t)


def variation_2d(f: CovarianceGrid, rho: float, rectangle: Rectangle | None = None) -> float:
    return variation_2d_report(f, rho, rectangle).value


def variation_2d_bruteforce(
    f: CovarianceGrid, rho: float, rectangle: Rectangle | None = None
) -> float:
    values = f.window(rectangle)
    best = 0.0
    for s_cut in _partitions(values.shape[0]):
        for t_cut in _partitions(values.shape[1]):
            best = max(best, _dissection_sum(values, s_cut, t_cut, rho))
    return float(best ** (1.0 / rho))


def build_control_from_2dvar(f: CovarianceGrid, rho: float, rho_prime: float) -> Control:
    """ω(t_i, t_j) = V_{ρ'}(f; [t_i, t_j]^2)^{ρ'} on all grid pairs."""
    _check_exponent(rho, "rho")
    if rho_prime < rho:
        raise ValueError(f"Need rho' >= rho, got {rho_prime} < {rho}")
    if not f.is_square:
        raise ValueError("A control is built from a function on a square grid")
    size = f.shape[0]
    table = np.zeros((size, size))
    all_exact = True
    for i in range(size - 1):
        for j in range(i + 1, size):
            report = variation_2d_report(f, rho_prime, (i, j, i, j))
            all_exact = all_exact and report.exact
            table[i, j] = report.value**rho_prime
    control = Control(f.s_grid, table)
    violation = control.superadditivity_violation()
    if violation > SUPERADDITIVITY_TOLERANCE:
        if all_exact:
            raise ValueError(f"Control from 2D variation is not superadditive ({violation:.3g})")
        LOGGER.warning("Heuristic 2D variation broke superadditivity by %.3g", violation)
    return control


def interpolation_bound(
    f: CovarianceGrid, p: float, p_prime: float, rectangle: Rectangle | None = None
) -> tuple[float, float]:
    """(V_{p'}, V_∞^{1 − p/p'} V_p^{p/p'}); the first never exceeds the second."""
    _check_exponent(p)
    if p > p_prime:
        raise ValueError(f"Need p <= p', got {p} > {p_prime}")
    lhs = variation_2d(f, p_prime, rectangle)
    ratio = p / p_prime
    rhs = v_infinity_2d(f, rectangle) ** (1.0 - ratio) * variation_2d(f, p, rectangle) ** ratio
    return lhs, rhs


def holder_ratio(mf: MultiplicativeFunctional, n: int, exponent: float) -> float:
    """max over grid pairs s < t of |X^n_{s,t}| / (t − s)^exponent."""
    if not exponent > 0.0:
        raise ValueError(f"Hölder exponent must be positive, got {exponent}")
    if not 1 <= n <= mf.degree:
        raise ValueError(f"Level {n} outside 1..{mf.degree}")
    best = 0.0
    for i in range(mf.intervals):
        rows = mf.increments_from(i)[n][1:]
        spans = mf.grid[i + 1 :] - mf.grid[i]
        best = max(best, float((np.linalg.norm(rows, axis=1) / spans**exponent).max()))
    return best


def dyadic_depth(grid: npt.ArrayLike) -> int:
    times = np.asarray(grid, dtype=float)
    intervals = times.shape[0] - 1
    depth = int(round(np.log2(intervals))) if intervals > 0 else -1
    if depth < 1 or 2**depth != intervals:
        raise ValueError(f"Grid with {intervals} intervals is not dyadic")
    if not np.allclose(times, np.linspace(0.0, 1.0, intervals + 1), rtol=0.0, atol=1e-12):
        raise ValueError("Dyadic grids are uniform on [0, 1]")
    return depth


def dyadic_blocks(i: int, j: int, depth: int) -> list[tuple[int, int]]:
    """
    Greedy decomposition of the grid interval [i, j] into aligned dyadic blocks of length at most
    half the horizon; at most two blocks per level.
    """
    blocks = []
    largest = 2 ** (depth - 1)
    position = i
    while position < j:
        size = largest
        while position % size != 0 or position + size > j:
            size //= 2
        blocks.append((position, position + size))
        position += size
    return blocks


@dataclass(frozen=True)
class ChainBound:
    chain_bound: float
    holder: float
    level_maxima: tuple[float, ...]
    worst_chained_ratio: float

    @property
    def contract_holds(self) -> bool:
        return self.worst_chained_ratio <= self.chain_bound * (1.0 + 1e-12)


def kolmogorov_chain_bound(mf: MultiplicativeFunctional, n: int, beta_prime: float) -> ChainBound:
    """
    Chain sum K = 2 Σ_{k<=m} K_k / |D_k|^{nβ'} with K_k the largest |X^n| over adjacent pairs of the
    level-k dyadic partition, the dyadic Hölder supremum, and the largest chained block sum
    Σ |X^n_{τ_i, τ_{i+1}}| / (t − s)^{nβ'} over all grid pairs.
    """
    depth = dyadic_depth(mf.grid)
    if not 1 <= n <= mf.degree:
        raise ValueError(f"Level {n} outside 1..{mf.degree}")
    if not beta_prime > 0.0:
        raise ValueError(f"Exponent beta' must be positive, got {beta_prime}")
    exponent = n * beta_prime
    block_norms: dict[int, FloatArray] = {}
    for k in range(1, depth + 1):
        step = 2 ** (depth - k)
        coarse = mf.restrict(np.arange(0, mf.intervals + 1, step))
        block_norms[step] = np.linalg.norm(coarse.adjacent_levels[n], axis=1)
    maxima = [float(block_norms[2 ** (depth - k)].max()) for k in range(1, depth + 1)]
    chain = 2.0 * sum(m / 2.0 ** (-k * exponent) for k, m in enumerate(maxima, start=1))

    worst = 0.0
    for i in range(mf.intervals):
        for j in range(i + 1, mf.intervals + 1):
            total = sum(
                float(block_norms[b - a][a // (b - a)]) for a, b in dyadic_blocks(i, j, depth)
            )
            worst = max(worst, total / (mf.grid[j] - mf.grid[i]) ** exponent)
    LOGGER.debug("Chain sum %.6g, worst chained ratio %.6g", chain, worst)
    return ChainBound(chain, holder_ratio(mf, n, exponent), tuple(maxima), worst)


def chaining_majorant(mf: MultiplicativeFunctional, degree: int, beta_prime: float) -> list[float]:
    """
    Majorants H^1..H^degree with |X^n_{s,t}| <= H^n (t − s)^{nβ'} on the dyadic grid:
    H^1 = K^1 and H^n = K^n + Σ_{l<n} H^{n−l} K^l, K^l being the level-l chain sums.
    """
    if not 1 <= degree <= mf.degree:
        raise ValueError(f"Degree {degree} outside 1..{mf.degree}")
    chains = [kolmogorov_chain_bound(mf, n, beta_prime).chain_bound for n in range(1, degree + 1)]
    majorants: list[float] = []
    for n in range(1, degree + 1):
        cross = sum(majorants[n - l - 1] * chains[l - 1] for l in range(1, n))
        majorants.append(chains[n - 1] + cross)
    return majorants
