"""
Signatures of piecewise-linear paths and grid-supported multiplicative functionals.

A :class:`MultiplicativeFunctional` stores only its adjacent increments X_{t_i, t_{i+1}}; every
other increment is obtained by chaining, so Chen's identity holds by construction.
"""

import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
import numpy.typing as npt
from pyrsistent import pvector
from pyrsistent.typing import PVector

from rough_rates.tensor_algebra import (
    FloatArray,
    Levels,
    TruncatedTensor,
    geodesic_extension_levels,
    level_norm,
    prefix_levels,
    segment_exp_levels,
    segmented_products_levels,
    tensor_mul,
    tensor_sub,
)

if TYPE_CHECKING:
    from rough_rates.variation_metrics import Control

LOGGER = logging.getLogger(__name__)


def _strictly_increasing(times: FloatArray, what: str) -> None:
    if times.ndim != 1 or times.shape[0] < 2:
        raise ValueError(f"{what} needs at least 2 nodes")
    if np.any(np.diff(times) <= 0):
        raise ValueError(f"{what} must be strictly increasing")


def _frozen(array: npt.ArrayLike) -> FloatArray:
    result = np.array(array, dtype=float)
    result.setflags(write=False)
    return result


class PiecewiseLinearPath:
    def __init__(self, times: npt.ArrayLike, points: npt.ArrayLike) -> None:
        nodes = _frozen(times)
        values = np.array(points, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        _strictly_increasing(nodes, "Path times")
        if values.ndim != 2 or values.shape[0] != nodes.shape[0]:
            raise ValueError(
                f"Path has {nodes.shape[0]} times but points of shape {values.shape}"
            )
        values.setflags(write=False)
        self._times = nodes
        self._points = values

    @property
    def times(self) -> FloatArray:
        return self._times

    @property
    def points(self) -> FloatArray:
        return self._points

    @property
    def dim(self) -> int:
        return int(self._points.shape[1])

    @property
    def start(self) -> float:
        return float(self._times[0])

    @property
    def end(self) -> float:
        return float(self._times[-1])

    def value_at(self, t: npt.ArrayLike) -> FloatArray:
        """Linear interpolation; ``t`` may be a scalar or an array of times."""
        query = np.asarray(t, dtype=float)
        columns = [np.interp(query, self._times, self._points[:, i]) for i in range(self.dim)]
        return np.stack(columns, axis=-1)

    def clipped(self, s: float, t: float) -> "PiecewiseLinearPath":
        """The path restricted to [s, t], with interpolated end nodes."""
        if not s < t:
            raise ValueError(f"Interval start {s} must be before its end {t}")
        if s < self.start or t > self.end:
            raise ValueError(f"Interval [{s}, {t}] outside [{self.start}, {self.end}]")
        inside = self._times[(self._times > s) & (self._times < t)]
        nodes = np.concatenate([[s], inside, [t]])
        return PiecewiseLinearPath(nodes, self.value_at(nodes))

    def one_variation(self) -> float:
        return float(np.linalg.norm(np.diff(self._points, axis=0), axis=1).sum())

    def __repr__(self) -> str:
        return f"PiecewiseLinearPath(nodes={self._times.shape[0]}, dim={self.dim})"


def random_piecewise_linear_path(
    rng: np.random.Generator, segments: int, dim: int, horizon: float = 1.0
) -> PiecewiseLinearPath:
    """Random walk with Gaussian steps of variance dt on a jittered grid of [0, horizon]."""
    if segments < 1:
        raise ValueError(f"Need at least one segment, got {segments}")
    gaps = rng.uniform(0.5, 1.5, size=segments)
    times = np.concatenate([[0.0], np.cumsum(gaps) / gaps.sum() * horizon])
    times[-1] = horizon
    steps = rng.standard_normal((segments, dim)) * np.sqrt(np.diff(times))[:, None]
    points = np.vstack([np.zeros((1, dim)), np.cumsum(steps, axis=0)])
    return PiecewiseLinearPath(times, points)


def signature_of_path(
    path: PiecewiseLinearPath, s: float, t: float, degree: int
) -> TruncatedTensor:
    piece = path.clipped(s, t)
    segments = segment_exp_levels(np.diff(piece.points, axis=0), degree)
    prefix = prefix_levels(segments)
    return TruncatedTensor([level[-1] for level in prefix], path.dim)


def riemann_signature_oracle(
    path: PiecewiseLinearPath, s: float, t: float, degree: int, substeps: int
) -> TruncatedTensor:
    """
    Nested left-point Riemann sums of the iterated integrals over a uniform grid of ``substeps``
    cells: level n is the sum over m_1 < ... < m_n of dx_{m_1} ⊗ ... ⊗ dx_{m_n}.
    """
    if substeps < 1:
        raise ValueError(f"Substeps must be positive, got {substeps}")
    piece = path.clipped(s, t)
    dx = np.diff(path.value_at(np.linspace(s, t, substeps + 1)), axis=0)
    steps = [np.ones((substeps, 1)), dx] + [
        np.zeros((substeps, path.dim**n)) for n in range(2, degree + 1)
    ]
    prefix = prefix_levels(steps[: degree + 1])
    return TruncatedTensor([level[-1] for level in prefix], piece.dim)


class MultiplicativeFunctional:
    """
    A grid-supported multiplicative functional.

    ``adjacent_levels[n]`` has shape (L, d**n) and holds level n of X_{t_i, t_{i+1}} in row i.
    """

    def __init__(
        self, grid: npt.ArrayLike, adjacent_levels: Sequence[npt.ArrayLike], dim: int
    ) -> None:
        times = _frozen(grid)
        _strictly_increasing(times, "Grid")
        intervals = times.shape[0] - 1
        if len(adjacent_levels) < 1:
            raise ValueError("A multiplicative functional needs at least the scalar level")
        frozen = []
        for n, level in enumerate(adjacent_levels):
            array = np.array(level, dtype=float).reshape(intervals, -1)
            if array.shape[1] != dim**n:
                raise ValueError(
                    f"Level {n} rows must have {dim ** n} entries, got {array.shape[1]}"
                )
            array.setflags(write=False)
            frozen.append(array)
        if np.any(frozen[0] != 1.0):
            raise ValueError("Adjacent increments must be group elements (level 0 equal to 1)")
        self._grid = times
        self._dim = dim
        self._levels: PVector[FloatArray] = pvector(frozen)

    @classmethod
    def from_adjacent(
        cls, grid: npt.ArrayLike, increments: Sequence[TruncatedTensor]
    ) -> "MultiplicativeFunctional":
        if len(increments) == 0:
            raise ValueError("Need at least one adjacent increment")
        dim, degree = increments[0].dim, increments[0].degree
        if any(x.dim != dim or x.degree != degree for x in increments):
            raise ValueError("Adjacent increments must share dimension and degree")
        levels = [np.stack([x.level(n) for x in increments]) for n in range(degree + 1)]
        return cls(grid, levels, dim)

    @classmethod
    def from_path(
        cls, path: PiecewiseLinearPath, degree: int, grid: npt.ArrayLike | None = None
    ) -> "MultiplicativeFunctional":
        """Signature functional of ``path`` on ``grid`` (default: the path's own nodes)."""
        if grid is None:
            segments = segment_exp_levels(np.diff(path.points, axis=0), degree)
            return cls(path.times, segments, path.dim)
        times = _frozen(grid)
        _strictly_increasing(times, "Grid")
        if times[0] < path.start or times[-1] > path.end:
            raise ValueError(f"Grid leaves the path domain [{path.start}, {path.end}]")
        inside = path.times[(path.times > times[0]) & (path.times < times[-1])]
        merged = np.union1d(times, inside)
        segments = segment_exp_levels(np.diff(path.value_at(merged), axis=0), degree)
        cuts = np.searchsorted(merged, times)
        return cls(times, segmented_products_levels(segments, cuts), path.dim)

    @property
    def grid(self) -> FloatArray:
        return self._grid

    @property
    def dim(self) -> int:
        return self._dim

    @property
    def degree(self) -> int:
        return len(self._levels) - 1

    @property
    def intervals(self) -> int:
        return int(self._grid.shape[0]) - 1

    @property
    def adjacent_levels(self) -> PVector[FloatArray]:
        return self._levels

    @property
    def adjacent_increments(self) -> list[TruncatedTensor]:
        return [
            TruncatedTensor([level[i] for level in self._levels], self._dim)
            for i in range(self.intervals)
        ]

    def _check_index(self, i: int) -> None:
        if not 0 <= i <= self.intervals:
            raise IndexError(f"Grid index {i} outside 0..{self.intervals}")

    def increments_from(self, i: int) -> Levels:
        """Levels of X_{t_i, t_j} for j = i..L, one row per j (row 0 is the identity)."""
        self._check_index(i)
        return prefix_levels([level[i:] for level in self._levels])

    def increment(self, i: int, j: int) -> TruncatedTensor:
        self._check_index(i)
        self._check_index(j)
        if not i < j:
            raise ValueError(f"Increment needs i < j, got {i}, {j}")
        prefix = prefix_levels([level[i:j] for level in self._levels])
        return TruncatedTensor([level[-1] for level in prefix], self._dim)

    def restrict(self, indices: npt.ArrayLike) -> "MultiplicativeFunctional":
        """The functional on the sub-grid ``grid[indices]``."""
        cuts = np.asarray(indices, dtype=int)
        if cuts.ndim != 1 or cuts.shape[0] < 2 or np.any(np.diff(cuts) <= 0):
            raise ValueError("Sub-grid indices must be strictly increasing with at least 2 entries")
        self._check_index(int(cuts[0]))
        self._check_index(int(cuts[-1]))
        window = [level[cuts[0] : cuts[-1]] for level in self._levels]
        return MultiplicativeFunctional(
            self._grid[cuts], segmented_products_levels(window, cuts - cuts[0]), self._dim
        )

    def truncated(self, degree: int) -> "MultiplicativeFunctional":
        if not 0 <= degree <= self.degree:
            raise ValueError(f"Cannot truncate degree {self.degree} to {degree}")
        return MultiplicativeFunctional(self._grid, list(self._levels)[: degree + 1], self._dim)

    def __repr__(self) -> str:
        return (
            f"MultiplicativeFunctional(intervals={self.intervals}, dim={self._dim}, "
            f"degree={self.degree})"
        )


def lyons_extend(mf: MultiplicativeFunctional) -> MultiplicativeFunctional:
    """
    Extension to degree N + 1 at grid resolution: every adjacent increment is lifted by its
    geodesic extension and increments over longer intervals are the Chen products of these.
    """
    if mf.degree < 1:
        raise ValueError(f"Extension needs degree at least 1, got {mf.degree}")
    levels = geodesic_extension_levels([np.array(level) for level in mf.adjacent_levels], mf.dim)
    return MultiplicativeFunctional(mf.grid, levels, mf.dim)


def _check_dissection(mf: MultiplicativeFunctional, dissection: Sequence[int]) -> np.ndarray:
    points = np.asarray(dissection, dtype=int)
    if points.ndim != 1 or points.shape[0] < 2 or np.any(np.diff(points) <= 0):
        raise ValueError("A dissection needs at least 2 strictly increasing grid indices")
    if points[0] < 0 or points[-1] > mf.intervals:
        raise IndexError(f"Dissection leaves the grid 0..{mf.intervals}")
    return points


def _check_drop_index(dissection: np.ndarray, j: int) -> None:
    interior = dissection.shape[0] - 2
    if not 1 <= j <= interior:
        raise IndexError(f"Drop index {j} outside 1..{interior}")


def hatted_dissection_product(
    mf: MultiplicativeFunctional, dissection: Sequence[int]
) -> TruncatedTensor:
    """Chen product over the dissection of the increments extended by zero to degree N + 1."""
    points = _check_dissection(mf, dissection)
    pieces = mf.restrict(points).adjacent_levels
    top = np.zeros((points.shape[0] - 1, mf.dim ** (mf.degree + 1)))
    prefix = prefix_levels([np.array(level) for level in pieces] + [top])
    return TruncatedTensor([level[-1] for level in prefix], mf.dim)


def drop_point(dissection: Sequence[int], j: int) -> tuple[int, ...]:
    points = tuple(int(u) for u in dissection)
    _check_drop_index(np.asarray(points), j)
    return points[:j] + points[j + 1 :]


def point_drop_defect(
    mf: MultiplicativeFunctional, dissection: Sequence[int], j: int
) -> FloatArray:
    """
    Level N + 1 of the difference between the hatted products over D and D without u_j:
    the sum over n = 1..N of X^n_{u_{j-1}, u_j} ⊗ X^{N+1-n}_{u_j, u_{j+1}}.
    """
    points = _check_dissection(mf, dissection)
    _check_drop_index(points, j)
    left = mf.increment(int(points[j - 1]), int(points[j]))
    right = mf.increment(int(points[j]), int(points[j + 1]))
    top = mf.degree + 1
    defect = np.zeros(mf.dim**top)
    for n in range(1, top):
        defect += np.multiply.outer(left.level(n), right.level(top - n)).reshape(-1)
    return defect


def select_drop_point(control: "Control", dissection: Sequence[int]) -> int:
    """Interior index j minimizing ω(u_{j-1}, u_{j+1}); ties go to the smallest j."""
    points = [int(u) for u in dissection]
    if len(points) < 3:
        raise ValueError("Dissection has no interior point to drop")
    spans = [control.value(points[j - 1], points[j + 1]) for j in range(1, len(points) - 1)]
    return int(np.argmin(spans)) + 1


@dataclass(frozen=True)
class DropStep:
    dropped: int
    interior_points: int
    defect_norm: float
    neighbour_control: float
    selection_bound: float

    @property
    def within_bound(self) -> bool:
        return self.neighbour_control <= self.selection_bound * (1.0 + 1e-12)


def point_dropping_trace(
    mf: MultiplicativeFunctional, control: "Control", dissection: Sequence[int]
) -> list[DropStep]:
    """Drop points one at a time down to the trivial dissection, recording each defect."""
    points = tuple(int(u) for u in _check_dissection(mf, dissection))
    total = control.value(points[0], points[-1])
    steps = []
    while len(points) > 2:
        interior = len(points) - 2
        j = select_drop_point(control, points)
        defect = point_drop_defect(mf, points, j)
        steps.append(
            DropStep(
                dropped=points[j],
                interior_points=interior,
                defect_norm=float(np.linalg.norm(defect)),
                neighbour_control=control.value(points[j - 1], points[j + 1]),
                selection_bound=2.0 / interior * total,
            )
        )
        points = drop_point(points, j)
    LOGGER.debug("Point dropping finished after %d steps", len(steps))
    return steps


def chen_defect(signatures: Mapping[tuple[int, int], TruncatedTensor]) -> float:
    """
    Largest relative violation of X_{i,k} = X_{i,j} ⊗ X_{j,k} over all triples present in a table
    of independently computed pair signatures.
    """
    worst = 0.0
    keys = sorted(signatures)
    for i, k in keys:
        for j in {b for a, b in keys if a == i and b < k}:
            if (j, k) not in signatures:
                continue
            chained = tensor_mul(signatures[(i, j)], signatures[(j, k)])
            difference = tensor_sub(chained, signatures[(i, k)])
            target = signatures[(i, k)]
            for n in range(1, target.degree + 1):
                scale = max(level_norm(target, n), 1.0)
                worst = max(worst, level_norm(difference, n) / scale)
    return worst
