"""
Gaussian covariance models, joint couplings and exact grid sampling.

Every model has ``dim`` independent, identically distributed components; covariances are the
per-component scalar kernels. Sampling factorizes one Gram matrix and then draws each sample from
its own stream ``default_rng(SeedSequence([seed, index]))``, so batches do not depend on the
thread count.
"""

import logging
import math
from abc import ABC, abstractmethod
from collections.abc import Callable, Mapping
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import numpy.typing as npt
import scipy.linalg
from scipy.integrate import quad

from rough_rates.tensor_algebra import FloatArray
from rough_rates.variation_metrics import CovarianceGrid

LOGGER = logging.getLogger(__name__)

JITTER_LADDER = (1e-14, 1e-13, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8)
NEGATIVE_EIGENVALUE_TOLERANCE = 1e-8
RADICAND_TOLERANCE = 1e-12


class FactorizationError(np.linalg.LinAlgError):
    def __init__(self, min_eigenvalue: float) -> None:
        super().__init__(
            f"Gram matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:.3e})"
        )
        self.min_eigenvalue = min_eigenvalue


class CovarianceModel(ABC):
    """A centred Gaussian process on [0, horizon] given by its scalar kernel R(s, t)."""

    def __init__(self, horizon: float = 1.0, dim: int = 1) -> None:
        if not horizon > 0.0:
            raise ValueError(f"Horizon must be positive, got {horizon}")
        if dim < 1:
            raise ValueError(f"Component count must be positive, got {dim}")
        self.horizon = float(horizon)
        self.dim = dim

    @property
    def rho(self) -> float:
        """Exponent ρ such that the covariance has finite ρ-variation."""
        return 1.0

    @abstractmethod
    def _kernel(self, s: FloatArray, t: FloatArray) -> FloatArray:
        raise NotImplementedError()

    def _check_domain(self, times: FloatArray) -> None:
        if times.size and (times.min() < 0.0 or times.max() > self.horizon * (1.0 + 1e-12)):
            raise ValueError(f"Times must lie in [0, {self.horizon}]")

    def covariance(self, s: npt.ArrayLike, t: npt.ArrayLike) -> FloatArray:
        """Broadcasting evaluation of R(s, t)."""
        s_arr = np.asarray(s, dtype=float)
        t_arr = np.asarray(t, dtype=float)
        self._check_domain(s_arr)
        self._check_domain(t_arr)
        return np.asarray(self._kernel(s_arr, t_arr), dtype=float)

    def gram(self, grid: npt.ArrayLike) -> FloatArray:
        times = np.asarray(grid, dtype=float)
        return self.covariance(times[:, None], times[None, :])

    def __repr__(self) -> str:
        return f"{type(self).__name__}(horizon={self.horizon}, dim={self.dim})"


class BrownianModel(CovarianceModel):
    def _kernel(self, s: FloatArray, t: FloatArray) -> FloatArray:
        return np.minimum(s, t)


class WienerIntegralModel(CovarianceModel):
    """X_t = ∫_0^t f(r) dB_r, so R(s, t) = ∫_0^{min(s, t)} f(r)^2 dr."""

    def __init__(
        self, integrand: Callable[[float], float], horizon: float = 1.0, dim: int = 1
    ) -> None:
        super().__init__(horizon, dim)
        self.integrand = integrand

    def _kernel(self, s: FloatArray, t: FloatArray) -> FloatArray:
        upper = np.minimum(s, t)
        nodes, inverse = np.unique(upper, return_inverse=True)
        pieces = np.zeros(nodes.shape[0])
        previous = 0.0
        for i, node in enumerate(nodes):
            if node > previous:
                pieces[i], _ = quad(lambda r: self.integrand(r) ** 2, previous, node)
            previous = max(previous, float(node))
        return np.cumsum(pieces)[inverse].reshape(upper.shape)


class OUStationaryModel(CovarianceModel):
    """dX = −θ X dt + σ dB started in its stationary law."""

    def __init__(self, theta: float, sigma: float, horizon: float = 1.0, dim: int = 1) -> None:
        super().__init__(horizon, dim)
        if not theta > 0.0:
            raise ValueError(f"Mean reversion must be positive, got {theta}")
        self.theta = theta
        self.sigma = sigma

    def _kernel(self, s: FloatArray, t: FloatArray) -> FloatArray:
        return self.sigma**2 / (2 * self.theta) * np.exp(-self.theta * np.abs(t - s))


class OUZeroStartModel(OUStationaryModel):
    """The same SDE started at zero."""

    def _kernel(self, s: FloatArray, t: FloatArray) -> FloatArray:
        scale = self.sigma**2 / (2 * self.theta)
        return scale * (np.exp(-self.theta * np.abs(t - s)) - np.exp(-self.theta * (t + s)))


class BridgeModel(CovarianceModel):
    """X_t − (t/T) X_T for a base process X."""

    def __init__(self, base: CovarianceModel) -> None:
        super().__init__(base.horizon, base.dim)
        self.base = base

    @property
    def rho(self) -> float:
        return self.base.rho

    def _kernel(self, s: FloatArray, t: FloatArray) -> FloatArray:
        end = self.horizon
        r = self.base.covariance
        return (
            r(s, t)
            - t / end * r(s, end)
            - s / end * r(end, t)
            + s * t / end**2 * r(end, end)
        )


class TimeChangeModel(CovarianceModel):
    """R(φ(s), φ(t)) for a continuous non-decreasing φ: [0, T] → [0, T_base]."""

    def __init__(
        self,
        base: CovarianceModel,
        time_change: Callable[[FloatArray], FloatArray],
        horizon: float | None = None,
    ) -> None:
        super().__init__(base.horizon if horizon is None else horizon, base.dim)
        sampled = np.asarray(time_change(np.linspace(0.0, self.horizon, 1025)), dtype=float)
        if np.any(np.diff(sampled) < 0.0):
            raise ValueError("Time change must be non-decreasing")
        if sampled.min() < 0.0 or sampled.max() > base.horizon * (1.0 + 1e-12):
            raise ValueError(f"Time change must map into [0, {base.horizon}]")
        self.base = base
        self.time_change = time_change

    @property
    def rho(self) -> float:
        return self.base.rho

    def _kernel(self, s: FloatArray, t: FloatArray) -> FloatArray:
        changed_s = np.clip(self.time_change(s), 0.0, self.base.horizon)
        changed_t = np.clip(self.time_change(t), 0.0, self.base.horizon)
        return self.base.covariance(changed_s, changed_t)


class FractionalBrownianModel(CovarianceModel):
    def __init__(self, hurst: float, horizon: float = 1.0, dim: int = 1) -> None:
        super().__init__(horizon, dim)
        if not 0.0 < hurst < 1.0:
            raise ValueError(f"Hurst index must lie in (0, 1), got {hurst}")
        self.hurst = hurst

    @property
    def rho(self) -> float:
        return max(1.0, 1.0 / (2 * self.hurst))

    def _kernel(self, s: FloatArray, t: FloatArray) -> FloatArray:
        h2 = 2 * self.hurst
        return 0.5 * (s**h2 + t**h2 - np.abs(t - s) ** h2)


def evaluate_covariance(model: CovarianceModel, s: float, t: float) -> float:
    return float(model.covariance(s, t))


def covariance_grid(model: CovarianceModel, grid: npt.ArrayLike) -> CovarianceGrid:
    times = np.asarray(grid, dtype=float)
    return CovarianceGrid(times, times, model.gram(times))


def factorize_gram(gram: npt.ArrayLike) -> FloatArray:
    """
    A factor F with F F^T ≈ gram. Rows with zero variance are exact zeros; the rest goes through
    Cholesky with a relative diagonal jitter ladder and finally a clipped eigendecomposition.
    """
    matrix = np.asarray(gram, dtype=float)
    size = matrix.shape[0]
    factor = np.zeros((size, size))
    active = np.flatnonzero(np.diag(matrix) > 0.0)
    if active.size == 0:
        return factor
    block = matrix[np.ix_(active, active)]
    block = 0.5 * (block + block.T)
    scale = float(np.mean(np.diag(block)))
    try:
        factor[np.ix_(active, active)] = scipy.linalg.cholesky(block, lower=True)
        return factor
    except np.linalg.LinAlgError:
        pass
    for jitter in JITTER_LADDER:
        try:
            lower = scipy.linalg.cholesky(block + jitter * scale * np.eye(active.size), lower=True)
        except np.linalg.LinAlgError:
            continue
        LOGGER.debug("Cholesky needed relative jitter %.0e", jitter)
        factor[np.ix_(active, active)] = lower
        return factor
    eigenvalues, vectors = scipy.linalg.eigh(block)
    smallest = float(eigenvalues.min())
    if smallest < -NEGATIVE_EIGENVALUE_TOLERANCE * scale:
        raise FactorizationError(smallest)
    LOGGER.warning("Cholesky failed up to jitter %.0e; clipping eigenvalues", JITTER_LADDER[-1])
    factor[np.ix_(active, active)] = vectors * np.sqrt(np.clip(eigenvalues, 0.0, None))
    return factor


def draw_gaussian(
    factor: FloatArray, dim: int, n_samples: int, seed: int, threads: int = 1
) -> FloatArray:
    """Samples of shape (n_samples, rows of ``factor``, dim)."""
    if n_samples < 1:
        raise ValueError(f"Sample count must be positive, got {n_samples}")

    def one(index: int) -> FloatArray:
        rng = np.random.default_rng(np.random.SeedSequence([seed, index]))
        return factor @ rng.standard_normal((factor.shape[1], dim))

    with ThreadPoolExecutor(max_workers=max(threads, 1)) as pool:
        return np.stack(list(pool.map(one, range(n_samples))))


@dataclass(frozen=True)
class SampleBatch:
    grid: FloatArray
    x: FloatArray
    y: FloatArray | None = None

    @property
    def n_samples(self) -> int:
        return int(self.x.shape[0])


@dataclass(frozen=True)
class PairCovarianceGrids:
    xx: CovarianceGrid
    xy: CovarianceGrid
    yy: CovarianceGrid
    difference: CovarianceGrid
    joint: CovarianceGrid = field(repr=False)


class JointGaussianPair(ABC):
    """A pair (X, Y) of jointly Gaussian processes with independent components."""

    independent_components = True

    def __init__(self, horizon: float, dim: int) -> None:
        self.horizon = horizon
        self.dim = dim

    @abstractmethod
    def blocks(
        self, s: npt.ArrayLike, t: npt.ArrayLike
    ) -> tuple[FloatArray, FloatArray, FloatArray]:
        """Matrices R_X(s_i, t_j), R_XY(s_i, t_j) = E[X_{s_i} Y_{t_j}] and R_Y(s_i, t_j)."""
        raise NotImplementedError()

    def refinement_points(self, grid: FloatArray) -> FloatArray:
        return np.asarray(grid, dtype=float)

    def r_xy(self, s: float, t: float) -> float:
        return float(self.blocks([s], [t])[1][0, 0])

    def joint_gram(self, grid: npt.ArrayLike) -> FloatArray:
        times = np.asarray(grid, dtype=float)
        c_xx, c_xy, c_yy = self.blocks(times, times)
        return np.block([[c_xx, c_xy], [c_xy.T, c_yy]])

    def sample(
        self, grid: npt.ArrayLike, n_samples: int, seed: int, threads: int = 1
    ) -> SampleBatch:
        times = np.asarray(grid, dtype=float)
        gram = self.joint_gram(times)
        draws = draw_gaussian(factorize_gram(gram), self.dim, n_samples, seed, threads)
        size = times.shape[0]
        return SampleBatch(times, draws[:, :size], draws[:, size:])


class IdenticalPair(JointGaussianPair):
    """Y = X."""

    def __init__(self, model: CovarianceModel) -> None:
        super().__init__(model.horizon, model.dim)
        self.model = model

    def blocks(
        self, s: npt.ArrayLike, t: npt.ArrayLike
    ) -> tuple[FloatArray, FloatArray, FloatArray]:
        s_arr = np.asarray(s, dtype=float)
        t_arr = np.asarray(t, dtype=float)
        gram = self.model.covariance(s_arr[:, None], t_arr[None, :])
        return gram, gram, gram


class PiecewiseLinearCoupling(JointGaussianPair):
    """X together with its piecewise-linear interpolation X^(k) on k uniform cells."""

    def __init__(self, model: CovarianceModel, k: int) -> None:
        if k < 1:
            raise ValueError(f"Mesh count must be positive, got {k}")
        super().__init__(model.horizon, model.dim)
        self.model = model
        self.k = k
        self.mesh = np.linspace(0.0, model.horizon, k + 1)

    def interpolation_weights(self, times: npt.ArrayLike) -> FloatArray:
        """W with X^(k)_t = Σ_c W[t, c] X_{m_c}."""
        query = np.asarray(times, dtype=float)
        scaled = query * self.k / self.horizon
        cell = np.clip(np.floor(scaled).astype(int), 0, self.k - 1)
        fraction = np.clip(scaled - cell, 0.0, 1.0)
        fraction[np.abs(fraction) < 1e-12] = 0.0
        fraction[np.abs(1.0 - fraction) < 1e-12] = 1.0
        weights = np.zeros((query.shape[0], self.k + 1))
        rows = np.arange(query.shape[0])
        weights[rows, cell] = 1.0 - fraction
        weights[rows, cell + 1] += fraction
        return weights

    def blocks(
        self, s: npt.ArrayLike, t: npt.ArrayLike
    ) -> tuple[FloatArray, FloatArray, FloatArray]:
        s_arr = np.asarray(s, dtype=float)
        t_arr = np.asarray(t, dtype=float)
        c_xx = self.model.covariance(s_arr[:, None], t_arr[None, :])
        to_mesh = self.model.covariance(s_arr[:, None], self.mesh[None, :])
        w_t = self.interpolation_weights(t_arr)
        w_s = self.interpolation_weights(s_arr)
        c_xy = to_mesh @ w_t.T
        c_yy = w_s @ self.model.gram(self.mesh) @ w_t.T
        return c_xx, c_xy, c_yy

    def refinement_points(self, grid: FloatArray) -> FloatArray:
        times = np.asarray(grid, dtype=float)
        midpoints = 0.5 * (self.mesh[1:] + self.mesh[:-1])
        inside = midpoints[(midpoints >= times.min()) & (midpoints <= times.max())]
        return np.union1d(times, inside)

    def sample(
        self, grid: npt.ArrayLike, n_samples: int, seed: int, threads: int = 1
    ) -> SampleBatch:
        """X is sampled on the grid and the mesh, X^(k) is its interpolation."""
        times = np.asarray(grid, dtype=float)
        tolerance = 1e-12 * self.horizon
        position = np.clip(np.searchsorted(times, self.mesh), 0, times.shape[0] - 1)
        nearest = np.where(
            np.abs(times[position] - self.mesh) <= tolerance,
            times[position],
            self.mesh,
        )
        nodes = np.union1d(times, nearest)
        draws = draw_gaussian(
            factorize_gram(self.model.gram(nodes)), self.dim, n_samples, seed, threads
        )
        at_mesh = draws[:, np.searchsorted(nodes, nearest)]
        weights = self.interpolation_weights(times)
        y = np.einsum("tc,ncd->ntd", weights, at_mesh)
        return SampleBatch(times, draws[:, np.searchsorted(nodes, times)], y)

    def __repr__(self) -> str:
        return f"PiecewiseLinearCoupling(model={self.model!r}, k={self.k})"


def couple_piecewise_linear(model: CovarianceModel, k: int) -> PiecewiseLinearCoupling:
    return PiecewiseLinearCoupling(model, k)


def gram_matrix(source: CovarianceModel | JointGaussianPair, grid: npt.ArrayLike) -> FloatArray:
    if isinstance(source, JointGaussianPair):
        return source.joint_gram(grid)
    return source.gram(grid)


def pair_covariance_grids(pair: JointGaussianPair, grid: npt.ArrayLike) -> PairCovarianceGrids:
    """R_X, R_XY, R_Y, R_{X−Y} and the joint block covariance R_{(X,Y)} on a grid."""
    times = np.asarray(grid, dtype=float)
    c_xx, c_xy, c_yy = pair.blocks(times, times)
    difference = c_xx - c_xy - c_xy.T + c_yy
    doubled = np.concatenate([times, times])
    return PairCovarianceGrids(
        xx=CovarianceGrid(times, times, c_xx),
        xy=CovarianceGrid(times, times, c_xy),
        yy=CovarianceGrid(times, times, c_yy),
        difference=CovarianceGrid(times, times, difference),
        joint=CovarianceGrid(
            np.arange(doubled.shape[0], dtype=float),
            np.arange(doubled.shape[0], dtype=float),
            pair.joint_gram(times),
        ),
    )


def sample_paths(
    source: CovarianceModel | JointGaussianPair,
    grid: npt.ArrayLike,
    n_samples: int,
    seed: int,
    threads: int = 1,
) -> SampleBatch:
    times = np.asarray(grid, dtype=float)
    if isinstance(source, JointGaussianPair):
        return source.sample(times, n_samples, seed, threads)
    draws = draw_gaussian(factorize_gram(source.gram(times)), source.dim, n_samples, seed, threads)
    return SampleBatch(times, draws)


def sup_l2_distance(pair: JointGaussianPair, grid: npt.ArrayLike) -> float:
    """max_t |X_t − Y_t|_{L²} over the grid and the pair's refinement points."""
    times = np.asarray(grid, dtype=float)
    if times.size == 0:
        raise ValueError("Grid must not be empty")
    points = pair.refinement_points(times)
    c_xx, c_xy, c_yy = pair.blocks(points, points)
    radicand = np.diag(c_xx) - 2 * np.diag(c_xy) + np.diag(c_yy)
    if radicand.min() < -RADICAND_TOLERANCE:
        raise ValueError(f"Negative L2 radicand {radicand.min():.3e}")
    return float(np.sqrt(np.clip(radicand, 0.0, None)).max())


class HeatFieldModel:
    """
    The modified stochastic heat equation dψ = (∂_xx − 1)ψ dt + σ dW on the circle [0, 2π],
    expanded in Fourier modes |k| <= k_max, each a stationary OU process with rate 1 + k².
    """

    def __init__(self, sigma: float, k_max: int = 512, dim: int = 1) -> None:
        if k_max < 1:
            raise ValueError(f"Fourier truncation must be at least 1, got {k_max}")
        if dim < 1:
            raise ValueError(f"Value dimension must be positive, got {dim}")
        self.sigma = sigma
        self.k_max = k_max
        self.dim = dim
        self.modes = np.arange(-k_max, k_max + 1)
        self.rates = 1.0 + self.modes.astype(float) ** 2

    @property
    def tail_bound(self) -> float:
        """Bound on the dropped part of the covariance series."""
        return 2.0 / self.k_max * self.sigma**2 / (4 * math.pi)

    def basis(self, x: npt.ArrayLike) -> FloatArray:
        """e_k(x) for every mode, shape (modes, points)."""
        points = np.atleast_1d(np.asarray(x, dtype=float))
        k = self.modes[:, None]
        values = np.where(
            k > 0,
            np.sin(k * points[None, :]) / math.sqrt(math.pi),
            np.cos(k * points[None, :]) / math.sqrt(math.pi),
        )
        values[self.k_max] = 1.0 / math.sqrt(2 * math.pi)
        return values

    def series(self, x: npt.ArrayLike, y: npt.ArrayLike, s: float, t: float) -> FloatArray:
        """σ²/(4π) Σ_{|k|<=k_max} cos(k(x − y)) / (1 + k²) e^{−(1 + k²)|t − s|}."""
        offset = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
        k = np.arange(1, self.k_max + 1, dtype=float)
        weights = np.exp(-(1.0 + k**2) * abs(t - s)) / (1.0 + k**2)
        cosines = np.cos(np.multiply.outer(offset, k))
        total = np.exp(-abs(t - s)) + 2.0 * (cosines * weights).sum(axis=-1)
        return self.sigma**2 / (4 * math.pi) * total

    def closed_form(self, x: npt.ArrayLike) -> FloatArray:
        """K(x) = σ² cosh(|x| − π) / (4 sinh π), extended periodically."""
        wrapped = np.mod(np.asarray(x, dtype=float) + math.pi, 2 * math.pi) - math.pi
        return self.sigma**2 * np.cosh(np.abs(wrapped) - math.pi) / (4 * math.sinh(math.pi))

    def __repr__(self) -> str:
        return f"HeatFieldModel(sigma={self.sigma}, k_max={self.k_max}, dim={self.dim})"


@dataclass(frozen=True)
class HeatCovariance:
    value: float
    dim: int
    closed_form: float | None = None

    @property
    def matrix(self) -> FloatArray:
        return self.value * np.eye(self.dim)

    @property
    def discrepancy(self) -> float | None:
        return None if self.closed_form is None else abs(self.value - self.closed_form)


def _check_space(points: FloatArray) -> None:
    if points.size and (points.min() < 0.0 or points.max() > 2 * math.pi * (1.0 + 1e-12)):
        raise ValueError("Space points must lie in [0, 2π]")


def heat_covariance(
    model: HeatFieldModel, x: float, y: float, s: float, t: float
) -> HeatCovariance:
    _check_space(np.array([x, y], dtype=float))
    value = float(model.series(x, y, s, t))
    closed = float(model.closed_form(x - y)) if s == t else None
    return HeatCovariance(value, model.dim, closed)


def heat_time_increment_l2(model: HeatFieldModel, s: float, t: float, x: float = 0.0) -> float:
    """|ψ_t(x) − ψ_s(x)|_{L²} per component, from the truncated series."""
    same = float(model.series(x, x, s, s))
    cross = float(model.series(x, x, s, t))
    return math.sqrt(max(2.0 * (same - cross), 0.0))


def heat_spatial_grid(model: HeatFieldModel, space_grid: npt.ArrayLike) -> CovarianceGrid:
    """Equal-time spatial covariance K(x − y) on a grid."""
    points = np.asarray(space_grid, dtype=float)
    _check_space(points)
    return CovarianceGrid(points, points, model.closed_form(points[:, None] - points[None, :]))


def sample_heat_field(
    model: HeatFieldModel,
    space_grid: npt.ArrayLike,
    times: npt.ArrayLike,
    n_samples: int,
    seed: int,
    threads: int = 1,
) -> FloatArray:
    """Field samples of shape (n_samples, times, space points, dim) from exact OU transitions."""
    points = np.asarray(space_grid, dtype=float)
    instants = np.atleast_1d(np.asarray(times, dtype=float))
    _check_space(points)
    if np.any(np.diff(instants) < 0.0):
        raise ValueError("Times must be non-decreasing")
    if n_samples < 1:
        raise ValueError(f"Sample count must be positive, got {n_samples}")
    basis = model.basis(points)
    stationary = model.sigma**2 / (2 * model.rates)

    def one(index: int) -> FloatArray:
        rng = np.random.default_rng(np.random.SeedSequence([seed, index]))
        shape = (model.modes.shape[0], model.dim)
        state = rng.standard_normal(shape) * np.sqrt(stationary)[:, None]
        frames = [state]
        for delta in np.diff(instants):
            if delta == 0.0:
                frames.append(frames[-1])
                continue
            decay = np.exp(-model.rates * delta)[:, None]
            spread = np.sqrt(stationary * (1.0 - np.exp(-2 * model.rates * delta)))[:, None]
            frames.append(decay * frames[-1] + spread * rng.standard_normal(shape))
        return np.einsum("kx,tkd->txd", basis, np.stack(frames))

    with ThreadPoolExecutor(max_workers=max(threads, 1)) as pool:
        return np.stack(list(pool.map(one, range(n_samples))))


class HeatTimePair(JointGaussianPair):
    """
    The spatial pair (ψ_s(·), ψ_t(·)) of the heat field: a jointly Gaussian pair indexed by space
    x ∈ [0, 2π].
    """

    def __init__(self, model: HeatFieldModel, s: float, t: float) -> None:
        super().__init__(2 * math.pi, model.dim)
        self.model = model
        self.s = s
        self.t = t

    def blocks(
        self, s: npt.ArrayLike, t: npt.ArrayLike
    ) -> tuple[FloatArray, FloatArray, FloatArray]:
        x = np.asarray(s, dtype=float)[:, None]
        y = np.asarray(t, dtype=float)[None, :]
        same = self.model.series(x, y, self.s, self.s)
        cross = self.model.series(x, y, self.s, self.t)
        return same, cross, same


@dataclass(frozen=True)
class ModelSpec:
    """Serializable description of a covariance model."""

    kind: str = "brownian"
    horizon: float = 1.0
    dim: int = 2
    theta: float = 1.0
    sigma: float = 1.0
    hurst: float = 0.5
    integrand: str = "constant"
    time_change: str = "square"
    base: "ModelSpec | None" = None

    KINDS = (
        "brownian",
        "wiener_integral",
        "ou_stationary",
        "ou_zero_start",
        "bridge",
        "time_change",
        "fbm",
    )

    def __post_init__(self) -> None:
        if self.kind not in self.KINDS:
            raise ValueError(f"Unknown model kind {self.kind!r}; expected one of {self.KINDS}")
        if self.kind in ("bridge", "time_change") and self.base is None:
            raise ValueError(f"Model kind {self.kind!r} needs a base model")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ModelSpec":
        values = dict(data)
        if values.get("base") is not None:
            values["base"] = cls.from_dict(values["base"])
        return cls(**values)


INTEGRANDS: dict[str, Callable[[float], float]] = {
    "constant": lambda r: 1.0,
    "linear": lambda r: r,
    "sqrt": lambda r: math.sqrt(r),
    "exponential": lambda r: math.exp(-r),
}


def _time_change(name: str, horizon: float) -> Callable[[FloatArray], FloatArray]:
    if name == "square":
        return lambda t: np.asarray(t) ** 2 / horizon
    if name == "sqrt":
        return lambda t: np.sqrt(np.asarray(t) * horizon)
    raise ValueError(f"Unknown time change {name!r}")


def model_from_spec(spec: ModelSpec) -> CovarianceModel:
    if spec.kind == "brownian":
        return BrownianModel(spec.horizon, spec.dim)
    if spec.kind == "wiener_integral":
        if spec.integrand not in INTEGRANDS:
            raise ValueError(f"Unknown integrand {spec.integrand!r}")
        return WienerIntegralModel(INTEGRANDS[spec.integrand], spec.horizon, spec.dim)
    if spec.kind == "ou_stationary":
        return OUStationaryModel(spec.theta, spec.sigma, spec.horizon, spec.dim)
    if spec.kind == "ou_zero_start":
        return OUZeroStartModel(spec.theta, spec.sigma, spec.horizon, spec.dim)
    if spec.kind == "fbm":
        return FractionalBrownianModel(spec.hurst, spec.horizon, spec.dim)
    assert spec.base is not None
    base = model_from_spec(spec.base)
    if spec.kind == "bridge":
        return BridgeModel(base)
    return TimeChangeModel(base, _time_change(spec.time_change, base.horizon))
