"""
Truncated tensor algebra T^N(R^d).

Level ``n`` of an element is stored as a flat, row-major array with ``d**n`` entries; level 0 is a
one-entry array holding the scalar part. The module has two layers:

* batched level helpers (``*_levels``) working on lists of arrays whose last axis is the level
  axis and whose leading axes are batch axes; every vectorized caller in the package goes through
  them,
* the immutable :class:`TruncatedTensor` value and the public operations on it.
"""

import math
from collections.abc import Sequence

import numpy as np
import numpy.typing as npt
from pyrsistent import pvector
from pyrsistent.typing import PVector
from scipy.special import gamma

FloatArray = npt.NDArray[np.float64]
Levels = list[FloatArray]


def _outer(a: FloatArray, b: FloatArray) -> FloatArray:
    product = a[..., :, None] * b[..., None, :]
    return product.reshape(product.shape[:-2] + (-1,))


def chen_product_levels(a: Levels, b: Levels) -> Levels:
    """Level-wise tensor product; leading axes broadcast."""
    return [sum(_outer(a[k], b[n - k]) for k in range(n + 1)) for n in range(len(a))]


def _nilpotent_power_series(x: Levels, coefficients: Sequence[float]) -> Levels:
    """Sum of ``coefficients[k] * x^k`` for an element with zero scalar part."""
    degree = len(x) - 1
    unit = [np.ones_like(x[0])] + [np.zeros_like(level) for level in x[1:]]
    result = [coefficients[0] * level for level in unit]
    power = unit
    for k in range(1, degree + 1):
        power = chen_product_levels(power, x)
        result = [acc + coefficients[k] * level for acc, level in zip(result, power)]
    return result


def _without_scalar(a: Levels) -> Levels:
    return [np.zeros_like(a[0])] + list(a[1:])


def inverse_levels(a: Levels) -> Levels:
    """Inverse of elements with scalar part one, via (1 + x)^-1 = sum (-x)^k."""
    degree = len(a) - 1
    return _nilpotent_power_series(_without_scalar(a), [(-1.0) ** k for k in range(degree + 1)])


def log_levels(a: Levels) -> Levels:
    degree = len(a) - 1
    coefficients = [0.0] + [(-1.0) ** (k + 1) / k for k in range(1, degree + 1)]
    return _nilpotent_power_series(_without_scalar(a), coefficients)


def exp_levels(x: Levels) -> Levels:
    degree = len(x) - 1
    coefficients = [1.0 / math.factorial(k) for k in range(degree + 1)]
    return _nilpotent_power_series(_without_scalar(x), coefficients)


def segment_exp_levels(v: FloatArray, degree: int) -> Levels:
    """Levels of exp(v) for a batch of vectors ``v`` of shape (..., d)."""
    v = np.asarray(v, dtype=float)
    levels = [np.ones(v.shape[:-1] + (1,))]
    for n in range(1, degree + 1):
        levels.append(_outer(levels[-1], v) / n)
    return levels


def prefix_levels(increments: Levels) -> Levels:
    """
    Running Chen products of consecutive group increments.

    ``increments[n]`` has shape (L, d**n); the result has shape (L + 1, d**n) per level with the
    identity in row 0 and increment_0 ⊗ ... ⊗ increment_{j-1} in row j.
    """
    length = increments[0].shape[0]
    prefix = [np.ones((length + 1, 1))]
    for n in range(1, len(increments)):
        step = sum(_outer(prefix[k][:-1], increments[n - k]) for k in range(n))
        level = np.zeros((length + 1, increments[n].shape[-1]))
        np.cumsum(step, axis=0, out=level[1:])
        prefix.append(level)
    return prefix


def segmented_products_levels(increments: Levels, boundaries: npt.ArrayLike) -> Levels:
    """
    Chen products of consecutive runs of group increments.

    ``boundaries`` are increasing row indices b_0 = 0 < ... < b_m = L; chunk c is the product of
    increments b_c .. b_{c+1} - 1 and the result has m rows per level.
    """
    cuts = np.asarray(boundaries, dtype=int)
    length = increments[0].shape[0]
    if cuts.ndim != 1 or cuts.shape[0] < 2 or cuts[0] != 0 or cuts[-1] != length:
        raise ValueError(f"Boundaries must run from 0 to {length}")
    if np.any(np.diff(cuts) <= 0):
        raise ValueError("Boundaries must be strictly increasing")
    owner = np.searchsorted(cuts, np.arange(length), side="right") - 1
    start = cuts[owner]
    running = [np.ones((length, 1))]
    chunks = [np.ones((cuts.shape[0] - 1, 1))]
    for n in range(1, len(increments)):
        step = sum(_outer(running[k], increments[n - k]) for k in range(n))
        total = np.zeros((length + 1, increments[n].shape[-1]))
        np.cumsum(step, axis=0, out=total[1:])
        running.append(total[:-1] - total[start])
        chunks.append(total[cuts[1:]] - total[cuts[:-1]])
    return chunks


def geodesic_extension_levels(a: Levels, dim: int) -> Levels:
    """
    Lift group elements of degree N to degree N + 1 by exponentiating their truncated logarithm
    with a zero top level. A segment exponential is lifted to the segment exponential.
    """
    logarithm = log_levels(a)
    top = np.zeros(logarithm[-1].shape[:-1] + (logarithm[-1].shape[-1] * dim,))
    return exp_levels(logarithm + [top])


class TruncatedTensor:
    """
    An immutable element of T^N(R^d).

    Levels are kept in a persistent vector of read-only arrays, so instances can be shared between
    threads and used as values.
    """

    def __init__(self, levels: Sequence[npt.ArrayLike], dim: int) -> None:
        if dim < 1:
            raise ValueError(f"Dimension must be positive, got {dim}")
        if len(levels) == 0:
            raise ValueError("A truncated tensor needs at least the scalar level")
        frozen = []
        for n, level in enumerate(levels):
            array = np.array(level, dtype=float).reshape(-1)
            if array.shape[0] != dim**n:
                raise ValueError(f"Level {n} must have {dim ** n} entries, got {array.shape[0]}")
            array.setflags(write=False)
            frozen.append(array)
        self._dim = dim
        self._levels: PVector[FloatArray] = pvector(frozen)

    @property
    def dim(self) -> int:
        return self._dim

    @property
    def degree(self) -> int:
        return len(self._levels) - 1

    @property
    def levels(self) -> PVector[FloatArray]:
        return self._levels

    @property
    def scalar(self) -> float:
        return float(self._levels[0][0])

    def level(self, n: int) -> FloatArray:
        if not 0 <= n <= self.degree:
            raise IndexError(f"Level {n} outside 0..{self.degree}")
        return self._levels[n]

    def block(self, n: int) -> FloatArray:
        """Level ``n`` reshaped to a d x ... x d array, for multi-index access."""
        return self.level(n).reshape((self._dim,) * n)

    def as_levels(self) -> Levels:
        return [np.array(level) for level in self._levels]

    def is_group_like(self) -> bool:
        return self.scalar == 1.0

    def allclose(self, other: "TruncatedTensor", rtol: float = 1e-12, atol: float = 1e-12) -> bool:
        _check_compatible(self, other)
        return all(
            np.allclose(a, b, rtol=rtol, atol=atol) for a, b in zip(self._levels, other._levels)
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TruncatedTensor):
            return NotImplemented
        return (
            self._dim == other._dim
            and self.degree == other.degree
            and all(np.array_equal(a, b) for a, b in zip(self._levels, other._levels))
        )

    def __hash__(self) -> int:
        return hash((self._dim, tuple(level.tobytes() for level in self._levels)))

    def __mul__(self, other: "TruncatedTensor") -> "TruncatedTensor":
        return tensor_mul(self, other)

    def __sub__(self, other: "TruncatedTensor") -> "TruncatedTensor":
        return tensor_sub(self, other)

    def __add__(self, other: "TruncatedTensor") -> "TruncatedTensor":
        return tensor_add(self, other)

    def __repr__(self) -> str:
        return str(self)

    def __str__(self) -> str:
        body = ", ".join(np.array2string(level, precision=6) for level in self._levels)
        return f"TruncatedTensor(dim={self._dim}, degree={self.degree}, levels=[{body}])"


def _check_compatible(a: TruncatedTensor, b: TruncatedTensor) -> None:
    if a.dim != b.dim:
        raise ValueError(f"Dimension mismatch: {a.dim} != {b.dim}")
    if a.degree != b.degree:
        raise ValueError(f"Degree mismatch: {a.degree} != {b.degree}")


def identity(dim: int, degree: int) -> TruncatedTensor:
    return TruncatedTensor([np.ones(1)] + [np.zeros(dim**n) for n in range(1, degree + 1)], dim)


def zero(dim: int, degree: int) -> TruncatedTensor:
    return TruncatedTensor([np.zeros(dim**n) for n in range(degree + 1)], dim)


def tensor_mul(a: TruncatedTensor, b: TruncatedTensor) -> TruncatedTensor:
    _check_compatible(a, b)
    return TruncatedTensor(chen_product_levels(a.as_levels(), b.as_levels()), a.dim)


def tensor_add(a: TruncatedTensor, b: TruncatedTensor) -> TruncatedTensor:
    _check_compatible(a, b)
    return TruncatedTensor([x + y for x, y in zip(a.levels, b.levels)], a.dim)


def tensor_sub(a: TruncatedTensor, b: TruncatedTensor) -> TruncatedTensor:
    _check_compatible(a, b)
    return TruncatedTensor([x - y for x, y in zip(a.levels, b.levels)], a.dim)


def tensor_inv(a: TruncatedTensor) -> TruncatedTensor:
    if a.scalar != 1.0:
        raise ValueError(f"Only elements with scalar part 1 are invertible here, got {a.scalar}")
    return TruncatedTensor(inverse_levels(a.as_levels()), a.dim)


def tensor_log(a: TruncatedTensor) -> TruncatedTensor:
    if a.scalar != 1.0:
        raise ValueError(f"Logarithm needs scalar part 1, got {a.scalar}")
    return TruncatedTensor(log_levels(a.as_levels()), a.dim)


def tensor_exp(x: TruncatedTensor) -> TruncatedTensor:
    if x.scalar != 0.0:
        raise ValueError(f"Exponential needs scalar part 0, got {x.scalar}")
    return TruncatedTensor(exp_levels(x.as_levels()), x.dim)


def segment_exp(v: npt.ArrayLike, degree: int) -> TruncatedTensor:
    """Signature of a single straight segment with increment ``v``: level n is v^{⊗n} / n!."""
    if degree < 0:
        raise ValueError(f"Degree must be non-negative, got {degree}")
    vector = np.atleast_1d(np.asarray(v, dtype=float))
    if vector.ndim != 1:
        raise ValueError("Segment increment must be a vector")
    return TruncatedTensor(segment_exp_levels(vector, degree), vector.shape[0])


def level_norm(a: TruncatedTensor, n: int) -> float:
    """Frobenius norm of level ``n``; submultiplicative, |x ⊗ y| = |x| |y|."""
    if not 0 <= n <= a.degree:
        raise IndexError(f"Level {n} outside 0..{a.degree}")
    return float(np.linalg.norm(a.level(n)))


def truncate(a: TruncatedTensor, degree: int) -> TruncatedTensor:
    if not 0 <= degree <= a.degree:
        raise ValueError(f"Cannot truncate degree {a.degree} to {degree}")
    return TruncatedTensor(list(a.levels)[: degree + 1], a.dim)


def pad(a: TruncatedTensor, degree: int) -> TruncatedTensor:
    """Zero extension to a higher degree."""
    if degree < a.degree:
        raise ValueError(f"Cannot pad degree {a.degree} down to {degree}")
    extra = [np.zeros(a.dim**n) for n in range(a.degree + 1, degree + 1)]
    return TruncatedTensor(list(a.levels) + extra, a.dim)


def neoclassical_constant(n: int, p: float) -> float:
    """2^n / (n/p)! with x! = Γ(x + 1)."""
    return float(2.0**n / gamma(n / p + 1.0))
