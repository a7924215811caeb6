import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rough_rates.path_signatures import (
    DropStep,
    MultiplicativeFunctional,
    PiecewiseLinearPath,
    chen_defect,
    drop_point,
    hatted_dissection_product,
    lyons_extend,
    point_drop_defect,
    point_dropping_trace,
    random_piecewise_linear_path,
    riemann_signature_oracle,
    select_drop_point,
    signature_of_path,
)
from rough_rates.tensor_algebra import TruncatedTensor, level_norm, segment_exp
from rough_rates.variation_metrics import Control, random_control


def make_path(seed: int, segments: int = 5, dim: int = 2) -> PiecewiseLinearPath:
    return random_piecewise_linear_path(np.random.default_rng(seed), segments, dim)


def relative_level_gap(a: TruncatedTensor, b: TruncatedTensor) -> float:
    return max(
        np.linalg.norm(a.level(n) - b.level(n)) / max(level_norm(b, n), 1.0)
        for n in range(1, a.degree + 1)
    )


def test_path_validation():
    with pytest.raises(ValueError):
        PiecewiseLinearPath([0.0, 0.0, 1.0], np.zeros((3, 2)))
    with pytest.raises(ValueError):
        PiecewiseLinearPath([0.0, 1.0], np.zeros((3, 2)))
    path = PiecewiseLinearPath([0.0, 1.0, 2.0], [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]])
    np.testing.assert_allclose(path.value_at(1.5), [1.0, 0.5])
    assert path.one_variation() == pytest.approx(2.0)
    with pytest.raises(ValueError):
        path.clipped(1.0, 1.0)
    with pytest.raises(ValueError):
        path.clipped(-1.0, 1.0)


def test_scalar_points_become_one_dimensional():
    path = PiecewiseLinearPath([0.0, 1.0], [0.0, 2.0])
    assert path.dim == 1
    assert signature_of_path(path, 0.0, 1.0, 3).level(3)[0] == pytest.approx(8.0 / 6.0)


def test_single_segment_signature():
    path = PiecewiseLinearPath([0.0, 1.0], [[0.0, 0.0], [1.0, 2.0]])
    assert signature_of_path(path, 0.0, 1.0, 3).allclose(segment_exp([1.0, 2.0], 3))


def test_signature_matches_riemann_oracle():
    # left-point sums carry a first-order error of order 1/substeps
    for seed in range(10):
        path = make_path(seed, segments=8)
        exact = signature_of_path(path, path.start, path.end, 4)
        fine = riemann_signature_oracle(path, path.start, path.end, 4, 2**14)
        coarse = riemann_signature_oracle(path, path.start, path.end, 4, 2**13)
        assert relative_level_gap(fine, exact) < 1e-3
        extrapolated = TruncatedTensor(
            [2 * f - c for f, c in zip(fine.levels, coarse.levels)], path.dim
        )
        assert relative_level_gap(extrapolated, exact) < 1e-5


def test_riemann_oracle_first_order_correction():
    for seed in range(5):
        path = make_path(40 + seed, segments=8)
        substeps = 2**14
        exact = signature_of_path(path, path.start, path.end, 2)
        oracle = riemann_signature_oracle(path, path.start, path.end, 2, substeps)
        dx = np.diff(path.value_at(np.linspace(path.start, path.end, substeps + 1)), axis=0)
        corrected = oracle.level(2) + 0.5 * np.einsum("mi,mj->ij", dx, dx).ravel()
        np.testing.assert_allclose(corrected, exact.level(2), rtol=0.0, atol=1e-6)


@settings(max_examples=30, deadline=None)
@given(
    st.integers(min_value=0, max_value=10**6),
    st.floats(min_value=0.0, max_value=0.45),
    st.floats(min_value=0.55, max_value=1.0),
)
def test_levels_decay_factorially(seed, s, t):
    path = make_path(seed, segments=6, dim=3)
    omega = path.clipped(s, t).one_variation()
    signature = signature_of_path(path, s, t, 4)
    for n in range(1, 5):
        assert level_norm(signature, n) <= omega**n / math.factorial(n) * (1 + 1e-9) + 1e-12


def test_signature_satisfies_chen():
    path = make_path(11, segments=7)
    times = [0.0, 0.2, 0.45, 0.8, 1.0]
    table = {
        (i, j): signature_of_path(path, times[i], times[j], 3)
        for i in range(len(times))
        for j in range(i + 1, len(times))
    }
    assert chen_defect(table) < 1e-12


def test_chen_defect_detects_corruption():
    path = make_path(12)
    times = [0.0, 0.5, 1.0]
    table = {
        (i, j): signature_of_path(path, times[i], times[j], 2)
        for i in range(3)
        for j in range(i + 1, 3)
    }
    broken = [np.array(level) for level in table[(0, 2)].levels]
    broken[2][1] += 1e-3
    table[(0, 2)] = TruncatedTensor(broken, 2)
    assert chen_defect(table) > 1e-4


def test_functional_on_grid_matches_signature():
    path = make_path(13, segments=6)
    grid = np.array([0.0, 0.3, 0.31, 0.7, 1.0])
    mf = MultiplicativeFunctional.from_path(path, 3, grid)
    assert mf.intervals == 4
    assert mf.degree == 3
    for i in range(4):
        for j in range(i + 1, 5):
            direct = signature_of_path(path, grid[i], grid[j], 3)
            assert relative_level_gap(mf.increment(i, j), direct) < 1e-12


def test_increments_from_and_restrict():
    path = make_path(14, segments=9)
    mf = MultiplicativeFunctional.from_path(path, 2)
    rows = mf.increments_from(2)
    np.testing.assert_array_equal(rows[0][0], [1.0])
    np.testing.assert_allclose(rows[2][-1], mf.increment(2, mf.intervals).level(2))
    coarse = mf.restrict([0, 3, 9])
    np.testing.assert_array_equal(coarse.grid, mf.grid[[0, 3, 9]])
    assert coarse.increment(0, 2).allclose(mf.increment(0, 9))
    assert coarse.increment(1, 2).allclose(mf.increment(3, 9))
    with pytest.raises(ValueError):
        mf.restrict([0, 0, 9])
    with pytest.raises(IndexError):
        mf.increment(0, 10)
    with pytest.raises(ValueError):
        mf.increment(3, 3)
    assert mf.truncated(1).degree == 1


def test_functional_from_adjacent_increments():
    steps = [segment_exp([1.0, 0.0], 2), segment_exp([0.0, 1.0], 2)]
    mf = MultiplicativeFunctional.from_adjacent([0.0, 0.5, 1.0], steps)
    assert mf.adjacent_increments[1].allclose(steps[1])
    np.testing.assert_allclose(mf.increment(0, 2).level(2), [0.5, 1.0, 0.0, 0.5])
    with pytest.raises(ValueError):
        MultiplicativeFunctional.from_adjacent([0.0], [])
    with pytest.raises(ValueError):
        MultiplicativeFunctional.from_adjacent([0.0, 0.5, 1.0], [steps[0], segment_exp([1.0], 2)])


def test_functional_validation():
    with pytest.raises(ValueError):
        MultiplicativeFunctional([0.0, 1.0], [np.array([[2.0]]), np.array([[1.0, 1.0]])], 2)
    with pytest.raises(ValueError):
        MultiplicativeFunctional([0.0, 1.0], [np.array([[1.0]]), np.array([[1.0]])], 2)
    with pytest.raises(ValueError):
        MultiplicativeFunctional.from_path(make_path(1), 2, [0.0, 2.0])


def test_extension_reproduces_level_three():
    for seed in range(20):
        path = make_path(100 + seed, segments=7, dim=3)
        extended = lyons_extend(MultiplicativeFunctional.from_path(path, 2))
        direct = signature_of_path(path, path.start, path.end, 3)
        whole = extended.increment(0, extended.intervals)
        np.testing.assert_allclose(whole.level(3), direct.level(3), rtol=1e-12, atol=1e-12)


def test_extension_of_one_segment():
    v = np.array([0.5, -1.0])
    mf = MultiplicativeFunctional([0.0, 1.0], [np.ones((1, 1)), v[None, :]], 2)
    extended = lyons_extend(lyons_extend(mf))
    assert extended.increment(0, 1).allclose(segment_exp(v, 3))
    with pytest.raises(ValueError):
        lyons_extend(mf.truncated(0))


def test_point_drop_defect_identity():
    for seed in range(10):
        path = make_path(200 + seed, segments=8)
        grid = np.linspace(0.0, 1.0, 7)
        mf = MultiplicativeFunctional.from_path(path, 2, grid)
        dissection = (0, 1, 3, 4, 6)
        for j in range(1, 4):
            full = hatted_dissection_product(mf, dissection)
            fewer = hatted_dissection_product(mf, drop_point(dissection, j))
            np.testing.assert_allclose(
                point_drop_defect(mf, dissection, j),
                full.level(3) - fewer.level(3),
                rtol=1e-12,
                atol=1e-12,
            )
            # levels up to N agree by Chen's identity
            np.testing.assert_allclose(full.level(2), fewer.level(2), atol=1e-12)


def test_drop_point_errors():
    mf = MultiplicativeFunctional.from_path(make_path(3), 2, np.linspace(0.0, 1.0, 4))
    assert drop_point((0, 1, 3), 1) == (0, 3)
    with pytest.raises(IndexError):
        drop_point((0, 1, 3), 2)
    with pytest.raises(IndexError):
        point_drop_defect(mf, (0, 1, 3), 0)
    with pytest.raises(IndexError):
        hatted_dissection_product(mf, (0, 5))
    with pytest.raises(ValueError):
        hatted_dissection_product(mf, (2, 1))


def test_select_drop_point():
    grid = np.linspace(0.0, 1.0, 5)
    control = Control.from_function(grid, lambda s, t: (t - s) ** 2)
    assert select_drop_point(control, (0, 1, 2, 4)) == 1
    with pytest.raises(ValueError):
        select_drop_point(control, (0, 4))


def test_point_dropping_trace_stays_within_bound():
    path = make_path(300, segments=10)
    grid = np.linspace(0.0, 1.0, 9)
    mf = MultiplicativeFunctional.from_path(path, 2, grid)
    control = random_control(mf, mf, 2.5, 1.0, 2)
    steps = point_dropping_trace(mf, control, tuple(range(9)))
    assert len(steps) == 7
    assert all(isinstance(step, DropStep) for step in steps)
    assert all(step.within_bound for step in steps)
    assert [step.interior_points for step in steps] == list(range(7, 0, -1))
