import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rough_rates.tensor_algebra import (
    TruncatedTensor,
    chen_product_levels,
    geodesic_extension_levels,
    identity,
    level_norm,
    neoclassical_constant,
    pad,
    prefix_levels,
    segment_exp,
    segment_exp_levels,
    segmented_products_levels,
    tensor_add,
    tensor_exp,
    tensor_inv,
    tensor_log,
    tensor_mul,
    tensor_sub,
    truncate,
    zero,
)

vectors = st.lists(
    st.floats(min_value=-2.0, max_value=2.0, allow_nan=False), min_size=2, max_size=2
)


def random_group_element(rng: np.random.Generator, dim: int, degree: int) -> TruncatedTensor:
    result = identity(dim, degree)
    for _ in range(3):
        result = result * segment_exp(rng.standard_normal(dim), degree)
    return result


def test_identity_is_neutral():
    rng = np.random.default_rng(1)
    x = random_group_element(rng, 3, 3)
    unit = identity(3, 3)
    assert (x * unit).allclose(x)
    assert (unit * x).allclose(x)


def test_segment_levels_are_scaled_powers():
    v = np.array([1.0, -2.0])
    x = segment_exp(v, 3)
    assert x.scalar == 1.0
    np.testing.assert_allclose(x.level(1), v)
    np.testing.assert_allclose(x.block(2), np.outer(v, v) / 2)
    np.testing.assert_allclose(x.block(3), np.einsum("i,j,k->ijk", v, v, v) / 6)


def test_two_segments_level_two():
    a = np.array([1.0, 0.0])
    b = np.array([0.0, 1.0])
    x = segment_exp(a, 2) * segment_exp(b, 2)
    # the area between an L-shaped path and its chord is 1/2
    block = x.block(2)
    assert block[0, 1] - block[1, 0] == pytest.approx(1.0)
    np.testing.assert_allclose(block + block.T, np.outer(a + b, a + b))


@settings(max_examples=50, deadline=None)
@given(
    vectors,
    st.floats(min_value=-2.0, max_value=2.0, allow_nan=False),
    st.floats(min_value=-2.0, max_value=2.0, allow_nan=False),
)
def test_collinear_segments_concatenate(u, a, b):
    v = np.array(u)
    joined = segment_exp(a * v, 4) * segment_exp(b * v, 4)
    assert joined.allclose(segment_exp((a + b) * v, 4), rtol=1e-10, atol=1e-10)
    x = segment_exp(v, 4)
    assert (x * x).allclose(segment_exp(2 * v, 4), rtol=1e-10, atol=1e-10)


@settings(max_examples=50, deadline=None)
@given(vectors, vectors, vectors)
def test_product_is_associative(u, v, w):
    x, y, z = (segment_exp(np.array(vec), 3) for vec in (u, v, w))
    assert ((x * y) * z).allclose(x * (y * z), rtol=1e-10, atol=1e-10)


@settings(max_examples=50, deadline=None)
@given(vectors, vectors)
def test_inverse_and_log_exp(u, v):
    x = segment_exp(np.array(u), 3) * segment_exp(np.array(v), 3)
    assert tensor_mul(x, tensor_inv(x)).allclose(identity(2, 3), atol=1e-9)
    assert tensor_exp(tensor_log(x)).allclose(x, rtol=1e-9, atol=1e-9)


def test_log_of_segment_is_the_increment():
    v = np.array([0.3, -0.7, 1.1])
    logarithm = tensor_log(segment_exp(v, 4))
    np.testing.assert_allclose(logarithm.level(1), v)
    for n in range(2, 5):
        np.testing.assert_allclose(logarithm.level(n), 0.0, atol=1e-12)


def test_norm_is_submultiplicative():
    rng = np.random.default_rng(2)
    for _ in range(20):
        a = rng.standard_normal(3)
        b = rng.standard_normal(3)
        product = np.outer(a, b).reshape(-1)
        x = TruncatedTensor([np.ones(1), np.zeros(3), product], 3)
        assert level_norm(x, 2) == pytest.approx(np.linalg.norm(a) * np.linalg.norm(b))


def test_add_sub_zero():
    rng = np.random.default_rng(3)
    x = random_group_element(rng, 2, 3)
    assert tensor_add(x, zero(2, 3)) == x
    assert tensor_sub(x, x) == zero(2, 3)
    assert (x + x - x).allclose(x)


def test_truncate_and_pad():
    rng = np.random.default_rng(4)
    x = random_group_element(rng, 2, 3)
    assert truncate(x, 1).degree == 1
    padded = pad(truncate(x, 2), 4)
    assert padded.degree == 4
    np.testing.assert_array_equal(padded.level(3), 0.0)
    np.testing.assert_array_equal(padded.level(2), x.level(2))
    with pytest.raises(ValueError):
        truncate(x, 4)
    with pytest.raises(ValueError):
        pad(x, 2)


def test_errors():
    x = segment_exp([1.0, 2.0], 2)
    with pytest.raises(ValueError):
        tensor_mul(x, segment_exp([1.0, 2.0, 3.0], 2))
    with pytest.raises(ValueError):
        tensor_mul(x, segment_exp([1.0, 2.0], 3))
    with pytest.raises(ValueError):
        tensor_inv(zero(2, 2))
    with pytest.raises(ValueError):
        tensor_log(zero(2, 2))
    with pytest.raises(ValueError):
        tensor_exp(identity(2, 2))
    with pytest.raises(IndexError):
        x.level(3)
    with pytest.raises(ValueError):
        TruncatedTensor([np.ones(1), np.zeros(3)], 2)


def test_values_are_immutable_and_hashable():
    x = segment_exp([1.0, 2.0], 2)
    with pytest.raises(ValueError):
        x.level(1)[0] = 5.0
    assert x == segment_exp([1.0, 2.0], 2)
    assert len({x, segment_exp([1.0, 2.0], 2)}) == 1
    assert x.is_group_like()
    assert "TruncatedTensor" in str(x)


def test_prefix_matches_repeated_products():
    rng = np.random.default_rng(5)
    steps = rng.standard_normal((6, 2))
    prefix = prefix_levels(segment_exp_levels(steps, 3))
    expected = identity(2, 3)
    for j, step in enumerate(steps, start=1):
        expected = expected * segment_exp(step, 3)
        row = TruncatedTensor([level[j] for level in prefix], 2)
        assert row.allclose(expected)


def test_segmented_products():
    rng = np.random.default_rng(6)
    steps = segment_exp_levels(rng.standard_normal((7, 2)), 3)
    chunks = segmented_products_levels(steps, [0, 2, 3, 7])
    for c, (a, b) in enumerate([(0, 2), (2, 3), (3, 7)]):
        direct = prefix_levels([level[a:b] for level in steps])
        for n in range(4):
            np.testing.assert_allclose(chunks[n][c], direct[n][-1], atol=1e-13)
    with pytest.raises(ValueError):
        segmented_products_levels(steps, [0, 3, 3, 7])
    with pytest.raises(ValueError):
        segmented_products_levels(steps, [1, 7])


def test_chen_product_broadcasts():
    rng = np.random.default_rng(7)
    a = segment_exp_levels(rng.standard_normal((4, 2)), 2)
    b = segment_exp_levels(rng.standard_normal((4, 2)), 2)
    batched = chen_product_levels(a, b)
    for i in range(4):
        single = segment_exp(a[1][i], 2) * segment_exp(b[1][i], 2)
        np.testing.assert_allclose(batched[2][i], single.level(2))


def test_geodesic_extension_of_segments():
    rng = np.random.default_rng(8)
    steps = rng.standard_normal((5, 3))
    lifted = geodesic_extension_levels(segment_exp_levels(steps, 2), 3)
    direct = segment_exp_levels(steps, 3)
    for n in range(4):
        np.testing.assert_allclose(lifted[n], direct[n], atol=1e-13)
    scalar_only = geodesic_extension_levels([np.ones((2, 1))], 2)
    np.testing.assert_allclose(scalar_only[1], 0.0)


def test_neoclassical_constant():
    assert neoclassical_constant(2, 2.0) == pytest.approx(4.0)
    assert neoclassical_constant(1, 2.0) == pytest.approx(2.0 / math.gamma(1.5))
    assert neoclassical_constant(3, 2.5) > 0.0
