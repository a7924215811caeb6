import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rough_rates.distance_bounds import (
    BoundParameters,
    critical_gamma,
    heat_holder_exponent,
    level12_bound_rhs,
    level_n_bound,
    levy_area_l2_exact,
    main_theorem_exponent,
    neoclassical_level_bound,
    off_diagonal_l2_squared,
    raw_third_level_sum,
    second_level_l2_exact,
    sigma_metric_gamma,
    sigma_metric_rate,
    third_level_bound,
    wong_zakai_rate_predicted,
    young_2d_sum,
)
from rough_rates.gaussian_processes import (
    BrownianModel,
    IdenticalPair,
    OUStationaryModel,
    PiecewiseLinearCoupling,
    pair_covariance_grids,
)
from rough_rates.variation_metrics import Control, CovarianceGrid

GRID = np.linspace(0.0, 1.0, 17)


def brownian_grid(times: np.ndarray) -> CovarianceGrid:
    return CovarianceGrid.from_function(times, times, np.minimum)


def test_built_parameters():
    params = BoundParameters.build(1.4, 3.0, eta=0.01)
    assert params.p == pytest.approx(2 * 1.02 * 1.4)
    assert params.gamma_prime == pytest.approx(1.01 * 3.0)
    assert params.gamma_second == pytest.approx(1.02 * 3.0)
    assert params.value("rho_prime") == pytest.approx(1.01 * 1.4)
    assert params.sigma == pytest.approx(2 * params.gamma_second)
    assert params.fractional_p == pytest.approx(params.p - 2.0)
    assert len(params.theta) == params.levels == 3
    assert params.case == 3
    assert params.violations() == []
    assert params.check() is params
    assert "gamma_second" in params.names
    assert "BoundParameters" in repr(params)


def test_theta_positivity_needs_the_critical_regime():
    params = BoundParameters.build(1.0, 1.5)
    assert params.theta[0] < 0.0
    assert any("theta_1" in problem for problem in params.violations())
    with pytest.raises(ValueError):
        params.check()


def test_parameter_structure_is_enforced():
    with pytest.raises(ValueError):
        BoundParameters.build(1.2, 1.1)
    with pytest.raises(ValueError):
        BoundParameters.build(1.4, 4.0)
    with pytest.raises(ValueError):
        BoundParameters.build(1.5, 2.0)
    with pytest.raises(ValueError):
        BoundParameters.build(1.2, 2.0, eta=0.0)


def test_with_value_reports_changes():
    params = BoundParameters.build(1.4, 3.0)
    bumped = params.with_value("eta", 0.02)
    assert bumped.p == pytest.approx(2 * 1.04 * 1.4)
    assert {"eta", "p", "rho_prime", "gamma_prime", "gamma_second", "theta"} <= bumped.changed
    assert params.p == pytest.approx(2 * 1.02 * 1.4)
    same = params.with_value("delta", 0.01)
    assert same.changed == frozenset()
    with pytest.raises(ValueError):
        params.with_value("p", 2.5)
    with pytest.raises(ValueError):
        params.with_value("gamma", 1.0)
    with pytest.raises(KeyError):
        params.with_value("zeta", 1.0)


def test_explicit_parameters():
    params = BoundParameters.explicit(2.5, 5.0)
    assert params.case == 3
    assert params.gamma_second == 5.0
    assert params.sigma == 10.0
    explicit = params.with_value("gamma_prime", 1.5)
    assert explicit.case == 1
    assert "case" in explicit.changed
    assert any("gamma" in problem for problem in explicit.violations())


def test_young_sum_of_constant_integrand():
    g = brownian_grid(GRID)
    f = CovarianceGrid.from_function(GRID, GRID, lambda s, t: 3.0 + 0.0 * (s + t))
    assert young_2d_sum(f, g) == pytest.approx(3.0 * g.rectangular_increment(0, 16, 0, 16))
    assert young_2d_sum(f, g, rule="corner_average") == pytest.approx(3.0)
    assert young_2d_sum(f, g, (2, 10, 2, 10)) == pytest.approx(1.5)
    assert young_2d_sum(f, g, anchored=True) == pytest.approx(0.0)


def test_young_sum_against_brownian_covariance():
    rng = np.random.default_rng(4)
    g = brownian_grid(GRID)
    f = CovarianceGrid(GRID, GRID, rng.normal(size=(17, 17)))
    expected = float((np.diag(f.values)[:-1] * np.diff(GRID)).sum())
    assert young_2d_sum(f, g) == pytest.approx(expected)


def test_young_sum_errors():
    g = brownian_grid(GRID)
    with pytest.raises(ValueError):
        young_2d_sum(brownian_grid(np.linspace(0.0, 1.0, 5)), g)
    with pytest.raises(ValueError):
        young_2d_sum(g, g, rule="midpoint")


def test_second_level_vanishes_for_identical_pair():
    result = second_level_l2_exact(IdenticalPair(BrownianModel(dim=2)), GRID, 0.0, 1.0)
    assert result.diagonal == pytest.approx(0.0, abs=1e-7)
    assert result.off_diagonal == pytest.approx(0.0, abs=1e-7)
    assert result.frobenius == pytest.approx(0.0, abs=1e-6)
    area = levy_area_l2_exact(IdenticalPair(BrownianModel(dim=2)), GRID, 0.0, 1.0)
    assert area == pytest.approx(0.0, abs=1e-7)


def test_diagonal_term_is_below_its_majorant():
    for model in (BrownianModel(dim=2), OUStationaryModel(1.0, 1.0, dim=2)):
        for k in (2, 4, 8):
            pair = PiecewiseLinearCoupling(model, k)
            result = second_level_l2_exact(pair, GRID, 0.1875, 0.6875)
            assert 0.0 < result.diagonal <= result.diagonal_majorant
            assert result.matrix().shape == (2, 2)
            assert result.matrix()[0, 1] == result.off_diagonal


def test_second_level_errors():
    pair = PiecewiseLinearCoupling(BrownianModel(dim=1), 4)
    with pytest.raises(ValueError):
        levy_area_l2_exact(pair, GRID, 0.0, 1.0)
    with pytest.raises(ValueError):
        second_level_l2_exact(pair, GRID, 0.1, 1.0)
    with pytest.raises(ValueError):
        second_level_l2_exact(pair, GRID, 0.5, 0.5)

    class CorrelatedPair(IdenticalPair):
        independent_components = False

    with pytest.raises(ValueError):
        second_level_l2_exact(CorrelatedPair(BrownianModel(dim=2)), GRID, 0.0, 1.0)


def iterated_integral(paths: np.ndarray, i: int, j: int) -> np.ndarray:
    """∫ X^i_{0,u} dX^j_u of piecewise-linear samples shaped (n, points, dim)."""
    anchored = paths[:, :, i] - paths[:, :1, i]
    midpoints = 0.5 * (anchored[:, 1:] + anchored[:, :-1])
    return (midpoints * np.diff(paths[:, :, j], axis=1)).sum(axis=1)


def test_off_diagonal_moment_is_a_young_sum():
    pair = PiecewiseLinearCoupling(OUStationaryModel(1.0, 1.0, dim=2), 4)
    nodes = GRID[3:12]
    c_xx, c_xy, c_yy = pair.blocks(nodes, nodes)

    def moment(c: np.ndarray) -> float:
        total = 0.0
        for m in range(8):
            for n in range(8):
                midpoints = (
                    0.25 * (c[m, n] + c[m + 1, n] + c[m, n + 1] + c[m + 1, n + 1])
                    - 0.5 * (c[m, 0] + c[m + 1, 0] + c[0, n] + c[0, n + 1])
                    + c[0, 0]
                )
                increments = c[m + 1, n + 1] - c[m, n + 1] - c[m + 1, n] + c[m, n]
                total += midpoints * increments
        return total

    expected = moment(c_xx) - 2 * moment(c_xy) + moment(c_yy)
    grids = pair_covariance_grids(pair, GRID)
    assert off_diagonal_l2_squared(grids, (3, 11, 3, 11)) == pytest.approx(expected, rel=1e-10)
    result = second_level_l2_exact(pair, GRID, 0.1875, 0.6875)
    assert result.off_diagonal == pytest.approx(math.sqrt(expected), rel=1e-10)


@pytest.mark.slow
def test_level_two_distances_match_monte_carlo():
    grid = np.linspace(0.0, 1.0, 33)
    pair = PiecewiseLinearCoupling(BrownianModel(dim=2), 8)
    batch = pair.sample(grid, 100_000, seed=5)
    off = iterated_integral(batch.x, 0, 1) - iterated_integral(batch.y, 0, 1)
    swapped = iterated_integral(batch.x, 1, 0) - iterated_integral(batch.y, 1, 0)
    area = 0.5 * (off - swapped)
    checks = [
        (off**2, second_level_l2_exact(pair, grid, 0.0, 1.0).off_diagonal ** 2),
        (area**2, levy_area_l2_exact(pair, grid, 0.0, 1.0) ** 2),
    ]
    for squares, exact in checks:
        std_err = squares.std(ddof=1) / math.sqrt(squares.size)
        assert abs(squares.mean() - exact) <= 3 * std_err


def test_brownian_levy_area_error_decays_like_one_over_k():
    grid = np.linspace(0.0, 1.0, 257)
    meshes = np.array([4, 8, 16, 32])
    errors = [
        levy_area_l2_exact(PiecewiseLinearCoupling(BrownianModel(dim=2), int(k)), grid, 0.0, 1.0)
        for k in meshes
    ]
    slope = np.polyfit(np.log(meshes), np.log(np.square(errors)), 1)[0]
    assert -1.15 <= slope <= -0.85


def test_level12_rhs():
    params = BoundParameters.build(1.0, 1.5)
    control = Control.from_function(np.linspace(0.0, 1.0, 5), lambda s, t: 4 * (t - s))
    assert level12_bound_rhs(params, control, 0.0, 0, 4, 1) == 0.0
    assert level12_bound_rhs(params, control, 8.0, 0, 4, 2) == pytest.approx(
        8.0 ** (1 / 3) * 4.0 ** (1 / 3 + 1 / 2)
    )
    assert level12_bound_rhs(params, control, 8.0, 0, 4, 1) == pytest.approx(2.0 * 4.0 ** (1 / 3))
    equal = BoundParameters.build(1.0, 1.0)
    assert level12_bound_rhs(equal, control, 0.3, 1, 3, 1) == pytest.approx(2.0**0.5)
    with pytest.raises(ValueError):
        level12_bound_rhs(params, control, 1.0, 0, 4, 3)
    with pytest.raises(ValueError):
        level12_bound_rhs(params, control, -1.0, 0, 4, 1)


def test_third_level_case_three():
    params = BoundParameters.explicit(2.5, 5.0)
    result = third_level_bound(params, 2.0, 2.0, 0.001)
    assert result.case == 3
    # ε^{2/3} ω^{(2 + {p})/p}
    assert result.bound == pytest.approx(0.001 ** (2 / 3) * 2.0)
    assert result.assumption_holds
    assert result.raw is not None and result.raw.split >= 1


def test_third_level_log_case():
    params = BoundParameters.explicit(8.0 / 3.0, 2.0)
    assert params.case == 2
    saturated = third_level_bound(params, 0.5, 1.0, 1.0)
    assert saturated.bound == pytest.approx(0.5)
    small = third_level_bound(params, 0.5, 1.0, 0.001)
    assert small.bound == pytest.approx(0.001 * (1 + math.log(10.0)) * 0.5)
    proof = third_level_bound(params, 0.5, 1.0, 0.001, log_form="proof")
    assert proof.bound > small.bound
    with pytest.raises(ValueError):
        third_level_bound(params, 0.5, 1.0, 0.001, log_form="sharp")
    assert third_level_bound(params, 0.5, 1.0, 0.0).bound == 0.0


def test_third_level_case_one_and_raw_sum():
    params = BoundParameters.explicit(2.5, 1.5)
    result = third_level_bound(params, 1.5, 2.0, 0.01)
    assert result.case == 1
    assert result.bound == pytest.approx(0.01 * 1.5 ** (1 / 3 + 0.8))
    assert result.assumption_holds
    assert result.raw is not None
    assert result.raw.value >= result.bound


def test_third_level_needs_p_below_three():
    with pytest.raises(ValueError):
        third_level_bound(BoundParameters.explicit(3.2, 5.0), 1.0, 1.0, 0.1)
    with pytest.raises(ValueError):
        third_level_bound(BoundParameters.explicit(2.5, 5.0, rho=1.3), 1.0, 1.0, 0.1)


def test_raw_split_brackets_epsilon():
    params = BoundParameters.explicit(2.5, 5.0)
    e = 1.0 / 2.5 - 1.0 / 10.0
    rng = np.random.default_rng(9)
    for _ in range(50):
        omega = float(rng.uniform(0.1, 5.0))
        epsilon = float(rng.uniform(1e-3, 1.0))
        split = raw_third_level_sum(params, omega, epsilon).split
        assert (omega / (split + 1)) ** e <= epsilon * (1 + 1e-12)
        if split > 0:
            assert epsilon < (omega / split) ** e
    assert raw_third_level_sum(params, 0.0, 0.1).value == 0.0
    with pytest.raises(ValueError):
        raw_third_level_sum(params, 1.0, 0.0)
    with pytest.raises(ValueError):
        raw_third_level_sum(params, 1.0, 1e-300)
    with pytest.raises(ValueError):
        raw_third_level_sum(BoundParameters.explicit(2.5, 1.2), 1.0, 0.1)


def test_raw_sum_with_long_head():
    params = BoundParameters.explicit(2.9, 12.0)
    raw = raw_third_level_sum(params, 1.0, 0.01)
    assert raw.split > 2**20
    assert math.isfinite(raw.value) and raw.value > 0.0


@settings(max_examples=100, deadline=None)
@given(
    st.floats(min_value=2.05, max_value=2.98),
    st.floats(min_value=1.5, max_value=12.0),
    st.floats(min_value=0.01, max_value=2.0),
    st.floats(min_value=1e-6, max_value=1.0),
)
def test_level_three_matches_third_level_bound(p, gamma_prime, omega, epsilon):
    params = BoundParameters.explicit(p, gamma_prime, levels=5)
    third = third_level_bound(params, omega, 2 * omega, epsilon)
    general = level_n_bound(params, omega, 2 * omega, epsilon, 3)
    assert general.case == third.case
    assert general.bound == pytest.approx(third.bound, rel=1e-12)
    for n, theta in enumerate(params.theta, start=1):
        assert (n - 1 + params.fractional_p) / p == pytest.approx(
            n / (2 * params.gamma_second) + theta, abs=1e-12
        )


def test_level_n_bound_shapes():
    params = BoundParameters.explicit(2.5, 5.0)
    for n in (1, 2):
        bound = level_n_bound(params, 2.0, 2.0, 0.01, n)
        assert bound.bound == pytest.approx(0.01 * 2.0 ** (0.1 + (n - 1) / 2.5))
    four = level_n_bound(params, 2.0, 2.0, 0.01, 4)
    assert four.bound == pytest.approx(0.01 ** (2 / 3) * 2.0 ** (3.5 / 2.5))
    for n in (1, 3, 5):
        assert level_n_bound(params, 2.0, 2.0, 0.0, n).bound == 0.0
    with pytest.raises(ValueError):
        level_n_bound(params, 2.0, 2.0, 0.01, 0)
    with pytest.raises(ValueError):
        level_n_bound(params, -1.0, 2.0, 0.01, 3)


def test_level_n_bound_is_monotone():
    for p, gamma_prime in ((2.5, 5.0), (2.5, 1.5)):
        params = BoundParameters.explicit(p, gamma_prime)
        values = [level_n_bound(params, 1.0, 1.0, eps, 3).bound for eps in (1e-4, 1e-3, 1e-2)]
        assert values == sorted(values)
        values = [level_n_bound(params, omega, 2.0, 1e-3, 3).bound for omega in (0.5, 1.0, 2.0)]
        assert values == sorted(values)


def test_main_theorem_exponent():
    zeta, case = main_theorem_exponent(1.0, 1.5, 0.01)
    assert case == 1 and zeta == pytest.approx(1 / 3)
    zeta, case = main_theorem_exponent(1.4, 3.0, 0.01)
    assert case == 2 and zeta == pytest.approx(0.19)
    assert main_theorem_exponent(1.2, 1.2, 0.01) == (pytest.approx(0.0), 1)
    with pytest.raises(ValueError):
        main_theorem_exponent(1.5, 2.0, 0.01)
    with pytest.raises(ValueError):
        main_theorem_exponent(1.2, 1.0, 0.01)
    with pytest.raises(ValueError):
        main_theorem_exponent(1.4, 4.0, 0.01)
    assert critical_gamma(1.4) == pytest.approx(1.75)
    assert critical_gamma(1.0) == math.inf


def test_wong_zakai_rate():
    assert wong_zakai_rate_predicted(1.25, 0.01) == pytest.approx(0.19)
    assert wong_zakai_rate_predicted(1.0, 1e-9) == pytest.approx(0.5)
    assert wong_zakai_rate_predicted(1.49, 1e-4) < 0.01
    with pytest.raises(ValueError):
        wong_zakai_rate_predicted(1.0, 0.0)
    with pytest.raises(ValueError):
        wong_zakai_rate_predicted(1.25, 0.2)


def test_sigma_metric_rate():
    assert sigma_metric_gamma(1.0, 16.0) == pytest.approx(16.0 / 2.04)
    assert sigma_metric_gamma(1.2, 16.0) == pytest.approx(6.0)
    assert sigma_metric_rate(1.0, 16.0) == pytest.approx((1.0 - 2.04 / 16.0) / 2.0)
    assert sigma_metric_rate(1.0, 16.0) < wong_zakai_rate_predicted(1.0, 0.01)
    with pytest.raises(ValueError):
        sigma_metric_gamma(1.0, 2.0)
    with pytest.raises(ValueError):
        sigma_metric_gamma(1.0, 16.0, eta=0.0)


def test_small_formulas():
    assert heat_holder_exponent(16.0) == pytest.approx(0.21875)
    with pytest.raises(ValueError):
        heat_holder_exponent(2.0)
    assert neoclassical_level_bound(2, 2.0, 0.25) == pytest.approx(4.0 * 0.25)
    with pytest.raises(ValueError):
        neoclassical_level_bound(0, 2.0, 1.0)
