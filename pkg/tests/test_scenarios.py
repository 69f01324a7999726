"""Scenario engine: sampling oracles, tree invariants, reproducibility."""

import numpy as np
import pytest

from gridplan.caseio import bundled_case_path, load_case
from gridplan.scenarios import (
    ErrorModel,
    ForecastDistribution,
    ScenarioTree,
    build_tree,
    sample_day_ahead,
    sample_errors,
    validate_tree,
)


@pytest.fixture(scope="module")
def fourbus():
    return load_case(bundled_case_path("fourbus"))


# -- day-ahead sampling -------------------------------------------------------


def test_point_mass_draws_are_constant():
    dist = ForecastDistribution("point", value=0.4)
    draws = sample_day_ahead(dist, 5, seed=3)
    assert np.all(draws == 0.4)


def test_sample_mean_matches_distribution_mean(fourbus):
    # oracle: analytic mean of the configured marginal (numerical integration
    # of a piecewise-uniform histogram reduces to the bin-midpoint sum)
    dist = fourbus.forecasts["w1"]
    n = 20
    draws = sample_day_ahead(dist, n, seed=123)
    assert draws.min() >= 0.0 and draws.max() <= 1.0
    se = np.sqrt(dist.variance() / n)
    assert abs(draws.mean() - dist.mean()) <= 3.0 * se


def test_histogram_mean_oracle():
    dist = ForecastDistribution(
        "histogram", edges=(0.0, 0.5, 1.0), masses=(0.25, 0.75)
    )
    # direct integration: 0.25 * 0.25 + 0.75 * 0.75
    assert dist.mean() == pytest.approx(0.625)
    draws = sample_day_ahead(dist, 40000, seed=5)
    assert draws.mean() == pytest.approx(0.625, abs=3 * np.sqrt(dist.variance() / 40000))


def test_correlated_sites_receive_identical_draws():
    a = ForecastDistribution("beta", alpha=2.0, beta=3.0, group="wind")
    b = ForecastDistribution("beta", alpha=2.0, beta=3.0, group="wind")
    da = sample_day_ahead(a, 12, seed=7)
    db = sample_day_ahead(b, 12, seed=7)
    assert np.array_equal(da, db)


def test_reproducible_for_fixed_seed():
    dist = ForecastDistribution("beta", alpha=1.5, beta=4.0)
    assert np.array_equal(
        sample_day_ahead(dist, 9, seed=11), sample_day_ahead(dist, 9, seed=11)
    )
    assert not np.array_equal(
        sample_day_ahead(dist, 9, seed=11), sample_day_ahead(dist, 9, seed=12)
    )


def test_empty_distribution_rejected():
    with pytest.raises(ValueError):
        ForecastDistribution("histogram", edges=(0.2,), masses=())


# -- forecast errors ----------------------------------------------------------


def test_zero_error_model_is_exact():
    model = ErrorModel(sigma0=0.0, sigma1=0.0)
    draws = sample_errors(0.37, model, 25, seed=0)
    assert np.all(draws == 0.37)


def test_boundary_forecast_collapses():
    model = ErrorModel(sigma0=0.0, sigma1=0.4)
    assert np.all(sample_errors(0.0, model, 10, seed=1) == 0.0)
    assert np.all(sample_errors(1.0, model, 10, seed=1) == 1.0)


def test_beta_moment_oracle():
    # oracle: Beta(a, b) mean a/(a+b) and the requested stdev law
    model = ErrorModel(sigma0=0.0, sigma1=0.4)
    n = 10000
    draws = sample_errors(0.5, model, n, seed=21)
    assert abs(draws.mean() - 0.5) <= 3.0 * 0.1 / np.sqrt(n)
    assert abs(draws.std() - 0.1) <= 0.02  # within 20 percent of 0.1
    assert draws.min() >= 0.0 and draws.max() <= 1.0


def test_infeasible_stdev_raises_when_not_clipped():
    model = ErrorModel(sigma0=0.5, sigma1=0.0, clip=False)
    with pytest.raises(ValueError, match="0.1"):
        sample_errors(0.1, model, 4, seed=0)


def test_infeasible_stdev_clipped_by_default():
    model = ErrorModel(sigma0=0.5, sigma1=0.0)
    draws = sample_errors(0.1, model, 2000, seed=0)
    assert draws.min() >= 0.0 and draws.max() <= 1.0
    cap = model.max_std_fraction * np.sqrt(0.1 * 0.9)
    assert draws.std() < cap * 1.1


# -- tree construction ---------------------------------------------------------


def test_fourbus_tree_has_600_leaves(fourbus):
    tree = build_tree(fourbus.system, fourbus.forecasts, fourbus.errors, 20, 30, seed=2)
    assert tree.n_s * tree.n_r == 600
    assert validate_tree(tree) == []


def test_rts24_tree_has_100_leaves():
    case = load_case(bundled_case_path("rts24"))
    tree = build_tree(case.system, case.forecasts, case.errors, 10, 10, seed=2)
    assert tree.n_s * tree.n_r == 100
    assert validate_tree(tree) == []
    # all four wind sites perfectly correlated
    assert np.array_equal(tree.rho_hat["w6"], tree.rho_hat["w23"])
    # all loads share the same per-unit draws
    assert np.array_equal(tree.rho_hat["d01"], tree.rho_hat["d20"])


def test_single_deterministic_path(fourbus):
    errors = {dev: ErrorModel(0.0, 0.0) for dev in fourbus.errors}
    tree = build_tree(fourbus.system, fourbus.forecasts, errors, 1, 1, seed=9)
    assert tree.n_s == tree.n_r == 1
    for dev, arr in tree.rho_tilde.items():
        assert np.array_equal(arr[:, 0], tree.rho_hat[dev])


def test_deterministic_devices_stay_at_one(fourbus):
    tree = build_tree(fourbus.system, fourbus.forecasts, fourbus.errors, 4, 3, seed=2)
    assert np.all(tree.rho_hat["g1"] == 1.0)
    assert np.all(tree.rho_tilde["g1"] == 1.0)


def test_zero_error_leaves_match_forecasts(fourbus):
    errors = {dev: ErrorModel(0.0, 0.0) for dev in fourbus.errors}
    tree = build_tree(fourbus.system, fourbus.forecasts, errors, 6, 4, seed=3)
    for dev in tree.rho_hat:
        assert np.array_equal(
            tree.rho_tilde[dev], np.repeat(tree.rho_hat[dev][:, None], 4, axis=1)
        )


def test_tree_bit_identical_across_runs(fourbus):
    t1 = build_tree(fourbus.system, fourbus.forecasts, fourbus.errors, 8, 5, seed=42)
    t2 = build_tree(fourbus.system, fourbus.forecasts, fourbus.errors, 8, 5, seed=42)
    for dev in t1.rho_hat:
        assert np.array_equal(t1.rho_hat[dev], t2.rho_hat[dev])
        assert np.array_equal(t1.rho_tilde[dev], t2.rho_tilde[dev])


def test_total_probability(fourbus):
    tree = build_tree(fourbus.system, fourbus.forecasts, fourbus.errors, 7, 6, seed=1)
    assert abs(float(np.sum(tree.pi_s[:, None] * tree.pi_sr)) - 1.0) < 1e-9


def test_validate_tree_flags_bad_probabilities(fourbus):
    tree = build_tree(fourbus.system, fourbus.forecasts, fourbus.errors, 2, 2, seed=1)
    tree.pi_s = np.array([0.6, 0.6])
    assert any("sum to" in v for v in validate_tree(tree))


def test_validate_tree_flags_bad_factors(fourbus):
    tree = build_tree(fourbus.system, fourbus.forecasts, fourbus.errors, 2, 2, seed=1)
    tree.rho_tilde["w1"][0, 0] = 1.1
    assert any("outside" in v for v in validate_tree(tree))


def test_unknown_device_rejected(fourbus):
    with pytest.raises(KeyError):
        build_tree(
            fourbus.system,
            {"ghost": ForecastDistribution("point", value=0.5)},
            {},
            2,
            2,
            seed=0,
        )
