"""Shared test systems and helpers."""

import numpy as np
import pytest

from gridplan.scenarios import ErrorModel, ForecastDistribution, build_tree
from gridplan.system import (
    GENERATOR,
    LINE,
    Bus,
    ExpansionProject,
    GeneratingUnit,
    Load,
    PowerSystem,
    TransmissionLine,
)


def make_two_bus(
    *,
    eta=0.25,
    wind_xmax=400.0,
    wind_block=25.0,
    wind_var_cost=50000.0,
    flex_block=25.0,
    line_cap=400.0,
    peak=400.0,
):
    """Existing unit and load at n1, candidate wind at n2, candidate flexible
    unit at n1, existing tie line n2 -> n1."""
    wind = GeneratingUnit("w1", "n2", price=0.0, up_frac=1.0, up_price=0.0,
                          down_frac=1.0, down_price=0.0, is_renewable=True)
    flex = GeneratingUnit("gf", "n1", price=30.0, up_frac=1.0, up_price=31.0,
                          down_frac=1.0, down_price=20.0)
    return PowerSystem(
        buses=(Bus("n1", True), Bus("n2")),
        lines=(TransmissionLine("ln12", "n2", "n1", susceptance=20.0,
                                capacity=line_cap),),
        units=(GeneratingUnit("g1", "n1", capacity=500.0, price=10.0),),
        loads=(Load("l1", "n1", peak=peak, price=-500.0, down_frac=1.0,
                    down_price=-500.0),),
        projects=(
            ExpansionProject("w1", GENERATOR, x_max=wind_xmax, fixed_cost=20000.0,
                             variable_cost=wind_var_cost, block_size=wind_block,
                             unit=wind),
            ExpansionProject("gf", GENERATOR, x_max=200.0, fixed_cost=15000.0,
                             variable_cost=25000.0, block_size=flex_block,
                             unit=flex),
        ),
        horizon_hours=8760.0,
        renewable_target=eta,
        name="two-bus",
    )


def two_bus_uncertainty(sigma1=0.5):
    dists = {
        "w1": ForecastDistribution("beta", alpha=2.0, beta=3.0, group="wind"),
        "l1": ForecastDistribution(
            "histogram", edges=(0.5, 0.7, 0.9), masses=(0.5, 0.5)
        ),
    }
    errors = {"w1": ErrorModel(sigma0=0.01, sigma1=sigma1)}
    return dists, errors


@pytest.fixture
def two_bus_system():
    return make_two_bus()


@pytest.fixture
def two_bus_tree(two_bus_system):
    dists, errors = two_bus_uncertainty()
    return build_tree(two_bus_system, dists, errors, 4, 3, seed=11)


@pytest.fixture
def two_bus_tree_zero_error(two_bus_system):
    dists, _ = two_bus_uncertainty()
    errors = {"w1": ErrorModel(0.0, 0.0)}
    return build_tree(two_bus_system, dists, errors, 4, 3, seed=11)
