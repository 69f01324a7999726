"""Independent brute-force oracles for the expansion models.

The oracle enumerates every build combination on a small capacity grid and
prices each combination with plain LP solves (for the sequential market:
the day-ahead LP followed by per-leaf balancing LPs with the day-ahead
dispatch held fixed), never touching the MILP reformulations it checks.
"""

import itertools
import math

import numpy as np

from gridplan.evaluation import INEFFICIENT, evaluate_plan
from gridplan.milp import solve_lp
from gridplan.models import ExpansionPlan, build_operation_model
from gridplan.scenarios import ScenarioTree
from gridplan.system import (
    GENERATOR,
    Bus,
    ExpansionProject,
    GeneratingUnit,
    Load,
    PowerSystem,
    TransmissionLine,
)


def oracle_instance():
    """2-bus system with two candidate projects on 5-point capacity grids and
    a hand-built 2 x 2 scenario tree with deterministic demand."""
    wind = GeneratingUnit("w", "n2", price=0.0, up_frac=1.0, up_price=0.0,
                          down_frac=1.0, down_price=0.0, is_renewable=True)
    flex = GeneratingUnit("f", "n1", price=55.0, up_frac=1.0, up_price=31.0,
                          down_frac=1.0, down_price=20.0)
    system = PowerSystem(
        buses=(Bus("n1", True), Bus("n2")),
        lines=(TransmissionLine("t", "n2", "n1", susceptance=15.0, capacity=150.0),),
        units=(GeneratingUnit("g", "n1", capacity=200.0, price=50.0,
                              up_frac=0.5, up_price=52.0),),
        loads=(Load("d", "n1", peak=100.0, price=-500.0, down_frac=1.0,
                    down_price=-500.0),),
        projects=(
            ExpansionProject("w", GENERATOR, x_max=60.0, fixed_cost=10000.0,
                             variable_cost=30000.0, block_size=15.0, unit=wind),
            ExpansionProject("f", GENERATOR, x_max=20.0, fixed_cost=8000.0,
                             variable_cost=25000.0, block_size=5.0, unit=flex),
        ),
        horizon_hours=8760.0,
        renewable_target=0.25,
        name="oracle-2bus",
    )
    rho_hat_w = np.array([0.6, 0.8])
    rho_tilde_w = np.array([[0.2, 0.7], [0.4, 0.9]])
    ones2 = np.ones(2)
    ones22 = np.ones((2, 2))
    tree = ScenarioTree(
        pi_s=np.array([0.5, 0.5]),
        pi_sr=np.full((2, 2), 0.5),
        rho_hat={"w": rho_hat_w, "g": ones2, "f": ones2, "d": ones2, "t": ones2},
        rho_tilde={"w": rho_tilde_w, "g": ones22, "f": ones22, "d": ones22,
                   "t": ones22},
    )
    return system, tree


def _grid(project):
    steps = int(math.floor(project.x_max / project.block_size))
    return [k * project.block_size for k in range(steps + 1)]


def enumerate_plans(system):
    grids = [_grid(p) for p in system.projects]
    for caps in itertools.product(*grids):
        built = {p.id: cap > 0 for p, cap in zip(system.projects, caps)}
        cap = {p.id: float(c) for p, c in zip(system.projects, caps)}
        invest = sum(
            (p.fixed_cost if built[p.id] else 0.0) + p.variable_cost * cap[p.id]
            for p in system.projects
        )
        yield ExpansionPlan(built, cap, invest)


def oracle_model_value(system, tree, plan, kind):
    """Expected total cost of a fixed plan under one market model, or None
    when the combination cannot meet the renewable target."""
    if kind in (1, 2):
        model = build_operation_model(
            system, tree, plan, include_share=True, two_stage=(kind == 2)
        )
        sol = solve_lp(model.ir)
        if sol.status != "optimal":
            return None
        return plan.investment_cost + sol.objective * 1e6
    report = evaluate_plan(plan, system, tree, INEFFICIENT)
    if report.renewable_share < system.renewable_target - 1e-9:
        return None
    return report.total_cost


def oracle_optimum(system, tree, kind):
    best = math.inf
    best_plan = None
    for plan in enumerate_plans(system):
        value = oracle_model_value(system, tree, plan, kind)
        if value is not None and value < best:
            best, best_plan = value, plan
    return best, best_plan
