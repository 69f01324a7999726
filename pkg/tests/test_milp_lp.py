"""LP kernel: optimality, duals, degeneracy, backend agreement."""

import numpy as np
import pytest

from gridplan.milp import EQ, GE, LE, ModelIR, solve_lp
from gridplan.milp.ir import INF


def _random_feasible_lp(rng, n_max=30, m_max=18):
    """A bounded LP with a known interior point (hence feasible)."""
    n = int(rng.integers(2, n_max + 1))
    m = int(rng.integers(1, m_max + 1))
    ir = ModelIR("random")
    lo = rng.uniform(-4.0, 0.0, n)
    hi = lo + rng.uniform(0.5, 5.0, n)
    xs = [ir.add_variable(f"x{j}", lo[j], hi[j]) for j in range(n)]
    x0 = rng.uniform(lo, hi)
    a = rng.normal(size=(m, n)) * (rng.random((m, n)) < 0.6)
    senses = rng.choice([LE, GE, EQ], size=m, p=[0.45, 0.35, 0.2])
    for i in range(m):
        rhs = float(a[i] @ x0)
        if senses[i] == LE:
            rhs += rng.uniform(0.0, 2.0)
        elif senses[i] == GE:
            rhs -= rng.uniform(0.0, 2.0)
        ir.add_constraint([(xs[j], a[i, j]) for j in range(n)], senses[i], rhs)
    ir.add_objective([(xs[j], rng.normal()) for j in range(n)])
    return ir


def _dual_objective(ir, sol):
    data = ir.matrices()
    value = float(sol.duals @ data.rhs)
    at_lower = np.abs(sol.x - data.lb) < 1e-7
    at_upper = np.abs(sol.x - data.ub) < 1e-7
    d = sol.reduced_costs
    value += float(np.sum(np.where(at_lower & (d > 0), d * data.lb, 0.0)))
    value += float(np.sum(np.where(at_upper & (d < 0), d * data.ub, 0.0)))
    return value + data.c0


def _complementary_slackness(ir, sol):
    data = ir.matrices()
    ax = data.a @ sol.x
    worst = 0.0
    for i in range(ir.n_rows):
        slack = data.rhs[i] - ax[i]
        worst = max(worst, abs(sol.duals[i] * slack))
    return worst


def test_one_variable_lp_and_dual():
    ir = ModelIR("tiny")
    x = ir.add_variable("x", 0.0)
    ir.add_constraint([(x, 1.0)], LE, 3.0, "cap")
    ir.add_objective([(x, -1.0)])
    sol = solve_lp(ir, backend="simplex")
    assert sol.status == "optimal"
    assert sol.x[0] == pytest.approx(3.0)
    assert sol.duals[0] == pytest.approx(-1.0)


def test_degenerate_lp_terminates():
    # duplicated and redundant rows around the same vertex
    ir = ModelIR("degen")
    x = ir.add_variable("x", 0.0, 10.0)
    y = ir.add_variable("y", 0.0, 10.0)
    for k in range(6):
        ir.add_constraint([(x, 1.0), (y, 1.0)], LE, 4.0, f"dup{k}")
    ir.add_constraint([(x, 1.0)], LE, 4.0)
    ir.add_constraint([(y, 1.0)], LE, 4.0)
    ir.add_objective([(x, -1.0), (y, -1.0)])
    sol = solve_lp(ir, backend="simplex")
    assert sol.status == "optimal"
    assert sol.objective == pytest.approx(-4.0)


def test_infeasible_and_unbounded_status():
    ir = ModelIR("inf")
    x = ir.add_variable("x", 0.0, 1.0)
    ir.add_constraint([(x, 1.0)], GE, 2.0)
    assert solve_lp(ir, backend="simplex").status == "infeasible"

    ir = ModelIR("unb")
    x = ir.add_variable("x", 0.0, INF)
    ir.add_objective([(x, -1.0)])
    assert solve_lp(ir, backend="simplex").status == "unbounded"


def test_free_variable_handling():
    ir = ModelIR("free")
    x = ir.add_variable("x", -INF, INF)
    y = ir.add_variable("y", 0.0, 5.0)
    ir.add_constraint([(x, 1.0), (y, 1.0)], EQ, 2.0)
    ir.add_objective([(x, 1.0), (y, 0.25)])
    sol = solve_lp(ir, backend="simplex")
    assert sol.status == "optimal"
    # pushing y to its cap minimizes the expensive free variable
    assert sol.x[1] == pytest.approx(5.0)
    assert sol.objective == pytest.approx(-3.0 + 1.25)


@pytest.mark.parametrize("seed", range(10))
def test_backends_agree_on_random_lps(seed):
    rng = np.random.default_rng(100 + seed)
    for _ in range(5):
        ir = _random_feasible_lp(rng)
        s1 = solve_lp(ir, backend="simplex")
        s2 = solve_lp(ir, backend="highs")
        assert s1.status == s2.status == "optimal"
        scale = max(1.0, abs(s2.objective))
        assert abs(s1.objective - s2.objective) <= 1e-7 * scale


@pytest.mark.parametrize("backend", ["simplex", "highs"])
def test_strong_duality_and_slackness_random(backend):
    rng = np.random.default_rng(7)
    for _ in range(25):
        ir = _random_feasible_lp(rng)
        sol = solve_lp(ir, backend=backend)
        assert sol.status == "optimal"
        scale = max(1.0, abs(sol.objective))
        assert abs(_dual_objective(ir, sol) - sol.objective) <= 1e-7 * scale
        assert _complementary_slackness(ir, sol) <= 1e-7 * scale


def test_solve_lp_rejects_binaries():
    from gridplan.milp import BINARY

    ir = ModelIR("bin")
    ir.add_variable("z", kind=BINARY)
    with pytest.raises(ValueError, match="binary"):
        solve_lp(ir)


def test_duplicate_variable_names_rejected():
    ir = ModelIR("dup")
    ir.add_variable("x")
    with pytest.raises(ValueError, match="duplicate"):
        ir.add_variable("x")
