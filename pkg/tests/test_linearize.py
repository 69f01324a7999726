"""Exactness of product linearization and binary capacity expansion."""

import numpy as np
import pytest

from gridplan.milp import (
    BINARY,
    EQ,
    ModelIR,
    attach_binary_expansion,
    binary_expansion,
    linearize_product,
    solve_lp,
    solve_milp,
)


def _probe_product(uval, yval, lo, hi):
    """Fix (u, y) and return the z range admitted by the four rows."""
    out = []
    for sense in (1.0, -1.0):
        ir = ModelIR("probe")
        u = ir.add_variable("u", kind=BINARY)
        y = ir.add_variable("y", lo, hi)
        z = linearize_product(ir, u, y, "z")
        ir.variables[u].lb = ir.variables[u].ub = uval
        ir.variables[y].lb = ir.variables[y].ub = yval
        ir._cache = None
        ir.add_objective([(z, sense)])
        sol = solve_lp(ir, relax=True)
        assert sol.status == "optimal"
        out.append(sol.x[z])
    return out


def test_product_zero_when_off():
    zmin, zmax = _probe_product(0.0, 7.0, -10.0, 10.0)
    assert zmin == pytest.approx(0.0, abs=1e-9)
    assert zmax == pytest.approx(0.0, abs=1e-9)


def test_product_passes_through_when_on():
    zmin, zmax = _probe_product(1.0, 7.0, -10.0, 10.0)
    assert zmin == pytest.approx(7.0, abs=1e-9)
    assert zmax == pytest.approx(7.0, abs=1e-9)


def test_product_exact_on_random_points():
    rng = np.random.default_rng(2)
    for _ in range(60):
        lo, hi = np.sort(rng.uniform(-8.0, 8.0, 2))
        uval = float(rng.integers(0, 2))
        yval = float(rng.uniform(lo, hi))
        zmin, zmax = _probe_product(uval, yval, lo, hi)
        assert zmin == pytest.approx(uval * yval, abs=1e-8)
        assert zmax == pytest.approx(uval * yval, abs=1e-8)


def test_product_requires_finite_bounds():
    ir = ModelIR("bad")
    u = ir.add_variable("u", kind=BINARY)
    y = ir.add_variable("y", 0.0)
    with pytest.raises(ValueError, match="finite"):
        linearize_product(ir, u, y)


def test_product_requires_binary_switch():
    ir = ModelIR("bad")
    u = ir.add_variable("u", 0.0, 1.0)
    y = ir.add_variable("y", -1.0, 1.0)
    with pytest.raises(ValueError, match="binary"):
        linearize_product(ir, u, y)


# -- binary expansion -----------------------------------------------------------


def test_block_count_formula_cases():
    assert binary_expansion(1000, 50).n_blocks == 5
    assert binary_expansion(1000, 50).max_value() == pytest.approx(1550.0)
    assert binary_expansion(250, 1).n_blocks == 8
    assert binary_expansion(250, 1).max_value() == pytest.approx(255.0)
    exp = binary_expansion(100, 100)
    assert exp.n_blocks == 1 and exp.weights == (100.0,)


def test_block_size_validation():
    with pytest.raises(ValueError):
        binary_expansion(100, 0.0)
    with pytest.raises(ValueError):
        binary_expansion(100, 120.0)


@pytest.mark.parametrize("x_max,block", [(1000, 50), (250, 1), (90, 7)])
def test_every_multiple_up_to_cap_is_representable(x_max, block):
    exp = binary_expansion(x_max, block)
    for k in range(int(np.floor(x_max / block)) + 1):
        target = k * block
        # direct bit decomposition witnesses representability
        bits = [(k >> b) & 1 for b in range(exp.n_blocks)]
        assert sum(w * bit for w, bit in zip(exp.weights, bits)) == pytest.approx(
            target
        )


def test_attached_expansion_reconstructs_capacity():
    ir = ModelIR("exp")
    x = ir.add_variable("x", 0.0, 1000.0)
    exp = binary_expansion(1000, 50)
    v = attach_binary_expansion(ir, x, exp, "x")
    ir.add_constraint([(x, 1.0)], EQ, 350.0, "pin")
    sol = solve_milp(ir, gap=1e-9)
    assert sol.status == "optimal"
    chosen = [round(sol.x[vi]) for vi in v]
    assert sum(w * b for w, b in zip(exp.weights, chosen)) == pytest.approx(350.0)


def test_attached_expansion_with_cap_row():
    # the expansion can overshoot x_max, the cap row restores the limit
    ir = ModelIR("cap")
    from gridplan.milp import LE

    x = ir.add_variable("x", 0.0, 1000.0)
    exp = binary_expansion(1000, 50)
    attach_binary_expansion(ir, x, exp, "x")
    ir.add_constraint([(x, 1.0)], LE, 1000.0, "xmax")
    ir.add_objective([(x, -1.0)])
    sol = solve_milp(ir, gap=1e-9)
    assert sol.objective == pytest.approx(-1000.0)
