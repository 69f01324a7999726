"""Solver-agnostic MILP core: model IR, simplex kernel, branch and bound."""

from .ir import (
    BINARY,
    CONTINUOUS,
    EQ,
    GE,
    INF,
    LE,
    BinaryExpansion,
    ModelIR,
    attach_binary_expansion,
    binary_expansion,
    linearize_product,
    product_rows,
)
from .lpwriter import write_lp
from .solve import (
    GAP_LIMIT,
    INFEASIBLE,
    OPTIMAL,
    UNBOUNDED,
    Solution,
    SolverValidationError,
    register_solver,
    solve_lp,
    solve_milp,
)

__all__ = [
    "BINARY",
    "CONTINUOUS",
    "EQ",
    "GE",
    "INF",
    "LE",
    "BinaryExpansion",
    "ModelIR",
    "attach_binary_expansion",
    "binary_expansion",
    "linearize_product",
    "product_rows",
    "write_lp",
    "GAP_LIMIT",
    "INFEASIBLE",
    "OPTIMAL",
    "UNBOUNDED",
    "Solution",
    "SolverValidationError",
    "register_solver",
    "solve_lp",
    "solve_milp",
]
