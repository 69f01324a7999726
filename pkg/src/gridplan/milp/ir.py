"""Solver-agnostic MILP representation plus exact linearization utilities."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

INF = math.inf

CONTINUOUS = "continuous"
BINARY = "binary"

LE = "<="
GE = ">="
EQ = "="

_SENSES = (LE, GE, EQ)


@dataclass
class Variable:
    name: str
    lb: float
    ub: float
    kind: str = CONTINUOUS


@dataclass
class LPData:
    """Matrix form of a model: min c@x + c0  s.t.  A x (sense) rhs, lb<=x<=ub."""

    c: np.ndarray
    c0: float
    a: sp.csr_matrix
    sense: np.ndarray       # array of "<=", ">=", "="
    rhs: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    binary: np.ndarray      # indices of binary variables


class ModelIR:
    """A mixed-integer linear program in sparse row form.

    Rows and columns are append-only; branch-and-bound never mutates a
    model, it overrides variable bounds at solve time instead.
    """

    def __init__(self, name: str = "model"):
        self.name = name
        self.variables: list[Variable] = []
        self._names: set[str] = set()
        self.row_names: list[str] = []
        self.row_sense: list[str] = []
        self.row_rhs: list[float] = []
        self._row_cols: list[np.ndarray] = []
        self._row_vals: list[np.ndarray] = []
        self.objective: dict[int, float] = {}
        self.objective_offset: float = 0.0
        self._cache: Optional[LPData] = None

    # -- construction --------------------------------------------------------

    def add_variable(
        self, name: str, lb: float = 0.0, ub: float = INF, kind: str = CONTINUOUS
    ) -> int:
        if name in self._names:
            raise ValueError(f"duplicate variable id {name!r}")
        if kind == BINARY:
            lb, ub = max(lb, 0.0), min(ub, 1.0)
        if lb > ub:
            raise ValueError(f"variable {name!r} has empty bound range [{lb}, {ub}]")
        self._names.add(name)
        self.variables.append(Variable(name, float(lb), float(ub), kind))
        self._cache = None
        return len(self.variables) - 1

    def add_constraint(
        self,
        terms: Iterable[tuple[int, float]],
        sense: str,
        rhs: float,
        name: str = "",
    ) -> int:
        if sense not in _SENSES:
            raise ValueError(f"unknown constraint sense {sense!r}")
        acc: dict[int, float] = {}
        for col, val in terms:
            if val != 0.0:
                acc[col] = acc.get(col, 0.0) + val
        cols = np.fromiter(acc.keys(), dtype=np.int64, count=len(acc))
        vals = np.fromiter(acc.values(), dtype=np.float64, count=len(acc))
        self.row_names.append(name or f"c{len(self.row_names)}")
        self.row_sense.append(sense)
        self.row_rhs.append(float(rhs))
        self._row_cols.append(cols)
        self._row_vals.append(vals)
        self._cache = None
        return len(self.row_rhs) - 1

    def add_objective(self, terms: Iterable[tuple[int, float]]):
        for col, val in terms:
            if val != 0.0:
                self.objective[col] = self.objective.get(col, 0.0) + val
        self._cache = None

    def add_objective_offset(self, value: float):
        self.objective_offset += float(value)
        self._cache = None

    # -- views ----------------------------------------------------------------

    @property
    def n_vars(self) -> int:
        return len(self.variables)

    @property
    def n_rows(self) -> int:
        return len(self.row_rhs)

    def binary_indices(self) -> np.ndarray:
        return np.array(
            [j for j, v in enumerate(self.variables) if v.kind == BINARY],
            dtype=np.int64,
        )

    def bounds_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        lb = np.array([v.lb for v in self.variables])
        ub = np.array([v.ub for v in self.variables])
        return lb, ub

    def matrices(self) -> LPData:
        if self._cache is not None:
            return self._cache
        n = self.n_vars
        m = self.n_rows
        c = np.zeros(n)
        for col, val in self.objective.items():
            c[col] = val
        counts = np.array([len(cols) for cols in self._row_cols], dtype=np.int64)
        indptr = np.zeros(m + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        indices = (
            np.concatenate(self._row_cols)
            if m
            else np.zeros(0, dtype=np.int64)
        )
        data = np.concatenate(self._row_vals) if m else np.zeros(0)
        a = sp.csr_matrix((data, indices, indptr), shape=(m, n))
        lb, ub = self.bounds_arrays()
        self._cache = LPData(
            c=c,
            c0=self.objective_offset,
            a=a,
            sense=np.array(self.row_sense, dtype=object),
            rhs=np.array(self.row_rhs),
            lb=lb,
            ub=ub,
            binary=self.binary_indices(),
        )
        return self._cache

    # -- solution checking ------------------------------------------------------

    def check_solution(
        self, x: np.ndarray, feas_tol: float = 1e-7, int_tol: float = 1e-6
    ) -> dict:
        """Scaled feasibility / integrality residuals of a candidate point."""
        data = self.matrices()
        ax = data.a @ x
        scale = 1.0 + np.abs(data.rhs)
        resid = np.zeros(self.n_rows)
        for i, sense in enumerate(data.sense):
            if sense == LE:
                resid[i] = max(0.0, ax[i] - data.rhs[i])
            elif sense == GE:
                resid[i] = max(0.0, data.rhs[i] - ax[i])
            else:
                resid[i] = abs(ax[i] - data.rhs[i])
        row_resid = float(np.max(resid / scale)) if self.n_rows else 0.0
        bscale = 1.0 + np.maximum(np.abs(data.lb), np.abs(data.ub))
        bviol = np.maximum(data.lb - x, x - data.ub)
        np.maximum(bviol, 0.0, out=bviol)
        finite = np.isfinite(bviol)
        bound_resid = float(np.max(bviol[finite] / bscale[finite])) if finite.any() else 0.0
        if data.binary.size:
            int_resid = float(np.max(np.abs(x[data.binary] - np.round(x[data.binary]))))
        else:
            int_resid = 0.0
        return {
            "row_residual": row_resid,
            "bound_residual": bound_resid,
            "integrality_residual": int_resid,
            "feasible": row_resid <= feas_tol
            and bound_resid <= feas_tol
            and int_resid <= int_tol,
        }

    def objective_value(self, x: np.ndarray) -> float:
        data = self.matrices()
        return float(data.c @ x + data.c0)


# -- binary expansion ---------------------------------------------------------


@dataclass(frozen=True)
class BinaryExpansion:
    """Power-of-two block representation of a bounded capacity decision.

    ``n_blocks = floor(log2(x_max / block)) + 1`` and the reconstruction is
    ``x = sum_b v_b * block * 2**(b-1)``; since the largest representable
    value can exceed ``x_max``, users must keep the cap ``x <= x_max``.
    Every multiple of ``block`` up to ``x_max`` is representable.
    """

    x_max: float
    block: float
    n_blocks: int
    weights: tuple[float, ...]
    label: str = ""

    def max_value(self) -> float:
        return sum(self.weights)


def binary_expansion(x_max: float, block: float, label: str = "") -> BinaryExpansion:
    if block <= 0:
        raise ValueError(f"block size must be positive, got {block}")
    if block > x_max:
        raise ValueError(f"block size {block} exceeds x_max {x_max}")
    n_blocks = int(math.floor(math.log2(x_max / block))) + 1
    weights = tuple(block * 2.0 ** (b - 1) for b in range(1, n_blocks + 1))
    return BinaryExpansion(float(x_max), float(block), n_blocks, weights, label)


def attach_binary_expansion(
    ir: ModelIR, x_var: int, expansion: BinaryExpansion, prefix: str
) -> list[int]:
    """Add block binaries and the reconstruction equality ``x = sum w_b v_b``."""
    v_vars = [
        ir.add_variable(f"{prefix}_blk{b}", 0.0, 1.0, BINARY)
        for b in range(1, expansion.n_blocks + 1)
    ]
    terms = [(x_var, 1.0)] + [(v, -w) for v, w in zip(v_vars, expansion.weights)]
    ir.add_constraint(terms, EQ, 0.0, name=f"{prefix}_expand")
    return v_vars


# -- product linearization ------------------------------------------------------


def product_rows(
    ir: ModelIR,
    z_var: int,
    u_var: int,
    y_terms: Sequence[tuple[int, float]],
    lo: float,
    hi: float,
    prefix: str,
):
    """Constrain ``z = u * y`` for binary ``u`` and expression ``y in [lo, hi]``.

    The four rows are ``lo*u <= z <= hi*u`` and
    ``y - hi*(1-u) <= z <= y - lo*(1-u)``; together they pin ``z`` to 0 when
    ``u = 0`` and to ``y`` when ``u = 1``.
    """
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise ValueError(f"{prefix}: product linearization needs finite bounds")
    ir.add_constraint([(z_var, 1.0), (u_var, -lo)], GE, 0.0, f"{prefix}_lo")
    ir.add_constraint([(z_var, 1.0), (u_var, -hi)], LE, 0.0, f"{prefix}_hi")
    y_neg = [(col, -coef) for col, coef in y_terms]
    ir.add_constraint(
        [(z_var, 1.0)] + y_neg + [(u_var, -hi)], GE, -hi, f"{prefix}_on_lo"
    )
    ir.add_constraint(
        [(z_var, 1.0)] + y_neg + [(u_var, -lo)], LE, -lo, f"{prefix}_on_hi"
    )


def linearize_product(ir: ModelIR, u_var: int, y_var: int, name: str = "") -> int:
    """Auxiliary variable equal to ``u * y`` for binary ``u``, bounded ``y``."""
    u = ir.variables[u_var]
    y = ir.variables[y_var]
    if u.kind != BINARY:
        raise ValueError(f"variable {u.name!r} is not binary")
    if not (math.isfinite(y.lb) and math.isfinite(y.ub)):
        raise ValueError(f"variable {y.name!r} must have finite bounds")
    label = name or f"prod_{u.name}_{y.name}"
    z = ir.add_variable(label, min(0.0, y.lb), max(0.0, y.ub))
    product_rows(ir, z, u_var, [(y_var, 1.0)], y.lb, y.ub, label)
    return z
