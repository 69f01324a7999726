"""LP/MILP solving: backend routing, branch and bound, external-solver seam.

LP relaxations go through the in-repo bounded revised simplex when the
instance is desk-sized and through scipy's HiGHS interface otherwise; both
report duals in the same convention (minimization; ``<=`` rows have
nonpositive duals, ``>=`` rows nonnegative).  The MILP engine is an in-repo
best-bound branch and bound: most-fractional binary branching with ties to
the lowest column index, a depth-first plunge for the first incumbent, and
deterministic fixed-size node waves so that thread counts cannot change the
search or the answer.
"""

from __future__ import annotations

import heapq
import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import linprog

from . import simplex as _sx
from .ir import EQ, GE, LE, LPData, ModelIR

log = logging.getLogger("gridplan.milp")

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
GAP_LIMIT = "gap_limit"

_WAVE_SIZE = 4          # nodes per batch; fixed so parallelism is invisible
_SIMPLEX_MAX_ROWS = 320
_SIMPLEX_MAX_COLS = 1000


@dataclass
class Solution:
    """Result of an LP or MILP solve.

    ``duals``/``reduced_costs`` are populated for pure-LP solves only.
    ``best_bound`` and ``gap`` describe the branch-and-bound certificate;
    for an LP they equal the objective and zero.
    """

    status: str
    objective: Optional[float] = None
    x: Optional[np.ndarray] = None
    duals: Optional[np.ndarray] = None
    reduced_costs: Optional[np.ndarray] = None
    nodes: int = 0
    iterations: int = 0
    gap: float = math.nan
    best_bound: float = math.nan
    bound_history: tuple[float, ...] = ()

    def value(self, var: int) -> float:
        return float(self.x[var])

    def values(self, vars_) -> np.ndarray:
        return self.x[np.asarray(list(vars_), dtype=np.int64)]


class SolverValidationError(RuntimeError):
    """An external solver returned a point that fails validation."""

    def __init__(self, message: str, report: dict):
        super().__init__(f"{message}: {report}")
        self.report = report


# -- LP backends ---------------------------------------------------------------


def _solve_lp_simplex(data: LPData, lb, ub) -> Solution:
    res = _sx.solve_simplex(data, lb=lb, ub=ub)
    if res.status != _sx.OPTIMAL:
        return Solution(status=res.status, iterations=res.iterations)
    return Solution(
        status=OPTIMAL,
        objective=res.objective,
        x=res.x,
        duals=res.duals,
        reduced_costs=res.reduced_costs,
        iterations=res.iterations,
        gap=0.0,
        best_bound=res.objective,
    )


_HIGHS_STATUS = {0: OPTIMAL, 2: INFEASIBLE, 3: UNBOUNDED}


def _solve_lp_highs(data: LPData, lb, ub) -> Solution:
    is_le = data.sense == LE
    is_ge = data.sense == GE
    is_eq = data.sense == EQ
    a_ub_rows = []
    b_ub_rows = []
    if is_le.any():
        a_ub_rows.append(data.a[is_le])
        b_ub_rows.append(data.rhs[is_le])
    if is_ge.any():
        a_ub_rows.append(-data.a[is_ge])
        b_ub_rows.append(-data.rhs[is_ge])
    import scipy.sparse as sp

    a_ub = sp.vstack(a_ub_rows, format="csr") if a_ub_rows else None
    b_ub = np.concatenate(b_ub_rows) if b_ub_rows else None
    a_eq = data.a[is_eq] if is_eq.any() else None
    b_eq = data.rhs[is_eq] if is_eq.any() else None
    res = linprog(
        c=data.c,
        A_ub=a_ub,
        b_ub=b_ub,
        A_eq=a_eq,
        b_eq=b_eq,
        bounds=np.column_stack([lb, ub]),
        method="highs",
        options={
            "presolve": True,
            "primal_feasibility_tolerance": 1e-9,
            "dual_feasibility_tolerance": 1e-9,
        },
    )
    status = _HIGHS_STATUS.get(res.status)
    if status is None:
        raise RuntimeError(f"LP backend failure: {res.message}")
    if status != OPTIMAL:
        return Solution(status=status, iterations=int(res.nit))
    duals = np.zeros(data.rhs.size)
    marg = res.ineqlin.marginals if res.ineqlin is not None else np.zeros(0)
    n_le = int(np.count_nonzero(is_le))
    if n_le:
        duals[is_le] = marg[:n_le]
    if is_ge.any():
        duals[is_ge] = -marg[n_le:]
    if is_eq.any():
        duals[is_eq] = res.eqlin.marginals
    reduced = res.lower.marginals + res.upper.marginals
    return Solution(
        status=OPTIMAL,
        objective=float(res.fun) + data.c0,
        x=res.x,
        duals=duals,
        reduced_costs=reduced,
        iterations=int(res.nit),
        gap=0.0,
        best_bound=float(res.fun) + data.c0,
    )


def _pick_backend(data: LPData, backend: str) -> str:
    if backend != "auto":
        return backend
    m, n = data.a.shape
    if m <= _SIMPLEX_MAX_ROWS and n <= _SIMPLEX_MAX_COLS:
        return "simplex"
    return "highs"


def _solve_lp_data(data: LPData, lb, ub, backend: str) -> Solution:
    chosen = _pick_backend(data, backend)
    if chosen == "simplex":
        return _solve_lp_simplex(data, lb, ub)
    if chosen == "highs":
        return _solve_lp_highs(data, lb, ub)
    raise ValueError(f"unknown LP backend {chosen!r}")


def solve_lp(ir: ModelIR, backend: str = "auto", relax: bool = False) -> Solution:
    """Solve a continuous model to optimality with duals and reduced costs."""
    data = ir.matrices()
    if data.binary.size and not relax:
        raise ValueError(
            "model has binary variables; use solve_milp or pass relax=True"
        )
    return _solve_lp_data(data, data.lb, data.ub, backend)


def fix_and_solve(ir: ModelIR, fixes: dict, backend: str = "auto") -> Solution:
    """LP solve with selected variables pinned; used for incumbent probes."""
    data = ir.matrices()
    lb = data.lb.copy()
    ub = data.ub.copy()
    for col, val in fixes.items():
        lb[col] = val
        ub[col] = val
    return _solve_lp_data(data, lb, ub, backend)


# -- external-solver seam --------------------------------------------------------

_registry: dict = {"callback": None}
_reentry = threading.local()


def register_solver(callback: Optional[Callable[..., Optional[Solution]]]):
    """Route subsequent MILP solves through ``callback(ir, gap=..., ...)``.

    The callback may return ``None`` to decline an instance.  Returned
    solutions claiming optimality are validated against the model; points
    that violate feasibility or integrality raise ``SolverValidationError``.
    Pass ``None`` to unregister.
    """
    _registry["callback"] = callback


def _registered_solve(ir: ModelIR, **params) -> Optional[Solution]:
    callback = _registry["callback"]
    if callback is None or getattr(_reentry, "active", False):
        return None
    _reentry.active = True
    try:
        result = callback(ir, **params)
    finally:
        _reentry.active = False
    if result is None:
        return None
    if result.status == OPTIMAL:
        if result.x is None:
            raise SolverValidationError(
                "external solver claimed optimality without a point", {}
            )
        report = ir.check_solution(np.asarray(result.x, dtype=float))
        obj = ir.objective_value(np.asarray(result.x, dtype=float))
        if result.objective is not None:
            report["objective_mismatch"] = abs(obj - result.objective) / max(
                1.0, abs(obj)
            )
            if report["objective_mismatch"] > 1e-6:
                report["feasible"] = False
        if not report["feasible"]:
            raise SolverValidationError(
                "external solver returned an invalid optimal point", report
            )
    return result


# -- branch and bound -------------------------------------------------------------


@dataclass(order=True)
class _Node:
    bound: float
    seq: int
    fixes: dict = field(compare=False)


def _most_fractional(x: np.ndarray, bins: np.ndarray, int_tol: float) -> int:
    vals = x[bins]
    frac = vals - np.floor(vals)
    score = 0.5 - np.abs(frac - 0.5)
    score[np.minimum(frac, 1.0 - frac) <= int_tol] = -1.0
    j = int(np.argmax(score))
    if score[j] < 0.0:
        return -1
    return int(bins[j])


def solve_milp(
    ir: ModelIR,
    gap: float = 1e-6,
    node_limit: Optional[int] = None,
    workers: int = 1,
    backend: str = "auto",
    use_registered: bool = True,
    warm_start: Optional[dict] = None,
) -> Solution:
    """Branch-and-bound MILP solve to a proven relative gap.

    Returns status ``optimal`` when the incumbent is within ``gap`` of the
    best bound, ``gap_limit`` when the node limit exhausts first (the
    achieved gap is reported), or ``infeasible``/``unbounded`` from the root
    relaxation.
    """
    if use_registered:
        external = _registered_solve(
            ir, gap=gap, node_limit=node_limit, workers=workers
        )
        if external is not None:
            return external

    data = ir.matrices()
    bins = data.binary
    if bins.size == 0:
        return solve_lp(ir, backend=backend)

    int_tol = 1e-6
    base_lb = data.lb.copy()
    base_ub = data.ub.copy()
    chosen_backend = _pick_backend(data, backend)
    limit = node_limit if node_limit is not None else 10**9

    def node_lp(fixes: dict) -> Solution:
        lb = base_lb.copy()
        ub = base_ub.copy()
        if fixes:
            cols = np.fromiter(fixes.keys(), dtype=np.int64, count=len(fixes))
            vals = np.fromiter(fixes.values(), dtype=float, count=len(fixes))
            lb[cols] = vals
            ub[cols] = vals
        return _solve_lp_data(data, lb, ub, chosen_backend)

    nodes = 0
    seq = 0
    heap: list[_Node] = []
    incumbent: Optional[Solution] = None
    inc_fixes: dict = {}
    bound_history: list[float] = []
    pruned_bound = math.inf  # smallest bound discarded under the gap cutoff

    root = node_lp({})
    nodes += 1
    if root.status in (INFEASIBLE, UNBOUNDED):
        return Solution(status=root.status, nodes=nodes)
    bound_history.append(root.objective)

    def cutoff() -> float:
        if incumbent is None:
            return math.inf
        return incumbent.objective - gap * max(1.0, abs(incumbent.objective))

    def accept(res: Solution, fixes: dict):
        nonlocal incumbent, inc_fixes
        if incumbent is None or res.objective < incumbent.objective:
            incumbent = res
            inc_fixes = dict(fixes)
            log.debug(
                "%s: incumbent %.10g after %d nodes", ir.name, res.objective, nodes
            )

    # incumbent probes: caller warm start, rounded relaxation, then ceiling
    # (the latter keeps knapsack-style covering rows satisfiable)
    frac_root = root.x[bins] - np.floor(root.x[bins])
    root_fractional = bool(np.any(np.minimum(frac_root, 1.0 - frac_root) > int_tol))
    probes: list[dict] = []
    if warm_start:
        probes.append({int(j): float(round(warm_start[j])) for j in warm_start})
    if root_fractional:
        probes.append({int(j): float(np.round(root.x[j])) for j in bins})
        probes.append({int(j): float(np.ceil(root.x[j] - int_tol)) for j in bins})
    for fixes in probes:
        if nodes >= limit:
            break
        probe = node_lp(fixes)
        nodes += 1
        if probe.status == OPTIMAL and probe.objective < cutoff():
            accept(probe, fixes)

    # depth-first plunge: follow the rounding of the most-fractional binary,
    # falling back to the opposite branch at dead ends, queueing live siblings
    cur_fixes: dict = {}
    cur = root
    while nodes < limit:
        j = _most_fractional(cur.x, bins, int_tol)
        if j < 0:
            accept(cur, cur_fixes)
            break
        toward = 1.0 if cur.x[j] >= 0.5 else 0.0
        first = {**cur_fixes, j: toward}
        res = node_lp(first)
        nodes += 1
        if res.status == OPTIMAL and res.objective < cutoff():
            heapq.heappush(
                heap, _Node(cur.objective, seq, {**cur_fixes, j: 1.0 - toward})
            )
            seq += 1
            cur_fixes, cur = first, res
            continue
        if res.status == OPTIMAL:
            pruned_bound = min(pruned_bound, res.objective)
        if nodes >= limit:
            break
        second = {**cur_fixes, j: 1.0 - toward}
        res = node_lp(second)
        nodes += 1
        if res.status == OPTIMAL and res.objective < cutoff():
            cur_fixes, cur = second, res
            continue
        if res.status == OPTIMAL:
            pruned_bound = min(pruned_bound, res.objective)
        break

    # reduced-cost fixing: binaries at a root bound whose reduced cost alone
    # pushes past the cutoff can never flip in an improving solution
    rc_fixed: dict = {}
    if (incumbent is not None and root.reduced_costs is not None
            and cutoff() > root.objective):
        slack_to_cut = cutoff() - root.objective
        for j in bins:
            val = root.x[j]
            d = root.reduced_costs[j]
            if val <= int_tol and d >= slack_to_cut + 1e-12:
                rc_fixed[int(j)] = 0.0
            elif val >= 1.0 - int_tol and d <= -(slack_to_cut + 1e-12):
                rc_fixed[int(j)] = 1.0
        if rc_fixed:
            log.debug("%s: reduced-cost fixing pinned %d binaries",
                      ir.name, len(rc_fixed))
            base_lb_list, base_ub_list = base_lb, base_ub
            for col, val in rc_fixed.items():
                base_lb_list[col] = val
                base_ub_list[col] = val

    # best-bound main loop over deterministic fixed-size waves
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        while heap and nodes < limit:
            best_bound = heap[0].bound
            if best_bound >= cutoff():
                break
            bound_history.append(best_bound)
            wave: list[_Node] = []
            while heap and len(wave) < _WAVE_SIZE and nodes + len(wave) < limit:
                node = heapq.heappop(heap)
                if node.bound >= cutoff():
                    pruned_bound = min(pruned_bound, node.bound)
                    continue
                wave.append(node)
            if not wave:
                continue
            if pool is not None:
                results = list(pool.map(lambda nd: node_lp(nd.fixes), wave))
            else:
                results = [node_lp(nd.fixes) for nd in wave]
            for node, res in zip(wave, results):
                nodes += 1
                if res.status != OPTIMAL:
                    continue
                if res.objective >= cutoff():
                    pruned_bound = min(pruned_bound, res.objective)
                    continue
                j = _most_fractional(res.x, bins, int_tol)
                if j < 0:
                    accept(res, node.fixes)
                    continue
                for val in (0.0, 1.0):
                    heapq.heappush(
                        heap, _Node(res.objective, seq, {**node.fixes, j: val})
                    )
                    seq += 1
    finally:
        if pool is not None:
            pool.shutdown(wait=True)

    open_bound = heap[0].bound if heap else math.inf
    open_bound = min(open_bound, pruned_bound)
    if incumbent is None:
        if heap:
            return Solution(
                status=GAP_LIMIT,
                nodes=nodes,
                gap=math.inf,
                best_bound=open_bound,
                bound_history=tuple(bound_history),
            )
        return Solution(status=INFEASIBLE, nodes=nodes)

    best_bound = min(open_bound, incumbent.objective)
    achieved = (incumbent.objective - best_bound) / max(1.0, abs(incumbent.objective))
    status = OPTIMAL if achieved <= gap + 1e-15 else GAP_LIMIT
    return Solution(
        status=status,
        objective=incumbent.objective,
        x=incumbent.x,
        nodes=nodes,
        gap=max(achieved, 0.0),
        best_bound=best_bound,
        bound_history=tuple(bound_history),
    )
