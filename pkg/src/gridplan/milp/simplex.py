"""Bounded-variable revised simplex with a dense LU-factorized basis.

Intended for desk-scale instances (a few hundred rows); larger models are
routed to a sparse external backend by the solver front end.  Determinism:
entering ties break on the largest reduced-cost magnitude then lowest
column index, ratio-test ties on the lowest column index, and Bland's rule
engages after ``10 * m`` consecutive degenerate pivots, which guarantees
termination.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .ir import EQ, GE, LE, LPData

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"

_AT_LOWER = 0
_AT_UPPER = 1
_BASIC = 2
_FREE = 3


class SimplexError(RuntimeError):
    pass


@dataclass
class SimplexResult:
    status: str
    x: Optional[np.ndarray]
    duals: Optional[np.ndarray]
    reduced_costs: Optional[np.ndarray]
    objective: Optional[float]
    iterations: int


class _Tableau:
    """Working state: extended columns = structural | slacks | artificials."""

    def __init__(self, data: LPData, lb: np.ndarray, ub: np.ndarray, tol: float):
        m, n = data.a.shape
        self.m, self.n = m, n
        self.tol = tol
        ncols = n + 2 * m
        self.a = np.zeros((m, ncols))
        self.a[:, :n] = data.a.toarray()
        self.a[np.arange(m), n + np.arange(m)] = 1.0
        self.a[np.arange(m), n + m + np.arange(m)] = 1.0
        self.b = data.rhs.copy()

        self.lb = np.empty(ncols)
        self.ub = np.empty(ncols)
        self.lb[:n] = lb
        self.ub[:n] = ub
        for i, sense in enumerate(data.sense):
            if sense == LE:
                self.lb[n + i], self.ub[n + i] = 0.0, np.inf
            elif sense == GE:
                self.lb[n + i], self.ub[n + i] = -np.inf, 0.0
            else:
                self.lb[n + i], self.ub[n + i] = 0.0, 0.0

        self.x = np.zeros(ncols)
        self.state = np.full(ncols, _AT_LOWER, dtype=np.int8)
        for j in range(n + m):
            lo, hi = self.lb[j], self.ub[j]
            if np.isinf(lo) and np.isinf(hi):
                self.state[j], self.x[j] = _FREE, 0.0
            elif np.isinf(hi) or (not np.isinf(lo) and abs(lo) <= abs(hi)):
                self.state[j], self.x[j] = _AT_LOWER, lo
            else:
                self.state[j], self.x[j] = _AT_UPPER, hi

        resid = self.b - self.a[:, : n + m] @ self.x[: n + m]
        art = n + m + np.arange(m)
        self.lb[art] = np.where(resid >= 0.0, 0.0, -np.inf)
        self.ub[art] = np.where(resid >= 0.0, np.inf, 0.0)
        self.x[art] = resid
        self.state[art] = _BASIC
        self.basis = art.copy()
        # every artificial carries phase-1 cost +-1 toward zero; a zero cost
        # here would let a basic artificial drift away from feasibility
        self.phase1_cost = np.zeros(ncols)
        self.phase1_cost[art] = np.where(resid >= 0.0, 1.0, -1.0)
        self.binv = np.eye(m)

    # -- basis maintenance -----------------------------------------------------

    def refactorize(self):
        basis_matrix = self.a[:, self.basis]
        try:
            lu = lu_factor(basis_matrix)
            self.binv = lu_solve(lu, np.eye(self.m))
        except Exception as exc:  # singular basis: numerical trouble
            raise SimplexError(f"singular basis during refactorization: {exc}")
        nonbasic_mask = self.state != _BASIC
        rhs = self.b - self.a[:, nonbasic_mask] @ self.x[nonbasic_mask]
        self.x[self.basis] = self.binv @ rhs

    def duals(self, costs: np.ndarray) -> np.ndarray:
        return costs[self.basis] @ self.binv

    def reduced_costs(self, costs: np.ndarray, y: np.ndarray) -> np.ndarray:
        return costs - y @ self.a


def _choose_entering(tab: _Tableau, d: np.ndarray, bland: bool) -> int:
    tol = tab.tol
    fixed = tab.lb == tab.ub
    viol = np.zeros(d.size)
    at_lower = (tab.state == _AT_LOWER) & ~fixed
    at_upper = (tab.state == _AT_UPPER) & ~fixed
    free = tab.state == _FREE
    viol[at_lower] = -d[at_lower]
    viol[at_upper] = d[at_upper]
    viol[free] = np.abs(d[free])
    eligible = viol > tol
    if not eligible.any():
        return -1
    if bland:
        return int(np.flatnonzero(eligible)[0])
    return int(np.argmax(viol))


def _run_phase(tab: _Tableau, costs: np.ndarray, phase: int, max_iter: int,
               iters_done: int) -> tuple[str, int]:
    """Iterate until optimal/unbounded for the given cost vector."""
    m = tab.m
    degenerate_streak = 0
    bland = False
    refactor_period = 100
    it = iters_done
    since_refactor = 0
    while True:
        if it >= max_iter:
            raise SimplexError(f"iteration limit {max_iter} exceeded")
        y = tab.duals(costs)
        d = tab.reduced_costs(costs, y)
        j = _choose_entering(tab, d, bland)
        if j < 0:
            return OPTIMAL, it
        it += 1
        since_refactor += 1

        if tab.state[j] == _AT_UPPER or (tab.state[j] == _FREE and d[j] > 0):
            direction = -1.0
        else:
            direction = 1.0
        w = tab.binv @ tab.a[:, j]
        step_col = direction * w  # x_B changes by -t * step_col

        # ratio test over basic variables (vectorized), ties -> lowest column
        delta = -step_col
        xb = tab.x[tab.basis]
        lo = tab.lb[tab.basis]
        hi = tab.ub[tab.basis]
        with np.errstate(divide="ignore", invalid="ignore"):
            ratios = np.full(m, np.inf)
            dec = delta < -1e-11
            inc = delta > 1e-11
            ratios[dec] = (xb[dec] - lo[dec]) / (-delta[dec])
            ratios[inc] = (hi[inc] - xb[inc]) / delta[inc]
        ratios[np.isnan(ratios)] = np.inf
        np.maximum(ratios, 0.0, out=ratios)

        own_range = tab.ub[j] - tab.lb[j]
        min_ratio = float(ratios.min()) if m else np.inf
        best_t = min(min_ratio, own_range)
        if np.isinf(best_t):
            return UNBOUNDED, it
        t = best_t

        if min_ratio <= own_range:
            ties = np.flatnonzero(ratios <= min_ratio + 1e-12)
            ties = ties[np.argsort(tab.basis[ties], kind="stable")]
            leave_pos = -1
            for k in ties:
                if abs(w[k]) >= 1e-10:
                    leave_pos = int(k)
                    break
            if leave_pos < 0:
                if since_refactor == 0:
                    raise SimplexError("numerically singular pivot column")
                # unreliable pivots: rebuild the inverse and re-price
                tab.refactorize()
                since_refactor = 0
                it -= 1
                continue
        else:
            leave_pos = -1

        if t <= 1e-11:
            degenerate_streak += 1
            if degenerate_streak > 10 * m:
                bland = True
        else:
            degenerate_streak = 0
            bland = False

        # apply the step
        tab.x[tab.basis] -= t * step_col
        tab.x[j] += direction * t

        if leave_pos < 0:
            # bound flip: entering variable moved to its opposite bound
            tab.state[j] = _AT_UPPER if direction > 0 else _AT_LOWER
            tab.x[j] = tab.ub[j] if direction > 0 else tab.lb[j]
        else:
            leaving = tab.basis[leave_pos]
            # classify the leaving variable at the bound it hit
            tab.state[leaving] = _AT_LOWER if delta[leave_pos] < 0 else _AT_UPPER
            tab.x[leaving] = (
                tab.lb[leaving] if delta[leave_pos] < 0 else tab.ub[leaving]
            )
            tab.basis[leave_pos] = j
            tab.state[j] = _BASIC
            # product-form update of the explicit inverse
            row = tab.binv[leave_pos, :] / w[leave_pos]
            tab.binv -= np.outer(w, row)
            tab.binv[leave_pos, :] = row

        if since_refactor >= refactor_period:
            tab.refactorize()
            since_refactor = 0


def solve_simplex(
    data: LPData,
    lb: Optional[np.ndarray] = None,
    ub: Optional[np.ndarray] = None,
    tol: float = 1e-9,
    max_iter: Optional[int] = None,
) -> SimplexResult:
    """Solve ``min c@x + c0`` over the rows of ``data`` with bound overrides."""
    lb = data.lb if lb is None else lb
    ub = data.ub if ub is None else ub
    if np.any(lb > ub + 1e-12):
        return SimplexResult(INFEASIBLE, None, None, None, None, 0)
    m, n = data.a.shape
    if max_iter is None:
        max_iter = 5000 + 60 * (m + n)
    tab = _Tableau(data, np.asarray(lb, dtype=float), np.asarray(ub, dtype=float), tol)

    status, iters = _run_phase(tab, tab.phase1_cost, 1, max_iter, 0)
    if status == UNBOUNDED:
        raise SimplexError("phase 1 objective unbounded; inconsistent setup")
    feas_scale = 1.0 + float(np.max(np.abs(data.rhs))) if m else 1.0
    phase1_obj = float(tab.phase1_cost @ tab.x)
    if phase1_obj > 1e-7 * feas_scale:
        return SimplexResult(INFEASIBLE, None, None, None, None, iters)

    # fix artificials at zero for phase 2
    art = n + m + np.arange(m)
    tab.lb[art] = 0.0
    tab.ub[art] = 0.0
    nonbasic_art = art[tab.state[art] != _BASIC]
    tab.x[nonbasic_art] = 0.0
    tab.state[nonbasic_art] = _AT_LOWER

    costs = np.zeros(n + 2 * m)
    costs[:n] = data.c
    status, iters = _run_phase(tab, costs, 2, max_iter, iters)
    if status == UNBOUNDED:
        return SimplexResult(UNBOUNDED, None, None, None, None, iters)

    tab.refactorize()
    y = tab.duals(costs)
    d = tab.reduced_costs(costs, y)
    x = tab.x[:n].copy()

    # final guard: a claimed optimum must satisfy rows and bounds
    ax = data.a @ x
    scale = 1.0 + np.abs(data.rhs)
    for i, sense in enumerate(data.sense):
        if sense == LE:
            viol = ax[i] - data.rhs[i]
        elif sense == GE:
            viol = data.rhs[i] - ax[i]
        else:
            viol = abs(ax[i] - data.rhs[i])
        if viol > 1e-6 * scale[i]:
            raise SimplexError(
                f"terminated with violated row {i} (residual {viol:.3e})"
            )
    bscale = 1.0 + np.maximum(np.abs(lb), np.abs(ub))
    bviol = np.maximum(lb - x, x - ub)
    bad = np.flatnonzero(bviol > 1e-6 * bscale)
    if bad.size:
        raise SimplexError(f"terminated with out-of-bounds variables {bad[:5]}")

    obj = float(data.c @ x + data.c0)
    return SimplexResult(OPTIMAL, x, y.copy(), d[:n].copy(), obj, iters)
