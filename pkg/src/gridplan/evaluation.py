"""Evaluation of a fixed expansion plan under efficient or sequential markets.

The efficient design clears day-ahead and balancing jointly (one two-stage
LP over the whole tree, no renewable-share constraint: the plan is fixed and
the market clears on cost alone).  The inefficient design clears each
scenario's day-ahead market on day-ahead cost only and then solves every
balancing leaf with the day-ahead dispatch held fixed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .milp import solve_lp
from .models import (
    MONEY,
    ExpansionModel,
    ExpansionPlan,
    balancing_lp,
    build_operation_model,
    extract_plan,
    lower_level_lp,
    solve_expansion,
    validate_plan,
    _mw,
)
from .scenarios import ScenarioTree
from .system import PowerSystem

log = logging.getLogger("gridplan.evaluation")

EFFICIENT = "efficient"
INEFFICIENT = "inefficient"


@dataclass
class EvaluationReport:
    """Expected cost and realized renewable share of a plan under one design.

    Costs are $/year except the per-scenario breakdowns, which are $/h:
    ``day_ahead_cost[s]``, ``balancing_cost[s, r]`` and its curtailment
    component ``curtailment_cost[s, r]``.
    """

    design: str
    investment_cost: float
    total_cost: float
    renewable_share: float          # fraction of consumption
    day_ahead_cost: np.ndarray
    balancing_cost: np.ndarray
    curtailment_cost: np.ndarray
    expected_renewable_mw: float
    expected_consumption_mw: float

    @property
    def operation_cost(self) -> float:
        return self.total_cost - self.investment_cost

    def accounting_residual(self, system: PowerSystem, tree: ScenarioTree) -> float:
        """Relative error of total = investment + E[day-ahead + balancing]."""
        op = float(
            system.horizon_hours
            * np.sum(
                tree.pi_s
                * (self.day_ahead_cost + np.sum(tree.pi_sr * self.balancing_cost, axis=1))
            )
        )
        total = self.investment_cost + op
        return abs(total - self.total_cost) / max(1.0, abs(self.total_cost))

    def as_dict(self) -> dict:
        return {
            "design": self.design,
            "investment_cost_musd": round(self.investment_cost / MONEY, 9),
            "total_cost_musd": round(self.total_cost / MONEY, 9),
            "operation_cost_musd": round(self.operation_cost / MONEY, 9),
            "renewable_share_pct": round(100.0 * self.renewable_share, 6),
            "expected_renewable_mw": round(self.expected_renewable_mw, 6),
            "expected_consumption_mw": round(self.expected_consumption_mw, 6),
            "day_ahead_cost_per_h": [round(v, 6) for v in self.day_ahead_cost],
            "balancing_cost_per_h": [
                [round(v, 6) for v in row] for row in self.balancing_cost
            ],
            "curtailment_cost_per_h": [
                [round(v, 6) for v in row] for row in self.curtailment_cost
            ],
        }


def _plan_investment(plan: ExpansionPlan, system: PowerSystem) -> float:
    total = 0.0
    for p in system.projects:
        if plan.built[p.id]:
            total += p.fixed_cost + p.variable_cost * plan.capacity_mw[p.id]
    return total


def _aggregate(
    design: str,
    system: PowerSystem,
    tree: ScenarioTree,
    plan: ExpansionPlan,
    phat: dict,
    pup: dict,
    pdn: dict,
) -> EvaluationReport:
    """Assemble a report from dispatch values given in MW."""
    n_s, n_r = tree.n_s, tree.n_r
    devs = (
        [(u.id, u.price, u.up_price, u.down_price, u.is_renewable, False, 0.0)
         for u, _ in system.all_units()]
        + [(l.id, l.price, l.up_price, l.down_price, False, True, l.peak)
           for l in system.loads]
    )
    da = np.zeros(n_s)
    bal = np.zeros((n_s, n_r))
    curt = np.zeros((n_s, n_r))
    wind_mwh = 0.0
    load_mwh = 0.0
    for dev_id, price, up_price, down_price, renewable, is_load, peak in devs:
        for s in range(n_s):
            base = phat[dev_id, s]
            rho_h = tree.rho_hat_for(dev_id, s)
            if is_load:
                # unserved demand charged at the consumption value
                da[s] += -price * (peak * rho_h - base)
            else:
                da[s] += price * base
            for r in range(n_r):
                up = pup.get((dev_id, s, r), 0.0)
                dn = pdn.get((dev_id, s, r), 0.0)
                bal[s, r] += up_price * up - down_price * dn
                if is_load:
                    rho_t = tree.rho_tilde_for(dev_id, s, r)
                    bal[s, r] += -price * peak * (rho_t - rho_h)
                    if down_price < 0.0:
                        curt[s, r] += -down_price * dn
                final = base + up - dn
                w = tree.pi_s[s] * tree.pi_sr[s, r]
                if renewable:
                    wind_mwh += w * final
                if is_load:
                    load_mwh += w * final
    invest = _plan_investment(plan, system)
    op = float(
        system.horizon_hours
        * np.sum(tree.pi_s * (da + np.sum(tree.pi_sr * bal, axis=1)))
    )
    share = wind_mwh / load_mwh if load_mwh > 0 else 0.0
    return EvaluationReport(
        design=design,
        investment_cost=invest,
        total_cost=invest + op,
        renewable_share=share,
        day_ahead_cost=da,
        balancing_cost=bal,
        curtailment_cost=curt,
        expected_renewable_mw=wind_mwh,
        expected_consumption_mw=load_mwh,
    )


def evaluate_plan(
    plan: ExpansionPlan,
    system: PowerSystem,
    tree: ScenarioTree,
    design: str,
    *,
    include_share_constraint: bool = False,
) -> EvaluationReport:
    """Expected total cost and realized renewable share of a fixed plan.

    ``include_share_constraint`` keeps the renewable-share constraint in the
    efficient clearing (used to reconcile against the planning objective);
    markets are normally evaluated without it.
    """
    problems = validate_plan(plan, system)
    if problems:
        raise ValueError("plan infeasible for system: " + "; ".join(problems))
    if design == EFFICIENT:
        return _evaluate_efficient(plan, system, tree, include_share_constraint)
    if design == INEFFICIENT:
        if include_share_constraint:
            raise ValueError("the sequential design has no share constraint to keep")
        return _evaluate_inefficient(plan, system, tree)
    raise ValueError(f"unknown market design {design!r}")


def _evaluate_efficient(
    plan: ExpansionPlan,
    system: PowerSystem,
    tree: ScenarioTree,
    include_share: bool,
) -> EvaluationReport:
    model = build_operation_model(
        system, tree, plan, include_share=include_share, two_stage=True
    )
    sol = solve_lp(model.ir)
    if sol.status != "optimal":
        raise RuntimeError(
            f"efficient market clearing {sol.status}; lost-load recourse "
            "should make the operation problem feasible"
        )
    phat = {k: _mw(sol.value(v)) for k, v in model.phat.items()}
    pup = {k: _mw(sol.value(v)) for k, v in model.pup.items()}
    pdn = {k: _mw(sol.value(v)) for k, v in model.pdn.items()}
    return _aggregate(EFFICIENT, system, tree, plan, phat, pup, pdn)


def _evaluate_inefficient(
    plan: ExpansionPlan, system: PowerSystem, tree: ScenarioTree
) -> EvaluationReport:
    phat: dict = {}
    pup: dict = {}
    pdn: dict = {}
    for s in range(tree.n_s):
        ir, maps = lower_level_lp(system, tree, s, plan)
        da = solve_lp(ir)
        if da.status != "optimal":
            raise RuntimeError(f"day-ahead clearing {da.status} in scenario {s}")
        phat_s = {dev: _mw(da.value(v)) for dev, v in maps["p"].items()}
        for dev, val in phat_s.items():
            phat[dev, s] = val
        for r in range(tree.n_r):
            bir, bmaps = balancing_lp(system, tree, s, r, plan, phat_s)
            bal = solve_lp(bir)
            if bal.status != "optimal":
                raise RuntimeError(
                    f"balancing clearing {bal.status} in scenario ({s},{r}); "
                    "insufficient lost-load-priced recourse"
                )
            for dev, v in bmaps["up"].items():
                pup[dev, s, r] = _mw(bal.value(v))
            for dev, v in bmaps["dn"].items():
                pdn[dev, s, r] = _mw(bal.value(v))
    return _aggregate(INEFFICIENT, system, tree, plan, phat, pup, pdn)


# -- cross-design comparison -----------------------------------------------------


@dataclass
class ComparisonCell:
    plan_model: int
    design: str
    report: EvaluationReport


@dataclass
class ComparisonRow:
    eta: float
    plans: dict[int, ExpansionPlan]
    objectives: dict[int, float]            # planning objectives, $/year
    evaluations: list[ComparisonCell]


@dataclass
class ComparisonTable:
    rows: list[ComparisonRow] = field(default_factory=list)

    def csv_lines(self, system: PowerSystem) -> list[str]:
        """Paper-shaped table: one row per quantity and model, one column
        per renewable target."""
        targets = [row.eta for row in self.rows]
        header = ["quantity", "model"] + [f"{100 * t:g}%" for t in targets]
        lines = [",".join(header)]
        for p in system.projects:
            for k in (1, 2, 3):
                vals = [f"{row.plans[k].capacity_mw[p.id]:.1f}" for row in self.rows]
                lines.append(",".join([f"cap:{p.id}", f"model{k}"] + vals))
        for k in (1, 2, 3):
            vals = [
                f"{_plan_investment(row.plans[k], system) / MONEY:.4f}"
                for row in self.rows
            ]
            lines.append(",".join(["inv_cost_musd", f"model{k}"] + vals))
        designs = sorted({(c.design, c.plan_model) for row in self.rows
                          for c in row.evaluations})
        for design, plan_model in designs:
            cost_vals = []
            share_vals = []
            for row in self.rows:
                cell = next(
                    c for c in row.evaluations
                    if c.design == design and c.plan_model == plan_model
                )
                cost_vals.append(f"{cell.report.total_cost / MONEY:.4f}")
                share_vals.append(f"{100 * cell.report.renewable_share:.2f}")
            lines.append(",".join(
                [f"total_cost_musd:{design}", f"model{plan_model}-plan"] + cost_vals))
            lines.append(",".join(
                [f"share_pct:{design}", f"model{plan_model}-plan"] + share_vals))
        return lines


def compare_designs(
    system: PowerSystem,
    tree: ScenarioTree,
    targets: list[float],
    *,
    gap: float = 1e-6,
    node_limit: Optional[int] = None,
    workers: int = 1,
    evaluate: bool = True,
) -> ComparisonTable:
    """Solve the three planning models per target and cross-evaluate plans.

    The evaluation cells mirror the paper-style comparison: the model-2 and
    model-1 plans under the efficient design, the model-3 and model-1 plans
    under the sequential design.
    """
    table = ComparisonTable()
    for eta in targets:
        sys_eta = replace(system, renewable_target=eta)
        plans: dict[int, ExpansionPlan] = {}
        objectives: dict[int, float] = {}
        for kind in (1, 2, 3):
            model, sol = solve_expansion(
                sys_eta, tree, kind, gap=gap, node_limit=node_limit, workers=workers
            )
            if sol.status not in ("optimal", "gap_limit") or sol.x is None:
                raise RuntimeError(
                    f"model {kind} at target {eta:.0%}: {sol.status}"
                )
            plans[kind] = extract_plan(sol, model)
            objectives[kind] = sol.objective * MONEY
            log.info(
                "eta=%.0f%% model %d: objective %.4f m$, %d nodes",
                100 * eta, kind, sol.objective, sol.nodes,
            )
        cells = []
        if evaluate:
            for plan_model, design in (
                (2, EFFICIENT), (1, EFFICIENT), (3, INEFFICIENT), (1, INEFFICIENT),
            ):
                report = evaluate_plan(plans[plan_model], sys_eta, tree, design)
                cells.append(ComparisonCell(plan_model, design, report))
        table.rows.append(ComparisonRow(eta, plans, objectives, cells))
    return table
