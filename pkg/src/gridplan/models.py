"""Builders for the three expansion-planning MILPs and plan extraction.

Market-design variants of the same planning problem:

* model 1 ignores forecast errors: investment plus day-ahead dispatch with
  the renewable-share constraint on day-ahead quantities;
* model 2 co-optimizes day-ahead and balancing stages over the full
  two-level scenario tree, with the share constraint on final dispatch;
* model 3 additionally forces the day-ahead dispatch of every scenario to
  minimize day-ahead cost alone (a sequential, non-cooptimized market),
  single-levelled through lower-level dual feasibility plus a per-scenario
  strong-duality equality whose capacity-times-dual products are linearized
  exactly via power-of-two capacity blocks.

Internally all powers are expressed in 100-MW units (matching the per-unit
susceptance base) and all money in m$, which keeps simplex bases well
conditioned; reported plans and costs are converted back to MW and $.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .milp import (
    BINARY,
    EQ,
    GE,
    LE,
    ModelIR,
    Solution,
    attach_binary_expansion,
    binary_expansion,
    linearize_product,
    product_rows,
    solve_lp,
    solve_milp,
)
from .milp.solve import fix_and_solve
from .scenarios import ScenarioTree
from .system import GENERATOR, LINE, PowerSystem

log = logging.getLogger("gridplan.models")

PU = 100.0          # MW per internal power unit (100-MVA base)
MONEY = 1e6         # $ per internal money unit (m$)
ANGLE_MAX = math.pi

_INT_TOL = 1e-6


def _pu(mw: float) -> float:
    return mw / PU


def _mw(pu: float) -> float:
    return pu * PU


def _m(dollars: float) -> float:
    return dollars / MONEY


def _price(dollars_per_mwh: float) -> float:
    """Price in internal units: m$ per (100-MW unit)-hour."""
    return dollars_per_mwh * PU / MONEY


# -- plan ----------------------------------------------------------------------


@dataclass
class ExpansionPlan:
    """Built projects with sized capacities and the implied annual cost."""

    built: dict[str, bool]
    capacity_mw: dict[str, float]
    investment_cost: float          # $/year

    def as_dict(self) -> dict:
        return {
            "projects": {
                pid: {
                    "built": bool(self.built[pid]),
                    "capacity_mw": round(self.capacity_mw[pid], 6),
                }
                for pid in sorted(self.built)
            },
            "investment_cost_musd": round(self.investment_cost / MONEY, 9),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "ExpansionPlan":
        built = {}
        cap = {}
        for pid, entry in payload["projects"].items():
            built[pid] = bool(entry["built"])
            cap[pid] = float(entry["capacity_mw"])
        return cls(built, cap, float(payload["investment_cost_musd"]) * MONEY)


def validate_plan(plan: ExpansionPlan, system: PowerSystem) -> list[str]:
    v = []
    for p in system.projects:
        if p.id not in plan.built:
            v.append(f"plan missing project {p.id}")
            continue
        cap = plan.capacity_mw[p.id]
        if cap < -1e-9 or cap > p.x_max + 1e-6:
            v.append(f"project {p.id}: capacity {cap} outside [0, {p.x_max}]")
        if not plan.built[p.id] and cap > 1e-6:
            v.append(f"project {p.id}: capacity {cap} with built=False")
    return v


# -- internal device views ------------------------------------------------------


@dataclass(frozen=True)
class _Dev:
    id: str
    bus: str
    cap_pu: Optional[float]     # None while the capacity is a decision
    price: float                # $/MWh
    up_frac: float
    up_price: float
    down_frac: float
    down_price: float
    renewable: bool
    is_load: bool
    project: Optional[str]


@dataclass(frozen=True)
class _Lin:
    id: str
    from_bus: str
    to_bus: str
    b: float                    # p.u.
    cap_pu: Optional[float]
    project: Optional[str]


def _device_views(system: PowerSystem, plan: Optional[ExpansionPlan]):
    devs: list[_Dev] = []
    for unit, proj in system.all_units():
        if proj is None:
            cap = _pu(unit.capacity)
            pid = None
        elif plan is not None:
            cap = _pu(plan.capacity_mw[proj.id]) if plan.built[proj.id] else 0.0
            pid = None
        else:
            cap = None
            pid = proj.id
        devs.append(
            _Dev(unit.id, unit.bus, cap, unit.price, unit.up_frac, unit.up_price,
                 unit.down_frac, unit.down_price, unit.is_renewable, False, pid)
        )
    for ld in system.loads:
        devs.append(
            _Dev(ld.id, ld.bus, _pu(ld.peak), ld.price, ld.up_frac, ld.up_price,
                 ld.down_frac, ld.down_price, False, True, None)
        )
    lins: list[_Lin] = []
    for line, proj in system.all_lines():
        if proj is None:
            lins.append(_Lin(line.id, line.from_bus, line.to_bus,
                             line.susceptance, _pu(line.capacity), None))
        elif plan is not None:
            cap = _pu(plan.capacity_mw[proj.id]) if plan.built[proj.id] else 0.0
            lins.append(_Lin(line.id, line.from_bus, line.to_bus,
                             line.susceptance, cap, "__unbuilt__" if cap == 0.0 else None))
        else:
            lins.append(_Lin(line.id, line.from_bus, line.to_bus,
                             line.susceptance, None, proj.id))
    return devs, lins


# -- expansion model ------------------------------------------------------------


@dataclass
class ExpansionModel:
    """A built MILP together with the variable layout needed to read it."""

    kind: int
    ir: ModelIR
    system: PowerSystem
    tree: ScenarioTree
    u: dict[str, int] = field(default_factory=dict)
    x: dict[str, int] = field(default_factory=dict)
    phat: dict = field(default_factory=dict)
    fhat: dict = field(default_factory=dict)
    dhat: dict = field(default_factory=dict)
    pup: dict = field(default_factory=dict)
    pdn: dict = field(default_factory=dict)
    ftil: dict = field(default_factory=dict)
    dtil: dict = field(default_factory=dict)
    v_blocks: dict[str, list[int]] = field(default_factory=dict)
    boxed_duals: list[int] = field(default_factory=list)
    dual_box: float = 0.0
    dual_box_scale: float = 1.0
    devs: list = field(default_factory=list)
    lins: list = field(default_factory=list)

    def investment_component(self, sol: Solution) -> float:
        """Investment part of the objective, in $/year, from IR coefficients."""
        total = 0.0
        for pid in self.u:
            total += self.ir.objective.get(self.u[pid], 0.0) * sol.value(self.u[pid])
            total += self.ir.objective.get(self.x[pid], 0.0) * sol.value(self.x[pid])
        return total * MONEY


def _build(
    system: PowerSystem,
    tree: ScenarioTree,
    kind: int,
    *,
    plan: Optional[ExpansionPlan] = None,
    include_share: bool = True,
    dual_box_scale: float = 1.0,
    name: Optional[str] = None,
) -> ExpansionModel:
    if kind not in (1, 2, 3):
        raise ValueError(f"unknown model kind {kind}")
    if plan is not None and kind == 3:
        raise ValueError("fixed-plan builds are operation problems (kind 1 or 2)")

    ir = ModelIR(name or f"model{kind}[{system.name}]")
    model = ExpansionModel(kind, ir, system, tree, dual_box_scale=dual_box_scale)
    devs, lins = _device_views(system, plan)
    model.devs, model.lins = devs, lins
    proj_by_id = {p.id: p for p in system.projects}
    buses = system.bus_ids()
    ref = system.reference_bus()
    T = system.horizon_hours
    eta = system.renewable_target
    n_s, n_r = tree.n_s, tree.n_r
    pi_s = tree.pi_s
    pi_sr = tree.pi_sr

    # ---- first stage: build binaries, capacities, investment cost
    if plan is None:
        for p in system.projects:
            model.u[p.id] = ir.add_variable(f"u[{p.id}]", kind=BINARY)
            model.x[p.id] = ir.add_variable(f"x[{p.id}]", 0.0, _pu(p.x_max))
            ir.add_constraint(
                [(model.x[p.id], 1.0), (model.u[p.id], -_pu(p.x_max))],
                LE, 0.0, f"xcap[{p.id}]",
            )
            ir.add_objective(
                [(model.u[p.id], _m(p.fixed_cost)),
                 (model.x[p.id], _m(p.variable_cost * PU))]
            )

    # constant shift re-expressing the loads' consumption-value terms as a
    # lost-load charge on unserved energy: the objective then equals the
    # expected total cost of serving realized demand (a positive quantity),
    # which keeps relative MILP gaps meaningful
    offset = 0.0
    for dev in devs:
        if not dev.is_load:
            continue
        for s in range(n_s):
            if kind == 1:
                rho = tree.rho_hat_for(dev.id, s)
            else:
                rho = float(
                    np.dot(pi_sr[s], [tree.rho_tilde_for(dev.id, s, r)
                                      for r in range(n_r)])
                )
            offset += T * pi_s[s] * _price(-dev.price) * dev.cap_pu * rho
    ir.add_objective_offset(offset)

    def dispatch_cap(dev: _Dev, rho: float, pvar: int, tag: str, frac: float = 1.0):
        """Return the upper bound ``frac*rho*x`` as a bound or emit a row."""
        if dev.cap_pu is not None:
            return frac * rho * dev.cap_pu
        ir.add_constraint(
            [(pvar, 1.0), (model.x[dev.project], -frac * rho)], LE, 0.0, tag
        )
        return None

    # ---- day-ahead stage
    for s in range(n_s):
        for n in buses:
            lo, hi = (0.0, 0.0) if n == ref else (-ANGLE_MAX, ANGLE_MAX)
            model.dhat[n, s] = ir.add_variable(f"dhat[{n},{s}]", lo, hi)

    for dev in devs:
        for s in range(n_s):
            rho = tree.rho_hat_for(dev.id, s)
            if dev.cap_pu is not None:
                pv = ir.add_variable(f"phat[{dev.id},{s}]", 0.0, dev.cap_pu * rho)
            else:
                pv = ir.add_variable(f"phat[{dev.id},{s}]", 0.0)
                dispatch_cap(dev, rho, pv, f"phat_cap[{dev.id},{s}]")
            model.phat[dev.id, s] = pv
            coef = T * pi_s[s] * _price(dev.price)
            if coef:
                ir.add_objective([(pv, coef)])

    for ln in lins:
        ymax = 2.0 * ANGLE_MAX * ln.b
        for s in range(n_s):
            rho = tree.rho_hat_for(ln.id, s)
            terms = [(model.dhat[ln.from_bus, s], ln.b),
                     (model.dhat[ln.to_bus, s], -ln.b)]
            if ln.project == "__unbuilt__":
                fv = ir.add_variable(f"fhat[{ln.id},{s}]", 0.0, 0.0)
            elif ln.project is None:
                cap = ln.cap_pu * rho
                fv = ir.add_variable(f"fhat[{ln.id},{s}]", -cap, cap)
                ir.add_constraint([(fv, 1.0)] + [(c, -v) for c, v in terms],
                                  EQ, 0.0, f"fdef[{ln.id},{s}]")
            else:
                box = min(ymax, _pu(proj_by_id[ln.project].x_max))
                fv = ir.add_variable(f"fhat[{ln.id},{s}]", -box, box)
                product_rows(ir, fv, model.u[ln.project], terms, -ymax, ymax,
                             f"fdef[{ln.id},{s}]")
                ir.add_constraint([(fv, 1.0), (model.x[ln.project], -rho)],
                                  LE, 0.0, f"fcap_hi[{ln.id},{s}]")
                ir.add_constraint([(fv, 1.0), (model.x[ln.project], rho)],
                                  GE, 0.0, f"fcap_lo[{ln.id},{s}]")
            model.fhat[ln.id, s] = fv

    for s in range(n_s):
        for n in buses:
            terms = []
            for dev in devs:
                if dev.bus == n:
                    terms.append((model.phat[dev.id, s], -1.0 if dev.is_load else 1.0))
            for ln in lins:
                if ln.from_bus == n:
                    terms.append((model.fhat[ln.id, s], -1.0))
                elif ln.to_bus == n:
                    terms.append((model.fhat[ln.id, s], 1.0))
            ir.add_constraint(terms, EQ, 0.0, f"bal[{n},{s}]")

    if kind == 1 and include_share:
        terms = []
        for dev in devs:
            if dev.renewable:
                for s in range(n_s):
                    terms.append((model.phat[dev.id, s], pi_s[s]))
            elif dev.is_load:
                for s in range(n_s):
                    terms.append((model.phat[dev.id, s], -eta * pi_s[s]))
        ir.add_constraint(terms, GE, 0.0, "share_day_ahead")

    if kind == 1:
        return model

    # ---- balancing stage
    for s in range(n_s):
        for r in range(n_r):
            for n in buses:
                lo, hi = (0.0, 0.0) if n == ref else (-ANGLE_MAX, ANGLE_MAX)
                model.dtil[n, s, r] = ir.add_variable(f"dtil[{n},{s},{r}]", lo, hi)

    for dev in devs:
        has_up = dev.up_frac > 0.0
        has_dn = dev.down_frac > 0.0
        for s in range(n_s):
            rho_h = tree.rho_hat_for(dev.id, s)
            pv = model.phat[dev.id, s]
            for r in range(n_r):
                rho_t = tree.rho_tilde_for(dev.id, s, r)
                up = dn = None
                if has_up:
                    if dev.cap_pu is not None:
                        up = ir.add_variable(f"pup[{dev.id},{s},{r}]",
                                             0.0, dev.up_frac * dev.cap_pu)
                    else:
                        up = ir.add_variable(f"pup[{dev.id},{s},{r}]", 0.0)
                        ir.add_constraint(
                            [(up, 1.0), (model.x[dev.project], -dev.up_frac)],
                            LE, 0.0, f"pup_cap[{dev.id},{s},{r}]")
                    model.pup[dev.id, s, r] = up
                    coef = T * pi_s[s] * pi_sr[s, r] * _price(dev.up_price)
                    if coef:
                        ir.add_objective([(up, coef)])
                if has_dn:
                    if dev.cap_pu is not None:
                        dn = ir.add_variable(f"pdn[{dev.id},{s},{r}]",
                                             0.0, dev.down_frac * dev.cap_pu)
                    else:
                        dn = ir.add_variable(f"pdn[{dev.id},{s},{r}]", 0.0)
                        ir.add_constraint(
                            [(dn, 1.0), (model.x[dev.project], -dev.down_frac)],
                            LE, 0.0, f"pdn_cap[{dev.id},{s},{r}]")
                    model.pdn[dev.id, s, r] = dn
                    coef = -T * pi_s[s] * pi_sr[s, r] * _price(dev.down_price)
                    if coef:
                        ir.add_objective([(dn, coef)])

                final_terms = [(pv, 1.0)]
                if up is not None:
                    final_terms.append((up, 1.0))
                if dn is not None:
                    final_terms.append((dn, -1.0))
                if dn is not None:
                    ir.add_constraint(final_terms, GE, 0.0,
                                      f"ptil_lo[{dev.id},{s},{r}]")
                if up is not None or rho_t != rho_h:
                    if dev.cap_pu is not None:
                        ir.add_constraint(final_terms, LE, dev.cap_pu * rho_t,
                                          f"ptil_hi[{dev.id},{s},{r}]")
                    else:
                        ir.add_constraint(
                            final_terms + [(model.x[dev.project], -rho_t)],
                            LE, 0.0, f"ptil_hi[{dev.id},{s},{r}]")

    for ln in lins:
        ymax = 2.0 * ANGLE_MAX * ln.b
        for s in range(n_s):
            for r in range(n_r):
                rho = tree.rho_tilde_for(ln.id, s, r)
                terms = [(model.dtil[ln.from_bus, s, r], ln.b),
                         (model.dtil[ln.to_bus, s, r], -ln.b)]
                if ln.project == "__unbuilt__":
                    fv = ir.add_variable(f"ftil[{ln.id},{s},{r}]", 0.0, 0.0)
                elif ln.project is None:
                    cap = ln.cap_pu * rho
                    fv = ir.add_variable(f"ftil[{ln.id},{s},{r}]", -cap, cap)
                    ir.add_constraint([(fv, 1.0)] + [(c, -v) for c, v in terms],
                                      EQ, 0.0, f"ftdef[{ln.id},{s},{r}]")
                else:
                    box = min(ymax, _pu(proj_by_id[ln.project].x_max))
                    fv = ir.add_variable(f"ftil[{ln.id},{s},{r}]", -box, box)
                    product_rows(ir, fv, model.u[ln.project], terms, -ymax, ymax,
                                 f"ftdef[{ln.id},{s},{r}]")
                    ir.add_constraint([(fv, 1.0), (model.x[ln.project], -rho)],
                                      LE, 0.0, f"ftcap_hi[{ln.id},{s},{r}]")
                    ir.add_constraint([(fv, 1.0), (model.x[ln.project], rho)],
                                      GE, 0.0, f"ftcap_lo[{ln.id},{s},{r}]")
                model.ftil[ln.id, s, r] = fv

    for s in range(n_s):
        for r in range(n_r):
            for n in buses:
                terms = []
                for dev in devs:
                    if dev.bus != n:
                        continue
                    sign = -1.0 if dev.is_load else 1.0
                    terms.append((model.phat[dev.id, s], sign))
                    up = model.pup.get((dev.id, s, r))
                    dn = model.pdn.get((dev.id, s, r))
                    if up is not None:
                        terms.append((up, sign))
                    if dn is not None:
                        terms.append((dn, -sign))
                for ln in lins:
                    if ln.from_bus == n:
                        terms.append((model.ftil[ln.id, s, r], -1.0))
                    elif ln.to_bus == n:
                        terms.append((model.ftil[ln.id, s, r], 1.0))
                ir.add_constraint(terms, EQ, 0.0, f"tbal[{n},{s},{r}]")

    if include_share:
        terms: list[tuple[int, float]] = []
        for dev in devs:
            if not (dev.renewable or dev.is_load):
                continue
            w = 1.0 if dev.renewable else -eta
            for s in range(n_s):
                terms.append((model.phat[dev.id, s], w * pi_s[s]))
                for r in range(n_r):
                    up = model.pup.get((dev.id, s, r))
                    dn = model.pdn.get((dev.id, s, r))
                    weight = w * pi_s[s] * pi_sr[s, r]
                    if up is not None:
                        terms.append((up, weight))
                    if dn is not None:
                        terms.append((dn, -weight))
        ir.add_constraint(terms, GE, 0.0, "share_final")

    if kind == 2:
        return model

    # ---- sequential-market block: lower-level duals and strong duality
    _attach_sequential_block(model, proj_by_id)
    return model


def _attach_sequential_block(model: ExpansionModel, proj_by_id: dict):
    """Dual feasibility and per-scenario strong duality for the day-ahead
    market clearing, with every capacity-dual product linearized exactly."""
    ir, system, tree = model.ir, model.system, model.tree
    devs, lins = model.devs, model.lins
    buses = system.bus_ids()
    ref = system.reference_bus()
    n_s = tree.n_s
    box = 10.0 * _price(system.max_offer_price()) * model.dual_box_scale
    model.dual_box = box

    # block binaries for every project capacity entering the duality products;
    # expansions are built directly in per-unit capacities (scale invariant)
    expansions = {
        p.id: binary_expansion(_pu(p.x_max), _pu(p.block_size), p.id)
        for p in system.projects
    }
    for p in system.projects:
        exp = expansions[p.id]
        v_vars = attach_binary_expansion(ir, model.x[p.id], exp, f"v[{p.id}]")
        model.v_blocks[p.id] = v_vars
        for b, v in enumerate(v_vars):
            ir.add_constraint([(v, 1.0), (model.u[p.id], -1.0)], LE, 0.0,
                              f"vlink[{p.id},{b}]")

    alpha_up: dict = {}
    theta_lo: dict = {}
    theta_up: dict = {}
    phi: dict = {}
    lam: dict = {}
    xi: dict = {}
    inf = math.inf

    for s in range(n_s):
        xi[s] = ir.add_variable(f"xi[{s}]", -inf, inf)
        for n in buses:
            lam[n, s] = ir.add_variable(f"lam[{n},{s}]", -inf, inf)
        for dev in devs:
            lo = ir.add_variable(f"alo[{dev.id},{s}]", 0.0, inf)
            if dev.project is not None:
                hi = ir.add_variable(f"aup[{dev.id},{s}]", -box, 0.0)
                model.boxed_duals.append(hi)
            else:
                hi = ir.add_variable(f"aup[{dev.id},{s}]", -inf, 0.0)
            alpha_up[dev.id, s] = hi
            sign = -1.0 if dev.is_load else 1.0
            ir.add_constraint(
                [(lo, 1.0), (hi, 1.0), (lam[dev.bus, s], sign)],
                EQ, _price(dev.price), f"dual_p[{dev.id},{s}]",
            )
        for ln in lins:
            if ln.project is not None and ln.project != "__unbuilt__":
                tl = ir.add_variable(f"tlo[{ln.id},{s}]", 0.0, box)
                tu = ir.add_variable(f"tup[{ln.id},{s}]", -box, 0.0)
                ph = ir.add_variable(f"phi[{ln.id},{s}]", -box, box)
                model.boxed_duals += [tl, tu, ph]
            else:
                tl = ir.add_variable(f"tlo[{ln.id},{s}]", 0.0, inf)
                tu = ir.add_variable(f"tup[{ln.id},{s}]", -inf, 0.0)
                ph = ir.add_variable(f"phi[{ln.id},{s}]", -inf, inf)
            theta_lo[ln.id, s], theta_up[ln.id, s], phi[ln.id, s] = tl, tu, ph
            ir.add_constraint(
                [(ph, 1.0), (tl, 1.0), (tu, 1.0),
                 (lam[ln.from_bus, s], -1.0), (lam[ln.to_bus, s], 1.0)],
                EQ, 0.0, f"dual_f[{ln.id},{s}]",
            )

        # stationarity in the voltage angles: sum_l u_l b_l a_ln phi_ls = xi at ref
        phi_flow: dict = {}
        for ln in lins:
            if ln.project is None:
                phi_flow[ln.id] = [(phi[ln.id, s], ln.b)]
            else:
                w = linearize_product(ir, model.u[ln.project], phi[ln.id, s],
                                      f"uphi[{ln.id},{s}]")
                phi_flow[ln.id] = [(w, ln.b)]
        for n in buses:
            terms = []
            for ln in lins:
                a = 1.0 if ln.from_bus == n else (-1.0 if ln.to_bus == n else 0.0)
                if a:
                    terms += [(col, -a * coef) for col, coef in phi_flow[ln.id]]
            if n == ref:
                terms.append((xi[s], 1.0))
            ir.add_constraint(terms, EQ, 0.0, f"dual_ang[{n},{s}]")

        # strong duality: day-ahead cost equals the dual objective, per scenario
        sd_terms: list[tuple[int, float]] = []
        for dev in devs:
            cl = _price(dev.price)
            if cl:
                sd_terms.append((model.phat[dev.id, s], cl))
            rho = tree.rho_hat_for(dev.id, s)
            if dev.project is None:
                sd_terms.append((alpha_up[dev.id, s], -rho * dev.cap_pu))
            else:
                for bidx, (v, w) in enumerate(
                    zip(model.v_blocks[dev.project], expansions[dev.project].weights)
                ):
                    z = linearize_product(ir, v, alpha_up[dev.id, s],
                                          f"zau[{dev.id},{s},{bidx}]")
                    sd_terms.append((z, -rho * w))
        for ln in lins:
            rho = tree.rho_hat_for(ln.id, s)
            if ln.project is None:
                sd_terms.append((theta_up[ln.id, s], -rho * ln.cap_pu))
                sd_terms.append((theta_lo[ln.id, s], rho * ln.cap_pu))
            else:
                for bidx, (v, w) in enumerate(
                    zip(model.v_blocks[ln.project], expansions[ln.project].weights)
                ):
                    zu = linearize_product(ir, v, theta_up[ln.id, s],
                                           f"ztu[{ln.id},{s},{bidx}]")
                    zl = linearize_product(ir, v, theta_lo[ln.id, s],
                                           f"ztl[{ln.id},{s},{bidx}]")
                    sd_terms.append((zu, -rho * w))
                    sd_terms.append((zl, rho * w))
        ir.add_constraint(sd_terms, EQ, 0.0, f"strong_duality[{s}]")


def build_model1(system: PowerSystem, tree: ScenarioTree) -> ExpansionModel:
    """Forecast-error-blind expansion planning (day-ahead level only)."""
    return _build(system, tree, 1)


def build_model2(system: PowerSystem, tree: ScenarioTree) -> ExpansionModel:
    """Co-optimized day-ahead plus balancing expansion planning."""
    return _build(system, tree, 2)


def build_model3(
    system: PowerSystem, tree: ScenarioTree, dual_box_scale: float = 1.0
) -> ExpansionModel:
    """Sequential-market expansion planning via strong-duality reformulation."""
    return _build(system, tree, 3, dual_box_scale=dual_box_scale)


def build_operation_model(
    system: PowerSystem,
    tree: ScenarioTree,
    plan: ExpansionPlan,
    *,
    include_share: bool = False,
    two_stage: bool = True,
) -> ExpansionModel:
    """Pure-LP operation problem of a fixed plan (no investment terms)."""
    return _build(system, tree, 2 if two_stage else 1, plan=plan,
                  include_share=include_share,
                  name=f"operation[{system.name}]")


def plan_to_fixes(model: ExpansionModel, plan: ExpansionPlan) -> dict[int, float]:
    """Binary fixing that realizes a plan on the model's expansion grid.

    Capacities are rounded up to the next representable block multiple (so a
    share-feasible plan stays share-feasible); returns ``{column: value}``
    for every build and block binary of the model.
    """
    fixes: dict[int, float] = {}
    for p in model.system.projects:
        cap = plan.capacity_mw.get(p.id, 0.0)
        k = int(math.ceil(cap / p.block_size - 1e-9))
        k = min(k, int(math.floor(p.x_max / p.block_size)))
        built = 1.0 if (plan.built.get(p.id, False) or k > 0) else 0.0
        fixes[model.u[p.id]] = built
        if built == 0.0:
            k = 0
        for b, v in enumerate(model.v_blocks.get(p.id, [])):
            fixes[v] = float((k >> b) & 1)
    return fixes


def _sequential_warm_start(
    system: PowerSystem,
    tree: ScenarioTree,
    model3: ExpansionModel,
    gap: float,
    node_limit: Optional[int],
    workers: int,
) -> Optional[dict]:
    """Incumbent fixing for the sequential MILP.

    Starts from the co-optimized plan, then probes cheap local variants:
    renewables scaled up (the share constraint has to survive merit-order
    day-ahead clearing, which dispatches renewables without regard to
    balancing costs) and capacity swaps between same-kind sibling projects
    (the sequential market often prefers a different flexibility provider).
    Every candidate is scored exactly by an LP with all binaries pinned.
    """
    m2 = _build(system, tree, 2)
    s2 = solve_milp(m2.ir, gap=max(gap, 1e-5), node_limit=node_limit,
                    workers=workers)
    if s2.status not in ("optimal", "gap_limit") or s2.x is None:
        return None
    plan2 = extract_plan(s2, m2)

    def scaled(plan: ExpansionPlan, scale: float) -> ExpansionPlan:
        cap = dict(plan.capacity_mw)
        for p in system.projects:
            if p.kind == GENERATOR and p.unit.is_renewable and plan.built.get(p.id):
                cap[p.id] = min(cap[p.id] * scale, p.x_max)
        return ExpansionPlan(dict(plan.built), cap, 0.0)

    line_ends = {
        p.id: frozenset((p.line.from_bus, p.line.to_bus))
        for p in system.projects if p.kind == LINE
    }

    def move(plan: ExpansionPlan, src, dst) -> ExpansionPlan:
        """Shift a unit's capacity to a sibling project, carrying along any
        candidate tie line that mirrors the move between the two buses."""
        cap = dict(plan.capacity_mw)
        built = dict(plan.built)
        cap[dst.id] = min(cap[src.id], dst.x_max)
        cap[src.id] = 0.0
        built[dst.id], built[src.id] = True, False
        for la, ea in line_ends.items():
            if src.unit.bus not in ea or not built.get(la):
                continue
            for lb, eb in line_ends.items():
                if lb == la or built.get(lb):
                    continue
                if eb == (ea - {src.unit.bus}) | {dst.unit.bus}:
                    lb_max = next(p.x_max for p in system.projects if p.id == lb)
                    cap[lb] = min(cap[la], lb_max)
                    cap[la] = 0.0
                    built[lb], built[la] = True, False
        return ExpansionPlan(built, cap, 0.0)

    def swaps(plan: ExpansionPlan):
        gens = [p for p in system.projects
                if p.kind == GENERATOR and not p.unit.is_renewable]
        for src in gens:
            if not plan.built.get(src.id) or plan.capacity_mw[src.id] <= 0:
                continue
            for dst in gens:
                if dst.id != src.id and not plan.built.get(dst.id):
                    yield move(plan, src, dst)

    candidates: list[ExpansionPlan] = []
    for scale in (1.0, 1.1, 1.25, 1.5, 2.0):
        base = scaled(plan2, scale)
        candidates.append(base)
        if scale in (1.0, 1.25):
            candidates.extend(swaps(base))

    best_fixes = None
    best_obj = math.inf
    for cand in candidates:
        fixes = plan_to_fixes(model3, cand)
        probe = fix_and_solve(model3.ir, fixes)
        if probe.status == "optimal" and probe.objective < best_obj:
            best_fixes, best_obj = fixes, probe.objective
    if best_fixes is not None:
        log.info("%s: warm start at %.6f", model3.ir.name, best_obj)
    return best_fixes


def _trimmed_solution(
    model: ExpansionModel, sol: Solution
) -> tuple[Solution, bool]:
    """Snap built capacities down to the observed dispatch/flow maxima.

    Block-grid solutions can carry spare capacity worth less than the MILP
    gap; re-probing the trimmed fixing keeps the solution optimal-or-better
    and restores the tight line-equals-unit sizing of exact optima.
    """
    if model.kind != 3 or sol.x is None:
        return sol, False
    plan = extract_plan(sol, model)
    sched = extract_schedule(sol, model)
    # only devices with certain availability can be sized off observed use;
    # an uncertain unit's capacity also scales its per-leaf output cap
    trimmable = {
        p.id for p in model.system.projects
        if np.all(model.tree.rho_hat.get(p.id, np.ones(1)) == 1.0)
        and np.all(model.tree.rho_tilde.get(p.id, np.ones(1)) == 1.0)
    }
    need: dict[str, float] = {pid: 0.0 for pid in trimmable}
    dev_by_id = {d.id: d for d in model.devs}
    for (dev, s), val in sched.phat.items():
        if dev in need:
            need[dev] = max(need[dev], val)
    for (dev, s, r), up in sched.pup.items():
        if dev in need:
            base = sched.phat[dev, s] + up - sched.pdn.get((dev, s, r), 0.0)
            frac = dev_by_id[dev].up_frac
            need[dev] = max(need[dev], base, up / frac if frac > 0 else 0.0)
    for (dev, s, r), dn in sched.pdn.items():
        if dev in need:
            frac = dev_by_id[dev].down_frac
            need[dev] = max(need[dev], dn / frac if frac > 0 else 0.0)
    for (dev, s), val in sched.fhat.items():
        if dev in need:
            need[dev] = max(need[dev], abs(val))
    for (dev, s, r), val in sched.ftil.items():
        if dev in need:
            need[dev] = max(need[dev], abs(val))
    trimmed = False
    cap = dict(plan.capacity_mw)
    built = dict(plan.built)
    for p in model.system.projects:
        if not built[p.id] or p.id not in need:
            continue
        snapped = math.ceil(need[p.id] / p.block_size - 1e-9) * p.block_size
        snapped = min(snapped, cap[p.id])
        if snapped <= 1e-9 and p.fixed_cost > 0:
            built[p.id] = False
            snapped = 0.0
        if snapped < cap[p.id] - 1e-9:
            cap[p.id] = snapped
            trimmed = True
    if not trimmed:
        return sol, False
    probe = fix_and_solve(model.ir, plan_to_fixes(model, ExpansionPlan(built, cap, 0.0)))
    if probe.status != "optimal" or probe.objective > sol.objective + 1e-9:
        return sol, False
    better = Solution(
        status=sol.status,
        objective=probe.objective,
        x=probe.x,
        nodes=sol.nodes,
        iterations=sol.iterations,
        gap=max((probe.objective - sol.best_bound)
                / max(1.0, abs(probe.objective)), 0.0)
        if math.isfinite(sol.best_bound) else sol.gap,
        best_bound=sol.best_bound,
        bound_history=sol.bound_history,
    )
    return better, True


def solve_expansion(
    system: PowerSystem,
    tree: ScenarioTree,
    kind: int,
    gap: float = 1e-6,
    node_limit: Optional[int] = None,
    workers: int = 1,
    max_box_doublings: int = 6,
    warm_start: bool = True,
) -> tuple[ExpansionModel, Solution]:
    """Build and solve a model; for the sequential market, validate that no
    product-linked dual sits within 1% of its box and re-solve with a doubled
    box otherwise."""
    scale = 1.0
    fixes: Optional[dict] = None
    for attempt in range(max_box_doublings + 1):
        model = _build(system, tree, kind, dual_box_scale=scale)
        if kind == 3 and warm_start and fixes is None:
            fixes = _sequential_warm_start(
                system, tree, model, gap, node_limit, workers
            )
        sol = solve_milp(model.ir, gap=gap, node_limit=node_limit,
                         workers=workers, warm_start=fixes)
        if kind != 3 or sol.status not in ("optimal", "gap_limit") or sol.x is None:
            return model, sol
        sol, trimmed = _trimmed_solution(model, sol)
        if trimmed:
            log.debug("%s: trimmed spare block capacity", model.ir.name)
        if not model.boxed_duals:
            return model, sol
        worst = float(np.max(np.abs(sol.x[model.boxed_duals])))
        if worst <= 0.99 * model.dual_box:
            return model, sol
        # vertex solutions may park degenerate duals on the box; accept if an
        # exact market certificate exists strictly inside it
        worst_true = _certificate_norm(model, sol)
        if worst_true <= 0.99 * model.dual_box:
            log.debug(
                "%s: box-riding dual is degenerate (certificate norm %.4g)",
                model.ir.name, worst_true,
            )
            return model, sol
        scale *= 2.0
        log.warning(
            "%s: dual certificate %.6g within 1%% of box %.6g; re-solving with box x%g",
            model.ir.name, worst_true, model.dual_box, scale,
        )
    raise RuntimeError(
        f"dual box validation failed after {max_box_doublings} doublings"
    )


# -- solution readers -------------------------------------------------------------


def extract_plan(solution: Solution, model: ExpansionModel) -> ExpansionPlan:
    """Read and validate the first-stage decisions of an optimal solution."""
    if solution.x is None:
        raise ValueError(f"no solution available (status {solution.status})")
    built: dict[str, bool] = {}
    cap: dict[str, float] = {}
    invest = 0.0
    for p in model.system.projects:
        uval = solution.value(model.u[p.id])
        if abs(uval - round(uval)) > _INT_TOL:
            raise ValueError(f"project {p.id}: fractional build decision {uval}")
        is_built = round(uval) == 1
        xval = _mw(solution.value(model.x[p.id]))
        if xval < -1e-6 or xval > p.x_max + 1e-6:
            raise ValueError(f"project {p.id}: capacity {xval} outside [0, {p.x_max}]")
        if not is_built and xval > 1e-6:
            raise ValueError(f"project {p.id}: capacity {xval} with u = 0")
        xval = min(max(xval, 0.0), p.x_max)
        if model.kind == 3:
            blocks = xval / p.block_size
            if abs(blocks - round(blocks)) > 1e-4:
                raise ValueError(
                    f"project {p.id}: capacity {xval} off the {p.block_size}-MW grid"
                )
        built[p.id] = is_built
        cap[p.id] = xval if is_built else 0.0
        invest += (p.fixed_cost if is_built else 0.0) + p.variable_cost * cap[p.id]
    component = model.investment_component(solution)
    if abs(component - invest) > 1e-6 * max(1.0, abs(invest)):
        raise ValueError(
            f"investment mismatch: objective carries {component}, parameters give {invest}"
        )
    return ExpansionPlan(built, cap, invest)


@dataclass
class OperationSchedule:
    """Dispatch read back from a solution, in MW."""

    phat: dict
    pup: dict
    pdn: dict
    fhat: dict
    ftil: dict

    def final_dispatch(self, dev_id: str, s: int, r: int) -> float:
        base = self.phat[dev_id, s]
        return (base + self.pup.get((dev_id, s, r), 0.0)
                - self.pdn.get((dev_id, s, r), 0.0))

    def max_balancing(self) -> float:
        vals = list(self.pup.values()) + list(self.pdn.values())
        return max(np.abs(vals)) if vals else 0.0


def extract_schedule(solution: Solution, model: ExpansionModel) -> OperationSchedule:
    mw = lambda d: {k: _mw(solution.value(v)) for k, v in d.items()}
    return OperationSchedule(
        phat=mw(model.phat), pup=mw(model.pup), pdn=mw(model.pdn),
        fhat=mw(model.fhat), ftil=mw(model.ftil),
    )


# -- lower-level (day-ahead market) LP -------------------------------------------


def lower_level_lp(
    system: PowerSystem, tree: ScenarioTree, s: int, plan: ExpansionPlan
) -> tuple[ModelIR, dict]:
    """The single-scenario day-ahead clearing LP for fixed capacities.

    Minimizes day-ahead cost alone over dispatch, flows and angles; the maps
    returned locate the dispatch variables of every device and line.
    """
    ir = ModelIR(f"day_ahead[{s}]")
    devs, lins = _device_views(system, plan)
    buses = system.bus_ids()
    ref = system.reference_bus()
    d = {}
    for n in buses:
        lo, hi = (0.0, 0.0) if n == ref else (-ANGLE_MAX, ANGLE_MAX)
        d[n] = ir.add_variable(f"d[{n}]", lo, hi)
    p = {}
    for dev in devs:
        rho = tree.rho_hat_for(dev.id, s)
        p[dev.id] = ir.add_variable(f"p[{dev.id}]", 0.0, dev.cap_pu * rho)
        coef = _price(dev.price)
        if coef:
            ir.add_objective([(p[dev.id], coef)])
    f = {}
    for ln in lins:
        rho = tree.rho_hat_for(ln.id, s)
        cap = 0.0 if ln.project == "__unbuilt__" else ln.cap_pu * rho
        f[ln.id] = ir.add_variable(f"f[{ln.id}]", -cap, cap)
        if ln.project != "__unbuilt__":
            ir.add_constraint(
                [(f[ln.id], 1.0), (d[ln.from_bus], -ln.b), (d[ln.to_bus], ln.b)],
                EQ, 0.0, f"fdef[{ln.id}]",
            )
    for n in buses:
        terms = []
        for dev in devs:
            if dev.bus == n:
                terms.append((p[dev.id], -1.0 if dev.is_load else 1.0))
        for ln in lins:
            if ln.from_bus == n:
                terms.append((f[ln.id], -1.0))
            elif ln.to_bus == n:
                terms.append((f[ln.id], 1.0))
        ir.add_constraint(terms, EQ, 0.0, f"bal[{n}]")
    return ir, {"p": p, "f": f, "d": d}


def balancing_lp(
    system: PowerSystem,
    tree: ScenarioTree,
    s: int,
    r: int,
    plan: ExpansionPlan,
    phat_mw: dict[str, float],
) -> tuple[ModelIR, dict]:
    """The single-leaf balancing LP with the day-ahead dispatch held fixed."""
    ir = ModelIR(f"balancing[{s},{r}]")
    devs, lins = _device_views(system, plan)
    buses = system.bus_ids()
    ref = system.reference_bus()
    d = {}
    for n in buses:
        lo, hi = (0.0, 0.0) if n == ref else (-ANGLE_MAX, ANGLE_MAX)
        d[n] = ir.add_variable(f"d[{n}]", lo, hi)
    up: dict = {}
    dn: dict = {}
    imbalance: dict[str, float] = {}
    for dev in devs:
        rho_t = tree.rho_tilde_for(dev.id, s, r)
        base = _pu(phat_mw[dev.id])
        imbalance[dev.id] = base
        uv = dv = None
        if dev.up_frac > 0.0:
            uv = ir.add_variable(f"pup[{dev.id}]", 0.0, dev.up_frac * dev.cap_pu)
            up[dev.id] = uv
            ir.add_objective([(uv, _price(dev.up_price))])
        if dev.down_frac > 0.0:
            dv = ir.add_variable(f"pdn[{dev.id}]", 0.0, dev.down_frac * dev.cap_pu)
            dn[dev.id] = dv
            ir.add_objective([(dv, -_price(dev.down_price))])
        terms = []
        if uv is not None:
            terms.append((uv, 1.0))
        if dv is not None:
            terms.append((dv, -1.0))
        cap = dev.cap_pu * rho_t
        if dv is not None:
            ir.add_constraint(terms, GE, -base, f"ptil_lo[{dev.id}]")
        if terms:
            ir.add_constraint(terms, LE, cap - base, f"ptil_hi[{dev.id}]")
        elif base > cap + 1e-9:
            raise ValueError(
                f"device {dev.id}: day-ahead dispatch {phat_mw[dev.id]} MW "
                f"exceeds realized capability with no balancing offer"
            )
    f = {}
    for ln in lins:
        rho = tree.rho_tilde_for(ln.id, s, r)
        cap = 0.0 if ln.project == "__unbuilt__" else ln.cap_pu * rho
        f[ln.id] = ir.add_variable(f"f[{ln.id}]", -cap, cap)
        if ln.project != "__unbuilt__":
            ir.add_constraint(
                [(f[ln.id], 1.0), (d[ln.from_bus], -ln.b), (d[ln.to_bus], ln.b)],
                EQ, 0.0, f"fdef[{ln.id}]",
            )
    for n in buses:
        terms = []
        rhs = 0.0
        for dev in devs:
            if dev.bus != n:
                continue
            sign = -1.0 if dev.is_load else 1.0
            rhs -= sign * imbalance[dev.id]
            if dev.id in up:
                terms.append((up[dev.id], sign))
            if dev.id in dn:
                terms.append((dn[dev.id], -sign))
        for ln in lins:
            if ln.from_bus == n:
                terms.append((f[ln.id], -1.0))
            elif ln.to_bus == n:
                terms.append((f[ln.id], 1.0))
        ir.add_constraint(terms, EQ, rhs, f"bal[{n}]")
    return ir, {"up": up, "dn": dn, "f": f, "d": d}


def _certificate_norm(model: ExpansionModel, sol: Solution) -> float:
    """Largest dual magnitude of an exact lower-level certificate.

    Solves each scenario's day-ahead clearing for the solution's plan and
    reads the duals off the LP; if these sit strictly inside the dual box,
    the strong-duality solution can be re-expressed with interior duals (the
    duals never enter the objective), so a box-riding vertex is harmless.
    """
    plan = extract_plan(sol, model)
    built_units = {d.id for d in model.devs
                   if d.project is not None and plan.built.get(d.project)}
    built_lines = {l.id: l for l in model.lins
                   if l.project is not None and plan.built.get(l.project)}
    worst = 0.0
    for s in range(model.tree.n_s):
        ir, maps = lower_level_lp(model.system, model.tree, s, plan)
        sub = solve_lp(ir, backend="simplex")
        if sub.status != "optimal":
            raise RuntimeError(f"lower level infeasible in scenario {s}")
        fdef_rows = {
            name.split("[", 1)[1].rstrip("]"): i
            for i, name in enumerate(ir.row_names)
            if name.startswith("fdef[")
        }
        for dev_id in built_units:
            worst = max(worst, abs(min(sub.reduced_costs[maps["p"][dev_id]], 0.0)))
        for lid in built_lines:
            d_f = sub.reduced_costs[maps["f"][lid]]
            worst = max(worst, abs(d_f))
            if lid in fdef_rows:
                worst = max(worst, abs(sub.duals[fdef_rows[lid]]))
    return worst


def check_lower_level_optimality(
    solution: Solution, model: ExpansionModel
) -> float:
    """Max relative gap between each scenario's day-ahead cost in the
    solution and the true minimum of that scenario's market clearing."""
    plan = extract_plan(solution, model)
    worst = 0.0
    for s in range(model.tree.n_s):
        ir, maps = lower_level_lp(model.system, model.tree, s, plan)
        sub = solve_lp(ir)
        if sub.status != "optimal":
            raise RuntimeError(f"lower level infeasible in scenario {s}")
        cost = 0.0
        for dev in model.devs:
            cost += _price(dev.price) * solution.value(model.phat[dev.id, s])
        worst = max(worst, abs(cost - sub.objective) / max(1.0, abs(sub.objective)))
    return worst
