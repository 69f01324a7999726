"""Command-line front end: plan, evaluate, scenarios and sweep subcommands.

Exit codes: 0 on success, 1 on input errors (bad arguments, unreadable or
malformed case files), 2 when an optimization model is infeasible.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .caseio import CaseFormatError, bundled_case_path, load_case
from .evaluation import (
    EFFICIENT,
    INEFFICIENT,
    compare_designs,
    evaluate_plan,
)
from .milp import write_lp
from .models import (
    MONEY,
    ExpansionPlan,
    check_lower_level_optimality,
    extract_plan,
    solve_expansion,
)
from .scenarios import build_tree, validate_tree
from .system import validate

log = logging.getLogger("gridplan")

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_INFEASIBLE = 2


class _InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        self.print_usage(sys.stderr)
        raise _InputError(message)


@dataclass
class RunConfig:
    """Resolved options of one CLI invocation."""

    command: str
    case: Path
    model: int = 2
    eta: Optional[float] = None
    n_s: int = 20
    n_r: int = 30
    seed: Optional[int] = None
    gap: float = 1e-6
    node_limit: Optional[int] = None
    workers: int = 1
    out_dir: Path = Path(".")
    dump_lp: bool = False
    plan_path: Optional[Path] = None
    design: str = EFFICIENT
    targets: tuple[float, ...] = ()
    evaluate_cells: bool = False

    def validate(self):
        if self.n_s < 1 or self.n_r < 1:
            raise _InputError("scenario counts must be at least 1")
        if self.gap <= 0:
            raise _InputError("gap must be positive")
        if self.eta is not None and not 0.0 <= self.eta <= 1.0:
            raise _InputError("eta must lie in [0, 1]")
        if self.workers < 1:
            raise _InputError("workers must be at least 1")


def _build_parser() -> _Parser:
    parser = _Parser(prog="gridplan",
                     description="expansion planning under a renewables target")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, tree=True):
        p.add_argument("--case", required=True,
                       help="case file path or bundled case name (fourbus, rts24)")
        if tree:
            p.add_argument("--ns", type=int, default=20,
                           help="day-ahead scenario count (default 20)")
            p.add_argument("--nr", type=int, default=30,
                           help="balancing scenarios per day-ahead scenario (default 30)")
        p.add_argument("--seed", type=int, default=None,
                       help="sampling seed (default: GRIDPLAN_SEED, then the case file)")
        p.add_argument("--out", default=".", help="output directory")

    p_plan = sub.add_parser("plan", help="solve one expansion model")
    common(p_plan)
    p_plan.add_argument("--model", type=int, choices=(1, 2, 3), default=2)
    p_plan.add_argument("--eta", type=float, default=None,
                        help="renewable target override (fraction)")
    p_plan.add_argument("--gap", type=float, default=1e-6)
    p_plan.add_argument("--node-limit", type=int, default=None)
    p_plan.add_argument("--workers", type=int, default=1)
    p_plan.add_argument("--dump-lp", action="store_true",
                        help="write the solver-ready model in LP format")

    p_eval = sub.add_parser("evaluate", help="evaluate a saved plan")
    common(p_eval)
    p_eval.add_argument("--plan", required=True, help="plan.json produced by `plan`")
    p_eval.add_argument("--design", choices=(EFFICIENT, INEFFICIENT),
                        default=EFFICIENT)
    p_eval.add_argument("--eta", type=float, default=None)

    p_scen = sub.add_parser("scenarios", help="generate and dump a scenario tree")
    common(p_scen)

    p_sweep = sub.add_parser("sweep", help="solve all models across targets")
    common(p_sweep)
    p_sweep.add_argument("--targets", required=True,
                         help="comma-separated renewable targets in percent")
    p_sweep.add_argument("--gap", type=float, default=1e-6)
    p_sweep.add_argument("--node-limit", type=int, default=None)
    p_sweep.add_argument("--workers", type=int, default=1)
    p_sweep.add_argument("--evaluate", action="store_true",
                         help="also cross-evaluate plans under both market designs")
    return parser


def _resolve_case(token: str) -> Path:
    path = Path(token)
    if path.exists():
        return path
    try:
        return bundled_case_path(token)
    except FileNotFoundError:
        raise _InputError(f"case file not found: {token}")


def _config_from_args(args) -> RunConfig:
    cfg = RunConfig(
        command=args.command,
        case=_resolve_case(args.case),
        n_s=getattr(args, "ns", 1),
        n_r=getattr(args, "nr", 1),
        seed=args.seed,
        out_dir=Path(args.out),
        model=getattr(args, "model", 2),
        eta=getattr(args, "eta", None),
        gap=getattr(args, "gap", 1e-6),
        node_limit=getattr(args, "node_limit", None),
        workers=getattr(args, "workers", 1),
        dump_lp=getattr(args, "dump_lp", False),
        plan_path=Path(args.plan) if getattr(args, "plan", None) else None,
        design=getattr(args, "design", EFFICIENT),
        evaluate_cells=getattr(args, "evaluate", False),
    )
    if getattr(args, "targets", None):
        try:
            cfg.targets = tuple(
                float(tok) / 100.0 for tok in args.targets.split(",") if tok
            )
        except ValueError:
            raise _InputError(f"could not parse targets {args.targets!r}")
    cfg.validate()
    return cfg


def _prepare(cfg: RunConfig):
    try:
        case = load_case(cfg.case)
    except FileNotFoundError:
        raise _InputError(f"case file not found: {cfg.case}")
    except CaseFormatError as exc:
        raise _InputError(str(exc))
    problems = validate(case.system)
    if problems:
        raise _InputError(f"invalid case {cfg.case}: " + "; ".join(problems))
    system = case.system
    if cfg.eta is not None:
        system = replace(system, renewable_target=cfg.eta)
    seed = cfg.seed
    if seed is None and os.environ.get("GRIDPLAN_SEED"):
        seed = int(os.environ["GRIDPLAN_SEED"])
    if seed is None:
        seed = case.default_seed if case.default_seed is not None else 0
    tree = build_tree(system, case.forecasts, case.errors, cfg.n_s, cfg.n_r, seed)
    return case, system, tree, seed


def _write_json(path: Path, payload: dict):
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
    log.info("wrote %s", path)


def _plan_payload(cfg: RunConfig, seed: int, plan: ExpansionPlan, sol, extras: dict):
    payload = {
        "case": cfg.case.name,
        "model": cfg.model,
        "eta": extras.pop("eta"),
        "n_s": cfg.n_s,
        "n_r": cfg.n_r,
        "seed": seed,
        "objective_musd": round(sol.objective, 9),
        "status": sol.status,
        "solver": {
            "nodes": sol.nodes,
            "gap": sol.gap if math.isfinite(sol.gap) else None,
            "best_bound_musd": (
                round(sol.best_bound, 9) if math.isfinite(sol.best_bound) else None
            ),
        },
        **plan.as_dict(),
        **extras,
    }
    return payload


def _cmd_plan(cfg: RunConfig) -> int:
    case, system, tree, seed = _prepare(cfg)
    t0 = time.time()
    model, sol = solve_expansion(
        system, tree, cfg.model, gap=cfg.gap,
        node_limit=cfg.node_limit, workers=cfg.workers,
    )
    if cfg.dump_lp:
        lp_path = cfg.out_dir / f"model{cfg.model}.lp"
        write_lp(model.ir, str(lp_path))
        log.info("wrote %s", lp_path)
    if sol.status == "infeasible":
        log.error("model %d is infeasible for %s", cfg.model, cfg.case.name)
        return EXIT_INFEASIBLE
    if sol.x is None:
        log.error("no incumbent found (status %s)", sol.status)
        return EXIT_INFEASIBLE
    plan = extract_plan(sol, model)
    extras: dict = {"eta": system.renewable_target}
    if cfg.model == 3:
        extras["lower_level_residual"] = check_lower_level_optimality(sol, model)
    log.info(
        "model %d solved in %.1fs: %d nodes, objective %.4f m$, gap %.2e",
        cfg.model, time.time() - t0, sol.nodes, sol.objective, sol.gap,
    )
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(cfg.out_dir / "plan.json", _plan_payload(cfg, seed, plan, sol, extras))
    return EXIT_OK


def _cmd_evaluate(cfg: RunConfig) -> int:
    case, system, tree, seed = _prepare(cfg)
    try:
        plan = ExpansionPlan.from_dict(
            json.loads(cfg.plan_path.read_text(encoding="utf-8"))
        )
    except FileNotFoundError:
        raise _InputError(f"plan file not found: {cfg.plan_path}")
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        raise _InputError(f"malformed plan file {cfg.plan_path}: {exc}")
    report = evaluate_plan(plan, system, tree, cfg.design)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "case": cfg.case.name,
        "seed": seed,
        "n_s": cfg.n_s,
        "n_r": cfg.n_r,
        **report.as_dict(),
    }
    _write_json(cfg.out_dir / "report.json", payload)
    csv_path = cfg.out_dir / "report.csv"
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["design", "total_cost_musd", "investment_cost_musd",
                         "operation_cost_musd", "renewable_share_pct"])
        writer.writerow([
            report.design,
            f"{report.total_cost / MONEY:.6f}",
            f"{report.investment_cost / MONEY:.6f}",
            f"{report.operation_cost / MONEY:.6f}",
            f"{100 * report.renewable_share:.4f}",
        ])
    log.info("wrote %s", csv_path)
    return EXIT_OK


def _cmd_scenarios(cfg: RunConfig) -> int:
    case, system, tree, seed = _prepare(cfg)
    problems = validate_tree(tree)
    if problems:
        log.error("generated tree invalid: %s", "; ".join(problems))
        return EXIT_INPUT
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "case": cfg.case.name,
        "seed": seed,
        "n_s": tree.n_s,
        "n_r": tree.n_r,
        "pi_s": tree.pi_s.tolist(),
        "pi_sr": tree.pi_sr.tolist(),
        "rho_hat": {d: a.tolist() for d, a in sorted(tree.rho_hat.items())},
        "rho_tilde": {d: a.tolist() for d, a in sorted(tree.rho_tilde.items())},
    }
    _write_json(cfg.out_dir / "scenarios.json", payload)
    csv_path = cfg.out_dir / "scenarios.csv"
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["device", "s", "r", "pi", "rho_hat", "rho_tilde"])
        for dev in sorted(tree.rho_hat):
            for s in range(tree.n_s):
                for r in range(tree.n_r):
                    writer.writerow([
                        dev, s, r,
                        f"{tree.pi_s[s] * tree.pi_sr[s, r]:.12g}",
                        f"{tree.rho_hat[dev][s]:.12g}",
                        f"{tree.rho_tilde[dev][s, r]:.12g}",
                    ])
    log.info("wrote %s", csv_path)
    return EXIT_OK


def _cmd_sweep(cfg: RunConfig) -> int:
    case, system, tree, seed = _prepare(cfg)
    table = compare_designs(
        system, tree, list(cfg.targets), gap=cfg.gap,
        node_limit=cfg.node_limit, workers=cfg.workers,
        evaluate=cfg.evaluate_cells,
    )
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = cfg.out_dir / "report.csv"
    csv_path.write_text("\n".join(table.csv_lines(system)) + "\n", encoding="utf-8")
    log.info("wrote %s", csv_path)
    return EXIT_OK


_COMMANDS = {
    "plan": _cmd_plan,
    "evaluate": _cmd_evaluate,
    "scenarios": _cmd_scenarios,
    "sweep": _cmd_sweep,
}


def main(argv: Optional[list[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.DEBUG if args.verbose else logging.INFO,
            format="%(levelname)s %(name)s: %(message)s",
            stream=sys.stderr,
        )
        cfg = _config_from_args(args)
        return _COMMANDS[cfg.command](cfg)
    except _InputError as exc:
        print(f"gridplan: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
