"""Case-file loading and saving (JSON), including uncertainty configuration.

The schema is documented in ``docs/formats.md``.  Loads accept either the
full offer structure or the ``value_of_lost_load`` shorthand for inelastic
loads; ``save_case`` always writes the explicit canonical form, so a
save/load round trip reproduces the system exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

from .scenarios import ErrorModel, ForecastDistribution
from .system import (
    GENERATOR,
    LINE,
    Bus,
    ExpansionProject,
    GeneratingUnit,
    Load,
    PowerSystem,
    TransmissionLine,
)


class CaseFormatError(ValueError):
    """Malformed case file; the message names the offending field."""


@dataclass
class CaseData:
    system: PowerSystem
    forecasts: dict[str, ForecastDistribution] = field(default_factory=dict)
    errors: dict[str, ErrorModel] = field(default_factory=dict)
    default_seed: Optional[int] = None
    notes: str = ""


def _req(obj: dict, key: str, path: str):
    if key not in obj:
        raise CaseFormatError(f"{path}: missing required field {key!r}")
    return obj[key]


def _num(obj: dict, key: str, path: str, default=None):
    if key not in obj:
        if default is None:
            raise CaseFormatError(f"{path}: missing required field {key!r}")
        return default
    val = obj[key]
    if not isinstance(val, (int, float)) or isinstance(val, bool):
        raise CaseFormatError(f"{path}.{key}: expected a number, got {val!r}")
    return float(val)


def _unit(obj: dict, path: str, dev_id: str, bus: Optional[str] = None) -> GeneratingUnit:
    return GeneratingUnit(
        id=dev_id,
        bus=bus or str(_req(obj, "bus", path)),
        capacity=_num(obj, "capacity", path, 0.0),
        price=_num(obj, "price", path, 0.0),
        up_frac=_num(obj, "up_frac", path, 0.0),
        up_price=_num(obj, "up_price", path, 0.0),
        down_frac=_num(obj, "down_frac", path, 0.0),
        down_price=_num(obj, "down_price", path, 0.0),
        is_renewable=bool(obj.get("renewable", False)),
    )


def _line(obj: dict, path: str, dev_id: str) -> TransmissionLine:
    return TransmissionLine(
        id=dev_id,
        from_bus=str(_req(obj, "from", path)),
        to_bus=str(_req(obj, "to", path)),
        susceptance=_num(obj, "susceptance", path),
        capacity=_num(obj, "capacity", path, 0.0),
        length_miles=_num(obj, "length_miles", path, 0.0),
    )


def _load(obj: dict, path: str) -> Load:
    dev_id = str(_req(obj, "id", path))
    if "value_of_lost_load" in obj:
        vls = _num(obj, "value_of_lost_load", path)
        defaults = {"price": -vls, "down_price": -vls, "down_frac": 1.0,
                    "up_frac": 0.0, "up_price": 0.0}
    else:
        defaults = {"up_frac": 0.0, "up_price": 0.0, "down_frac": 1.0,
                    "down_price": 0.0}

    def get(key):
        if key in obj:
            return _num(obj, key, path)
        if key in defaults:
            return defaults[key]
        raise CaseFormatError(
            f"{path}: load needs {key!r} or the value_of_lost_load shorthand"
        )

    return Load(
        id=dev_id,
        bus=str(_req(obj, "bus", path)),
        peak=_num(obj, "peak", path),
        price=get("price"),
        up_frac=get("up_frac"),
        up_price=get("up_price"),
        down_frac=get("down_frac"),
        down_price=get("down_price"),
    )


def _forecast(obj: dict, path: str) -> ForecastDistribution:
    kind = str(_req(obj, "type", path))
    group = obj.get("group")
    try:
        if kind == "point":
            return ForecastDistribution("point", value=_num(obj, "value", path),
                                        group=group)
        if kind == "beta":
            return ForecastDistribution("beta", alpha=_num(obj, "alpha", path),
                                        beta=_num(obj, "beta", path), group=group)
        if kind == "histogram":
            return ForecastDistribution(
                "histogram",
                edges=tuple(_req(obj, "edges", path)),
                masses=tuple(_req(obj, "masses", path)),
                group=group,
            )
    except ValueError as exc:
        raise CaseFormatError(f"{path}: {exc}") from exc
    raise CaseFormatError(f"{path}.type: unknown distribution type {kind!r}")


def load_case(path: str | Path) -> CaseData:
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as exc:
        raise CaseFormatError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}")
    return parse_case(payload, name=path.stem)


def parse_case(payload: dict, name: str = "case") -> CaseData:
    buses = tuple(
        Bus(str(_req(b, "id", f"buses[{i}]")), bool(b.get("reference", False)))
        for i, b in enumerate(_req(payload, "buses", "case"))
    )
    lines = tuple(
        _line(ln, f"lines[{i}]", str(_req(ln, "id", f"lines[{i}]")))
        for i, ln in enumerate(payload.get("lines", []))
    )
    units = tuple(
        _unit(u, f"units[{i}]", str(_req(u, "id", f"units[{i}]")))
        for i, u in enumerate(payload.get("units", []))
    )
    loads = tuple(
        _load(l, f"loads[{i}]") for i, l in enumerate(_req(payload, "loads", "case"))
    )
    projects = []
    for i, p in enumerate(payload.get("projects", [])):
        path = f"projects[{i}]"
        pid = str(_req(p, "id", path))
        kind = str(_req(p, "kind", path))
        if kind not in (GENERATOR, LINE):
            raise CaseFormatError(f"{path}.kind: expected generator|line, got {kind!r}")
        unit = line = None
        if kind == GENERATOR:
            unit = _unit(_req(p, "unit", path), f"{path}.unit", pid)
        else:
            line = _line(_req(p, "line", path), f"{path}.line", pid)
        projects.append(
            ExpansionProject(
                id=pid,
                kind=kind,
                x_max=_num(p, "x_max", path),
                fixed_cost=_num(p, "fixed_cost", path),
                variable_cost=_num(p, "variable_cost", path),
                block_size=_num(p, "block_size", path),
                unit=unit,
                line=line,
            )
        )
    system = PowerSystem(
        buses=buses,
        lines=lines,
        units=units,
        loads=loads,
        projects=tuple(projects),
        horizon_hours=_num(payload, "horizon_hours", "case", 8760.0),
        renewable_target=_num(payload, "renewable_target", "case", 0.0),
        name=str(payload.get("name", name)),
    )
    unc = payload.get("uncertainty", {})
    forecasts = {
        str(dev): _forecast(spec, f"uncertainty.forecast[{dev}]")
        for dev, spec in unc.get("forecast", {}).items()
    }
    errors = {
        str(dev): ErrorModel(
            sigma0=_num(spec, "sigma0", f"uncertainty.errors[{dev}]", 0.0),
            sigma1=_num(spec, "sigma1", f"uncertainty.errors[{dev}]", 0.0),
        )
        for dev, spec in unc.get("errors", {}).items()
    }
    seed = payload.get("default_seed")
    return CaseData(
        system=system,
        forecasts=forecasts,
        errors=errors,
        default_seed=int(seed) if seed is not None else None,
        notes=str(payload.get("notes", "")),
    )


def case_to_dict(case: CaseData) -> dict:
    sys = case.system

    def unit_dict(u: GeneratingUnit, with_bus=True):
        d = {
            "bus": u.bus, "capacity": u.capacity, "price": u.price,
            "up_frac": u.up_frac, "up_price": u.up_price,
            "down_frac": u.down_frac, "down_price": u.down_price,
            "renewable": u.is_renewable,
        }
        return d

    def line_dict(l: TransmissionLine):
        return {
            "from": l.from_bus, "to": l.to_bus, "susceptance": l.susceptance,
            "capacity": l.capacity, "length_miles": l.length_miles,
        }

    def dist_dict(d: ForecastDistribution):
        out: dict = {"type": d.kind}
        if d.kind == "point":
            out["value"] = d.value
        elif d.kind == "beta":
            out["alpha"], out["beta"] = d.alpha, d.beta
        else:
            out["edges"], out["masses"] = list(d.edges), list(d.masses)
        if d.group is not None:
            out["group"] = d.group
        return out

    payload = {
        "name": sys.name,
        "horizon_hours": sys.horizon_hours,
        "renewable_target": sys.renewable_target,
        "buses": [
            {"id": b.id, **({"reference": True} if b.is_reference else {})}
            for b in sys.buses
        ],
        "lines": [{"id": l.id, **line_dict(l)} for l in sys.lines],
        "units": [{"id": u.id, **unit_dict(u)} for u in sys.units],
        "loads": [
            {
                "id": l.id, "bus": l.bus, "peak": l.peak, "price": l.price,
                "up_frac": l.up_frac, "up_price": l.up_price,
                "down_frac": l.down_frac, "down_price": l.down_price,
            }
            for l in sys.loads
        ],
        "projects": [
            {
                "id": p.id, "kind": p.kind, "x_max": p.x_max,
                "fixed_cost": p.fixed_cost, "variable_cost": p.variable_cost,
                "block_size": p.block_size,
                **({"unit": unit_dict(p.unit)} if p.kind == GENERATOR
                   else {"line": line_dict(p.line)}),
            }
            for p in sys.projects
        ],
        "uncertainty": {
            "forecast": {dev: dist_dict(d) for dev, d in case.forecasts.items()},
            "errors": {
                dev: {"sigma0": e.sigma0, "sigma1": e.sigma1}
                for dev, e in case.errors.items()
            },
        },
    }
    if case.default_seed is not None:
        payload["default_seed"] = case.default_seed
    if case.notes:
        payload["notes"] = case.notes
    return payload


def save_case(case: CaseData, path: str | Path):
    Path(path).write_text(
        json.dumps(case_to_dict(case), indent=2, sort_keys=False) + "\n",
        encoding="utf-8",
    )


def bundled_case_path(name: str) -> Path:
    """Path of a case shipped with the package (``fourbus`` or ``rts24``)."""
    root = resources.files("gridplan").joinpath("cases")
    path = Path(str(root.joinpath(f"{name}.json")))
    if not path.exists():
        raise FileNotFoundError(f"no bundled case named {name!r}")
    return path
