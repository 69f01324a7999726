"""Typed power-system model: buses, lines, units, loads and expansion projects.

Conventions used throughout the package:

* capacities and dispatch are in MW, prices in $/MWh, investment costs in
  $/year and $/MW/year;
* line susceptances are in per unit on a 100-MVA base with 1 p.u. voltage,
  so a flow in MW is ``100 * b * (delta_from - delta_to)``;
* every device (unit, load, line or project) has a globally unique id,
  which also keys its capacity factors in a scenario tree.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterator, Optional

GENERATOR = "generator"
LINE = "line"


@dataclass(frozen=True)
class Bus:
    id: str
    is_reference: bool = False


@dataclass(frozen=True)
class TransmissionLine:
    """A transmission corridor, existing or candidate.

    ``capacity`` is the fixed rating of an existing line; for a candidate
    line it is ignored (the built capacity is an investment decision).
    """

    id: str
    from_bus: str
    to_bus: str
    susceptance: float          # p.u. on the 100-MVA base
    capacity: float = 0.0       # MW
    length_miles: float = 0.0   # used for cost reporting of candidates


@dataclass(frozen=True)
class GeneratingUnit:
    """A generating unit with day-ahead and balancing offers.

    ``up_frac``/``down_frac`` are fractions of installed capacity offered
    as up/down regulation; inflexible units have both equal to zero.
    A negative ``down_price`` means the unit pays to reduce output; for
    renewables ``down_price = 0`` models free spillage.
    """

    id: str
    bus: str
    capacity: float = 0.0       # MW; investment decision for candidates
    price: float = 0.0          # $/MWh day-ahead energy offer
    up_frac: float = 0.0
    up_price: float = 0.0       # $/MWh
    down_frac: float = 0.0
    down_price: float = 0.0     # $/MWh repurchase offer
    is_renewable: bool = False


@dataclass(frozen=True)
class Load:
    """A consumption unit with the same offer structure as a generator.

    For an inelastic load ``price = -value_of_lost_load`` and curtailment
    is modelled as down-regulation with ``down_price = -value_of_lost_load``
    and ``down_frac = 1``, which makes the balancing objective charge the
    lost-load value for every curtailed MWh.
    """

    id: str
    bus: str
    peak: float                 # MW
    price: float                # $/MWh (negative of the consumption value)
    up_frac: float = 0.0
    up_price: float = 0.0
    down_frac: float = 1.0
    down_price: float = 0.0


@dataclass(frozen=True)
class ExpansionProject:
    """A candidate investment: a new generating unit or transmission line.

    The ``unit``/``line`` template carries the operating data of the device
    the project would create; its ``capacity`` field is unused.  Building
    costs ``fixed_cost + variable_cost * capacity`` per year, the capacity
    is bounded by ``x_max`` and, for sequential-market studies, restricted
    to multiples representable on the ``block_size`` expansion grid.
    """

    id: str
    kind: str                   # GENERATOR or LINE
    x_max: float                # MW
    fixed_cost: float           # $/year
    variable_cost: float        # $/MW/year
    block_size: float           # MW
    unit: Optional[GeneratingUnit] = None
    line: Optional[TransmissionLine] = None

    @property
    def template(self):
        return self.unit if self.kind == GENERATOR else self.line


@dataclass(frozen=True)
class PowerSystem:
    buses: tuple[Bus, ...]
    lines: tuple[TransmissionLine, ...]         # existing lines
    units: tuple[GeneratingUnit, ...]           # existing units
    loads: tuple[Load, ...]
    projects: tuple[ExpansionProject, ...]
    horizon_hours: float = 8760.0
    renewable_target: float = 0.0               # minimum renewable share
    name: str = ""

    # -- accessors ---------------------------------------------------------

    def bus_ids(self) -> list[str]:
        return [b.id for b in self.buses]

    def reference_bus(self) -> str:
        refs = [b.id for b in self.buses if b.is_reference]
        if len(refs) != 1:
            raise ValueError(f"expected exactly one reference bus, found {refs}")
        return refs[0]

    def generator_projects(self) -> list[ExpansionProject]:
        return [p for p in self.projects if p.kind == GENERATOR]

    def line_projects(self) -> list[ExpansionProject]:
        return [p for p in self.projects if p.kind == LINE]

    def all_units(self) -> list[tuple[GeneratingUnit, Optional[ExpansionProject]]]:
        """Existing units first, then candidate units in project order."""
        out: list[tuple[GeneratingUnit, Optional[ExpansionProject]]] = [
            (u, None) for u in self.units
        ]
        for p in self.generator_projects():
            out.append((replace(p.unit, id=p.id), p))
        return out

    def all_lines(self) -> list[tuple[TransmissionLine, Optional[ExpansionProject]]]:
        """Existing lines first, then candidate lines in project order."""
        out: list[tuple[TransmissionLine, Optional[ExpansionProject]]] = [
            (ln, None) for ln in self.lines
        ]
        for p in self.line_projects():
            out.append((replace(p.line, id=p.id), p))
        return out

    def device_ids(self) -> list[str]:
        """All uncertainty-bearing device ids, in canonical order."""
        ids = [u.id for u, _ in self.all_units()]
        ids += [l.id for l in self.loads]
        ids += [ln.id for ln, _ in self.all_lines()]
        return ids

    def max_offer_price(self) -> float:
        """Largest absolute price over all device offers (incl. lost load)."""
        prices = [1.0]
        for u, _ in self.all_units():
            prices += [abs(u.price), abs(u.up_price), abs(u.down_price)]
        for l in self.loads:
            prices += [abs(l.price), abs(l.up_price), abs(l.down_price)]
        return max(prices)


# -- validation --------------------------------------------------------------


def _check_fraction(violations, owner, label, value):
    if not 0.0 <= value <= 1.0:
        violations.append(f"{owner}: regulation factor {label}={value} out of range [0, 1]")


def validate(system: PowerSystem) -> list[str]:
    """Check all structural invariants; returns human-readable violations.

    An empty list means the system is well formed and the network graph is
    connected once every candidate line is built.  Never raises.
    """
    v: list[str] = []
    bus_ids = [b.id for b in system.buses]
    bus_set = set(bus_ids)
    if len(bus_set) != len(bus_ids):
        v.append("duplicate bus ids")
    refs = [b.id for b in system.buses if b.is_reference]
    if len(refs) == 0:
        v.append("no reference bus")
    elif len(refs) > 1:
        v.append(f"multiple reference buses: {refs}")

    seen: set[str] = set()
    for dev_id in system.device_ids():
        if dev_id in seen:
            v.append(f"duplicate device id {dev_id!r}")
        seen.add(dev_id)

    def check_line(ln: TransmissionLine, owner: str, existing: bool):
        if ln.susceptance <= 0:
            v.append(f"{owner}: susceptance must be positive, got {ln.susceptance}")
        if ln.from_bus == ln.to_bus:
            v.append(f"{owner}: from_bus equals to_bus ({ln.from_bus})")
        for end in (ln.from_bus, ln.to_bus):
            if end not in bus_set:
                v.append(f"{owner}: unknown bus {end!r}")
        if existing and ln.capacity < 0:
            v.append(f"{owner}: negative capacity {ln.capacity}")

    def check_unit(u: GeneratingUnit, owner: str, existing: bool):
        if u.bus not in bus_set:
            v.append(f"{owner}: unknown bus {u.bus!r}")
        if existing and u.capacity < 0:
            v.append(f"{owner}: negative capacity {u.capacity}")
        _check_fraction(v, owner, "up_frac", u.up_frac)
        _check_fraction(v, owner, "down_frac", u.down_frac)

    for ln in system.lines:
        check_line(ln, f"line {ln.id}", existing=True)
    for u in system.units:
        check_unit(u, f"unit {u.id}", existing=True)

    max_gen_price = max(
        [u.price for u, _ in system.all_units()] or [0.0]
    )
    for l in system.loads:
        owner = f"load {l.id}"
        if l.bus not in bus_set:
            v.append(f"{owner}: unknown bus {l.bus!r}")
        if l.peak <= 0:
            v.append(f"{owner}: peak must be positive, got {l.peak}")
        _check_fraction(v, owner, "up_frac", l.up_frac)
        _check_fraction(v, owner, "down_frac", l.down_frac)
        if l.price < 0 and -l.price <= max_gen_price:
            v.append(
                f"{owner}: lost-load value {-l.price} must exceed the highest "
                f"generator energy price {max_gen_price}"
            )

    for p in system.projects:
        owner = f"project {p.id}"
        if p.kind not in (GENERATOR, LINE):
            v.append(f"{owner}: unknown kind {p.kind!r}")
            continue
        if p.x_max <= 0:
            v.append(f"{owner}: x_max must be positive, got {p.x_max}")
        if p.block_size <= 0:
            v.append(f"{owner}: block_size must be positive, got {p.block_size}")
        elif p.block_size > p.x_max:
            v.append(f"{owner}: block_size {p.block_size} exceeds x_max {p.x_max}")
        if p.template is None:
            v.append(f"{owner}: missing {p.kind} template")
        elif p.kind == GENERATOR:
            check_unit(p.unit, owner, existing=False)
        else:
            check_line(p.line, owner, existing=False)

    if not 0.0 <= system.renewable_target <= 1.0:
        v.append(f"renewable target {system.renewable_target} out of range [0, 1]")
    if system.horizon_hours <= 0:
        v.append(f"horizon must be positive, got {system.horizon_hours}")

    # Connectivity with all candidates built (BFS over the undirected graph).
    if bus_set and not v:
        adj: dict[str, set[str]] = {b: set() for b in bus_ids}
        for ln, _ in system.all_lines():
            adj[ln.from_bus].add(ln.to_bus)
            adj[ln.to_bus].add(ln.from_bus)
        start = bus_ids[0]
        seen_buses = {start}
        stack = [start]
        while stack:
            for nxt in adj[stack.pop()]:
                if nxt not in seen_buses:
                    seen_buses.add(nxt)
                    stack.append(nxt)
        missing = sorted(bus_set - seen_buses)
        if missing:
            v.append(f"network disconnected even with all candidates built: {missing}")

    return v


def incidence(system: PowerSystem) -> dict[tuple[str, str], int]:
    """Sparse line-bus incidence: +1 at the sending bus, -1 at the receiving.

    Covers existing and candidate lines.  Entries absent from the map are
    zero.  Raises ``KeyError`` if a line references an unknown bus.
    """
    bus_set = set(system.bus_ids())
    a: dict[tuple[str, str], int] = {}
    for ln, _ in system.all_lines():
        for end in (ln.from_bus, ln.to_bus):
            if end not in bus_set:
                raise KeyError(f"line {ln.id}: unknown bus {end!r}")
        a[(ln.id, ln.from_bus)] = 1
        a[(ln.id, ln.to_bus)] = -1
    return a
