"""System model: validation, incidence, case-file round trips."""

import dataclasses

import pytest

from gridplan.caseio import (
    CaseFormatError,
    bundled_case_path,
    load_case,
    parse_case,
    save_case,
)
from gridplan.system import (
    Bus,
    ExpansionProject,
    GeneratingUnit,
    Load,
    PowerSystem,
    TransmissionLine,
    incidence,
    validate,
)


@pytest.fixture(scope="module")
def fourbus():
    return load_case(bundled_case_path("fourbus"))


@pytest.fixture(scope="module")
def rts24():
    return load_case(bundled_case_path("rts24"))


def test_bundled_fourbus_is_valid(fourbus):
    assert validate(fourbus.system) == []


def test_bundled_rts24_is_valid(rts24):
    assert validate(rts24.system) == []


def test_two_reference_buses_flagged(fourbus):
    buses = tuple(
        dataclasses.replace(b, is_reference=True) for b in fourbus.system.buses
    )
    bad = dataclasses.replace(fourbus.system, buses=buses)
    assert any("multiple reference buses" in v for v in validate(bad))


def test_regulation_factor_out_of_range(fourbus):
    unit = GeneratingUnit("gx", "n1", capacity=10.0, price=5.0, down_frac=1.2)
    bad = dataclasses.replace(fourbus.system, units=fourbus.system.units + (unit,))
    assert any("regulation factor" in v for v in validate(bad))


def test_unknown_bus_flagged(fourbus):
    unit = GeneratingUnit("gx", "nowhere", capacity=10.0, price=5.0)
    bad = dataclasses.replace(fourbus.system, units=fourbus.system.units + (unit,))
    assert any("unknown bus" in v for v in validate(bad))


def test_duplicate_device_id_flagged(fourbus):
    unit = GeneratingUnit("g1", "n1", capacity=10.0, price=5.0)
    bad = dataclasses.replace(fourbus.system, units=fourbus.system.units + (unit,))
    assert any("duplicate device id" in v for v in validate(bad))


def test_disconnected_network_flagged():
    system = PowerSystem(
        buses=(Bus("a", True), Bus("b")),
        lines=(),
        units=(GeneratingUnit("g", "a", 10.0, 5.0),),
        loads=(Load("l", "b", 5.0, -500.0),),
        projects=(),
    )
    assert any("disconnected" in v for v in validate(system))


def test_lost_load_value_must_dominate_prices(fourbus):
    loads = (dataclasses.replace(fourbus.system.loads[0], price=-15.0),)
    bad = dataclasses.replace(fourbus.system, loads=loads)
    assert any("lost-load value" in v for v in validate(bad))


def test_validate_is_pure(fourbus):
    before = fourbus.system
    validate(fourbus.system)
    assert fourbus.system == before
    assert validate(fourbus.system) == validate(fourbus.system)


def test_incidence_fourbus(fourbus):
    a = incidence(fourbus.system)
    # candidate line fh1 runs from n2 (sending) to n1 (receiving)
    assert a[("fh1", "n2")] == 1
    assert a[("fh1", "n1")] == -1
    assert ("fh1", "n3") not in a


def test_incidence_rows_sum_to_zero(rts24):
    a = incidence(rts24.system)
    line_ids = {lid for lid, _ in a}
    for lid in line_ids:
        assert sum(v for (l, _), v in a.items() if l == lid) == 0


def test_incidence_unknown_bus():
    system = PowerSystem(
        buses=(Bus("a", True),),
        lines=(TransmissionLine("t", "a", "ghost", 10.0, 5.0),),
        units=(),
        loads=(Load("l", "a", 5.0, -500.0),),
        projects=(),
    )
    with pytest.raises(KeyError):
        incidence(system)


@pytest.mark.parametrize("name", ["fourbus", "rts24"])
def test_case_round_trip(tmp_path, name):
    case = load_case(bundled_case_path(name))
    path = tmp_path / f"{name}.json"
    save_case(case, path)
    again = load_case(path)
    assert again.system == case.system
    assert again.forecasts == case.forecasts
    assert again.errors == case.errors


def test_malformed_case_names_field():
    with pytest.raises(CaseFormatError, match=r"projects\[0\]"):
        parse_case(
            {
                "buses": [{"id": "a", "reference": True}],
                "loads": [{"id": "l", "bus": "a", "peak": 1, "value_of_lost_load": 500}],
                "projects": [{"id": "p", "kind": "generator"}],
            }
        )


def test_project_block_size_invariants(fourbus):
    proj = fourbus.system.projects[0]
    bad = dataclasses.replace(proj, block_size=proj.x_max * 2)
    system = dataclasses.replace(
        fourbus.system, projects=(bad,) + fourbus.system.projects[1:]
    )
    assert any("block_size" in v for v in validate(system))
