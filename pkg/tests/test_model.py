import json
from importlib.resources import files

import pytest

from ecogrid.model import (
    CaseFormatError,
    ValidationError,
    apply_topology,
    load_case,
    save_case,
)

CASE5 = str(files("ecogrid") / "cases" / "case5_tnep.json")
CASE5_M = str(files("ecogrid") / "cases" / "case5_tnep.m")


def write_case(tmp_path, doc, name="case.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def two_bus_doc():
    return {
        "format": "ecogrid-case/1",
        "base_mva": 100.0,
        "buses": [{"id": 1}, {"id": 2, "p_load": 100.0}],
        "generators": [{"id": 1, "bus": 1, "p_max": 200.0}],
        "branches": [{"from_bus": 1, "to_bus": 2, "x": 0.1, "s_max": 150.0}],
    }


def test_load_two_bus(tmp_path):
    net = load_case(write_case(tmp_path, two_bus_doc()))
    assert net.n_bus == 2
    assert len(net.active_branches) == 1
    assert len(net.generators) == 1
    assert net.candidate_branches == ()


def test_load_case5_counts():
    net = load_case(CASE5)
    assert net.n_bus == 5
    assert len(net.generators) == 5
    assert sum(1 for b in net.buses if b.p_load > 0) == 3
    assert len(net.active_branches) == 4
    assert len(net.candidate_branches) == 3


def test_per_unit_round_trip_against_file():
    net = load_case(CASE5)
    doc = json.loads(open(CASE5).read())
    by_id = {b["id"]: b for b in doc["buses"]}
    for bus in net.buses:
        assert bus.p_load * net.base_mva == pytest.approx(by_id[bus.id]["p_load"], rel=1e-9)
        assert bus.q_load * net.base_mva == pytest.approx(by_id[bus.id]["q_load"], rel=1e-9)
    for gen, rec in zip(net.generators, doc["generators"]):
        assert gen.p_max * net.base_mva == pytest.approx(rec["p_max"], rel=1e-9)


def test_dangling_branch_reference(tmp_path):
    doc = two_bus_doc()
    doc["branches"].append({"from_bus": 2, "to_bus": 99, "x": 0.2, "s_max": 10.0})
    with pytest.raises(ValidationError) as exc:
        load_case(write_case(tmp_path, doc))
    assert "99" in str(exc.value)
    assert "2-99" in str(exc.value)


def test_validation_collects_all_problems(tmp_path):
    doc = two_bus_doc()
    doc["branches"][0]["x"] = 0.0
    doc["generators"][0]["p_min"] = 300.0
    with pytest.raises(ValidationError) as exc:
        load_case(write_case(tmp_path, doc))
    assert len(exc.value.violations) >= 2


def test_missing_file():
    with pytest.raises(CaseFormatError):
        load_case("/nonexistent/case.json")


def test_parse_error_has_line_context(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"format": "ecogrid-case/1",\n  broken\n}')
    with pytest.raises(CaseFormatError) as exc:
        load_case(str(p))
    assert ":2:" in str(exc.value)


def test_same_as_copies_electrical_parameters():
    net = load_case(CASE5)
    cands = net.candidate_branches
    c24 = next(br for br in cands if {br.from_bus, br.to_bus} == {2, 4})
    c14 = next(br for br in cands if {br.from_bus, br.to_bus} == {1, 4})
    assert c24.reactance == c14.reactance
    assert c24.s_max == c14.s_max


def test_apply_topology_identity_and_full():
    net = load_case(CASE5)
    none = apply_topology(net, {0: 0, 1: 0, 2: 0})
    assert len(none.active_branches) == 4
    full = apply_topology(net, {0: 1, 1: 1, 2: 1})
    assert len(full.active_branches) == 7
    # input untouched
    assert len(net.candidate_branches) == 3


def test_apply_topology_partial_selection():
    net = load_case(CASE5)
    # candidates ordered 1-2, 1-4, 2-4; build 1-4 and 2-4
    designed = apply_topology(net, {0: 0, 1: 1, 2: 1})
    assert len(designed.active_branches) == 6
    pairs = {(br.from_bus, br.to_bus) for br in designed.active_branches}
    assert (1, 4) in pairs and (2, 4) in pairs


def test_apply_topology_idempotent():
    net = load_case(CASE5)
    alpha = {0: 1, 1: 0, 2: 1}
    once = apply_topology(net, alpha)
    again = apply_topology(net, {0: 1, 1: 0, 2: 1})
    assert [b.pair() for b in once.active_branches] == [b.pair() for b in again.active_branches]


def test_apply_topology_key_errors():
    net = load_case(CASE5)
    with pytest.raises(KeyError):
        apply_topology(net, {0: 1})
    with pytest.raises(KeyError):
        apply_topology(net, {0: 1, 1: 0, 2: 0, 3: 1})


def test_native_round_trip(tmp_path):
    net = load_case(CASE5)
    out = tmp_path / "roundtrip.json"
    save_case(net, out)
    again = load_case(str(out))
    assert again == net


def test_save_is_byte_deterministic(tmp_path):
    net = load_case(CASE5)
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    save_case(net, a)
    save_case(net, b)
    assert a.read_bytes() == b.read_bytes()


def test_matpower_import_matches_native():
    native = load_case(CASE5)
    imported = load_case(CASE5_M, format="matpower-subset")
    assert imported.n_bus == native.n_bus
    assert imported.slack_bus == 4
    assert len(imported.active_branches) == 4
    assert len(imported.candidate_branches) == 3
    for a, b in zip(imported.buses, native.buses):
        assert a.p_load == pytest.approx(b.p_load)
    for a, b in zip(imported.generators, native.generators):
        assert a.p_max == pytest.approx(b.p_max)
        assert a.bus == b.bus
    for a, b in zip(imported.branches, native.branches):
        assert a.reactance == pytest.approx(b.reactance)
        assert a.s_max == pytest.approx(b.s_max)


def test_matpower_missing_table(tmp_path):
    p = tmp_path / "bad.m"
    p.write_text("mpc.baseMVA = 100;\nmpc.bus = [\n1 3 0 0 0 0 1 1 0 230 1 1.1 0.9;\n];")
    with pytest.raises(CaseFormatError) as exc:
        load_case(str(p), format="matpower-subset")
    assert "gen" in str(exc.value)


def test_parallel_branches_get_ordinals(tmp_path):
    doc = two_bus_doc()
    doc["branches"].append({"from_bus": 1, "to_bus": 2, "x": 0.2, "s_max": 50.0})
    net = load_case(write_case(tmp_path, doc))
    assert [br.ordinal for br in net.branches] == [0, 1]
