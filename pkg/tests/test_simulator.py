from pathlib import Path

import pytest
from hypothesis import given, strategies as st

from netprov.compiler import compile_files
from netprov.simulator import (FlowDemand, SimulationError, read_demands, simulate, water_fill,
                               write_results)
from oracles import max_min_fair, progressive_filling

MB = 10**6
DATA = Path(__file__).resolve().parent.parent / "data"


def _single_link_guarantee(tmp_path, guarantee="90MB/s"):
    pol = tmp_path / "g.pol"
    pol.write_text("[a : eth.src = 00:00:00:00:00:01 and eth.dst = 00:00:00:00:00:02"
                   f" and tcp.dst = 80 -> .*], min(a, {guarantee})\n")
    return compile_files(pol, DATA / "single_link_net.json")


demands = st.dictionaries(st.sampled_from("abcdef"), st.integers(0, 200), min_size=1)


@given(demands, st.integers(1, 300))
def test_single_link_matches_water_filling(d, cap):
    got = water_fill(d, {"link": (cap, sorted(d))})
    assert got == max_min_fair(d, cap)


@given(demands, st.lists(st.tuples(st.integers(1, 300), st.lists(st.sampled_from("abcdef"),
                                                                  min_size=1, max_size=4)),
                         min_size=1, max_size=4))
def test_several_links_match_progressive_filling(d, links):
    resources = {f"r{i}": (cap, [f for f in flows if f in d]) for i, (cap, flows) in enumerate(links)}
    assert water_fill(d, resources) == progressive_filling(d, resources)


@given(demands, st.integers(1, 300), st.data())
def test_floors_are_honoured(d, cap, data):
    flows = sorted(d)
    floors = {}
    room = cap
    for f in flows:
        g = data.draw(st.integers(0, room))
        floors[f] = g
        room -= g
    rates = water_fill(d, {"link": (cap, flows)}, floors)
    assert sum(rates.values()) <= cap
    for f in flows:
        assert min(floors[f], d[f]) <= rates[f] <= d[f]
    if sum(rates.values()) < cap:
        assert all(rates[f] == d[f] for f in flows)


def test_floors_exceeding_capacity():
    with pytest.raises(SimulationError):
        water_fill({"a": 10, "b": 10}, {"l": (10, ["a", "b"])}, {"a": 6, "b": 6})


@given(demands, st.sampled_from("abcdef"), st.integers(0, 200), st.integers(1, 300))
def test_single_bottleneck_monotone(d, f, extra, cap):
    if f not in d:
        return
    before = water_fill(d, {"l": (cap, sorted(d))})
    raised = dict(d, **{f: d[f] + extra})
    after = water_fill(raised, {"l": (cap, sorted(raised))})
    assert all(after[g] <= before[g] for g in d if g != f)


def test_monotonicity_fails_across_links():
    # a and b share l1, b and c share l2: a growing squeezes b, which frees l2 for c
    res = {"l1": (4, ["a", "b"]), "l2": (10, ["b", "c"])}
    before = water_fill({"a": 0, "b": 10, "c": 10}, res)
    after = water_fill({"a": 10, "b": 10, "c": 10}, res)
    assert (before["b"], before["c"]) == (4, 6)
    assert (after["b"], after["c"]) == (2, 8)


def test_guaranteed_flow_against_background(tmp_path):
    result = _single_link_guarantee(tmp_path)
    flows = [FlowDemand("A", "a", "h1", "h2", 100 * MB),
             FlowDemand("B", "_default", "h1", "h2", 100 * MB)]
    sim = simulate(result.programs, result.topology, flows, result.policy)
    assert sim.rate("A") == 90 * MB and sim.rate("B") == 10 * MB
    assert not sim.violations


def test_idle_background_leaves_bandwidth_to_guaranteed_flow(tmp_path):
    result = _single_link_guarantee(tmp_path)
    flows = [FlowDemand("A", "a", "h1", "h2", 150 * MB),
             FlowDemand("B", "_default", "h1", "h2", 100 * MB, start=1)]
    sim = simulate(result.programs, result.topology, flows, result.policy, epochs=2)
    assert [sim.rate("A", k) for k in (0, 1)] == [100 * MB, 90 * MB]
    assert sim.rate("B", 1) == 10 * MB


def test_unused_guarantee_goes_to_background(tmp_path):
    result = _single_link_guarantee(tmp_path)
    flows = [FlowDemand("A", "a", "h1", "h2", 30 * MB),
             FlowDemand("B", "_default", "h1", "h2", 100 * MB)]
    sim = simulate(result.programs, result.topology, flows, result.policy)
    assert sim.rate("A") == 30 * MB and sim.rate("B") == 70 * MB


def test_middlebox_demands_and_csv(tmp_path):
    result = compile_files(DATA / "ftp_http.pol", DATA / "middlebox_net.json")
    flows = read_demands(DATA / "ftp_http_demands.csv")
    sim = simulate(result.programs, result.topology, flows, result.policy, epochs=4)
    assert sim.rate("f1") == 200 * MB
    assert sim.rate("f2") == 25 * MB
    assert sim.rate("f3") == 775 * MB and sim.rate("f3", 3) == 0
    # z detours through m1 and crosses s1-s2 twice, once each way
    assert sim.utilization[0][("s1", "s2")] == 400 * MB
    out = tmp_path / "r.csv"
    write_results(sim, out)
    lines = out.read_text().splitlines()
    assert lines[0] == "time,flow,rate" and lines[1] == "0,f1,200000000"


@given(st.lists(st.integers(0, 2 * 10**9), min_size=3, max_size=3))
def test_capacity_conserved(rates):
    result = _middlebox()
    names = ["z", "x", "_default"]
    flows = [FlowDemand(f"f{i}", names[i], "h1", "h2", r) for i, r in enumerate(rates)]
    sim = simulate(result.programs, result.topology, flows, result.policy)
    assert not sim.violations
    for link, load in sim.utilization[0].items():
        assert load <= result.topology.capacity(*link)
    if rates[0] >= 100 * MB:
        assert sim.rate("f0") >= 100 * MB


_CACHE = {}


def _middlebox():
    if "mb" not in _CACHE:
        _CACHE["mb"] = compile_files(DATA / "ftp_http.pol", DATA / "middlebox_net.json")
    return _CACHE["mb"]


def test_bad_demands(tmp_path):
    result = _middlebox()
    with pytest.raises(SimulationError):
        simulate(result.programs, result.topology,
                 [FlowDemand("f", "nope", "h1", "h2", 1)], result.policy)
    with pytest.raises(SimulationError):
        simulate(result.programs, result.topology,
                 [FlowDemand("f", "z", "h1", "s1", 1)], result.policy)
    bad = tmp_path / "d.csv"
    bad.write_text("flow,statement,src,dst,rate\nf,z,h1,h2,lots\n")
    with pytest.raises(SimulationError):
        read_demands(bad)


def test_crossing_a_link_twice_loads_it_twice():
    assert water_fill({"a": 100}, {"l": (100, ["a", "a"])}) == {"a": 50}
    assert water_fill({"a": 100, "b": 100}, {"l": (90, ["a", "a", "b"])}) == {"a": 30, "b": 30}
