import itertools
import random
from pathlib import Path

import pytest

from netprov import predicates as preds
from netprov.automata import compile_path
from netprov.besteffort import build_sink_trees
from netprov.bench import all_pairs_policy
from netprov.codegen import TAG_MIN, emit, load_programs, render
from netprov.compiler import compile_files, compile_policy
from netprov.frontend import normalize, parse
from netprov.simulator import ReplayError, flow_packet, replay_packet, trace_accepted
from netprov.topology import fat_tree, linear
from netprov.units import format_mac
from oracles import replay_matches

GOLDEN = Path(__file__).parent / "golden" / "ftp_http"


@pytest.fixture(scope="module")
def ftp_http():
    data = Path(__file__).resolve().parent.parent / "data"
    return compile_files(data / "ftp_http.pol", data / "middlebox_net.json")


def test_golden_files(ftp_http):
    files = ftp_http.files()
    assert sorted(files) == sorted(p.name for p in GOLDEN.iterdir())
    for name, text in files.items():
        assert text == (GOLDEN / name).read_text(), name


def test_emit_then_load_replays_identically(ftp_http, tmp_path):
    emit(ftp_http.programs, tmp_path)
    loaded = load_programs(tmp_path)
    assert render(loaded) == ftp_http.files()
    topo = ftp_http.topology
    for st in ftp_http.policy.statements:
        pkt = flow_packet(st, topo, "h1", "h2")
        a = replay_packet(ftp_http.programs, pkt, "h1", topo)
        b = replay_packet(loaded, pkt, "h1", topo)
        assert a.segments == b.segments and a.queue == b.queue


def test_tags_start_above_reserved_values(ftp_http):
    assert min(ftp_http.programs.tags.values()) == TAG_MIN == 2


def test_every_statement_replays_along_its_path(ftp_http):
    topo, placement = ftp_http.topology, ftp_http.placement
    for st in ftp_http.policy.statements:
        pkt = flow_packet(st, topo, "h1", "h2")
        r = replay_packet(ftp_http.programs, pkt, "h1", topo)
        assert r.destination == "h2"
        nfa = compile_path(st.path, topo.node_ids, placement)
        assert trace_accepted(nfa, r.segments)
        assert replay_matches(st.path, r.segments, placement.locations)


def test_chain_order_and_queue(ftp_http):
    topo = ftp_http.topology
    st = ftp_http.policy.statement("z")
    r = replay_packet(ftp_http.programs, flow_packet(st, topo, "h1", "h2"), "h1", topo)
    applied = [f for _, fs in r.segments for f in fs]
    assert applied.index("dpi") < applied.index("nat")
    planned = ftp_http.solution.paths["z"]
    assert r.locations == [v for i, v in enumerate(planned) if i == 0 or planned[i - 1] != v]
    assert r.queue == ("h1", "s1", 1)


def test_caps_become_rate_limiters(ftp_http):
    lines = ftp_http.files()["h1.filters"].splitlines()
    limits = [ln for ln in lines if ln.endswith("rate-limit 25000000")]
    assert len(limits) == 2


def test_reverse_traffic_follows_catch_all(ftp_http):
    topo = ftp_http.topology
    st = ftp_http.policy.statement("_default")
    pkt = flow_packet(st, topo, "h2", "h1")
    r = replay_packet(ftp_http.programs, pkt, "h2", topo)
    assert r.locations == ["h2", "s1", "h1"]


def test_unknown_destination_has_no_rule(ftp_http):
    topo = ftp_http.topology
    pkt = flow_packet(ftp_http.policy.statement("_default"), topo, "h1", "h2")
    pkt["eth.dst"] = 0x99
    with pytest.raises(ReplayError):
        replay_packet(ftp_http.programs, pkt, "h1", topo)


def test_output_is_deterministic(data_dir):
    a = compile_files(data_dir / "ftp_http.pol", data_dir / "middlebox_net.json")
    b = compile_files(data_dir / "ftp_http.pol", data_dir / "middlebox_net.json")
    assert a.session == b.session and a.files() == b.files()


@pytest.mark.parametrize("topo", [linear(4, 2), fat_tree(4)], ids=["linear", "fat-tree"])
def test_all_pairs_replay(topo):
    policy = all_pairs_policy(topo, guaranteed=0.1, seed=3)
    result = compile_policy(policy, topo)
    assert not result.plan.unroutable
    for st in result.policy.statements:
        if st.synthetic:
            continue
        (s,), (d,) = (preds.finite_values(preds.to_dnf(st.predicate), f)
                      for f in ("eth.src", "eth.dst"))
        src, dst = topo.host_by_mac(s), topo.host_by_mac(d)
        r = replay_packet(result.programs, flow_packet(st, topo, src, dst), src, topo)
        assert r.destination == dst
        assert r.locations[1:-1] and all(topo.kind(v) == "switch" for v in r.locations[1:-1])
        if st.id in result.solution.paths:
            assert r.locations == result.solution.paths[st.id]


def test_waypoint_class_shares_tree():
    topo = linear(3, 1)
    policy = parse("""
    [a : eth.src = 00:00:00:00:00:01 and eth.dst = 00:00:00:00:00:03 -> .* s2 .*;
     b : eth.src = 00:00:00:00:00:02 and eth.dst = 00:00:00:00:00:03 -> .* s2 .*]
    """)
    plan = build_sink_trees(normalize(policy), topo, None)
    waypoint = [t for t in plan.trees if t.cls == ".* s2 .*"]
    assert len(waypoint) == 1 and set(waypoint[0].entries) >= {"h1", "h2"}
    assert waypoint[0].walk("h1", "h3")[0] == ["h1", "s1", "s2", "s3", "h3"]


def test_unroutable_class_reported():
    topo = linear(2, 1)
    policy = parse("[a : eth.src = 00:00:00:00:00:01 and eth.dst = 00:00:00:00:00:02"
                   " -> h1 s2 .*]")
    result = compile_policy(policy, topo)
    assert ("a", "h1", "h2") in result.plan.unroutable


def test_random_waypoints_replay():
    rng = random.Random(2)
    topo = linear(3, 2)
    stmts = []
    for k, (s, d) in enumerate(itertools.permutations(topo.hosts, 2)):
        path = rng.choice([".*", ".* s2 .*", ".* s3 .*"])
        sm, dm = (format_mac(topo.node(h).mac) for h in (s, d))
        stmts.append(f"p{k} : eth.src = {sm} and eth.dst = {dm} -> {path}")
    result = compile_policy(parse("[" + ";\n".join(stmts) + "]"), topo)
    for st in result.policy.statements:
        if st.synthetic:
            continue
        s, d = (topo.host_by_mac(next(iter(preds.finite_values(preds.to_dnf(st.predicate), f))))
                for f in ("eth.src", "eth.dst"))
        r = replay_packet(result.programs, flow_packet(st, topo, s, d), s, topo)
        assert r.destination == d
        assert replay_matches(st.path, r.segments, {})


def test_multi_homed_sender_queues_through_the_planned_switch(data_dir):
    result = compile_files(data_dir / "two_guarantees.pol", data_dir / "two_path_net.json",
                           objective="minmax-reserved")
    topo = result.topology
    paths = {sid: list(p) for sid, p in result.solution.paths.items()}
    assert sorted(p[1] for p in paths.values()) == ["s1", "s3"]
    for st in result.policy.statements:
        pkt = flow_packet(st, topo, "h1", "h2")
        r = replay_packet(result.programs, pkt, "h1", topo)
        if st.id in paths:
            assert r.locations == paths[st.id]
            assert r.queue == ("h1", paths[st.id][1], 1)
        else:
            assert r.locations[:2] == ["h1", "s1"] and r.locations[-1] == "h2"
