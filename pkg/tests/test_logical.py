import random

from netprov.automata import compile_path
from netprov.frontend import parse, parse_path
from netprov.logical import (LogicalGraph, build_logical_graph, endpoint_hosts, project_path)
from netprov.syntax import Statement, PTrue
from netprov.topology import make_placement
from oracles import product_projections, regex_matches, walks
from instances import random_regex, small_topology


def test_projections_equal_accepted_walks():
    rng = random.Random(11)
    for _ in range(60):
        topo = small_topology(rng, 5)
        names = topo.node_ids
        placement = make_placement(topo, {"fw": [rng.choice(names)]})
        e = random_regex(rng, names + ["fw"], rng.randint(0, 3))
        g = LogicalGraph("s", compile_path(e, names, placement), topo)
        want = {w for w in walks(topo, 4) if regex_matches(e, w, placement.locations)}
        assert product_projections(g, 4) == want


def test_endpoints_from_predicate(middlebox):
    topo, _ = middlebox
    p = parse("[x : eth.src = 00:00:00:00:00:01 and ip.dst = 10.0.0.2 -> .*]")
    assert endpoint_hosts(p.statements[0].predicate, topo) == (["h1"], ["h2"])
    assert endpoint_hosts(PTrue(), topo) == (["h1", "h2"], ["h1", "h2"])


def test_middlebox_chain_graph(middlebox):
    topo, placement = middlebox
    st = parse("[z : eth.src = 00:00:00:00:00:01 and eth.dst = 00:00:00:00:00:02"
               " -> .* dpi .* nat .*]").statements[0]
    g = build_logical_graph(st, topo, placement, endpoints="infer")
    assert g.is_satisfiable()
    edges = g.shortest_path()
    locs, fns = project_path(g, edges)
    assert locs[0] == "h1" and locs[-1] == "h2"
    assert "m1" in locs and "nat" in fns
    # hosts only at the ends (possibly repeated while applying functions)
    inner = [v for v in locs if v not in ("h1", "h2")]
    assert locs == [v for v in locs if v == "h1"] + inner + [v for v in locs if v == "h2"]


def test_unsatisfiable_when_function_missing(middlebox):
    topo, placement = middlebox
    st = Statement("q", PTrue(), parse_path(".* nat .*"))
    g = build_logical_graph(st, topo, make_placement(topo, {"nat": ["h1"]}),
                            endpoints=(["h2"], ["h2"]))
    assert not g.is_satisfiable()


def test_dot_output(two_path):
    st = Statement("a", PTrue(), parse_path(".*"))
    g = build_logical_graph(st, two_path, endpoints=(["h1"], ["h2"]))
    dot = g.to_dot()
    assert dot.startswith("digraph") and '"s"' in dot and '"t"' in dot
