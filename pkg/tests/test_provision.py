import random
from fractions import Fraction

import pytest

from netprov.frontend import load_policy, normalize, parse
from netprov.localization import localize
from netprov.logical import build_logical_graph
from netprov.provision import (OBJECTIVES, ProvisionError, build_model, evaluate_paths,
                               provision_guaranteed, solve)
from netprov.syntax import PTrue, Statement
from oracles import best_assignment, simple_paths
from instances import host_network, waypoint_path

MB = 10**6


def _provision(policy, topo, objective, placement=None, solver="bnb"):
    policy = normalize(policy)
    loc = localize(policy.formula)
    return provision_guaranteed(policy, topo, placement, loc.guarantees(), objective,
                                solver=solver)


@pytest.mark.parametrize("solver", ["bnb", "milp"])
def test_heuristics_on_two_paths(data_dir, two_path, solver):
    p = load_policy(data_dir / "two_guarantees.pol")
    short = _provision(p, two_path, "shortest", solver=solver)
    assert short.paths == {"a": ["h1", "s3", "h2"], "b": ["h1", "s3", "h2"]}
    ratio = _provision(p, two_path, "minmax-ratio", solver=solver)
    assert ratio.value == Fraction(1, 4)
    reserved = _provision(p, two_path, "minmax-reserved", solver=solver)
    assert reserved.value == 50 * MB
    assert reserved.paths["a"] != reserved.paths["b"]


def test_infeasible_guarantees(data_dir):
    from netprov.topology import load_topology
    topo, _ = load_topology(data_dir / "single_link_net.json")
    sol = _provision(load_policy(data_dir / "two_guarantees_80.pol"), topo, "shortest")
    assert sol.status == "infeasible" and not sol.feasible


def test_middlebox_guarantee_uses_nat_box(data_dir, middlebox):
    topo, placement = middlebox
    sol = _provision(load_policy(data_dir / "ftp_http.pol"), topo, "shortest", placement)
    assert "m1" in sol.paths["z"]
    assert "nat" in sol.functions["z"]


def test_guarantee_needs_single_pair(two_path):
    p = parse("[a : tcp.dst = 80 -> .*], min(a, 1MB/s)")
    with pytest.raises(ProvisionError):
        _provision(p, two_path, "shortest")


def test_evaluate_paths_counts_each_hop(two_path):
    res, values, ok = evaluate_paths({"a": ["h1", "h1", "s3", "h2"]}, {"a": 10}, two_path)
    assert res == {("h1", "s3"): 10, ("h2", "s3"): 10}
    assert values["shortest"] == 20 and ok


def test_matches_brute_force_on_random_instances():
    rng = random.Random(5)
    checked = 0
    while checked < 15:
        topo = host_network(rng, 6)
        graphs, rates = [], []
        for i in range(rng.randint(1, 3)):
            s, d = rng.sample(topo.hosts, 2)
            st = Statement(f"p{i}", PTrue(), waypoint_path(rng, topo))
            graphs.append(build_logical_graph(st, topo, endpoints=([s], [d])))
            rates.append(rng.choice([25, 50, 100]))
        cands = [simple_paths(g, 2000) for g in graphs]
        if any(c is None for c in cands):
            continue
        checked += 1
        for obj in OBJECTIVES:
            sol = solve(build_model(graphs, rates, topo, obj))
            want = best_assignment(cands, rates, topo.capacity, obj)
            assert (sol.value if sol.status == "optimal" else None) == want
