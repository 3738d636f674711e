
import pytest

from netprov.topology import (Link, Node, Topology, TopologyError, balanced_tree, fat_tree,
                              from_graphml, generate_topology, load_topology, make_placement,
                              node_key, random_graphml, save_topology, topology_from_dict)


def test_load_middlebox_network(middlebox):
    topo, placement = middlebox
    assert topo.hosts == ["h1", "h2"]
    assert topo.middleboxes == ["m1"]
    assert placement["nat"] == frozenset(["m1"])
    assert placement.functions_at("m1") == ["dpi", "nat"]
    assert topo.capacity("s1", "h1") == 10**9


def test_save_load_round_trip(tmp_path, middlebox):
    topo, placement = middlebox
    save_topology(tmp_path / "t.json", topo, placement)
    again, pl2 = load_topology(tmp_path / "t.json")
    assert again == topo and pl2 == placement


@pytest.mark.parametrize("doc,needle", [
    ({"nodes": [{"id": "a"}], "links": [{"u": "a", "v": "b"}]}, "unknown endpoint"),
    ({"nodes": [{"id": "a"}, {"id": "a"}]}, "duplicate node"),
    ({"nodes": [{"id": "a"}, {"id": "b"}], "links": [{"u": "a", "v": "b", "capacity": 0}]},
     "positive"),
    ({"nodes": [{"id": "a", "kind": "router"}]}, "unknown kind"),
    ({"nodes": [{"id": "a"}], "placements": [{"function": "dpi", "locations": ["z"]}]},
     "unknown node"),
    ({"format": 9}, "unsupported"),
])
def test_invalid_documents(doc, needle):
    with pytest.raises(TopologyError, match=needle):
        topology_from_dict(doc)


def test_addresses_assigned_to_hosts():
    topo, _ = topology_from_dict({"nodes": [{"id": "h2", "kind": "host"},
                                            {"id": "h1", "kind": "host", "mac": "00:00:00:00:00:01"}]})
    macs = {h: topo.node(h).mac for h in topo.hosts}
    assert macs["h1"] == 1 and macs["h2"] != 1
    assert topo.host_by_ip(topo.node("h2").ip) == "h2"


def test_fat_tree_shape():
    t = fat_tree(4)
    assert len(t.hosts) == 16 and len(t.switches) == 20
    assert all(len(t.neighbors(s)) == 4 for s in t.switches)


def test_balanced_tree_shape():
    t = balanced_tree(3, 3)
    assert len(t.switches) == 13 and len(t.hosts) == 27


def test_generator_errors():
    with pytest.raises(TopologyError):
        generate_topology("fat-tree", k=3)
    with pytest.raises(TopologyError):
        generate_topology("torus")
    with pytest.raises(TopologyError):
        generate_topology("linear", width=2)


def test_graphml_conversion(tmp_path):
    path = random_graphml(tmp_path / "g.graphml", 12, seed=4)
    t = from_graphml(path)
    assert len(t.switches) == 12 and len(t.hosts) == 12
    # spanning tree plus a quarter as many extra edges, plus host links
    assert len(t.links) == 11 + 3 + 12
    assert from_graphml(path) == t


def test_natural_ordering():
    assert sorted(["s10", "s2", "s1"], key=node_key) == ["s1", "s2", "s10"]
    t = Topology((Node("s10", "switch"), Node("s2", "switch")), (Link("s10", "s2", 5),))
    assert t.links[0].key == ("s2", "s10")


def test_function_name_may_not_shadow_node(middlebox):
    topo, _ = middlebox
    with pytest.raises(TopologyError):
        make_placement(topo, {"s1": ["m1"]})
