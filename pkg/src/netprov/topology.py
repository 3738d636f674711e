"""Physical topology, function placement, loaders and generators."""

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, Optional, Tuple

from .units import RateError, format_ip, format_mac, format_rate, parse_ip, parse_mac, parse_rate

KINDS = ("host", "switch", "middlebox")
FORMAT_VERSION = 1
DEFAULT_CAPACITY = 10**9


class TopologyError(ValueError):
    pass


def node_key(name):
    """Natural sort key so that ``s2`` sorts before ``s10``."""
    return tuple((0, int(t), "") if t.isdigit() else (1, 0, t)
                 for t in re.findall(r"\d+|\D+", name))


@dataclass(frozen=True)
class Node:
    id: str
    kind: str
    mac: Optional[int] = None
    ip: Optional[int] = None
    # whether the device can host min-rate queues
    queues: bool = True


@dataclass(frozen=True)
class Link:
    u: str
    v: str
    capacity: int

    @property
    def key(self):
        return (self.u, self.v)


def link_key(u, v):
    return (u, v) if node_key(u) <= node_key(v) else (v, u)


@dataclass(frozen=True)
class Topology:
    nodes: Tuple[Node, ...]
    links: Tuple[Link, ...]
    _index: dict = field(default=None, repr=False, compare=False, hash=False)

    def __post_init__(self):
        nodes = tuple(sorted(self.nodes, key=lambda n: node_key(n.id)))
        by_id = {}
        for n in nodes:
            if n.kind not in KINDS:
                raise TopologyError(f"node {n.id}: unknown kind {n.kind!r}")
            if n.id in by_id:
                raise TopologyError(f"duplicate node id {n.id}")
            by_id[n.id] = n
        links = []
        caps = {}
        adj = {n: set() for n in by_id}
        for ln in self.links:
            for end in (ln.u, ln.v):
                if end not in by_id:
                    raise TopologyError(f"link {ln.u}-{ln.v}: unknown endpoint {end}")
            if ln.u == ln.v:
                raise TopologyError(f"self-link at {ln.u}")
            if ln.capacity <= 0:
                raise TopologyError(f"link {ln.u}-{ln.v}: capacity must be positive")
            key = link_key(ln.u, ln.v)
            if key in caps:
                raise TopologyError(f"duplicate link {key[0]}-{key[1]}")
            caps[key] = ln.capacity
            links.append(Link(key[0], key[1], ln.capacity))
            adj[ln.u].add(ln.v)
            adj[ln.v].add(ln.u)
        links.sort(key=lambda ln: (node_key(ln.u), node_key(ln.v)))
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "links", tuple(links))
        object.__setattr__(self, "_index", {
            "by_id": by_id,
            "caps": caps,
            "adj": {n: tuple(sorted(vs, key=node_key)) for n, vs in adj.items()},
            "mac": {n.mac: n.id for n in nodes if n.mac is not None},
            "ip": {n.ip: n.id for n in nodes if n.ip is not None},
        })

    @property
    def node_ids(self):
        return [n.id for n in self.nodes]

    def node(self, nid):
        return self._index["by_id"][nid]

    def __contains__(self, nid):
        return nid in self._index["by_id"]

    def kind(self, nid):
        return self._index["by_id"][nid].kind

    @property
    def hosts(self):
        return [n.id for n in self.nodes if n.kind == "host"]

    @property
    def switches(self):
        return [n.id for n in self.nodes if n.kind == "switch"]

    @property
    def middleboxes(self):
        return [n.id for n in self.nodes if n.kind == "middlebox"]

    @property
    def forwarders(self):
        """Devices that run flow tables: switches and middleboxes."""
        return [n.id for n in self.nodes if n.kind != "host"]

    def neighbors(self, nid):
        return self._index["adj"][nid]

    def adjacent(self, u, v):
        return link_key(u, v) in self._index["caps"]

    def capacity(self, u, v):
        return self._index["caps"][link_key(u, v)]

    def host_by_mac(self, mac):
        return self._index["mac"].get(mac)

    def host_by_ip(self, ip):
        return self._index["ip"].get(ip)


@dataclass(frozen=True)
class FunctionPlacement:
    locations: Dict[str, FrozenSet[str]] = field(default_factory=dict)

    def __contains__(self, name):
        return name in self.locations

    def __getitem__(self, name):
        return self.locations[name]

    def __iter__(self):
        return iter(sorted(self.locations))

    def functions_at(self, nid):
        return sorted(f for f, locs in self.locations.items() if nid in locs)

    def as_dict(self):
        return {f: sorted(locs, key=node_key) for f, locs in sorted(self.locations.items())}


def make_placement(topology, mapping):
    out = {}
    for fn, locs in mapping.items():
        locs = frozenset(locs)
        if not locs:
            raise TopologyError(f"function {fn} has no placement location")
        for loc in locs:
            if loc not in topology:
                raise TopologyError(f"function {fn} placed at unknown node {loc}")
        if fn in topology:
            raise TopologyError(f"function name {fn} collides with a node id")
        out[fn] = locs
    return FunctionPlacement(out)


def assign_addresses(nodes):
    """Give hosts without explicit addresses sequential MACs and 10.0.0.0/8 IPs."""
    hosts = sorted((n for n in nodes if n.kind == "host"), key=lambda n: node_key(n.id))
    used_mac = {n.mac for n in nodes if n.mac is not None}
    used_ip = {n.ip for n in nodes if n.ip is not None}
    counter = 1
    fixed = {}
    for n in hosts:
        mac, ip = n.mac, n.ip
        if mac is None or ip is None:
            while counter in used_mac or (0x0A000000 + counter) in used_ip:
                counter += 1
            if mac is None:
                mac = counter
                used_mac.add(mac)
            if ip is None:
                ip = 0x0A000000 + counter
                used_ip.add(ip)
            counter += 1
        fixed[n.id] = Node(n.id, n.kind, mac, ip, n.queues)
    return [fixed.get(n.id, n) for n in nodes]


# ------------------------------------------------------------------ loading

def topology_from_dict(doc):
    if not isinstance(doc, dict):
        raise TopologyError("topology document must be an object")
    if doc.get("format", FORMAT_VERSION) != FORMAT_VERSION:
        raise TopologyError(f"unsupported topology format {doc.get('format')!r}")
    nodes = []
    for entry in doc.get("nodes", []):
        try:
            nid = str(entry["id"])
            kind = entry.get("kind", "switch")
            mac = parse_mac(entry["mac"]) if "mac" in entry else None
            ip = parse_ip(entry["ip"]) if "ip" in entry else None
        except (KeyError, TypeError, ValueError) as exc:
            raise TopologyError(f"bad node entry {entry!r}: {exc}") from None
        if kind not in KINDS:
            raise TopologyError(f"node {nid}: unknown kind {kind!r}")
        if (mac is not None or ip is not None) and kind != "host":
            raise TopologyError(f"node {nid}: only hosts carry addresses")
        nodes.append(Node(nid, kind, mac, ip, bool(entry.get("queues", True))))
    links = []
    for entry in doc.get("links", []):
        try:
            cap = parse_rate(entry.get("capacity", DEFAULT_CAPACITY))
            links.append(Link(str(entry["u"]), str(entry["v"]), cap))
        except (KeyError, TypeError, RateError) as exc:
            raise TopologyError(f"bad link entry {entry!r}: {exc}") from None
    topo = Topology(tuple(assign_addresses(nodes)), tuple(links))
    mapping = {}
    for entry in doc.get("placements", []):
        try:
            fn = str(entry["function"])
            locs = [str(x) for x in entry["locations"]]
        except (KeyError, TypeError) as exc:
            raise TopologyError(f"bad placement entry {entry!r}: {exc}") from None
        if fn in mapping:
            raise TopologyError(f"duplicate placement for function {fn}")
        mapping[fn] = locs
    return topo, make_placement(topo, mapping)


def load_topology(path):
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise TopologyError(f"{path}: invalid JSON: {exc}") from None
    return topology_from_dict(doc)


def topology_to_dict(topo, placement=None):
    nodes = []
    for n in topo.nodes:
        entry = {"id": n.id, "kind": n.kind}
        if n.mac is not None:
            entry["mac"] = format_mac(n.mac)
        if n.ip is not None:
            entry["ip"] = format_ip(n.ip)
        if not n.queues:
            entry["queues"] = False
        nodes.append(entry)
    links = [{"u": ln.u, "v": ln.v, "capacity": format_rate(ln.capacity)} for ln in topo.links]
    doc = {"format": FORMAT_VERSION, "nodes": nodes, "links": links}
    if placement is not None:
        doc["placements"] = [{"function": f, "locations": locs}
                             for f, locs in placement.as_dict().items()]
    return doc


def save_topology(path, topo, placement=None):
    Path(path).write_text(json.dumps(topology_to_dict(topo, placement), indent=2) + "\n")


# --------------------------------------------------------------- generators

def _build(nodes, links):
    return Topology(tuple(assign_addresses(nodes)), tuple(links))


def fat_tree(k, capacity=DEFAULT_CAPACITY):
    if k < 2 or k % 2:
        raise TopologyError("fat-tree arity k must be even and >= 2")
    half = k // 2
    nodes, links = [], []
    cores = [f"c{i + 1}" for i in range(half * half)]
    nodes += [Node(c, "switch") for c in cores]
    host_no = 0
    for pod in range(k):
        aggs = [f"a{pod + 1}_{j + 1}" for j in range(half)]
        edges = [f"e{pod + 1}_{j + 1}" for j in range(half)]
        nodes += [Node(a, "switch") for a in aggs]
        nodes += [Node(e, "switch") for e in edges]
        for j, a in enumerate(aggs):
            for c in cores[j * half:(j + 1) * half]:
                links.append(Link(a, c, capacity))
            for e in edges:
                links.append(Link(a, e, capacity))
        for e in edges:
            for _ in range(half):
                host_no += 1
                h = f"h{host_no}"
                nodes.append(Node(h, "host"))
                links.append(Link(h, e, capacity))
    return _build(nodes, links)


def balanced_tree(depth, fanout, capacity=DEFAULT_CAPACITY):
    """``depth`` levels of switches, each internal switch with ``fanout`` children,
    and ``fanout`` hosts under every leaf switch."""
    if depth < 1 or fanout < 1:
        raise TopologyError("balanced-tree depth and fanout must be >= 1")
    nodes, links = [], []
    level = ["s1"]
    nodes.append(Node("s1", "switch"))
    count = 1
    for _ in range(depth - 1):
        nxt = []
        for parent in level:
            for _ in range(fanout):
                count += 1
                s = f"s{count}"
                nodes.append(Node(s, "switch"))
                links.append(Link(parent, s, capacity))
                nxt.append(s)
        level = nxt
    host_no = 0
    for leaf in level:
        for _ in range(fanout):
            host_no += 1
            nodes.append(Node(f"h{host_no}", "host"))
            links.append(Link(f"h{host_no}", leaf, capacity))
    return _build(nodes, links)


def linear(switches, hosts_per_switch=1, capacity=DEFAULT_CAPACITY):
    if switches < 1 or hosts_per_switch < 0:
        raise TopologyError("linear topology needs >= 1 switch")
    nodes = [Node(f"s{i + 1}", "switch") for i in range(switches)]
    links = [Link(f"s{i + 1}", f"s{i + 2}", capacity) for i in range(switches - 1)]
    host_no = 0
    for i in range(switches):
        for _ in range(hosts_per_switch):
            host_no += 1
            nodes.append(Node(f"h{host_no}", "host"))
            links.append(Link(f"h{host_no}", f"s{i + 1}", capacity))
    return _build(nodes, links)


GENERATORS = {"fat-tree": fat_tree, "balanced-tree": balanced_tree, "linear": linear}


def generate_topology(kind, **params):
    try:
        gen = GENERATORS[kind]
    except KeyError:
        raise TopologyError(f"unknown topology kind {kind!r}") from None
    try:
        return gen(**params)
    except TypeError as exc:
        raise TopologyError(f"{kind}: {exc}") from None


# -------------------------------------------------------- GraphML converter

def from_graphml(path, capacity=DEFAULT_CAPACITY):
    """Map every GraphML node to a switch and hang one host off each switch."""
    import networkx as nx

    graph = nx.Graph(nx.read_graphml(path))
    names = {}
    for i, nid in enumerate(sorted(graph.nodes, key=lambda x: node_key(str(x)))):
        names[nid] = i + 1
    nodes, links = [], []
    for nid, i in names.items():
        nodes.append(Node(f"s{i}", "switch"))
        nodes.append(Node(f"h{i}", "host"))
        links.append(Link(f"h{i}", f"s{i}", capacity))
    for u, v in graph.edges:
        if u != v:
            links.append(Link(f"s{names[u]}", f"s{names[v]}", capacity))
    return _build(nodes, links)


def random_graphml(path, switches, seed, extra_edges=None):
    """Write a seeded connected random graph in GraphML form (a stand-in for
    Topology-Zoo-sized inputs)."""
    import random

    import networkx as nx

    rng = random.Random(seed)
    graph = nx.Graph()
    graph.add_nodes_from(str(i) for i in range(switches))
    for i in range(1, switches):
        graph.add_edge(str(i), str(rng.randrange(i)))
    extra = switches // 4 if extra_edges is None else extra_edges
    while extra > 0:
        u, v = rng.sample(range(switches), 2)
        if not graph.has_edge(str(u), str(v)):
            graph.add_edge(str(u), str(v))
            extra -= 1
    nx.write_graphml(graph, path)
    return path
