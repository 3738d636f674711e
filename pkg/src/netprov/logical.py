"""Per-statement product of the physical topology with a path automaton.

A vertex ``(u, q)`` means "the packet is at location ``u`` and the automaton
is in state ``q``".  Walks from the source vertex to the sink vertex project
to exactly the physical walks accepted by the automaton.
"""

from collections import deque
from dataclasses import dataclass
from typing import List, Optional, Tuple

from . import predicates
from .automata import compile_path, intersect
from .syntax import Neg, Seq, Star, Sym, alt_of, any_path
from .topology import link_key


def endpoint_hosts(predicate, topology):
    """Hosts that may send, and receive, traffic matching ``predicate``.

    A host qualifies as a source when some cube of the predicate admits its
    MAC as ``eth.src`` and its IP as ``ip.src`` (likewise for destinations).
    """
    cubes = predicates.to_dnf(predicate)
    srcs, dsts = set(), set()
    for h in topology.hosts:
        node = topology.node(h)
        for c in cubes:
            if node.mac in c.get("eth.src") and node.ip in c.get("ip.src"):
                srcs.add(h)
            if node.mac in c.get("eth.dst") and node.ip in c.get("ip.dst"):
                dsts.add(h)
    return sorted(srcs), sorted(dsts)


def endpoint_expr(topology, sources, destinations):
    """Walks that start at a source host, end at a destination host and
    visit no host in between (a host may repeat at either end)."""
    if not sources or not destinations:
        return None
    inner = [n for n in topology.node_ids if topology.kind(n) != "host"]

    def repeated(names):
        return alt_of(Seq(Sym(n), Star(Sym(n))) for n in names)

    head = repeated(sources)
    tail = repeated(destinations)
    if inner:
        return Seq(Seq(head, Star(alt_of(Sym(n) for n in inner))), tail)
    return Seq(head, tail)


@dataclass(frozen=True)
class LogicalEdge:
    tail: int
    head: int
    # physical link (sorted pair) crossed, or None for stationary and terminal edges
    link: Optional[Tuple[str, str]]
    # function applied when entering ``head``, if any
    function: Optional[str] = None


class LogicalGraph:
    """The product graph for one statement; vertex ids are dense integers."""

    def __init__(self, sid, automaton, topology):
        self.sid = sid
        self.automaton = automaton
        self.topology = topology
        self.locations = topology.node_ids
        self.loc_index = {u: i for i, u in enumerate(self.locations)}
        nq = automaton.n_states
        self.n_states = nq
        self.source = len(self.locations) * nq
        self.sink = self.source + 1
        edges = []
        a = automaton
        for v in self.locations:
            for q2 in sorted(a.successors(a.start, v)):
                edges.append(LogicalEdge(self.source, self.vertex(v, q2), None,
                                         a.choose_label(a.start, v, q2)))
        for u in self.locations:
            nbrs = (u,) + topology.neighbors(u)
            for q in range(nq):
                tail = self.vertex(u, q)
                for v in nbrs:
                    link = None if v == u else link_key(u, v)
                    for q2 in sorted(a.successors(q, v)):
                        edges.append(LogicalEdge(tail, self.vertex(v, q2),
                                                 link,
                                                 a.choose_label(q, v, q2)))
                if q in a.accepting:
                    edges.append(LogicalEdge(tail, self.sink, None))
        self.edges = edges
        out = [[] for _ in range(self.n_vertices)]
        for k, e in enumerate(edges):
            out[e.tail].append(k)
        self.out_edges = out

    @property
    def n_vertices(self):
        return len(self.locations) * self.n_states + 2

    def vertex(self, loc, q):
        return self.loc_index[loc] * self.n_states + q

    def describe(self, vertex):
        if vertex == self.source:
            return "s"
        if vertex == self.sink:
            return "t"
        li, q = divmod(vertex, self.n_states)
        return (self.locations[li], q)

    def link_edges(self):
        """Map each physical link to the indices of edges that cross it."""
        out = {}
        for k, e in enumerate(self.edges):
            if e.link is not None:
                out.setdefault(e.link, []).append(k)
        return out

    def shortest_path(self, allowed=None):
        """Fewest-edge source-to-sink path as a list of edge indices.

        ``allowed`` optionally restricts the usable edges.
        """
        parent = {self.source: None}
        queue = deque([self.source])
        while queue:
            v = queue.popleft()
            if v == self.sink:
                path = []
                while parent[v] is not None:
                    k = parent[v]
                    path.append(k)
                    v = self.edges[k].tail
                return path[::-1]
            for k in self.out_edges[v]:
                if allowed is not None and k not in allowed:
                    continue
                w = self.edges[k].head
                if w not in parent:
                    parent[w] = k
                    queue.append(w)
        return None

    def is_satisfiable(self):
        return self.shortest_path() is not None

    def project(self, edge_path):
        """Physical locations visited by a source-to-sink edge path."""
        return project_path(self, edge_path)[0]

    def to_dot(self):
        lines = [f'digraph "{self.sid}" {{', "  rankdir=LR;"]
        for k, e in enumerate(self.edges):
            label = e.function or ("" if e.link else "stay")
            lines.append(f'  "{_dot_name(self.describe(e.tail))}" -> '
                         f'"{_dot_name(self.describe(e.head))}" [label="{label}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


def _dot_name(v):
    return v if isinstance(v, str) else f"{v[0]},q{v[1]}"


def project_path(graph, edge_path) -> Tuple[List[str], List[Optional[str]]]:
    """Drop the terminal vertices and automaton states from a lifted walk.

    Returns the physical locations and, per location, the function applied
    there (or ``None``).  Raises ``ValueError`` if the walk is not a valid
    source-to-sink path or its projection is rejected by the automaton.
    """
    if not edge_path:
        raise ValueError("empty path")
    edges = [graph.edges[k] for k in edge_path]
    if edges[0].tail != graph.source or edges[-1].head != graph.sink:
        raise ValueError("path must run from the source vertex to the sink vertex")
    for e1, e2 in zip(edges, edges[1:]):
        if e1.head != e2.tail:
            raise ValueError("edges do not form a walk")
    locs, funcs = [], []
    for e in edges[:-1]:
        loc, _ = graph.describe(e.head)
        locs.append(loc)
        funcs.append(e.function)
    if not graph.automaton.accepts(locs):
        raise ValueError(f"projected walk {locs} rejected by the path automaton")
    return locs, funcs


def build_logical_graph(statement, topology, placement=None, endpoints=None):
    """Product graph for ``statement``.

    With ``endpoints=(sources, destinations)`` the language is further
    restricted to walks between those hosts; pass ``"infer"`` to take them
    from the statement's predicate.
    """
    alphabet = topology.node_ids
    automaton = compile_path(statement.path, alphabet, placement)
    if endpoints == "infer":
        endpoints = endpoint_hosts(statement.predicate, topology)
    if endpoints is not None:
        expr = endpoint_expr(topology, *endpoints)
        if expr is None:
            # no possible sender or receiver: the empty language
            expr = Neg(any_path())
        automaton = intersect(automaton, compile_path(expr, alphabet))
    return LogicalGraph(statement.id, automaton, topology)
