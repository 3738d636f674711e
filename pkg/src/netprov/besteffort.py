"""Sink trees for statements without bandwidth guarantees.

For every egress switch and every distinct path expression, a breadth-first
search runs backwards over the product of the forwarding devices (switches
and middleboxes, hosts excluded) with the expression's DFA.  Each product
vertex learns one next hop, so the vertices reached form an in-tree rooted
at the egress.  A packet's DFA state travels with it as part of its VLAN
tag; when the expression is ``.*`` there is a single state and hence a
single tag per tree.
"""

from collections import deque
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .automata import compile_path, determinize
from .logical import endpoint_hosts
from .syntax import format_path
from .topology import node_key


class BestEffortError(Exception):
    pass


@dataclass
class Entry:
    """How traffic from one source host joins a tree."""
    host: str
    switch: str
    # DFA state after the source host (carried in the pushed tag)
    state: int
    # functions applied at the source host, one per repetition of it
    functions: Tuple[Optional[str], ...]
    vertex: Tuple[str, int]


@dataclass
class Hop:
    """Forwarding behaviour at ``node`` for packets arriving in ``state``."""
    node: str
    state: int
    functions: Tuple[str, ...]
    out_state: int
    # next device, or None when the packet is delivered to a local host
    next: Optional[str]


@dataclass
class SinkTree:
    sink: str
    cls: str
    hosts: Tuple[str, ...]
    statements: Tuple[str, ...]
    nfa: object = field(repr=False)
    dfa: object = field(repr=False)
    next_hop: Dict[Tuple[str, int], Tuple[str, int]] = field(repr=False)
    dist: Dict[Tuple[str, int], int] = field(repr=False)
    targets: frozenset = field(repr=False)
    sigma: Dict[Tuple[str, int], int] = field(repr=False)
    entries: Dict[str, Entry] = field(default_factory=dict, repr=False)
    # functions applied at each delivered host, per target vertex
    exits: Dict[Tuple[Tuple[str, int], str], Tuple[Optional[str], ...]] = field(
        default_factory=dict, repr=False)

    @property
    def key(self):
        return (node_key(self.sink), self.cls, tuple(node_key(h) for h in self.hosts))

    def switches(self):
        return sorted({v[0] for v in self.dist}, key=node_key)

    def arrival(self, state, node):
        """Function applied on entering ``node`` in DFA state ``state``."""
        q = self.dfa.successors(state, node)
        (q,) = q
        target = self.sigma[(node, q)]
        src = min(s for s in self.dfa.subsets[state] if target in self.nfa.successors(s, node))
        return (node, q), self.nfa.choose_label(src, node, target)

    def hop(self, node, state):
        """The rule applied at ``node`` to a packet tagged with ``state``."""
        vertex, fn = self.arrival(state, node)
        fns = [fn] if fn else []
        while vertex not in self.targets:
            nxt = self.next_hop[vertex]
            if nxt[0] != node:
                return Hop(node, state, tuple(fns), vertex[1], nxt[0])
            _, fn = self.arrival(vertex[1], nxt[0])
            if fn:
                fns.append(fn)
            vertex = nxt
        return Hop(node, state, tuple(fns), vertex[1], None)

    def hops(self, sources=None):
        """Rules needed to carry traffic from ``sources`` (default: every
        joined host) to the sink, deduplicated."""
        out = {}
        for host in sorted(self.entries if sources is None else sources, key=node_key):
            entry = self.entries[host]
            node, state = entry.switch, entry.state
            while True:
                if (node, state) in out:
                    break
                hop = self.hop(node, state)
                out[(node, state)] = hop
                if hop.next is None:
                    break
                node, state = hop.next, hop.out_state
        return [out[k] for k in sorted(out, key=lambda k: (node_key(k[0]), k[1]))]

    def walk(self, src, dst):
        """Locations and applied functions for traffic from ``src`` to ``dst``."""
        entry = self.entries[src]
        locs = [src] * len(entry.functions)
        fns = list(entry.functions)
        node, state = entry.switch, entry.state
        for _ in range(len(self.dist) + 1):
            vertex, fn = self.arrival(state, node)
            locs.append(node)
            fns.append(fn)
            while vertex not in self.targets:
                nxt = self.next_hop[vertex]
                if nxt[0] != node:
                    break
                _, fn = self.arrival(vertex[1], node)
                locs.append(node)
                fns.append(fn)
                vertex = nxt
            if vertex in self.targets:
                tail = self.exits[(vertex, dst)]
                return locs + [dst] * len(tail), fns + list(tail)
            node, state = self.next_hop[vertex][0], vertex[1]
        raise BestEffortError("tree walk does not terminate")


@dataclass
class BestEffortPlan:
    trees: List[SinkTree]
    # (statement id, source host, destination host) pairs with no compliant route
    unroutable: List[Tuple[str, str, str]]
    # statements whose path expression admits no walk at all
    empty: List[str]

    def tree_for(self, sid, dst):
        for t in self.trees:
            if sid in t.statements and dst in t.hosts:
                return t
        return None


def attachment(topology, host):
    """The forwarding device a host sends through (first by id), if any."""
    for n in topology.neighbors(host):
        if topology.kind(n) != "host":
            return n
    return None


def _host_runs(nfa, host):
    """For each NFA state, a shortest label sequence reading ``host`` one or
    more times into acceptance (None when impossible)."""
    out = {}
    for s0 in range(nfa.n_states):
        parent = {}
        frontier = deque()
        for r in sorted(nfa.successors(s0, host)):
            if r not in parent:
                parent[r] = (None, nfa.choose_label(s0, host, r))
                frontier.append(r)
        found = None
        while frontier:
            q = frontier.popleft()
            if q in nfa.accepting:
                found = q
                break
            for r in sorted(nfa.successors(q, host)):
                if r not in parent:
                    parent[r] = (q, nfa.choose_label(q, host, r))
                    frontier.append(r)
        if found is None:
            out[s0] = None
            continue
        labels = []
        q = found
        while q is not None:
            prev, lab = parent[q]
            labels.append(lab)
            q = prev
        out[s0] = tuple(labels[::-1])
    return out


def _build_tree(topology, forwarders, nfa, dfa, sink, hosts, runs, cls, sids):
    sig = {s for s in range(nfa.n_states) if runs[hosts[0]][s] is not None}
    targets = frozenset((sink, q) for q in range(dfa.n_states) if dfa.subsets[q] & sig)
    rev = {}
    for p, v, q in dfa.transitions():
        rev.setdefault((v, q), []).append(p)
    dist = {}
    next_hop = {}
    order = sorted(targets, key=lambda x: x[1])
    for t in order:
        dist[t] = 0
    queue = deque(order)
    while queue:
        v, q = queue.popleft()
        preds = sorted(set((v,) + tuple(n for n in topology.neighbors(v) if n in forwarders)),
                       key=node_key)
        for p in sorted(rev.get((v, q), ())):
            for u in preds:
                if (u, p) not in dist:
                    dist[(u, p)] = dist[(v, q)] + 1
                    next_hop[(u, p)] = (v, q)
                    queue.append((u, p))
    sigma = {}
    for t in order:
        sigma[t] = min(dfa.subsets[t[1]] & sig)
    for vertex in sorted(next_hop, key=lambda x: (dist[x], node_key(x[0]), x[1])):
        v, q = next_hop[vertex]
        target = sigma[(v, q)]
        sigma[vertex] = min(s for s in dfa.subsets[vertex[1]]
                            if target in nfa.successors(s, v))
    tree = SinkTree(sink, cls, tuple(hosts), tuple(sids), nfa, dfa, next_hop, dist,
                    targets, sigma)
    for t in order:
        for h in hosts:
            tree.exits[(t, h)] = runs[h][sigma[t]]
    return tree


def _add_entry(tree, topology, host):
    """Join ``host`` to ``tree`` with the fewest product-graph steps."""
    switch = attachment(topology, host)
    if switch is None:
        return False
    dfa, nfa = tree.dfa, tree.nfa
    chain = [dfa.start]
    best = None
    for k in range(1, dfa.n_states + 1):
        nxt = dfa.successors(chain[-1], host)
        if not nxt:
            break
        (p,) = nxt
        chain.append(p)
        q = dfa.successors(p, switch)
        if q:
            (q,) = q
            if (switch, q) in tree.dist:
                cost = k + tree.dist[(switch, q)]
                if best is None or cost < best[0]:
                    best = (cost, k, p, (switch, q))
    if best is None:
        return False
    _, k, p, vertex = best
    # pick an NFA run through the host repetitions that lands on sigma(vertex)
    target = tree.sigma[vertex]
    states = [min(s for s in dfa.subsets[chain[k]] if target in nfa.successors(s, switch))]
    for i in range(k, 0, -1):
        states.append(min(s for s in dfa.subsets[chain[i - 1]]
                          if states[-1] in nfa.successors(s, host)))
    states.reverse()
    labels = tuple(nfa.choose_label(states[i], host, states[i + 1]) for i in range(k))
    tree.entries[host] = Entry(host, switch, p, labels, vertex)
    return True


def build_sink_trees(policy, topology, placement, guaranteed=(), strict=False):
    """Sink trees for every statement not listed in ``guaranteed``.

    Statements are grouped by their printed path expression.  Within a
    group, destination hosts at the same egress share a tree unless their
    acceptance behaviour differs (e.g. an expression naming a specific
    host), in which case each behaviour gets its own tree.
    """
    alphabet = topology.node_ids
    forwarders = set(topology.forwarders)
    classes = {}
    for st in policy.statements:
        if st.id in guaranteed:
            continue
        classes.setdefault(format_path(st.path), []).append(st)
    trees, unroutable, empty = [], [], []
    for cls in sorted(classes):
        stmts = classes[cls]
        nfa = compile_path(stmts[0].path, alphabet, placement)
        if nfa.is_empty():
            empty += [st.id for st in stmts]
            continue
        dfa = determinize(nfa, force=True)
        ends = {st.id: endpoint_hosts(st.predicate, topology) for st in stmts}
        dsts = sorted({d for s, d in ends.values() for d in d}, key=node_key)
        srcs = sorted({h for s, d in ends.values() for h in s}, key=node_key)
        runs = {h: _host_runs(nfa, h) for h in dsts}
        groups = {}
        for d in dsts:
            egress = attachment(topology, d)
            if egress is None:
                continue
            sig = frozenset(s for s, r in runs[d].items() if r is not None)
            groups.setdefault((egress, sig), []).append(d)
        class_trees = []
        for (egress, _), hosts in sorted(groups.items(),
                                         key=lambda kv: (node_key(kv[0][0]),
                                                         [node_key(h) for h in kv[1]])):
            sids = tuple(st.id for st in stmts if set(ends[st.id][1]) & set(hosts))
            tree = _build_tree(topology, forwarders, nfa, dfa, egress, hosts, runs, cls, sids)
            for h in srcs:
                _add_entry(tree, topology, h)
            class_trees.append(tree)
        for st in stmts:
            for s in ends[st.id][0]:
                for d in ends[st.id][1]:
                    if s == d:
                        continue
                    t = next((t for t in class_trees if d in t.hosts), None)
                    if t is None or s not in t.entries:
                        unroutable.append((st.id, s, d))
        trees += class_trees
    trees.sort(key=lambda t: t.key)
    if strict and (unroutable or empty):
        first = unroutable[0] if unroutable else (empty[0], None, None)
        raise BestEffortError(f"statement {first[0]}: no compliant route"
                              + (f" from {first[1]} to {first[2]}" if first[1] else ""))
    return BestEffortPlan(trees, unroutable, empty)
