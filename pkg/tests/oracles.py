"""Brute-force reference implementations.

Nothing here imports the package's automata, solvers or allocators; each
oracle recomputes its answer from definitions by exhaustive search.
"""

import itertools
from fractions import Fraction

from netprov.syntax import Alt, Dot, Neg, Seq, Star, Sym


# ------------------------------------------------------------ regex matching

def _spans(expr, n, sym, dot):
    """All (i, j) such that positions i..j-1 spell a word of ``expr``;
    ``sym(name, i)`` and ``dot(i)`` decide single positions."""
    if isinstance(expr, Dot):
        return {(i, i + 1) for i in range(n) if dot(i)}
    if isinstance(expr, Sym):
        return {(i, i + 1) for i in range(n) if sym(expr.name, i)}
    if isinstance(expr, Alt):
        return _spans(expr.left, n, sym, dot) | _spans(expr.right, n, sym, dot)
    if isinstance(expr, Seq):
        left = _spans(expr.left, n, sym, dot)
        right = _spans(expr.right, n, sym, dot)
        return {(i, k) for i, j in left for j2, k in right if j == j2}
    if isinstance(expr, Star):
        inner = _spans(expr.arg, n, sym, dot)
        reach = {(i, i) for i in range(n + 1)}
        while True:
            more = {(i, k) for i, j in reach for j2, k in inner if j == j2} - reach
            if not more:
                return reach
            reach |= more
    if isinstance(expr, Neg):
        every = {(i, j) for i in range(n + 1) for j in range(i, n + 1)}
        return every - _spans(expr.arg, n, sym, dot)
    raise TypeError(expr)


def regex_matches(expr, word, placement=None):
    """Membership of a location sequence; a function name matches any
    location where it is placed."""
    word = tuple(word)
    placement = dict(placement or {})

    def sym(name, i):
        return word[i] == name or word[i] in placement.get(name, ())

    return (0, len(word)) in _spans(expr, len(word), sym, lambda i: True)


def labeled_matches(expr, visits, placement):
    """Membership of a sequence of ``(location, function or None)`` visits:
    locations and ``.`` match visits that apply nothing, a function name
    matches a visit applying it at one of its locations."""
    visits = tuple(visits)

    def sym(name, i):
        loc, fn = visits[i]
        if name in placement:
            return fn == name and loc in placement[name]
        return fn is None and loc == name

    def dot(i):
        return visits[i][1] is None

    return (0, len(visits)) in _spans(expr, len(visits), sym, dot)


def replay_matches(expr, segments, placement, extra=1):
    """Does some expansion of replayed segments match?  A segment visits its
    location once per applied function (or once if none), plus up to
    ``extra`` idle visits."""
    options = []
    for loc, fns in segments:
        base = [(loc, f) for f in fns] or [(loc, None)]
        opts = []
        for k in range(extra + 1):
            for at in range(len(base) + 1):
                opts.append(tuple(base[:at] + [(loc, None)] * k + base[at:]))
        options.append(list(dict.fromkeys(opts)))
    return any(labeled_matches(expr, [v for part in combo for v in part], placement)
               for combo in itertools.product(*options))


# ------------------------------------------------------------ walks

def walks(topology, max_len):
    """Location sequences of length 1..max_len; consecutive entries are
    equal (staying put) or adjacent."""
    nodes = topology.node_ids
    out = [(v,) for v in nodes]
    frontier = list(out)
    for _ in range(max_len - 1):
        nxt = []
        for w in frontier:
            u = w[-1]
            for v in nodes:
                if v == u or topology.adjacent(u, v):
                    nxt.append(w + (v,))
        out += nxt
        frontier = nxt
    return out


def product_projections(graph, max_len):
    """Projections of source-to-sink walks through a product graph that
    visit at most ``max_len`` locations."""
    found = set()
    frontier = set()
    for e in graph.edges:
        if e.tail == graph.source:
            frontier.add(((graph.describe(e.head)[0],), e.head))
    depth = 1
    while frontier:
        nxt = set()
        for word, v in frontier:
            for k in graph.out_edges[v]:
                e = graph.edges[k]
                if e.head == graph.sink:
                    found.add(word)
                elif depth < max_len:
                    nxt.add((word + (graph.describe(e.head)[0],), e.head))
        frontier = nxt
        depth += 1
    return found


# ------------------------------------------------------------ path selection

def simple_paths(graph, limit=None):
    """Vertex-simple source-to-sink paths of a product graph, as location lists."""
    out = []
    stack = [(graph.source, [], {graph.source})]
    while stack:
        v, locs, seen = stack.pop()
        for k in graph.out_edges[v]:
            e = graph.edges[k]
            if e.head == graph.sink:
                out.append(locs)
                if limit is not None and len(out) > limit:
                    return None
            elif e.head not in seen:
                stack.append((e.head, locs + [graph.describe(e.head)[0]], seen | {e.head}))
    return out


def objective_values(paths, rates, capacity):
    """Exact objective values of one path per statement, and feasibility."""
    load = {}
    hops = 0
    for walk, rate in zip(paths, rates):
        for u, v in zip(walk, walk[1:]):
            if u != v:
                key = tuple(sorted((u, v)))
                load[key] = load.get(key, 0) + rate
                hops += rate
    feasible = all(load[k] <= capacity(*k) for k in load)
    return {
        "shortest": Fraction(hops),
        "minmax-ratio": max((Fraction(r, capacity(*k)) for k, r in load.items()),
                            default=Fraction(0)),
        "minmax-reserved": Fraction(max(load.values(), default=0)),
    }, feasible


def best_assignment(candidates, rates, capacity, objective):
    """Minimum objective over every combination of candidate paths; None if
    no combination fits the capacities."""
    best = None
    for combo in itertools.product(*candidates):
        values, ok = objective_values(combo, rates, capacity)
        if ok and (best is None or values[objective] < best):
            best = values[objective]
    return best


# ------------------------------------------------------------ bandwidth

def max_min_fair(demands, capacity):
    """Water-filling on a single link: raise every unsatisfied flow at the
    same pace until it is satisfied or the link is full."""
    alloc = {f: Fraction(0) for f in demands}
    left = Fraction(capacity)
    active = {f for f, d in demands.items() if d > 0}
    while active and left > 0:
        step = left / len(active)
        need = min(Fraction(demands[f]) - alloc[f] for f in active)
        inc = min(step, need)
        for f in active:
            alloc[f] += inc
        left -= inc * len(active)
        active = {f for f in active if alloc[f] < demands[f]}
    return alloc


def aimd_round(alloc, demand, capacity, alpha, beta):
    """Scalar recurrence per flow: x' = x + alpha while demand keeps up,
    x' = demand once it falls behind, x' = beta * x for the growers on
    overflow."""
    grow = {f: demand[f] >= alloc[f] for f in alloc}
    nxt = {f: alloc[f] + alpha if grow[f] else demand[f] for f in alloc}
    if sum(nxt.values()) > capacity:
        nxt = {f: beta * alloc[f] if grow[f] else demand[f] for f in alloc}
    return nxt


def progressive_filling(demands, resources):
    """Textbook max-min fairness over several shared resources: all
    unfrozen flows grow together; a flow freezes when satisfied or when a
    resource it crosses fills up.  ``resources``: name -> (capacity, flows),
    a flow listed twice loads the resource twice."""
    rate = {f: Fraction(0) for f in demands}
    frozen = {f for f, d in demands.items() if d == 0}
    while len(frozen) < len(rate):
        grow = [f for f in rate if f not in frozen]
        step = min(Fraction(demands[f]) - rate[f] for f in grow)
        for cap, flows in resources.values():
            k = sum(1 for f in flows if f not in frozen)
            if k:
                step = min(step, (cap - sum(rate[f] for f in flows)) / k)
        for f in grow:
            rate[f] += step
        for cap, flows in resources.values():
            if sum(rate[f] for f in flows) >= cap:
                frozen |= set(flows)
        frozen |= {f for f in rate if rate[f] >= demands[f]}
    return rate
