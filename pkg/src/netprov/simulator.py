"""Packet replay through compiled programs and a fluid bandwidth model.

Replay walks one header through host filters and the two flow tables of
each forwarding device, following tag pushes, rewrites and pops until the
packet is delivered to a host.

The fluid model works per epoch.  Every flow's path comes from replaying a
representative packet.  Guaranteed flows get a floor (their queue's share
of the offered load); rates are then raised by progressive filling on the
total rate, so a flow is never pushed below its floor and otherwise gets
the max-min fair share.  Links and per-host rate limiters are the shared
resources.  All arithmetic is exact (``Fraction``).
"""

import csv
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Tuple

from . import predicates as preds
from .besteffort import attachment
from .codegen import egress_of
from .syntax import Match, PAnd
from .topology import link_key, node_key


class ReplayError(Exception):
    pass


class SimulationError(Exception):
    pass


# ------------------------------------------------------------------ replay

@dataclass
class ReplayResult:
    # (location, functions applied there), consecutive duplicates collapsed
    segments: List[Tuple[str, Tuple[str, ...]]]
    # (device, action) in execution order
    actions: List[Tuple[str, str]]
    dropped: bool = False
    # (host, port, queue id) selected by the sender, if any
    queue: Optional[Tuple[str, str, int]] = None
    # indices of the sender's rate-limit filters that matched
    limiters: Tuple[Tuple[str, int], ...] = ()

    @property
    def locations(self):
        return [loc for loc, _ in self.segments]

    @property
    def destination(self):
        return None if self.dropped else self.segments[-1][0]

    def links(self):
        """Undirected link crossings in order; repeats are kept."""
        locs = self.locations
        return [link_key(a, b) for a, b in zip(locs, locs[1:])]

    def hops(self):
        """Directed link crossings in order; repeats are kept."""
        locs = self.locations
        return list(zip(locs, locs[1:]))


def _filter_hits(program, direction, packet):
    if program is None:
        return []
    return [(i, f) for i, f in enumerate(sorted(program.filters, key=lambda f: f.line()))
            if f.direction == direction and preds.evaluate(f.predicate, packet)]


def _functions(action):
    return tuple(action[len("apply "):].split(","))


def replay_packet(programs, packet, src, topology):
    """Send ``packet`` (field -> value) from host ``src``."""
    segments = [[src, []]]
    actions = []
    queue, limiters, device = None, [], attachment(topology, src)
    for i, f in _filter_hits(programs.programs.get(src), "out", packet):
        actions.append((src, f.action))
        if f.action == "drop":
            return ReplayResult([(src, ())], actions, dropped=True)
        if f.action.startswith("apply "):
            segments[0][1].extend(_functions(f.action))
        elif f.action.startswith("queue "):
            queue = int(f.action.split()[1])
            device = egress_of(f.action, topology, src)
        elif f.action.startswith("rate-limit "):
            limiters.append((src, i))
    if device is None:
        raise ReplayError(f"host {src} is not attached to any device")
    if device not in topology.neighbors(src):
        raise ReplayError(f"host {src} queues traffic via {device}, which is not a neighbour")
    in_port, vlan = src, None
    seen = set()
    while True:
        if (device, in_port if vlan is None else None, vlan) in seen:
            raise ReplayError(f"forwarding loop at {device} (vlan {vlan})")
        seen.add((device, in_port if vlan is None else None, vlan))
        prog = programs.programs.get(device)
        if prog is None:
            raise ReplayError(f"{device}: no program installed")
        if device != segments[-1][0]:
            segments.append([device, []])
        table = 0 if vlan is None else 1
        out = None
        while out is None:
            rule = prog.lookup(table, in_port, vlan, packet)
            if rule is None:
                raise ReplayError(f"{device}: no rule matches packet in table {table} "
                                  f"(in_port={in_port}, vlan={vlan})")
            goto = None
            for act in rule.actions:
                actions.append((device, act))
                name, _, arg = act.partition(":")
                if name in ("push_vlan", "set_vlan"):
                    vlan = int(arg)
                elif name == "pop_vlan":
                    vlan = None
                elif name == "apply":
                    segments[-1][1].append(arg)
                elif name == "goto":
                    goto = int(arg)
                elif name == "output":
                    out = arg
                elif name == "enqueue":
                    out = arg.rsplit(":", 1)[0]
                else:
                    raise ReplayError(f"{device}: unknown action {act!r}")
            if out is None:
                if goto is None or goto == table:
                    raise ReplayError(f"{device}: rule has no output action")
                table = goto
        if out not in topology.neighbors(device):
            raise ReplayError(f"{device}: output to {out}, which is not a neighbour")
        if topology.kind(out) == "host":
            if vlan is not None:
                raise ReplayError(f"{device}: packet delivered to {out} still tagged")
            segments.append([out, []])
            for _, f in _filter_hits(programs.programs.get(out), "in", packet):
                actions.append((out, f.action))
                if f.action.startswith("apply "):
                    segments[-1][1].extend(_functions(f.action))
            break
        in_port, device = device, out
    if queue is not None:
        queue = (src, segments[1][0], queue)
    return ReplayResult([(loc, tuple(fs)) for loc, fs in segments], actions,
                        queue=queue, limiters=tuple(limiters))


def trace_accepted(automaton, segments):
    """Does some stuttering of the replayed trace satisfy ``automaton``?

    Each segment ``(loc, (f1, ..., fk))`` stands for one or more visits to
    ``loc`` applying exactly ``f1 .. fk`` in that order (other visits apply
    nothing).
    """
    def advance(states, loc, fn):
        return {r for q in states for r in automaton.successors(q, loc)
                if fn in automaton.label_options(q, loc, r)}

    def idle(states, loc):
        out = set(states)
        frontier = set(states)
        while frontier:
            frontier = advance(frontier, loc, None) - out
            out |= frontier
        return out

    cur = {automaton.start}
    for loc, fns in segments:
        if fns:
            cur = idle(cur, loc)
            for fn in fns:
                cur = idle(advance(cur, loc, fn), loc)
        else:
            cur = idle(advance(cur, loc, None), loc)
        if not cur:
            return False
    return bool(cur & automaton.accepting)


def flow_packet(statement, topology, src, dst):
    """A header matching ``statement`` sent from ``src`` to ``dst``, or None."""
    s, d = topology.node(src), topology.node(dst)
    pinned = PAnd(PAnd(Match("eth.src", s.mac), Match("eth.dst", d.mac)),
                  PAnd(Match("ip.src", s.ip), Match("ip.dst", d.ip)))
    return preds.witness(PAnd(statement.predicate, pinned))


# ------------------------------------------------------------------ fluid model

@dataclass(frozen=True)
class FlowDemand:
    flow: str
    statement: str
    src: str
    dst: str
    rate: int
    start: float = 0
    stop: float = float("inf")

    def active(self, t):
        return self.start <= t < self.stop


@dataclass
class SimResult:
    epoch: float
    times: List[float]
    # per epoch: flow id -> achieved rate
    rates: List[Dict[str, Fraction]]
    # per epoch: link (u, v) in canonical order -> carried load, both directions
    utilization: List[Dict[Tuple[str, str], Fraction]]
    paths: Dict[str, Optional[List[str]]]
    violations: List[Tuple[float, str, str]] = field(default_factory=list)

    def rate(self, flow, epoch=0):
        return self.rates[epoch].get(flow, Fraction(0))


def water_fill(demands, resources, floors=None):
    """Max-min fair rates with per-flow floors.

    ``demands``: flow -> offered rate; ``resources``: name -> (capacity,
    flows using it); ``floors``: flow -> guaranteed minimum (at most the
    demand).  Rates rise together from their floors; a flow stops when it
    reaches its demand or a resource it uses is full.
    """
    floors = floors or {}
    d = {f: Fraction(v) for f, v in demands.items()}
    g = {f: min(Fraction(floors.get(f, 0)), d[f]) for f in d}
    for name, (cap, flows) in resources.items():
        if sum(g[f] for f in flows) > cap:
            raise SimulationError(f"guaranteed floors exceed the capacity of {name}")
    frozen = {}
    level = Fraction(0)

    def rate(f, lam):
        return min(d[f], max(g[f], lam))

    while len(frozen) < len(d):
        best = None
        for name in sorted(resources, key=str):
            cap, flows = resources[name]
            live = [f for f in flows if f not in frozen]
            if not live:
                continue
            base = sum(frozen[f] for f in flows if f in frozen)
            if base + sum(d[f] for f in live) <= cap:
                continue
            lam = _saturation_level(cap - base, [(g[f], d[f]) for f in live], level)
            if best is None or lam < best[0]:
                best = (lam, [name])
            elif lam == best[0]:
                best[1].append(name)
        if best is None:
            for f in d:
                frozen.setdefault(f, d[f])
            break
        level = best[0]
        for name in best[1]:
            for f in resources[name][1]:
                if f not in frozen:
                    frozen[f] = rate(f, level)
    return frozen


def _saturation_level(cap, bounds, start):
    """Smallest lam >= start with sum(min(d, max(g, lam))) >= cap."""
    def load(lam):
        return sum(min(dv, max(gv, lam)) for gv, dv in bounds)

    if load(start) >= cap:
        return start
    points = sorted({start} | {v for gv, dv in bounds for v in (gv, dv) if v > start})
    for lo, hi in zip(points, points[1:]):
        if load(hi) >= cap:
            slope = sum(1 for gv, dv in bounds if gv <= lo and dv >= hi)
            return lo + (cap - load(lo)) / slope
    raise AssertionError("resource never saturates")


def _queue_rates(programs):
    out = {}
    for prog in programs.programs.values():
        for q in prog.queues:
            out[(q.device, q.port, q.queue)] = (q.min_rate, q.statement)
    return out


def _limiter_rates(programs):
    out = {}
    for host, prog in programs.programs.items():
        for i, f in enumerate(sorted(prog.filters, key=lambda f: f.line())):
            if f.action.startswith("rate-limit "):
                out[(host, i)] = int(f.action.split()[1])
    return out


def simulate(programs, topology, demands, policy, epoch=1, epochs=None):
    """Replay ``demands`` (a list of :class:`FlowDemand`) epoch by epoch."""
    stmts = {st.id: st for st in policy.statements}
    queues = _queue_rates(programs)
    limits = _limiter_rates(programs)
    routes = {}
    for dm in demands:
        if dm.statement not in stmts:
            raise SimulationError(f"flow {dm.flow}: unknown statement {dm.statement}")
        for h in (dm.src, dm.dst):
            if h not in topology.node_ids or topology.kind(h) != "host":
                raise SimulationError(f"flow {dm.flow}: {h} is not a host")
        if dm.flow in routes:
            raise SimulationError(f"duplicate flow id {dm.flow}")
        pkt = flow_packet(stmts[dm.statement], topology, dm.src, dm.dst)
        if pkt is None:
            raise SimulationError(f"flow {dm.flow}: statement {dm.statement} matches no "
                                  f"traffic from {dm.src} to {dm.dst}")
        routes[dm.flow] = replay_packet(programs, pkt, dm.src, topology)
    if epochs is None:
        finite = [dm.stop for dm in demands if dm.stop != float("inf")]
        horizon = max(finite + [dm.start + epoch for dm in demands] + [epoch])
        epochs = -int(-horizon // epoch)
    result = SimResult(epoch, [], [], [], {
        f: (None if r.dropped else r.locations) for f, r in routes.items()})
    for k in range(epochs):
        t = k * epoch
        active = {dm.flow: dm for dm in demands
                  if dm.active(t) and not routes[dm.flow].dropped
                  and routes[dm.flow].destination == dm.dst}
        for dm in demands:
            r = routes[dm.flow]
            if dm.active(t) and not r.dropped and r.destination != dm.dst:
                result.violations.append((t, dm.flow, f"delivered to {r.destination}"))
        resources = {}
        for f in sorted(active):
            # both directions share the link's capacity; a flow crossing a
            # link twice loads it twice
            for link in routes[f].links():
                resources.setdefault(("link",) + link, (topology.capacity(*link), []))[1].append(f)
            for lim in routes[f].limiters:
                resources.setdefault(("limit",) + lim, (limits[lim], []))[1].append(f)
        groups = defaultdict(list)
        for f in sorted(active):
            if routes[f].queue is not None:
                groups[routes[f].queue].append(f)
        floors = {}
        for q, flows in groups.items():
            if q not in queues:
                raise SimulationError(f"flow {flows[0]}: queue {q} is not configured")
            share = water_fill({f: active[f].rate for f in flows},
                               {"queue": (queues[q][0], flows)})
            floors.update(share)
        rates = water_fill({f: active[f].rate for f in active}, resources, floors)
        util = {}
        for (kind, *rest), (cap, flows) in sorted(resources.items(), key=str):
            if kind == "link":
                load = sum(rates[f] for f in flows)
                util[tuple(rest)] = load
                if load > cap:
                    result.violations.append((t, "-".join(rest), "capacity exceeded"))
            elif sum(rates[f] for f in flows) > cap:
                result.violations.append((t, rest[0], "cap exceeded"))
        for f, share in floors.items():
            if rates[f] < share:
                result.violations.append((t, f, "guarantee unmet"))
        result.times.append(t)
        result.rates.append({f: rates.get(f, Fraction(0)) for f in sorted(routes, key=node_key)})
        result.utilization.append(util)
    return result


# ------------------------------------------------------------------ CSV

DEMAND_COLUMNS = ("flow", "statement", "src", "dst", "rate", "start", "stop")


def read_demands(path):
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            try:
                out.append(FlowDemand(row["flow"], row["statement"], row["src"], row["dst"],
                                      int(row["rate"]), float(row.get("start") or 0),
                                      float(row.get("stop") or "inf")))
            except (KeyError, ValueError) as exc:
                raise SimulationError(f"{path}: bad demand row {row}: {exc}") from None
    return out


def format_rate_value(x):
    x = Fraction(x)
    return str(x.numerator) if x.denominator == 1 else str(x)


def write_results(result, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("time", "flow", "rate"))
        for t, rates in zip(result.times, result.rates):
            for f, r in rates.items():
                w.writerow((format_time(t), f, format_rate_value(r)))


def format_time(t):
    return str(int(t)) if float(t).is_integer() else repr(float(t))
