"""Lower provisioning results into per-device rules and emit text configs.

Forwarding devices run two tables.  Table 0 classifies packets arriving
from a host (by ingress port, header fields and destination MAC) and pushes
a VLAN tag; table 1 forwards on the tag.  A tag names a route (a sink tree
or one guaranteed path) together with a phase, so routes that revisit a
device or change automaton state rewrite the tag as they go.  Ports are
named by the neighbouring node id.

File formats (all tab-separated, ``#`` starts a comment line):

``<device>.flows``      priority, match, actions
``<host>.filters``      direction (out|in), predicate, action
``queues.conf``         device, port, queue id, min rate (bytes/s), statement
``middlebox.manifest``  location, function
"""

import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Tuple

from . import predicates as preds
from .besteffort import attachment
from .localization import split_bound
from .logical import endpoint_hosts
from .syntax import FIELD_ORDER, Match, PAnd, format_predicate, format_value
from .topology import node_key
from .units import parse_ip, parse_mac

TAG_MIN, TAG_MAX = 2, 4094
PRIO_CLASSIFY = 100
PRIO_PER_FIELD = 10
PRIO_FORWARD = 10
PRIO_DELIVER = 20
MAX_EXPANSION = 1024


class CodegenError(Exception):
    pass


@dataclass(frozen=True)
class FlowRule:
    device: str
    table: int
    priority: int
    # ordered (name, value) pairs: in_port, vlan, then header fields
    match: Tuple[Tuple[str, object], ...]
    actions: Tuple[str, ...]

    def match_text(self):
        parts = [f"table={self.table}"]
        for name, value in self.match:
            if name in ("in_port", "vlan"):
                parts.append(f"{name}={value}")
            else:
                parts.append(f"{name}={format_value(name, value)}")
        return ",".join(parts)

    def line(self):
        return f"{self.priority}\t{self.match_text()}\t{','.join(self.actions)}"

    def matches(self, in_port, vlan, packet):
        for name, value in self.match:
            if name == "in_port":
                if in_port != value:
                    return False
            elif name == "vlan":
                if vlan != value:
                    return False
            elif packet.get(name) != value:
                return False
        return True


@dataclass(frozen=True)
class QueueConfig:
    device: str
    port: str
    queue: int
    min_rate: int
    statement: str

    def line(self):
        return f"{self.device}\t{self.port}\t{self.queue}\t{self.min_rate}\t{self.statement}"


@dataclass(frozen=True)
class HostFilter:
    host: str
    direction: str  # "out" (sent by the host) or "in" (received)
    predicate: object
    action: str     # allow | drop | rate-limit N | queue N [via DEV] | apply f1,f2

    def line(self):
        return f"{self.direction}\t{format_predicate(self.predicate)}\t{self.action}"


@dataclass
class DeviceProgram:
    device: str
    kind: str
    rules: List[FlowRule] = field(default_factory=list)
    queues: List[QueueConfig] = field(default_factory=list)
    filters: List[HostFilter] = field(default_factory=list)

    def sorted_rules(self):
        return sorted(self.rules, key=lambda r: (r.priority, r.match_text(), r.actions))

    def _buckets(self):
        if getattr(self, "_indexed", None) != len(self.rules):
            index = {}
            for r in sorted(self.rules, key=lambda r: (-r.priority, r.match_text(), r.actions)):
                first = r.match[0] if r.match and r.match[0][0] in ("in_port", "vlan") else None
                index.setdefault((r.table, first), []).append(r)
            self._index = index
            self._indexed = len(self.rules)
        return self._index

    def lookup(self, table, in_port, vlan, packet):
        """Highest-priority matching rule in ``table`` (ties: emitted order)."""
        index = self._buckets()
        best = None
        for key in ((table, ("in_port", in_port)), (table, ("vlan", vlan)), (table, None)):
            for r in index.get(key, ()):
                if best is not None and r.priority < best.priority:
                    break
                if r.matches(in_port, vlan, packet):
                    if (best is None or r.priority > best.priority
                            or (r.match_text(), r.actions) < (best.match_text(), best.actions)):
                        best = r
                    break
        return best


@dataclass
class ProgramSet:
    programs: Dict[str, DeviceProgram]
    tags: Dict[tuple, int] = field(default_factory=dict)
    manifest: List[Tuple[str, str]] = field(default_factory=list)

    def __getitem__(self, device):
        return self.programs[device]

    def rules(self):
        return [r for p in self.programs.values() for r in p.rules]

    def queues(self):
        return sorted((q for p in self.programs.values() for q in p.queues),
                      key=lambda q: (node_key(q.device), node_key(q.port), q.queue))

    def filters(self, host=None):
        progs = [self.programs[host]] if host else self.programs.values()
        return [f for p in progs for f in p.filters]

    def rule_counts(self):
        return {d: len(p.rules) for d, p in self.programs.items() if p.rules}


# ------------------------------------------------------------------ lowering

class _Tags:
    def __init__(self):
        self.tags = {}

    def get(self, key):
        if key not in self.tags:
            tag = TAG_MIN + len(self.tags)
            if tag > TAG_MAX:
                raise CodegenError(f"VLAN tag space exhausted ({TAG_MAX - TAG_MIN + 1} tags)")
            self.tags[key] = tag
        return self.tags[key]


def _match_variants(cube, dst_mac):
    """Flow-match field lists for one cube restricted to ``eth.dst = dst_mac``.

    Returns ``(variants, lossy)``; co-finite and header-absent constraints
    cannot be expressed in a match and are dropped, making the rule lossy.
    """
    if dst_mac not in cube.get("eth.dst"):
        return [], False
    lossy = False
    options = []
    for name in FIELD_ORDER:
        if name == "eth.dst":
            options.append([(name, dst_mac)])
            continue
        vs = cube.get(name)
        if vs.negated:
            if vs.values:
                lossy = True
            continue
        if None in vs.values:
            lossy = True
            continue
        options.append([(name, v) for v in sorted(vs.values)])
    total = 1
    for o in options:
        total *= len(o)
    if total > MAX_EXPANSION:
        raise CodegenError(f"predicate expands to {total} match combinations")
    return [tuple(combo) for combo in itertools.product(*options)], lossy


class _Classifier:
    """Table-0 rules plus the bookkeeping needed to validate lossy matches."""

    def __init__(self, programs, topology):
        self.programs = programs
        self.topology = topology
        self.groups = {}

    def add(self, device, in_port, dst, statement, tag):
        dst_mac = self.topology.node(dst).mac
        for cube in preds.to_dnf(statement.predicate):
            cube = cube.tightened()
            variants, lossy = _match_variants(cube, dst_mac)
            for fields in variants:
                prio = PRIO_CLASSIFY + PRIO_PER_FIELD * (len(fields) - 1)
                rule = FlowRule(device, 0, prio, (("in_port", in_port),) + fields,
                                (f"push_vlan:{tag}", "goto:1"))
                self.programs[device].rules.append(rule)
                relaxed = preds.Cube({n: preds.ValueSet.only(v) for n, v in fields}).tightened()
                self.groups.setdefault((device, in_port, dst), []).append(
                    (prio, relaxed, lossy, statement))

    def _withheld(self, host, device):
        """Cubes of traffic ``host`` never sends to ``device``: dropped, or
        queued out through another attachment."""
        prog = self.programs.get(host)
        if prog is None:
            return []
        out = []
        for f in prog.filters:
            if f.direction != "out":
                continue
            if f.action == "drop" or egress_of(f.action, self.topology, host) not in (None, device):
                out += preds.to_dnf(f.predicate)
        return out

    def validate(self):
        """Every packet a rule wins must belong to the rule's statement."""
        for (device, in_port, dst), rules in sorted(self.groups.items()):
            if not any(lossy for _, _, lossy, _ in rules):
                continue
            rules = sorted(rules, key=lambda r: -r[0])
            for prio, relaxed, lossy, st in rules:
                if not lossy:
                    continue
                higher = [r[1] for r in rules if r[0] > prio]
                # a host only sends with its own addresses
                sender = self.topology.node(in_port)
                own = preds.Cube({"eth.src": preds.ValueSet.only(sender.mac),
                                  "ip.src": preds.ValueSet.only(sender.ip)})
                start = [c for c in [relaxed.intersect(own).tightened()] if c.is_sat()]
                # nor does a switch see what the host drops or sends elsewhere
                gone = higher + self._withheld(in_port, device)
                won = preds.dnf_subtract(start, gone) if gone else start
                if not preds.dnf_included(won, preds.to_dnf(st.predicate)):
                    raise CodegenError(
                        f"{device}: match for statement {st.id} from {in_port} to {dst} "
                        "cannot be expressed without capturing other traffic")


def egress_of(action, topology, host):
    """Device a ``queue`` filter sends through; None for other actions."""
    if not action.startswith("queue "):
        return None
    parts = action.split()
    return parts[3] if len(parts) == 4 and parts[2] == "via" else attachment(topology, host)


def _collapse(locs, fns):
    segs = []
    for loc, fn in zip(locs, fns):
        if segs and segs[-1][0] == loc:
            if fn:
                segs[-1][1].append(fn)
        else:
            segs.append([loc, [fn] if fn else []])
    return segs


def lower(policy, topology, placement=None, solution=None, plan=None, localized=None):
    """Build device programs for a compiled policy.

    ``solution`` carries guaranteed paths, ``plan`` the best-effort sink
    trees and ``localized`` the per-statement rate terms.
    """
    programs = {n: DeviceProgram(n, topology.kind(n)) for n in topology.node_ids}
    tags = _Tags()
    classifier = _Classifier(programs, topology)
    manifest = set()
    stmts = {st.id: st for st in policy.statements}
    ends = {st.id: endpoint_hosts(st.predicate, topology) for st in policy.statements}
    host_fns = {}

    def host_filter(host, direction, pred, action):
        programs[host].filters.append(HostFilter(host, direction, pred, action))

    def dst_pred(st, dst):
        pin = Match("eth.dst", topology.node(dst).mac)
        return st.predicate if preds.implies(st.predicate, pin) else PAnd(st.predicate, pin)

    def note_host_functions(sid, src, dst, segs):
        if segs[0][1]:
            host_filter(src, "out", dst_pred(stmts[sid], dst), "apply " + ",".join(segs[0][1]))
        if segs[-1][1]:
            host_fns.setdefault((sid, dst), set()).add(tuple(segs[-1][1]))
        for loc, fs in segs:
            for f in fs:
                manifest.add((loc, f))

    # best-effort sink trees
    for ti, tree in enumerate(plan.trees if plan else []):
        pairs = []
        for sid in tree.statements:
            srcs, dsts = ends[sid]
            for s in srcs:
                for d in dsts:
                    if d in tree.hosts and s != d and s in tree.entries:
                        pairs.append((sid, s, d))
        used = {s for _, s, _ in pairs}
        hops = tree.hops(used)
        states = sorted({tree.entries[s].state for s in used}
                        | {h.state for h in hops} | {h.out_state for h in hops if h.next})
        for q in states:
            tags.get(("tree", ti, q))
        for hop in hops:
            tag = tags.get(("tree", ti, hop.state))
            acts = tuple(f"apply:{f}" for f in hop.functions)
            if hop.next is not None:
                if hop.out_state != hop.state:
                    acts += (f"set_vlan:{tags.get(('tree', ti, hop.out_state))}",)
                programs[hop.node].rules.append(
                    FlowRule(hop.node, 1, PRIO_FORWARD, (("vlan", tag),), acts + (f"output:{hop.next}",)))
            else:
                for h in tree.hosts:
                    programs[hop.node].rules.append(
                        FlowRule(hop.node, 1, PRIO_DELIVER,
                                 (("vlan", tag), ("eth.dst", topology.node(h).mac)),
                                 acts + ("pop_vlan", f"output:{h}")))
        for sid, s, d in pairs:
            entry = tree.entries[s]
            classifier.add(entry.switch, s, d, stmts[sid], tags.get(("tree", ti, entry.state)))
            note_host_functions(sid, s, d, _collapse(*tree.walk(s, d)))

    # guaranteed paths
    if solution is not None:
        queue_ids = {}
        for sid, locs in solution.paths.items():
            segs = _collapse(locs, solution.functions[sid])
            src, dst = segs[0][0], segs[-1][0]
            rate = solution.guarantees[sid]
            qids = []
            for (a, _), (b, _) in zip(segs, segs[1:]):
                if not topology.node(a).queues:
                    raise CodegenError(f"device {a} has no queue support but carries "
                                       f"a guarantee for statement {sid}")
                qid = queue_ids[(a, b)] = queue_ids.get((a, b), 0) + 1
                programs[a].queues.append(QueueConfig(a, b, qid, rate, sid))
                qids.append(qid)
            action = f"queue {qids[0]}"
            if segs[1][0] != attachment(topology, src):
                action += f" via {segs[1][0]}"
            host_filter(src, "out", dst_pred(stmts[sid], dst), action)
            note_host_functions(sid, src, dst, segs)
            middle = segs[1:-1]
            if not middle:
                continue
            phases, phase, seen = [], 0, set()
            for node, _ in middle:
                if node in seen:
                    phase += 1
                    seen = set()
                seen.add(node)
                phases.append(phase)
            for p in sorted(set(phases)):
                tags.get(("path", sid, p))
            classifier.add(middle[0][0], src, dst, stmts[sid], tags.get(("path", sid, phases[0])))
            for i, (node, fs) in enumerate(middle):
                acts = tuple(f"apply:{f}" for f in fs)
                nxt = segs[i + 2][0]
                if i + 1 < len(middle):
                    if phases[i + 1] != phases[i]:
                        acts += (f"set_vlan:{tags.get(('path', sid, phases[i + 1]))}",)
                else:
                    acts += ("pop_vlan",)
                acts += (f"enqueue:{nxt}:{qids[i + 1]}",)
                programs[node].rules.append(
                    FlowRule(node, 1, PRIO_FORWARD, (("vlan", tags.get(("path", sid, phases[i]))),),
                             acts))

    # traffic with no compliant route is dropped at the sender
    if plan is not None:
        for sid in plan.empty:
            for h in ends[sid][0]:
                host_filter(h, "out", stmts[sid].predicate, "drop")
        for sid, s, d in plan.unroutable:
            host_filter(s, "out", dst_pred(stmts[sid], d), "drop")

    classifier.validate()

    # receiving-side functions at destination hosts
    for (sid, dst), options in sorted(host_fns.items()):
        if len(options) > 1:
            raise CodegenError(f"statement {sid}: traffic to {dst} needs different functions "
                               "depending on its source")
        (fs,) = options
        host_filter(dst, "in", dst_pred(stmts[sid], dst), "apply " + ",".join(fs))

    # caps become rate limits at the sending hosts, split evenly among them
    for atom in (localized.max_atoms() if localized else []):
        srcs = ends.get(atom.sid, ([], []))[0]
        if not srcs:
            continue
        shares = split_bound(atom.rate, srcs)
        for h in srcs:
            host_filter(h, "out", stmts[atom.sid].predicate, f"rate-limit {shares[h]}")

    return ProgramSet(programs, dict(tags.tags), sorted(manifest, key=lambda e: (node_key(e[0]), e[1])))


# ------------------------------------------------------------------ emission

BACKENDS = ("flow-table", "host-filter", "middlebox-manifest")


def render(programs, backends=BACKENDS):
    """File name -> text for every output file."""
    files = {}
    if "flow-table" in backends:
        for dev, prog in programs.programs.items():
            if prog.kind == "host":
                continue
            lines = ["# priority\tmatch\tactions"] + [r.line() for r in prog.sorted_rules()]
            files[f"{dev}.flows"] = "\n".join(lines) + "\n"
        lines = ["# device\tport\tqueue\tmin_rate\tstatement"]
        lines += [q.line() for q in programs.queues()]
        files["queues.conf"] = "\n".join(lines) + "\n"
    if "host-filter" in backends:
        for dev, prog in programs.programs.items():
            if prog.kind != "host":
                continue
            lines = ["# direction\tpredicate\taction"] + sorted(f.line() for f in prog.filters)
            files[f"{dev}.filters"] = "\n".join(lines) + "\n"
    if "middlebox-manifest" in backends:
        lines = ["# location\tfunction"] + [f"{loc}\t{fn}" for loc, fn in programs.manifest]
        files["middlebox.manifest"] = "\n".join(lines) + "\n"
    return files


def emit(programs, outdir, backends=BACKENDS):
    out = Path(outdir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        files = render(programs, backends)
        for name in sorted(files):
            (out / name).write_text(files[name])
    except OSError as exc:
        raise CodegenError(f"cannot write to {outdir}: {exc}") from None
    return sorted(files)


def _parse_match_value(name, text):
    if name == "in_port":
        return text
    if name in ("vlan", "table"):
        return int(text)
    if name in ("eth.src", "eth.dst"):
        return parse_mac(text)
    if name in ("ip.src", "ip.dst"):
        return parse_ip(text)
    return int(text, 0)


def _data_lines(path):
    for line in Path(path).read_text().splitlines():
        if line and not line.startswith("#"):
            yield line.split("\t")


def load_programs(outdir):
    """Read emitted files back into a :class:`ProgramSet`."""
    from .frontend import parse_predicate

    out = Path(outdir)
    programs = {}
    for path in sorted(out.glob("*.flows")):
        dev = path.stem
        prog = programs[dev] = DeviceProgram(dev, "switch")
        for prio, match, actions in _data_lines(path):
            fields = []
            table = 0
            for part in match.split(","):
                name, _, value = part.partition("=")
                if name == "table":
                    table = int(value)
                else:
                    fields.append((name, _parse_match_value(name, value)))
            prog.rules.append(FlowRule(dev, table, int(prio), tuple(fields),
                                       tuple(actions.split(",")) if actions else ()))
    for path in sorted(out.glob("*.filters")):
        dev = path.stem
        prog = programs[dev] = DeviceProgram(dev, "host")
        for direction, pred, action in _data_lines(path):
            prog.filters.append(HostFilter(dev, direction, parse_predicate(pred), action))
    qpath = out / "queues.conf"
    if qpath.exists():
        for dev, port, qid, rate, sid in _data_lines(qpath):
            programs.setdefault(dev, DeviceProgram(dev, "switch")).queues.append(
                QueueConfig(dev, port, int(qid), int(rate), sid))
    manifest = []
    mpath = out / "middlebox.manifest"
    if mpath.exists():
        manifest = [tuple(parts) for parts in _data_lines(mpath)]
    return ProgramSet(programs, {}, manifest)
