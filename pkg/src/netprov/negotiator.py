"""Delegation, refinement checking and run-time bandwidth adaptation.

A refined policy is accepted when it only narrows what the original allows:
its statements cover every packet the original's statements identify, each
refined path language is included in the language of every original
statement it overlaps, and its bandwidth terms imply the original's.

Adaptation runs in-process: a tree of negotiators exchanges explicit
messages (propose, verify, grant, deny) once per tick and re-divides the
capacity each node was granted among its children, by AIMD or by max-min
fair sharing.
"""

import csv
import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Tuple

from . import predicates as preds
from .automata import compile_path, includes, symbolic_alphabet
from .localization import conjunctive_atoms
from .syntax import (Max, PAnd, Policy, Star, Statement, Term, alt_of,
                     conjoin_formulas, format_path, path_intersection, Sym)
from .units import RATE_UNITS

DEFAULT_ALPHA = RATE_UNITS["MB/s"]
DEFAULT_BETA = Fraction(1, 2)
EXACT_SEARCH_LIMIT = 16


class DelegationError(ValueError):
    pass


# ------------------------------------------------------------------ verification

@dataclass(frozen=True)
class Rejection:
    kind: str  # "partition" | "paths" | "bandwidth"
    original: Optional[str]
    refined: Optional[str]
    message: str
    counterexample: Optional[Tuple[str, ...]] = None
    witness: Optional[dict] = None

    def as_dict(self):
        out = {"kind": self.kind, "original": self.original, "refined": self.refined,
               "message": self.message}
        if self.counterexample is not None:
            out["counterexample"] = list(self.counterexample)
        return out


@dataclass(frozen=True)
class Verdict:
    reasons: Tuple[Rejection, ...] = ()

    @property
    def accepted(self):
        return not self.reasons

    @property
    def kinds(self):
        return sorted({r.kind for r in self.reasons})

    def as_dict(self):
        return {"accepted": self.accepted, "reasons": [r.as_dict() for r in self.reasons]}


class _PathOracle:
    """Caches compiled automata for repeated inclusion queries."""

    def __init__(self, topology=None, placement=None):
        self.topology = topology
        self.placement = placement
        self.cache = {}

    def check(self, inner, outer):
        key = (format_path(inner), format_path(outer))
        if key not in self.cache:
            if self.topology is not None:
                alphabet = self.topology.node_ids
                a = compile_path(inner, alphabet, self.placement)
                b = compile_path(outer, alphabet, self.placement)
            else:
                alphabet = symbolic_alphabet(inner, outer)
                a = compile_path(inner, alphabet)
                b = compile_path(outer, alphabet)
            self.cache[key] = includes(a, b, nonempty=True)
        return self.cache[key]


def _user_statements(policy):
    return [st for st in policy.statements if not st.synthetic]


def _bounds(formula):
    """Max and min atoms as ``(ids, bound)`` with constants folded in."""
    caps, floors = [], []
    for atom in conjunctive_atoms(formula):
        entry = (frozenset(atom.term.ids), atom.rate - atom.term.const)
        (caps if isinstance(atom, Max) else floors).append(entry)
    return caps, floors


def _min_cover(targets, atoms):
    """Least total bound of refined caps covering every id in ``targets``.

    Returns ``None`` when some target is uncapped.  Exact up to
    ``EXACT_SEARCH_LIMIT`` useful atoms, greedy (an over-estimate, hence
    still sound) beyond that.
    """
    targets = frozenset(targets)
    if not targets:
        return 0
    useful = [(ids & targets, b) for ids, b in atoms]
    if set().union(*[ids for ids, _ in useful] or [set()]) != targets:
        return None
    if len(useful) <= EXACT_SEARCH_LIMIT:
        best = None
        for k in range(1, len(useful) + 1):
            for combo in itertools.combinations(useful, k):
                if frozenset().union(*(ids for ids, _ in combo)) == targets:
                    total = sum(b for _, b in combo)
                    if best is None or total < best:
                        best = total
        return best
    left, total = set(targets), 0
    while left:
        ids, b = min(useful, key=lambda e: (Fraction(e[1], len(e[0] & left) or 1)
                                            if e[0] & left else float("inf"), sorted(e[0])))
        left -= ids
        total += b
    return total


def _max_packing(atoms):
    """Largest total bound over refined guarantees with disjoint id sets."""
    if len(atoms) <= EXACT_SEARCH_LIMIT:
        best = 0
        for k in range(1, len(atoms) + 1):
            for combo in itertools.combinations(atoms, k):
                ids = [i for a, _ in combo for i in a]
                if len(ids) == len(set(ids)):
                    best = max(best, sum(b for _, b in combo))
        return best
    used, total = set(), 0
    for ids, b in sorted(atoms, key=lambda e: (-e[1], sorted(e[0]))):
        if not ids & used:
            used |= ids
            total += b
    return total


def verify_refinement(original, refined, topology=None, placement=None):
    """Check that ``refined`` is a valid refinement of ``original``.

    Without a topology, path expressions are compared symbolically (function
    names and locations are plain symbols); with one, functions expand to
    their placements first.
    """
    reasons = []
    orig = _user_statements(original)
    ref = _user_statements(refined)

    # refined statements must be disjoint and cover every original statement
    hit = preds.find_overlap([st.predicate for st in ref])
    if hit is not None:
        i, j, w = hit
        reasons.append(Rejection("partition", None, ref[i].id,
                                 f"refined statements {ref[i].id} and {ref[j].id} overlap",
                                 witness=w))
    pairs = preds.overlapping_pairs([st.predicate for st in orig], [st.predicate for st in ref])
    overlaps = {}
    for i, j in pairs:
        overlaps.setdefault(i, []).append(j)
    odnfs = [preds.to_dnf(st.predicate) for st in orig]
    rdnfs = [preds.to_dnf(st.predicate) for st in ref]
    if hit is None:
        for i, o in enumerate(orig):
            odnf = odnfs[i]
            covered = sum(preds.dnf_count(preds.dnf_intersect(odnf, rdnfs[j]))
                          for j in overlaps.get(i, ()))
            if covered != preds.dnf_count(odnf):
                missing = preds.dnf_subtract(odnf, [c for j in overlaps.get(i, ())
                                                    for c in rdnfs[j]])
                reasons.append(Rejection("partition", o.id, None,
                                         f"traffic of {o.id} is not covered by the refinement",
                                         witness=missing[0].witness() if missing else None))

    # paths: refined languages inside the original ones they overlap
    oracle = _PathOracle(topology, placement)
    for i, j in pairs:
        ok, cex = oracle.check(ref[j].path, orig[i].path)
        if not ok:
            reasons.append(Rejection("paths", orig[i].id, ref[j].id,
                                     f"{ref[j].id} allows a path that {orig[i].id} forbids",
                                     counterexample=tuple(cex)))

    # bandwidth: refined caps and guarantees imply the original ones
    index_o = {st.id: i for i, st in enumerate(orig)}
    o_caps, o_floors = _bounds(original.formula)
    r_caps, r_floors = _bounds(refined.formula)
    ref_ids = {st.id for st in ref}
    by_orig = {}
    for i, j in pairs:
        by_orig.setdefault(orig[i].id, []).append(j)
    caps_by_id = {}
    for k, (ids, _) in enumerate(r_caps):
        for sid in ids:
            caps_by_id.setdefault(sid, []).append(k)
    for ids, bound in o_caps:
        touched = {ref[j].id for sid in ids for j in by_orig.get(sid, ())}
        relevant = sorted({k for sid in touched for k in caps_by_id.get(sid, ())})
        total = _min_cover(touched, [r_caps[k] for k in relevant])
        if total is None or total > bound:
            what = "uncapped traffic" if total is None else f"caps summing to {total}"
            reasons.append(Rejection("bandwidth", "+".join(sorted(ids)), None,
                                     f"refinement allows {what} where the original caps "
                                     f"{'+'.join(sorted(ids))} at {bound}"))
    for ids, bound in o_floors:
        if bound <= 0:
            continue
        scope = [c for sid in ids if sid in index_o for c in odnfs[index_o[sid]]]
        inside = set()
        for j in sorted({j for sid in ids for j in by_orig.get(sid, ())}):
            if not preds.dnf_subtract(rdnfs[j], scope):
                inside.add(ref[j].id)
        usable = [(a, b) for a, b in r_floors if a <= inside and a <= ref_ids]
        total = _max_packing(usable)
        if total < bound:
            reasons.append(Rejection("bandwidth", "+".join(sorted(ids)), None,
                                     f"refinement guarantees {total} where the original "
                                     f"guarantees {bound}"))
    return Verdict(tuple(reasons))


# ------------------------------------------------------------------ delegation

@dataclass(frozen=True)
class Scope:
    """Part of the network handed to a child: traffic and/or locations."""
    predicate: Optional[object] = None
    locations: Optional[frozenset] = None


@dataclass
class Delegation:
    parent: Policy
    policy: Policy
    scope: Scope
    # statements whose traffic survives but whose paths cannot stay in scope
    unsatisfiable: List[str] = field(default_factory=list)
    # statements with no traffic inside the scope
    dropped: List[str] = field(default_factory=list)


def restrict(policy, predicate):
    """``policy`` with every statement's predicate intersected with ``predicate``."""
    if predicate is None:
        return policy
    stmts = []
    for st in policy.statements:
        p = st.predicate if preds.implies(st.predicate, predicate) \
            else PAnd(st.predicate, predicate)
        if preds.satisfiable(p):
            stmts.append(Statement(st.id, p, st.path))
    return Policy(tuple(stmts), _keep_atoms(policy.formula, {s.id for s in stmts}),
                  dict(policy.metadata))


def _keep_atoms(formula, ids):
    atoms = []
    for atom in conjunctive_atoms(formula):
        kept = tuple(i for i in atom.term.ids if i in ids)
        if kept:
            atoms.append(type(atom)(Term(kept, atom.term.const), atom.rate))
    return conjoin_formulas(atoms)


def delegate(parent, scope, topology=None, placement=None):
    """Project ``parent`` onto ``scope``."""
    if scope.locations is not None:
        if not scope.locations:
            raise DelegationError("empty scope")
        if topology is not None:
            unknown = set(scope.locations) - set(topology.node_ids)
            if unknown:
                raise DelegationError(f"scope names unknown locations: {sorted(unknown)}")
    if scope.predicate is not None and not preds.satisfiable(scope.predicate):
        raise DelegationError("empty scope")
    sub = restrict(parent, scope.predicate)
    dropped = [st.id for st in parent.statements if st.id not in set(sub.ids)]
    everywhere = (scope.locations is None
                  or (topology is not None and set(scope.locations) >= set(topology.node_ids)))
    stmts, unsat = [], []
    for st in sub.statements:
        path = st.path
        if not everywhere:
            lang = Star(alt_of(Sym(n) for n in sorted(scope.locations)))
            path = path_intersection(st.path, lang)
            alphabet = topology.node_ids if topology is not None else \
                symbolic_alphabet(st.path, lang)
            if compile_path(path, alphabet, placement if topology is not None else None).is_empty():
                unsat.append(st.id)
        stmts.append(Statement(st.id, st.predicate, path))
    policy = Policy(tuple(stmts), sub.formula, dict(parent.metadata))
    return Delegation(parent, policy, scope, unsat, dropped)


# ------------------------------------------------------------------ adaptation

def water_filling(demands, capacity):
    """Max-min fair division of ``capacity``: smallest demands are met first,
    the rest share equally.  Exact (Fractions)."""
    alloc = {}
    left = Fraction(capacity)
    pending = sorted(demands, key=lambda f: (demands[f], f))
    while pending:
        share = left / len(pending)
        f = pending[0]
        if demands[f] <= share:
            alloc[f] = Fraction(demands[f])
            left -= alloc[f]
            pending.pop(0)
        else:
            for g in pending:
                alloc[g] = share
            break
    return alloc


def step_mmfs(demands, capacity, spread_surplus=False):
    """Max-min fair allocation of ``capacity`` to declared ``demands``.

    With ``spread_surplus``, capacity left once every demand is met is
    split equally among all tenants.
    """
    if any(d < 0 for d in demands.values()):
        raise ValueError("demands must be nonnegative")
    alloc = water_filling(demands, capacity)
    if spread_surplus and demands:
        extra = (Fraction(capacity) - sum(alloc.values())) / len(demands)
        alloc = {f: a + extra for f, a in alloc.items()}
    return alloc


def step_aimd(allocations, demands, capacity, alpha=DEFAULT_ALPHA, beta=DEFAULT_BETA):
    """One AIMD round.

    Flows whose demand reaches their allocation ask for ``alpha`` more;
    the others shrink to their demand.  If the requests would exceed
    ``capacity``, the requesting flows are instead cut to ``beta`` times
    their allocation.
    """
    if not 0 < beta < 1:
        raise ValueError("beta must lie strictly between 0 and 1")
    flows = sorted(set(allocations) | set(demands))
    cur = {f: Fraction(allocations.get(f, 0)) for f in flows}
    want = {f: Fraction(demands.get(f, 0)) for f in flows}
    growing = [f for f in flows if want[f] >= cur[f]]
    new = {f: (cur[f] + alpha if f in growing else want[f]) for f in flows}
    if sum(new.values()) > capacity:
        for f in growing:
            new[f] = cur[f] * beta
    while sum(new.values()) > capacity:
        # only reachable when the incoming state already broke the cap
        new = {f: v * beta for f, v in new.items()}
    return new


@dataclass(frozen=True)
class Message:
    time: float
    sender: str
    receiver: str
    kind: str  # propose | verify | grant | deny
    value: object


@dataclass
class NegotiatorNode:
    id: str
    scheme: str = "mmfs"  # or "aimd"
    capacity: Optional[Fraction] = None
    flows: Tuple[str, ...] = ()
    children: List["NegotiatorNode"] = field(default_factory=list)
    parent: Optional["NegotiatorNode"] = field(default=None, repr=False)
    policy: Optional[Policy] = field(default=None, repr=False)
    # current allocation per child id / flow id
    allocations: Dict[str, Fraction] = field(default_factory=dict)

    def members(self):
        return [c.id for c in self.children] + list(self.flows)

    def all_flows(self):
        out = list(self.flows)
        for c in self.children:
            out += c.all_flows()
        return out


def build_tree(layout, parent=None):
    """Negotiator tree from a nested dict ``{id, scheme, capacity, flows, children}``."""
    node = NegotiatorNode(layout["id"], layout.get("scheme", "mmfs"),
                          Fraction(layout["capacity"]) if layout.get("capacity") is not None else None,
                          tuple(layout.get("flows", ())), [], parent)
    if node.scheme not in ("mmfs", "aimd"):
        raise ValueError(f"unknown scheme {node.scheme!r}")
    node.children = [build_tree(c, node) for c in layout.get("children", ())]
    return node


class Negotiation:
    """Discrete-event run of a negotiator tree over a demand trace."""

    def __init__(self, root, alpha=DEFAULT_ALPHA, beta=DEFAULT_BETA):
        if root.capacity is None:
            raise ValueError("the root negotiator needs a capacity")
        if alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if not 0 < beta < 1:
            raise ValueError("beta must lie strictly between 0 and 1")
        self.root = root
        self.alpha = alpha
        self.beta = beta
        self.messages: List[Message] = []
        self.log: List[Tuple[float, str, Fraction]] = []
        self.demand: Dict[str, Fraction] = {}

    def submit(self, child, refined, time=0, topology=None, placement=None):
        """A child proposes a refined policy; its parent verifies it."""
        parent = child.parent
        self.messages.append(Message(time, child.id, parent.id, "propose", "policy"))
        verdict = verify_refinement(child.policy, refined, topology, placement)
        self.messages.append(Message(time, parent.id, parent.id, "verify",
                                     "accept" if verdict.accepted else ",".join(verdict.kinds)))
        if verdict.accepted:
            child.policy = refined
        self.messages.append(Message(time, parent.id, child.id,
                                     "grant" if verdict.accepted else "deny", "policy"))
        return verdict

    def _aggregate(self, node):
        total = sum((self.demand.get(f, Fraction(0)) for f in node.flows), Fraction(0))
        for c in node.children:
            total += self._aggregate(c)
        return total

    def _divide(self, node, budget, time):
        if node.capacity is not None:
            budget = min(budget, node.capacity)
        wants = {c.id: self._aggregate(c) for c in node.children}
        wants.update({f: self.demand.get(f, Fraction(0)) for f in node.flows})
        for c in node.children:
            self.messages.append(Message(time, c.id, node.id, "propose", wants[c.id]))
        if node.scheme == "aimd":
            alloc = step_aimd(node.allocations, wants, budget, self.alpha, self.beta)
        else:
            alloc = step_mmfs(wants, budget)
        self.messages.append(Message(time, node.id, node.id, "verify",
                                     sum(alloc.values()) <= budget))
        node.allocations = alloc
        for c in node.children:
            kind = "grant" if alloc[c.id] >= wants[c.id] else "deny"
            self.messages.append(Message(time, node.id, c.id, kind, alloc[c.id]))
            self._divide(c, alloc[c.id], time)
        for f in node.flows:
            self.log.append((time, f, alloc[f]))

    def tick(self, time, demands):
        self.demand.update({f: Fraction(v) for f, v in demands.items()})
        self._divide(self.root, self.root.capacity, time)

    def run(self, trace, times=None):
        """``trace`` rows are ``(time, flow, demand)``; demands persist until
        changed.  Ticks happen at every trace time, or at ``times``."""
        by_time = {}
        for t, f, d in trace:
            by_time.setdefault(t, {})[f] = d
        for t in sorted(set(times) if times is not None else by_time):
            pending = {}
            for ts in sorted(k for k in list(by_time) if k <= t):
                pending.update(by_time.pop(ts))
            self.tick(t, pending)
        return self.log


def read_trace(path):
    rows = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append((_number(row["time"]), row["flow"], int(row["demand"])))
    return rows


def write_log(log, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("time", "flow", "allocation"))
        for t, f, a in log:
            a = Fraction(a)
            w.writerow((t, f, a.numerator if a.denominator == 1 else str(a)))


def _number(text):
    v = float(text)
    return int(v) if v.is_integer() else v
