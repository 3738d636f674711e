"""Decision procedures over header predicates.

Atoms are equalities, so every conjunction normalizes to a *cube*: for each
constrained field either a finite set of allowed values or a co-finite set of
excluded ones.  A predicate becomes a list of cubes (its DNF).

Protocol-dependent fields (``tcp.*``, ``udp.*``) carry an extra value,
``None``, meaning the header is absent.  A packet is valid when ``tcp.*`` is
present exactly when ``ip.proto = 6`` (and likewise ``udp.*`` with 17), so
``tcp.dst = 80`` on its own already implies ``ip.proto = 6``.
"""

from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from typing import Dict, FrozenSet, List, Optional

from .syntax import (
    FIELD_ORDER, FIELDS, Match, PAnd, Payload, PFalse, PNot, POr, PTrue,
    conjoin, disjoin,
)


class UnsupportedPredicate(ValueError):
    pass


@dataclass(frozen=True)
class ValueSet:
    values: FrozenSet
    negated: bool = False

    @classmethod
    def only(cls, *values):
        return cls(frozenset(values))

    @classmethod
    def excluding(cls, *values):
        return cls(frozenset(values), True)

    def __contains__(self, value):
        return (value in self.values) != self.negated

    def intersect(self, other):
        if not self.negated and not other.negated:
            return ValueSet(self.values & other.values)
        if not self.negated:
            return ValueSet(self.values - other.values)
        if not other.negated:
            return ValueSet(other.values - self.values)
        return ValueSet(self.values | other.values, True)

    def complement(self):
        return ValueSet(self.values, not self.negated)

    def size(self, fieldname):
        f = FIELDS[fieldname]
        inside = sum(1 for v in self.values if _in_domain(f, v))
        if self.negated:
            return domain_size(fieldname) - inside
        return inside

    def pick(self, fieldname):
        f = FIELDS[fieldname]
        if not self.negated:
            ints = sorted(v for v in self.values if v is not None and _in_domain(f, v))
            if ints:
                return ints[0]
            if None in self.values and f.requires is not None:
                return None
            raise ValueError("empty value set")
        v = 0
        while v in self.values:
            v += 1
        if v <= f.max_value:
            return v
        if f.requires is not None and None not in self.values:
            return None
        raise ValueError("empty value set")


FULL = ValueSet(frozenset(), True)
PRESENT = ValueSet.excluding(None)
ABSENT = ValueSet.only(None)


def _in_domain(f, v):
    if v is None:
        return f.requires is not None
    return 0 <= v <= f.max_value


def domain_size(fieldname):
    f = FIELDS[fieldname]
    return f.max_value + 1 + (1 if f.requires else 0)


def _dependency_groups():
    groups = {}
    for f in FIELDS.values():
        if f.requires:
            ctl, val = f.requires
            groups.setdefault(ctl, {}).setdefault(val, []).append(f.name)
    return groups


# controlling field -> {required value -> dependent fields}
DEPENDENCIES = _dependency_groups()


class Cube:
    """A conjunction of per-field value constraints."""

    __slots__ = ("constraints", "_key")

    def __init__(self, constraints: Optional[Dict[str, ValueSet]] = None):
        self.constraints = {k: v for k, v in (constraints or {}).items() if v != FULL}
        self._key = None

    def key(self):
        if self._key is None:
            self._key = tuple(sorted(
                (k, v.negated, tuple(sorted(v.values, key=_sort_key)))
                for k, v in self.constraints.items()))
        return self._key

    def __eq__(self, other):
        return isinstance(other, Cube) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())

    def __repr__(self):
        parts = []
        for k in FIELD_ORDER:
            if k in self.constraints:
                vs = self.constraints[k]
                vals = sorted(vs.values, key=_sort_key)
                parts.append(f"{k}:{'!' if vs.negated else ''}{vals}")
        return "Cube(" + ", ".join(parts) + ")"

    def get(self, fieldname):
        return self.constraints.get(fieldname, FULL)

    def intersect(self, other):
        out = dict(self.constraints)
        for k, v in other.constraints.items():
            out[k] = out[k].intersect(v) if k in out else v
        return Cube(out).tightened()

    def tightened(self):
        """Add constraints implied by protocol dependencies."""
        c = dict(self.constraints)
        changed = True
        while changed:
            changed = False
            for ctl, by_value in DEPENDENCIES.items():
                for val, deps in by_value.items():
                    if any(None not in c.get(d, FULL) for d in deps):
                        cur = c.get(ctl, FULL)
                        new = cur.intersect(ValueSet.only(val))
                        if new != cur:
                            c[ctl] = new
                            changed = True
                    if val not in c.get(ctl, FULL):
                        for d in deps:
                            cur = c.get(d, FULL)
                            new = cur.intersect(ABSENT)
                            if new != cur:
                                c[d] = new
                                changed = True
        return Cube(c)

    def _cases(self):
        """Split into cubes where every dependency is resolved."""
        cases = [dict(self.constraints)]
        for ctl, by_value in DEPENDENCIES.items():
            next_cases = []
            for c in cases:
                ctl_set = c.get(ctl, FULL)
                for val in sorted(by_value):
                    case = dict(c)
                    case[ctl] = ctl_set.intersect(ValueSet.only(val))
                    for v2, deps in by_value.items():
                        for d in deps:
                            case[d] = case.get(d, FULL).intersect(PRESENT if v2 == val else ABSENT)
                    next_cases.append(case)
                case = dict(c)
                case[ctl] = ctl_set.intersect(ValueSet.excluding(*by_value))
                for deps in by_value.values():
                    for d in deps:
                        case[d] = case.get(d, FULL).intersect(ABSENT)
                next_cases.append(case)
            cases = next_cases
        return cases

    def count(self):
        total = 0
        for case in self._cases():
            n = 1
            for name in FIELD_ORDER:
                n *= case[name].size(name) if name in case else domain_size(name)
                if n == 0:
                    break
            total += n
        return total

    def is_sat(self):
        for case in self._cases():
            if all(vs.size(name) > 0 for name, vs in case.items()):
                return True
        return False

    def witness(self):
        """A concrete packet (field -> value) in the cube, or ``None``."""
        for case in self._cases():
            if all(vs.size(name) > 0 for name, vs in case.items()):
                return {name: case[name].pick(name) if name in case else 0
                        for name in FIELD_ORDER}
        return None

    def complement(self):
        """Disjoint cubes covering every valid packet outside this cube."""
        pieces = []
        prefix = {}
        for name in sorted(self.constraints, key=FIELD_ORDER.index):
            vs = self.constraints[name]
            piece = Cube({**prefix, name: vs.complement()}).tightened()
            if piece.is_sat():
                pieces.append(piece)
            prefix[name] = vs
        return pieces

    def contains(self, packet):
        return all(packet.get(k) in v for k, v in self.constraints.items())


def _sort_key(v):
    return (-1 if v is None else v)


# ------------------------------------------------------------------ DNF

def to_dnf(pred) -> List[Cube]:
    """Disjunctive normal form as a list of satisfiable cubes."""
    return list(_cached_dnf(pred))


@lru_cache(maxsize=1 << 16)
def _cached_dnf(pred):
    # predicates are frozen, so whole-tree results can be shared
    return tuple(_to_dnf(pred))


def clear_caches():
    _cached_dnf.cache_clear()


def _to_dnf(pred):
    if isinstance(pred, PTrue):
        return [Cube()]
    if isinstance(pred, PFalse):
        return []
    if isinstance(pred, Match):
        if pred.field not in FIELDS:
            raise UnsupportedPredicate(f"unknown header field {pred.field}")
        return _dedupe([Cube({pred.field: ValueSet.only(pred.value)}).tightened()])
    if isinstance(pred, Payload):
        raise UnsupportedPredicate("payload predicates are not supported")
    if isinstance(pred, PAnd):
        return dnf_intersect(_to_dnf(pred.left), _to_dnf(pred.right))
    if isinstance(pred, POr):
        return _dedupe(_to_dnf(pred.left) + _to_dnf(pred.right))
    if isinstance(pred, PNot):
        return dnf_complement(_to_dnf(pred.arg))
    raise TypeError(f"not a predicate: {pred!r}")


def _dedupe(cubes):
    seen = set()
    out = []
    for c in cubes:
        if c not in seen and c.is_sat():
            seen.add(c)
            out.append(c)
    return _merge(out)


def _merge(cubes):
    """Merge cubes that differ only in one finitely-constrained field."""
    changed = True
    while changed and len(cubes) > 1:
        changed = False
        for name in FIELD_ORDER:
            groups = {}
            order = []
            for c in cubes:
                vs = c.constraints.get(name)
                if vs is None or vs.negated:
                    key = ("keep", id(c))
                else:
                    key = tuple(item for item in c.key() if item[0] != name)
                if key not in groups:
                    groups[key] = []
                    order.append(key)
                groups[key].append(c)
            if len(order) == len(cubes):
                continue
            merged = []
            for key in order:
                members = groups[key]
                if len(members) == 1:
                    merged.append(members[0])
                    continue
                values = frozenset().union(*(m.constraints[name].values for m in members))
                merged.append(Cube({**members[0].constraints, name: ValueSet(values)}))
            cubes = merged
            changed = True
    return cubes


def dnf_intersect(a, b):
    out = []
    for x in a:
        for y in b:
            c = x.intersect(y)
            if c.is_sat():
                out.append(c)
    return _dedupe(out)


def dnf_complement(cubes):
    result = [Cube()]
    for c in cubes:
        result = dnf_intersect(result, c.complement())
        if not result:
            break
    return result


def dnf_subtract(a, b):
    return dnf_intersect(a, dnf_complement(b))


def disjoint_cover(cubes):
    """Rewrite a cube list so that its members are pairwise disjoint."""
    out = []
    for c in cubes:
        pieces = [c]
        for d in out:
            nxt = []
            for p in pieces:
                if p.intersect(d).is_sat():
                    nxt.extend(q for q in (p.intersect(e) for e in d.complement()) if q.is_sat())
                else:
                    nxt.append(p)
            pieces = nxt
        out.extend(pieces)
    return out


def dnf_count(cubes):
    return sum(c.count() for c in disjoint_cover(cubes))


def dnf_included(a, b):
    """``a`` implies ``b``, decided by counting (avoids complementing ``b``)."""
    return dnf_count(dnf_intersect(a, b)) == dnf_count(a)


def universe_size():
    return Cube().count()


# ----------------------------------------------------------- public queries

def evaluate(pred, packet):
    """Evaluate a predicate directly on a packet (field -> value)."""
    if isinstance(pred, PTrue):
        return True
    if isinstance(pred, PFalse):
        return False
    if isinstance(pred, Match):
        return packet.get(pred.field) == pred.value
    if isinstance(pred, PAnd):
        return evaluate(pred.left, packet) and evaluate(pred.right, packet)
    if isinstance(pred, POr):
        return evaluate(pred.left, packet) or evaluate(pred.right, packet)
    if isinstance(pred, PNot):
        return not evaluate(pred.arg, packet)
    if isinstance(pred, Payload):
        raise UnsupportedPredicate("payload predicates are not supported")
    raise TypeError(f"not a predicate: {pred!r}")


def is_valid_packet(packet):
    for f in FIELDS.values():
        if f.requires:
            ctl, val = f.requires
            present = packet.get(f.name) is not None
            if present != (packet.get(ctl) == val):
                return False
    return True


def satisfiable(pred):
    return bool(to_dnf(pred))


def witness(pred):
    for c in to_dnf(pred):
        w = c.witness()
        if w is not None:
            return w
    return None


def disjoint(p1, p2):
    """``(True, None)`` if no packet satisfies both, else ``(False, packet)``."""
    return _dnf_disjoint(to_dnf(p1), to_dnf(p2))


def _dnf_disjoint(a, b):
    for x in a:
        for y in b:
            c = x.intersect(y)
            w = c.witness()
            if w is not None:
                return False, w
    return True, None


def implies(p, q):
    return not dnf_subtract(to_dnf(p), to_dnf(q))


def equivalent(p, q):
    return implies(p, q) and implies(q, p)


def is_total(preds):
    """True when the disjunction of ``preds`` matches every packet."""
    return not dnf_complement(_dedupe([c for p in preds for c in to_dnf(p)]))


def finite_values(cubes, fieldname):
    """Union of allowed values for ``fieldname`` if every cube bounds it finitely."""
    values = set()
    for c in cubes:
        vs = c.get(fieldname)
        if vs.negated:
            return None
        values |= vs.values
    return values


def candidate_pairs(dnfs, fields=FIELD_ORDER, small=8):
    """Index pairs whose predicates might overlap.

    Predicates are bucketed by the values they allow on a discriminating
    field; only predicates sharing a bucket, or unconstrained on that field,
    are paired.  The result is a superset of the truly overlapping pairs.
    """
    pairs = set()
    _bucket_pairs(list(range(len(dnfs))), dnfs, list(fields), small, pairs)
    return sorted(pairs)


def _bucket_pairs(items, dnfs, fields, small, out):
    if len(items) < 2:
        return
    if len(items) <= small or not fields:
        out.update(combinations(items, 2))
        return
    best, best_score, best_vals = None, 0, None
    for name in fields:
        vals = {i: finite_values(dnfs[i], name) for i in items}
        score = sum(1 for v in vals.values() if v is not None)
        if score > best_score:
            best, best_score, best_vals = name, score, vals
    if best is None:
        out.update(combinations(items, 2))
        return
    rest = [f for f in fields if f != best]
    buckets = {}
    wild = []
    for i in items:
        vs = best_vals[i]
        if vs is None:
            wild.append(i)
        else:
            for v in vs:
                buckets.setdefault(v, []).append(i)
    for members in buckets.values():
        _bucket_pairs(members, dnfs, rest, small, out)
    bounded = [i for i in items if best_vals[i] is not None]
    for w in wild:
        for i in bounded:
            out.add((min(w, i), max(w, i)))
    _bucket_pairs(wild, dnfs, rest, small, out)


def find_overlap(preds):
    """First overlapping pair ``(i, j, witness)`` among ``preds``, or ``None``."""
    dnfs = [to_dnf(p) for p in preds]
    for i, j in candidate_pairs(dnfs):
        ok, w = _dnf_disjoint(dnfs[i], dnfs[j])
        if not ok:
            return i, j, w
    return None


def overlapping_pairs(left, right):
    """All ``(i, j)`` with ``left[i]`` and ``right[j]`` overlapping."""
    dnfs_l = [to_dnf(p) for p in left]
    dnfs_r = [to_dnf(p) for p in right]
    combined = dnfs_l + dnfs_r
    n = len(dnfs_l)
    out = []
    for i, j in candidate_pairs(combined):
        if i < n <= j:
            ok, _ = _dnf_disjoint(combined[i], combined[j])
            if not ok:
                out.append((i, j - n))
    return sorted(out)


def partition_report(original, parts):
    """Check that ``parts`` partition ``original``.

    Returns ``(ok, reason, witness)`` where ``reason`` is one of ``None``,
    ``"overlap"``, ``"outside"`` (a part matches packets outside the original)
    or ``"incomplete"``.
    """
    dnfs = [to_dnf(p) for p in parts]
    for i, j in candidate_pairs(dnfs):
        ok, w = _dnf_disjoint(dnfs[i], dnfs[j])
        if not ok:
            return False, "overlap", w
    orig = to_dnf(original)
    outside = dnf_complement(orig)
    total = 0
    for d in dnfs:
        extra = dnf_intersect(d, outside)
        if extra:
            return False, "outside", extra[0].witness()
        total += dnf_count(d)
    if total != dnf_count(orig):
        missing = dnf_subtract(orig, [c for d in dnfs for c in d])
        return False, "incomplete", missing[0].witness() if missing else None
    return True, None, None


def covers_partition(original, parts):
    return partition_report(original, parts)[0]


def intersection(p, q):
    return PAnd(p, q)


def complement(p):
    return PNot(p)


def dnf_to_predicate(cubes):
    """Rebuild a predicate AST from cubes (used for readable output)."""
    disjuncts = []
    for c in cubes:
        atoms = []
        for name in FIELD_ORDER:
            if name not in c.constraints:
                continue
            vs = c.constraints[name]
            vals = [v for v in sorted(vs.values, key=_sort_key) if v is not None]
            requires = FIELDS[name].requires
            if vs.negated:
                atoms.extend(PNot(Match(name, v)) for v in vals)
                if None in vs.values:
                    atoms.append(Match(*requires))
            else:
                options = [Match(name, v) for v in vals]
                if None in vs.values:
                    options.append(PNot(Match(*requires)))
                atoms.append(disjoin(options))
        disjuncts.append(conjoin(atoms))
    return disjoin(disjuncts)
