"""Abstract syntax for provisioning policies and a canonical printer."""

from dataclasses import dataclass, field
from typing import Optional, Tuple

from .units import format_ip, format_mac, format_rate

CATCH_ALL_ID = "_default"


@dataclass(frozen=True)
class HeaderField:
    name: str
    bits: int
    # (field, value) that must hold for this field to be present in a packet
    requires: Optional[Tuple[str, int]] = None

    @property
    def max_value(self):
        return (1 << self.bits) - 1


FIELDS = {
    f.name: f
    for f in (
        HeaderField("eth.src", 48),
        HeaderField("eth.dst", 48),
        HeaderField("eth.typ", 16),
        HeaderField("ip.src", 32),
        HeaderField("ip.dst", 32),
        HeaderField("ip.proto", 8),
        HeaderField("tcp.src", 16, ("ip.proto", 6)),
        HeaderField("tcp.dst", 16, ("ip.proto", 6)),
        HeaderField("udp.src", 16, ("ip.proto", 17)),
        HeaderField("udp.dst", 16, ("ip.proto", 17)),
    )
}

FIELD_ORDER = tuple(FIELDS)

# camel-case spellings seen in hand-written policies
FIELD_ALIASES = {
    "ethSrc": "eth.src", "ethDst": "eth.dst", "ethTyp": "eth.typ",
    "ipSrc": "ip.src", "ipDst": "ip.dst", "ipProto": "ip.proto",
    "tcpSrc": "tcp.src", "tcpDst": "tcp.dst",
    "udpSrc": "udp.src", "udpDst": "udp.dst",
}

SYMBOLIC_VALUES = {
    "ip.proto": {"icmp": 1, "tcp": 6, "udp": 17},
    "eth.typ": {"ip": 0x0800, "arp": 0x0806},
}


def format_value(fieldname, value):
    if value is None:
        return "absent"
    if fieldname in ("eth.src", "eth.dst"):
        return format_mac(value)
    if fieldname in ("ip.src", "ip.dst"):
        return format_ip(value)
    if fieldname == "eth.typ":
        return f"0x{value:04x}"
    return str(value)


# ---------------------------------------------------------------- predicates

class Predicate:
    __slots__ = ()

    def __and__(self, other):
        return PAnd(self, other)

    def __or__(self, other):
        return POr(self, other)

    def __invert__(self):
        return PNot(self)


@dataclass(frozen=True)
class PTrue(Predicate):
    pass


@dataclass(frozen=True)
class PFalse(Predicate):
    pass


@dataclass(frozen=True)
class Match(Predicate):
    field: str
    value: int


@dataclass(frozen=True)
class Payload(Predicate):
    """Payload match; parsed but not supported by the decision procedures."""
    pattern: str


@dataclass(frozen=True)
class PAnd(Predicate):
    left: Predicate
    right: Predicate


@dataclass(frozen=True)
class POr(Predicate):
    left: Predicate
    right: Predicate


@dataclass(frozen=True)
class PNot(Predicate):
    arg: Predicate


def _remember_hash(cls):
    # large synthesized predicates are hashed often (DNF cache lookups)
    compute = cls.__hash__

    def __hash__(self):
        try:
            return self.__dict__["_hash"]
        except KeyError:
            h = compute(self)
            object.__setattr__(self, "_hash", h)
            return h

    cls.__hash__ = __hash__


for _cls in (PAnd, POr, PNot):
    _remember_hash(_cls)


def _balanced(items, node):
    # balanced nesting keeps long chains shallow
    if len(items) == 1:
        return items[0]
    mid = len(items) // 2
    return node(_balanced(items[:mid], node), _balanced(items[mid:], node))


def conjoin(preds):
    preds = list(preds)
    return _balanced(preds, PAnd) if preds else PTrue()


def disjoin(preds):
    preds = list(preds)
    return _balanced(preds, POr) if preds else PFalse()


# ---------------------------------------------------------- path expressions

class PathExpr:
    __slots__ = ()


@dataclass(frozen=True)
class Dot(PathExpr):
    pass


@dataclass(frozen=True)
class Sym(PathExpr):
    name: str


@dataclass(frozen=True)
class Seq(PathExpr):
    left: PathExpr
    right: PathExpr


@dataclass(frozen=True)
class Alt(PathExpr):
    left: PathExpr
    right: PathExpr


@dataclass(frozen=True)
class Star(PathExpr):
    arg: PathExpr


@dataclass(frozen=True)
class Neg(PathExpr):
    arg: PathExpr


def seq_of(parts):
    parts = list(parts)
    out = parts[0]
    for p in parts[1:]:
        out = Seq(out, p)
    return out


def alt_of(parts):
    parts = list(parts)
    out = parts[0]
    for p in parts[1:]:
        out = Alt(out, p)
    return out


def any_path():
    return Star(Dot())


def path_intersection(a, b):
    """``a & b`` written with the grammar's own operators: ``!(!a | !b)``."""
    return Neg(Alt(Neg(a), Neg(b)))


def path_symbols(expr):
    if isinstance(expr, Sym):
        return {expr.name}
    if isinstance(expr, (Seq, Alt)):
        return path_symbols(expr.left) | path_symbols(expr.right)
    if isinstance(expr, (Star, Neg)):
        return path_symbols(expr.arg)
    return set()


def path_size(expr):
    """Number of nodes in the expression tree."""
    if isinstance(expr, (Seq, Alt)):
        return 1 + path_size(expr.left) + path_size(expr.right)
    if isinstance(expr, (Star, Neg)):
        return 1 + path_size(expr.arg)
    return 1


# ------------------------------------------------------------------ formulas

@dataclass(frozen=True)
class Term:
    ids: Tuple[str, ...]
    const: int = 0


class Formula:
    __slots__ = ()


@dataclass(frozen=True)
class Max(Formula):
    term: Term
    rate: int


@dataclass(frozen=True)
class Min(Formula):
    term: Term
    rate: int


@dataclass(frozen=True)
class FAnd(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class FOr(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class FNot(Formula):
    arg: Formula


def formula_conjuncts(f):
    """Flatten nested ``FAnd`` nodes, left to right; other nodes are returned as-is."""
    out = []
    stack = [f] if f is not None else []
    while stack:
        g = stack.pop()
        if isinstance(g, FAnd):
            stack += [g.right, g.left]
        else:
            out.append(g)
    return out


def conjoin_formulas(atoms):
    atoms = list(atoms)
    return _balanced(atoms, FAnd) if atoms else None


def formula_ids(f):
    ids = set()
    stack = [f] if f is not None else []
    while stack:
        g = stack.pop()
        if isinstance(g, (Max, Min)):
            ids.update(g.term.ids)
        elif isinstance(g, (FAnd, FOr)):
            stack += [g.left, g.right]
        else:
            stack.append(g.arg)
    return ids


# ------------------------------------------------------------------ policies

@dataclass(frozen=True)
class Statement:
    id: str
    predicate: Predicate
    path: PathExpr

    @property
    def synthetic(self):
        return self.id == CATCH_ALL_ID


@dataclass(frozen=True)
class Policy:
    statements: Tuple[Statement, ...]
    formula: Optional[Formula] = None
    metadata: dict = field(default_factory=dict, compare=False, hash=False)

    @property
    def ids(self):
        return [s.id for s in self.statements]

    def statement(self, sid):
        for s in self.statements:
            if s.id == sid:
                return s
        raise KeyError(sid)

    def __str__(self):
        return format_policy(self)


# ------------------------------------------------------------------ printing

def format_predicate(p, prec=0):
    if isinstance(p, PTrue):
        return "true"
    if isinstance(p, PFalse):
        return "false"
    if isinstance(p, Match):
        return f"{p.field} = {format_value(p.field, p.value)}"
    if isinstance(p, Payload):
        return f"payload = {_quote(p.pattern)}"
    if isinstance(p, PNot):
        return "!" + format_predicate(p.arg, 3)
    if isinstance(p, PAnd):
        text = f"{format_predicate(p.left, 2)} and {format_predicate(p.right, 2)}"
        return f"({text})" if prec > 2 else text
    if isinstance(p, POr):
        text = f"{format_predicate(p.left, 1)} or {format_predicate(p.right, 1)}"
        return f"({text})" if prec > 1 else text
    raise TypeError(f"not a predicate: {p!r}")


def format_path(e, prec=0):
    if isinstance(e, Dot):
        return "."
    if isinstance(e, Sym):
        return e.name
    if isinstance(e, Star):
        return format_path(e.arg, 4) + "*"
    if isinstance(e, Neg):
        text = "!" + format_path(e.arg, 3)
        return f"({text})" if prec > 3 else text
    if isinstance(e, Seq):
        text = f"{format_path(e.left, 2)} {format_path(e.right, 3)}"
        return f"({text})" if prec > 2 else text
    if isinstance(e, Alt):
        text = f"{format_path(e.left, 1)} | {format_path(e.right, 2)}"
        return f"({text})" if prec > 1 else text
    raise TypeError(f"not a path expression: {e!r}")


def format_term(t):
    parts = list(t.ids)
    if t.const or not parts:
        parts.append(str(t.const))
    return " + ".join(parts)


def format_formula(f, prec=0):
    if isinstance(f, Max):
        return f"max({format_term(f.term)}, {format_rate(f.rate)})"
    if isinstance(f, Min):
        return f"min({format_term(f.term)}, {format_rate(f.rate)})"
    if isinstance(f, FNot):
        return "!" + format_formula(f.arg, 3)
    if isinstance(f, FAnd):
        text = f"{format_formula(f.left, 2)} and {format_formula(f.right, 2)}"
        return f"({text})" if prec > 2 else text
    if isinstance(f, FOr):
        text = f"{format_formula(f.left, 1)} or {format_formula(f.right, 1)}"
        return f"({text})" if prec > 1 else text
    raise TypeError(f"not a formula: {f!r}")


def format_statement(s):
    return f"{s.id} : {format_predicate(s.predicate)} -> {format_path(s.path)}"


def format_policy(policy):
    lines = [format_statement(s) for s in policy.statements]
    body = "[ " + ";\n  ".join(lines) + " ]"
    if policy.formula is not None:
        body += ",\n" + format_formula(policy.formula)
    return body + "\n"


def _quote(text):
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'
