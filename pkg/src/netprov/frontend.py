"""Lexing, parsing, desugaring and normalization of policy text.

Concrete syntax (``#`` starts a comment)::

    srcs := {00:00:00:00:00:01}             # optional set definitions
    [ x : eth.src = 00:00:00:00:00:01 and tcp.dst = 20 -> .* dpi .*;
      y : tcp.dst = 21 -> .* ],
    max(x + y, 50MB/s) and min(z, 100MB/s)

Statements may also be written without the surrounding brackets, and
``foreach (s, d) in cross(A, B): pred -> path at max(rate)`` expands to one
statement per pair.
"""

import re
from dataclasses import dataclass, field
from typing import List, Tuple

from . import predicates as preds
from .syntax import (
    CATCH_ALL_ID, FIELD_ALIASES, FIELDS, SYMBOLIC_VALUES, Alt, Dot, FAnd,
    FNot, FOr, Match, Max, Min, Neg, PAnd, Payload, PFalse, PNot, POr, Policy,
    PTrue, Seq, Star, Statement, Sym, Term, any_path, conjoin_formulas,
    _balanced, disjoin, format_policy, formula_conjuncts, formula_ids,
)
from .units import RateError, parse_ip, parse_mac, parse_rate


class PolicyError(Exception):
    """Base class for policy front-end errors."""


class ParseError(PolicyError):
    def __init__(self, message, line=None, col=None):
        self.message = message
        self.line = line
        self.col = col
        where = f" at line {line}, column {col}" if line is not None else ""
        super().__init__(f"{message}{where}")


class ValidationError(PolicyError):
    pass


class OverlapError(ValidationError):
    def __init__(self, first, second, witness):
        self.first = first
        self.second = second
        self.witness = witness
        super().__init__(f"statements {first} and {second} overlap")


# ------------------------------------------------------------------- lexer

KEYWORDS = {"and", "or", "not", "true", "false", "max", "min",
            "foreach", "in", "cross", "at", "payload"}

TOKEN_SPEC = [
    ("WS", r"[ \t\r\n]+"),
    ("COMMENT", r"#[^\n]*"),
    ("MAC", r"[0-9A-Fa-f]{2}(?::[0-9A-Fa-f]{2}){5}(?![0-9A-Za-z_:])"),
    ("IP", r"\d{1,3}(?:\.\d{1,3}){3}(?![0-9.])"),
    ("RATE", r"\d+(?:\.\d+)?\s*(?:GB/s|MB/s|KB/s|B/s|Gbps|Mbps|Kbps|bps)"),
    ("HEX", r"0[xX][0-9A-Fa-f]+"),
    ("INT", r"\d+"),
    ("STRING", r'"(?:[^"\\]|\\.)*"'),
    ("IDENT", r"[A-Za-z_][A-Za-z0-9_]*"),
    ("OP", r":=|->|!=|&&|\|\||[:;,\[\](){}|*.!=+]"),
]
TOKEN_RE = re.compile("|".join(f"(?P<{name}>{rx})" for name, rx in TOKEN_SPEC))
FIELD_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\.[A-Za-z_][A-Za-z0-9_]*")


@dataclass
class Token:
    kind: str
    text: str
    line: int
    col: int


def tokenize(source):
    tokens = []
    pos = 0
    line, line_start = 1, 0
    while pos < len(source):
        m = TOKEN_RE.match(source, pos)
        if m is None:
            raise ParseError(f"unexpected character {source[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        text = m.group()
        col = pos - line_start + 1
        end = m.end()
        if kind == "IDENT":
            fm = FIELD_RE.match(source, pos)
            if fm and fm.group() in FIELDS:
                kind, text, end = "FIELD", fm.group(), fm.end()
            elif text in FIELD_ALIASES:
                kind, text = "FIELD", FIELD_ALIASES[text]
            elif text in KEYWORDS:
                kind = "KW"
        if kind not in ("WS", "COMMENT"):
            tokens.append(Token(kind, text, line, col))
        chunk = source[pos:end]
        nl = chunk.count("\n")
        if nl:
            line += nl
            line_start = pos + chunk.rindex("\n") + 1
        pos = end
    tokens.append(Token("EOF", "", line, pos - line_start + 1))
    return tokens


# ------------------------------------------------------------ sugar nodes

@dataclass
class ForEach:
    src_var: str
    dst_var: str
    src_set: str
    dst_set: str
    predicate: object
    path: object
    rates: List[Tuple[str, int]]
    line: int = 0
    col: int = 0


@dataclass
class RawStatement:
    statement: Statement
    rates: List[Tuple[str, int]] = field(default_factory=list)


@dataclass
class Program:
    """Parsed source before desugaring."""
    sets: dict
    items: list
    formula: object = None


# ------------------------------------------------------------------ parser

class Parser:
    def __init__(self, source):
        self.tokens = tokenize(source)
        self.i = 0

    # token helpers
    @property
    def tok(self):
        return self.tokens[self.i]

    def peek(self, k=1):
        return self.tokens[min(self.i + k, len(self.tokens) - 1)]

    def at(self, kind, text=None):
        t = self.tok
        return t.kind == kind and (text is None or t.text == text)

    def at_op(self, *texts):
        return self.tok.kind == "OP" and self.tok.text in texts

    def at_kw(self, *texts):
        return self.tok.kind == "KW" and self.tok.text in texts

    def advance(self):
        t = self.tok
        self.i += 1
        return t

    def expect_op(self, text):
        if not self.at_op(text):
            self.error(f"expected {text!r}")
        return self.advance()

    def expect_kw(self, text):
        if not self.at_kw(text):
            self.error(f"expected {text!r}")
        return self.advance()

    def expect_ident(self):
        if self.tok.kind != "IDENT":
            self.error("expected identifier")
        return self.advance().text

    def error(self, message, tok=None):
        tok = tok or self.tok
        found = tok.text or "end of input"
        raise ParseError(f"{message}, found {found!r}", tok.line, tok.col)

    # program structure
    def parse_program(self):
        sets = {}
        while self.tok.kind == "IDENT" and self.peek().kind == "OP" and self.peek().text == ":=":
            name = self.advance().text
            self.advance()
            if name in sets:
                self.error(f"set {name} defined twice")
            sets[name] = self.parse_set()
        items = []
        formula = None
        if self.at_op("["):
            while True:
                self.expect_op("[")
                items.extend(self.parse_items(closing="]"))
                self.expect_op("]")
                if self.at_op(","):
                    self.advance()
                    if self.at_op("["):
                        continue
                    formula = self.parse_formula()
                break
        else:
            items.extend(self.parse_items(closing=None))
            if self.at_op(","):
                self.advance()
                formula = self.parse_formula()
            elif self.at_kw("max", "min") or self.at_op("(", "!"):
                formula = self.parse_formula()
        if self.tok.kind != "EOF":
            self.error("unexpected trailing input")
        return Program(sets, items, formula)

    def parse_set(self):
        self.expect_op("{")
        elems = []
        while not self.at_op("}"):
            t = self.advance()
            if t.kind == "MAC":
                elems.append(("mac", parse_mac(t.text)))
            elif t.kind == "IP":
                elems.append(("ip", parse_ip(t.text)))
            else:
                self.error("set elements must be MAC or IPv4 addresses", t)
            if not self.at_op("}"):
                self.expect_op(",")
        self.expect_op("}")
        return elems

    def parse_items(self, closing):
        items = []
        while True:
            if self.at_kw("foreach"):
                items.append(self.parse_foreach())
            elif self.tok.kind == "IDENT" and self.peek().kind == "OP" and self.peek().text == ":":
                items.append(self.parse_statement())
            else:
                break
            if self.at_op(";"):
                self.advance()
        if not items and closing is None:
            self.error("expected a statement")
        return items

    def parse_statement(self):
        tok = self.tok
        sid = self.expect_ident()
        self.expect_op(":")
        pred = self.parse_predicate()
        self.expect_op("->")
        path = self.parse_path()
        rates = self.parse_rate_clause()
        st = RawStatement(Statement(sid, pred, path), rates)
        st.line, st.col = tok.line, tok.col
        return st

    def parse_foreach(self):
        tok = self.expect_kw("foreach")
        self.expect_op("(")
        s = self.expect_ident()
        self.expect_op(",")
        d = self.expect_ident()
        self.expect_op(")")
        self.expect_kw("in")
        self.expect_kw("cross")
        self.expect_op("(")
        a = self.expect_ident()
        self.expect_op(",")
        b = self.expect_ident()
        self.expect_op(")")
        self.expect_op(":")
        pred = self.parse_predicate()
        self.expect_op("->")
        path = self.parse_path()
        rates = self.parse_rate_clause()
        return ForEach(s, d, a, b, pred, path, rates, tok.line, tok.col)

    def parse_rate_clause(self):
        rates = []
        if not self.at_kw("at"):
            return rates
        self.advance()
        while True:
            if not self.at_kw("max", "min"):
                self.error("expected max(...) or min(...)")
            kind = self.advance().text
            self.expect_op("(")
            rates.append((kind, self.parse_rate()))
            self.expect_op(")")
            if self.at_kw("and") and self.peek().kind == "KW" and self.peek().text in ("max", "min"):
                self.advance()
                continue
            return rates

    def parse_rate(self):
        t = self.tok
        if t.kind not in ("RATE", "INT"):
            self.error("expected a rate literal")
        self.advance()
        try:
            return parse_rate(t.text)
        except RateError as exc:
            raise ParseError(str(exc), t.line, t.col) from None

    # predicates
    def parse_predicate(self):
        parts = [self.parse_pred_and()]
        while self.at_kw("or") or self.at_op("|", "||"):
            self.advance()
            parts.append(self.parse_pred_and())
        return _balanced(parts, POr)

    def parse_pred_and(self):
        parts = [self.parse_pred_not()]
        while self.at_kw("and") or self.at_op("&&"):
            self.advance()
            parts.append(self.parse_pred_not())
        return _balanced(parts, PAnd)

    def parse_pred_not(self):
        if self.at_op("!") or self.at_kw("not"):
            self.advance()
            return PNot(self.parse_pred_not())
        return self.parse_pred_atom()

    def parse_pred_atom(self):
        t = self.tok
        if self.at_op("("):
            self.advance()
            p = self.parse_predicate()
            self.expect_op(")")
            return p
        if self.at_kw("true"):
            self.advance()
            return PTrue()
        if self.at_kw("false"):
            self.advance()
            return PFalse()
        if self.at_kw("payload"):
            self.advance()
            self.expect_op("=")
            s = self.advance()
            if s.kind != "STRING":
                self.error("expected string", s)
            return Payload(bytes(s.text[1:-1], "utf-8").decode("unicode_escape"))
        if t.kind == "FIELD":
            self.advance()
            if self.at_op("="):
                self.advance()
                return Match(t.text, self.parse_value(t.text))
            if self.at_op("!="):
                self.advance()
                return PNot(Match(t.text, self.parse_value(t.text)))
            self.error("expected '=' or '!='")
        if t.kind == "IDENT" and self.peek().kind == "OP" and self.peek().text == ".":
            name = t.text + "." + self.peek(2).text
            raise ParseError(f"unknown header field {name!r}", t.line, t.col)
        self.error("expected a predicate")

    def parse_value(self, fieldname):
        t = self.advance()
        f = FIELDS[fieldname]
        try:
            if t.kind == "MAC":
                value = parse_mac(t.text)
            elif t.kind == "IP":
                value = parse_ip(t.text)
            elif t.kind == "INT":
                value = int(t.text)
            elif t.kind == "HEX":
                value = int(t.text, 16)
            elif t.kind in ("IDENT", "KW") and t.text in SYMBOLIC_VALUES.get(fieldname, {}):
                value = SYMBOLIC_VALUES[fieldname][t.text]
            else:
                raise ParseError(f"invalid value {t.text!r} for {fieldname}", t.line, t.col)
        except ValueError as exc:
            raise ParseError(str(exc), t.line, t.col) from None
        if not 0 <= value <= f.max_value:
            raise ParseError(f"value {t.text} out of range for {fieldname}", t.line, t.col)
        return value

    # path expressions
    def parse_path(self):
        left = self.parse_path_seq()
        while self.at_op("|"):
            self.advance()
            left = Alt(left, self.parse_path_seq())
        return left

    def _starts_path_unary(self):
        t = self.tok
        if t.kind == "OP":
            return t.text in ("!", "(", ".")
        if t.kind == "IDENT":
            nxt = self.peek()
            return not (nxt.kind == "OP" and nxt.text in (":", ":="))
        return False

    def parse_path_seq(self):
        if not self._starts_path_unary():
            self.error("expected a path expression")
        left = self.parse_path_unary()
        while self._starts_path_unary():
            left = Seq(left, self.parse_path_unary())
        return left

    def parse_path_unary(self):
        if self.at_op("!"):
            self.advance()
            return Neg(self.parse_path_unary())
        atom = self.parse_path_atom()
        while self.at_op("*"):
            self.advance()
            atom = Star(atom)
        return atom

    def parse_path_atom(self):
        if self.at_op("."):
            self.advance()
            return Dot()
        if self.at_op("("):
            self.advance()
            e = self.parse_path()
            self.expect_op(")")
            return e
        if self.tok.kind == "IDENT":
            return Sym(self.advance().text)
        self.error("expected a path expression")

    # formulas
    def parse_formula(self):
        left = self.parse_formula_and()
        while self.at_kw("or"):
            self.advance()
            left = FOr(left, self.parse_formula_and())
        return left

    def parse_formula_and(self):
        parts = [self.parse_formula_not()]
        while self.at_kw("and"):
            self.advance()
            parts.append(self.parse_formula_not())
        return _balanced(parts, FAnd)

    def parse_formula_not(self):
        if self.at_op("!") or self.at_kw("not"):
            self.advance()
            return FNot(self.parse_formula_not())
        if self.at_op("("):
            self.advance()
            f = self.parse_formula()
            self.expect_op(")")
            return f
        if self.at_kw("max", "min"):
            kind = self.advance().text
            self.expect_op("(")
            term = self.parse_term()
            self.expect_op(",")
            rate = self.parse_rate()
            self.expect_op(")")
            return Max(term, rate) if kind == "max" else Min(term, rate)
        self.error("expected max(...) or min(...)")

    def parse_term(self):
        ids, const = [], 0
        while True:
            t = self.tok
            if t.kind == "IDENT":
                if t.text in ids:
                    raise ParseError(f"identifier {t.text} repeated in term", t.line, t.col)
                ids.append(self.advance().text)
            elif t.kind in ("INT", "RATE"):
                const += self.parse_rate()
            else:
                self.error("expected identifier or number in term")
            if not self.at_op("+"):
                return Term(tuple(ids), const)
            self.advance()


def parse_program(source) -> Program:
    return Parser(source).parse_program()


# ---------------------------------------------------------------- desugar

_ENDPOINT_FIELDS = {"mac": ("eth.src", "eth.dst"), "ip": ("ip.src", "ip.dst")}


def desugar(program) -> Policy:
    """Expand set literals, ``foreach`` and ``at`` rate clauses.

    Accepts a :class:`Program` or source text.
    """
    if isinstance(program, str):
        program = parse_program(program)
    statements = []
    atoms = []
    seen = set()

    def add(st, rates, where=None):
        if st.id in seen:
            msg = f"duplicate statement identifier {st.id}"
            raise ParseError(msg, *where) if where else ValidationError(msg)
        seen.add(st.id)
        statements.append(st)
        for kind, rate in rates:
            term = Term((st.id,))
            atoms.append(Max(term, rate) if kind == "max" else Min(term, rate))

    block = 0
    for item in program.items:
        if isinstance(item, RawStatement):
            add(item.statement, item.rates, (getattr(item, "line", None), getattr(item, "col", None)))
            continue
        block += 1
        for name in (item.src_set, item.dst_set):
            if name not in program.sets:
                raise ParseError(f"unknown set {name}", item.line, item.col)
            if not program.sets[name]:
                raise ParseError(f"set {name} is empty", item.line, item.col)
        k = 0
        for skind, sval in program.sets[item.src_set]:
            for dkind, dval in program.sets[item.dst_set]:
                k += 1
                pred = PAnd(PAnd(Match(_ENDPOINT_FIELDS[skind][0], sval),
                                 Match(_ENDPOINT_FIELDS[dkind][1], dval)),
                            item.predicate)
                sid = f"fe{block}_{k}"
                if sid in seen:
                    raise ParseError(f"identifier collision after expansion: {sid}",
                                     item.line, item.col)
                add(Statement(sid, pred, item.path), item.rates)
    formula = program.formula
    if atoms:
        formula = conjoin_formulas(formula_conjuncts(formula) + atoms)
    policy = Policy(tuple(statements), formula)
    validate(policy)
    return policy


def parse(source) -> Policy:
    """Parse policy text (core or sugared syntax) into a :class:`Policy`."""
    return desugar(parse_program(source))


def _parse_fragment(source, method):
    parser = Parser(source)
    out = getattr(parser, method)()
    if not parser.at("EOF"):
        parser.error("unexpected trailing input")
    return out


def parse_predicate(source):
    """Parse a lone predicate such as ``tcp.dst = 80 and !(ip.proto = udp)``."""
    return _parse_fragment(source, "parse_predicate")


def parse_path(source):
    """Parse a lone path expression such as ``.* dpi .*``."""
    return _parse_fragment(source, "parse_path")


def load_policy(path) -> Policy:
    with open(path, encoding="utf-8") as fh:
        return parse(fh.read())


def validate(policy):
    ids = [s.id for s in policy.statements]
    dupes = {i for i in ids if ids.count(i) > 1}
    if dupes:
        raise ValidationError(f"duplicate statement identifiers: {sorted(dupes)}")
    if any(not i for i in ids):
        raise ValidationError("empty statement identifier")
    unknown = formula_ids(policy.formula) - set(ids)
    if unknown:
        raise ValidationError(f"formula refers to unknown statements: {sorted(unknown)}")
    _check_rates(policy.formula)


def _check_rates(f):
    if f is None:
        return
    if isinstance(f, (Max, Min)):
        if f.rate < 0:
            raise ValidationError("negative rate")
    elif isinstance(f, (FAnd, FOr)):
        _check_rates(f.left)
        _check_rates(f.right)
    else:
        _check_rates(f.arg)


# -------------------------------------------------------------- normalize

def normalize(policy) -> Policy:
    """Reject overlapping statements and complete the policy with a catch-all.

    The synthesized statement matches every packet no other statement
    matches, may take any path and carries no bandwidth terms.
    """
    validate(policy)
    stmts = list(policy.statements)
    hit = preds.find_overlap([s.predicate for s in stmts])
    if hit is not None:
        i, j, w = hit
        raise OverlapError(stmts[i].id, stmts[j].id, w)
    dnfs = [preds.to_dnf(s.predicate) for s in stmts]
    covered = sum(preds.dnf_count(d) for d in dnfs)
    if covered != preds.universe_size():
        if CATCH_ALL_ID in {s.id for s in stmts}:
            raise ValidationError(f"identifier {CATCH_ALL_ID} is reserved")
        rest = PNot(disjoin(s.predicate for s in stmts))
        stmts.append(Statement(CATCH_ALL_ID, rest, any_path()))
    return Policy(tuple(stmts), policy.formula, dict(policy.metadata))


def pretty(policy) -> str:
    return format_policy(policy)
