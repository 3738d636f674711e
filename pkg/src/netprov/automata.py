"""Finite automata over a finite alphabet of network locations."""

from collections import deque
from typing import Optional, Sequence, Tuple

from .syntax import Alt, Dot, Neg, PathExpr, Seq, Star, Sym, alt_of


class AutomatonError(ValueError):
    pass


NO_LABEL = frozenset([None])


def make_alphabet(names):
    names = tuple(sorted(set(names)))
    if not names:
        raise AutomatonError("alphabet must be nonempty")
    return names


def substitute_functions(expr: PathExpr, placement) -> PathExpr:
    """Replace each function name by the alternation of its locations."""
    if isinstance(expr, Sym):
        if expr.name in placement:
            locs = sorted(placement[expr.name])
            if not locs:
                raise AutomatonError(f"function {expr.name} has no placement location")
            return alt_of(Sym(loc) for loc in locs)
        return expr
    if isinstance(expr, Seq):
        return Seq(substitute_functions(expr.left, placement),
                   substitute_functions(expr.right, placement))
    if isinstance(expr, Alt):
        return Alt(substitute_functions(expr.left, placement),
                   substitute_functions(expr.right, placement))
    if isinstance(expr, Star):
        return Star(substitute_functions(expr.arg, placement))
    if isinstance(expr, Neg):
        return Neg(substitute_functions(expr.arg, placement))
    return expr


class PathAutomaton:
    """An epsilon-free automaton; immutable after construction.

    ``delta[q]`` maps a symbol to the frozenset of successor states.
    ``labels`` maps a transition ``(q, symbol, q')`` to the set of packet
    functions that may be applied when taking it (``None`` meaning no
    function).  Transitions absent from the map carry only ``None``.
    """

    __slots__ = ("alphabet", "n_states", "start", "accepting", "delta",
                 "labels", "deterministic", "subsets")

    def __init__(self, alphabet, n_states, start, accepting, delta, labels=None,
                 deterministic=False, subsets=None):
        self.alphabet = tuple(alphabet)
        self.n_states = n_states
        self.start = start
        self.accepting = frozenset(accepting)
        self.delta = tuple({a: frozenset(t) for a, t in d.items() if t} for d in delta)
        self.labels = dict(labels or {})
        self.deterministic = deterministic
        # for a determinized automaton: the source automaton's states per state
        self.subsets = subsets

    def __repr__(self):
        kind = "DFA" if self.deterministic else "NFA"
        return (f"<{kind} states={self.n_states} accepting={sorted(self.accepting)} "
                f"alphabet={len(self.alphabet)}>")

    def label_options(self, q, symbol, r):
        return self.labels.get((q, symbol, r), NO_LABEL)

    def choose_label(self, q, symbol, r):
        """Preferred function for a transition: none if allowed, else the first."""
        opts = self.label_options(q, symbol, r)
        return None if None in opts else min(opts)

    @property
    def states(self):
        return range(self.n_states)

    def successors(self, q, symbol):
        return self.delta[q].get(symbol, frozenset())

    def transitions(self):
        for q, d in enumerate(self.delta):
            for a, targets in d.items():
                for r in targets:
                    yield q, a, r

    def step(self, states, symbol):
        out = set()
        for q in states:
            out |= self.delta[q].get(symbol, frozenset())
        return out

    def accepts(self, word):
        cur = {self.start}
        for a in word:
            cur = self.step(cur, a)
            if not cur:
                return False
        return bool(cur & self.accepting)

    def accepts_stuttered(self, word):
        """Accept if some word repeating each symbol one or more times is accepted."""
        cur = {self.start}
        for a in word:
            cur = self.step(cur, a)
            frontier = set(cur)
            while frontier:
                frontier = self.step(frontier, a) - cur
                cur |= frontier
            if not cur:
                return False
        return bool(cur & self.accepting)

    def accepts_labeled(self, word, functions):
        """Accept ``word`` applying exactly ``functions`` (one entry per position)."""
        if len(word) != len(functions):
            return False
        cur = {self.start}
        for a, fn in zip(word, functions):
            cur = {r for q in cur for r in self.delta[q].get(a, ())
                   if fn in self.label_options(q, a, r)}
            if not cur:
                return False
        return bool(cur & self.accepting)

    def is_empty(self):
        return self.shortest_word() is None

    def shortest_word(self):
        """A shortest accepted word (BFS), or ``None`` if the language is empty."""
        parent = {self.start: None}
        queue = deque([self.start])
        while queue:
            q = queue.popleft()
            if q in self.accepting:
                word = []
                while parent[q] is not None:
                    q, a = parent[q]
                    word.append(a)
                return word[::-1]
            for a in self.alphabet:
                for r in sorted(self.delta[q].get(a, ())):
                    if r not in parent:
                        parent[r] = (q, a)
                        queue.append(r)
        return None

    def labeled_run(self, word):
        """Function labels along some accepting run on ``word``.

        Returns a list with one entry per position (a function name or
        ``None``), or ``None`` when the word is rejected.  The run is chosen
        deterministically: earliest-discovered predecessors win.
        """
        layers = [{self.start: None}]
        for a in word:
            nxt = {}
            for q in sorted(layers[-1]):
                for r in sorted(self.delta[q].get(a, ())):
                    if r not in nxt:
                        nxt[r] = q
            if not nxt:
                return None
            layers.append(nxt)
        finals = sorted(set(layers[-1]) & self.accepting)
        if not finals:
            return None
        q = finals[0]
        out = []
        for i in range(len(word), 0, -1):
            p = layers[i][q]
            out.append(self.choose_label(p, word[i - 1], q))
            q = p
        return out[::-1]


# ------------------------------------------------------- Thompson builder

class _EpsNFA:
    def __init__(self):
        self.eps = []
        self.trans = []

    def new(self):
        self.eps.append(set())
        self.trans.append([])
        return len(self.eps) - 1


def compile_path(expr: PathExpr, alphabet: Sequence[str], placement=None) -> PathAutomaton:
    """Compile a path expression to an epsilon-free NFA.

    Symbols must be locations in ``alphabet`` or, when ``placement`` is
    given, function names (which expand to their locations and label the
    resulting transitions).
    """
    alphabet = tuple(alphabet)
    alpha_set = set(alphabet)
    if not alphabet:
        raise AutomatonError("alphabet must be nonempty")
    m = _EpsNFA()

    def build(e):
        if isinstance(e, Dot):
            s, t = m.new(), m.new()
            for a in alphabet:
                m.trans[s].append((a, t, None))
            return s, t
        if isinstance(e, Sym):
            s, t = m.new(), m.new()
            if e.name in alpha_set:
                m.trans[s].append((e.name, t, None))
            elif placement is not None and e.name in placement:
                locs = sorted(placement[e.name])
                if not locs:
                    raise AutomatonError(f"function {e.name} has no placement location")
                for loc in locs:
                    if loc not in alpha_set:
                        raise AutomatonError(f"placement location {loc} not in alphabet")
                    m.trans[s].append((loc, t, e.name))
            else:
                raise AutomatonError(f"symbol {e.name!r} is not a known location or function")
            return s, t
        if isinstance(e, Seq):
            s1, t1 = build(e.left)
            s2, t2 = build(e.right)
            m.eps[t1].add(s2)
            return s1, t2
        if isinstance(e, Alt):
            s1, t1 = build(e.left)
            s2, t2 = build(e.right)
            s, t = m.new(), m.new()
            m.eps[s].update((s1, s2))
            m.eps[t1].add(t)
            m.eps[t2].add(t)
            return s, t
        if isinstance(e, Star):
            s1, t1 = build(e.arg)
            s, t = m.new(), m.new()
            m.eps[s].update((s1, t))
            m.eps[t1].update((s1, t))
            return s, t
        if isinstance(e, Neg):
            inner = complement(determinize(compile_path(e.arg, alphabet, placement)))
            base = len(m.eps)
            for _ in range(inner.n_states):
                m.new()
            for q, a, r in inner.transitions():
                m.trans[base + q].append((a, base + r, None))
            s, t = m.new(), m.new()
            m.eps[s].add(base + inner.start)
            for q in inner.accepting:
                m.eps[base + q].add(t)
            return s, t
        raise TypeError(f"not a path expression: {e!r}")

    start, final = build(expr)
    return _eliminate_epsilon(m, start, final, alphabet)


def _eliminate_epsilon(m, start, final, alphabet):
    n = len(m.eps)
    closure = []
    for q in range(n):
        seen = {q}
        stack = [q]
        while stack:
            p = stack.pop()
            for r in m.eps[p]:
                if r not in seen:
                    seen.add(r)
                    stack.append(r)
        closure.append(seen)
    # only states that are the start or the target of a symbol transition survive
    keep = {start} | {r for q in range(n) for _, r, _ in m.trans[q]}
    delta = {}
    labels = {}
    for q in keep:
        d = {}
        for p in sorted(closure[q]):
            for a, r, lab in m.trans[p]:
                d.setdefault(a, set()).add(r)
                labels.setdefault((q, a, r), set()).add(lab)
        delta[q] = d
    labels = {k: frozenset(v) for k, v in labels.items() if v != {None}}
    accepting = {q for q in keep if final in closure[q]}
    return _renumber(alphabet, start, delta, accepting, labels)


def _renumber(alphabet, start, delta, accepting, labels, deterministic=False):
    """Trim to useful states, merge bisimilar ones, and number them from 0."""
    reach = {start}
    queue = deque([start])
    while queue:
        q = queue.popleft()
        for targets in delta[q].values():
            for r in targets:
                if r not in reach:
                    reach.add(r)
                    queue.append(r)
    rev = {q: set() for q in reach}
    for q in reach:
        for targets in delta[q].values():
            for r in targets:
                rev[r].add(q)
    live = {q for q in reach if q in accepting}
    queue = deque(live)
    while queue:
        q = queue.popleft()
        for p in rev[q]:
            if p not in live:
                live.add(p)
                queue.append(p)
    if start not in live:
        return PathAutomaton(alphabet, 1, 0, (), [{}], {}, deterministic)
    states = sorted(live, key=lambda q: (q != start, q))
    delta = {q: {a: {r for r in t if r in live} for a, t in delta[q].items()} for q in states}
    block = _bisimulation_blocks(states, delta, accepting, alphabet, start, labels)
    nblocks = max(block.values()) + 1
    new_delta = [dict() for _ in range(nblocks)]
    new_labels = {}
    for q in states:
        b = block[q]
        for a, targets in delta[q].items():
            for r in targets:
                new_delta[b].setdefault(a, set()).add(block[r])
                opts = labels.get((q, a, r), NO_LABEL)
                new_labels.setdefault((b, a, block[r]), set()).update(opts)
    new_labels = {k: frozenset(v) for k, v in new_labels.items() if v != {None}}
    new_acc = {block[q] for q in states if q in accepting}
    det = deterministic or all(len(t) <= 1 for d in new_delta for t in d.values())
    return PathAutomaton(alphabet, nblocks, block[start], new_acc, new_delta, new_labels, det)


def _bisimulation_blocks(states, delta, accepting, alphabet, start, labels):
    """Coarsest partition where related states agree on acceptance and reach
    the same blocks, through the same function labels, on every symbol."""
    block = {q: (1 if q in accepting else 0) for q in states}
    while True:
        sigs = {}
        new_block = {}
        for q in states:
            sig = (block[q], tuple(
                (a, frozenset((block[r], labels.get((q, a, r), NO_LABEL))
                              for r in delta[q][a]))
                for a in alphabet if delta[q].get(a)))
            new_block[q] = sigs.setdefault(sig, len(sigs))
        if len(sigs) == len(set(block.values())):
            break
        block = new_block
    # renumber blocks so the start block is 0 and numbering follows state order
    order = {}
    for q in sorted(states, key=lambda q: (q != start, q)):
        order.setdefault(new_block[q], len(order))
    return {q: order[new_block[q]] for q in states}


# ------------------------------------------------------------- operations

def determinize(a: PathAutomaton, force=False) -> PathAutomaton:
    """Subset construction; missing transitions go to an implicit sink.

    The result records, per state, the subset of ``a``'s states it stands
    for.  An already deterministic input is returned as-is unless ``force``.
    """
    if a.deterministic and not force:
        return a
    start = frozenset([a.start])
    index = {start: 0}
    order = [start]
    delta = []
    i = 0
    while i < len(order):
        subset = order[i]
        d = {}
        for sym in a.alphabet:
            t = set()
            for q in subset:
                t |= a.delta[q].get(sym, frozenset())
            if t:
                t = frozenset(t)
                if t not in index:
                    index[t] = len(order)
                    order.append(t)
                d[sym] = {index[t]}
        delta.append(d)
        i += 1
    accepting = {index[s] for s in order if s & a.accepting}
    return PathAutomaton(a.alphabet, len(order), 0, accepting, delta, deterministic=True,
                         subsets=tuple(order))


def complement(a: PathAutomaton) -> PathAutomaton:
    """Complement over ``a.alphabet`` (determinizing first if needed)."""
    d = determinize(a)
    sink = d.n_states
    delta = []
    for q in range(d.n_states):
        row = {}
        for sym in d.alphabet:
            t = d.delta[q].get(sym)
            row[sym] = set(t) if t else {sink}
        delta.append(row)
    delta.append({sym: {sink} for sym in d.alphabet})
    accepting = set(range(d.n_states + 1)) - set(d.accepting)
    return PathAutomaton(d.alphabet, d.n_states + 1, d.start, accepting, delta,
                         deterministic=True)


def intersect(a: PathAutomaton, b: PathAutomaton) -> PathAutomaton:
    """Product automaton accepting ``L(a) & L(b)``; labels come from ``a``."""
    if a.alphabet != b.alphabet:
        raise AutomatonError("alphabets differ")
    start = (a.start, b.start)
    index = {start: 0}
    order = [start]
    delta = {}
    labels = {}
    i = 0
    while i < len(order):
        qa, qb = order[i]
        row = {}
        for sym in a.alphabet:
            for ra in a.delta[qa].get(sym, ()):
                for rb in b.delta[qb].get(sym, ()):
                    key = (ra, rb)
                    if key not in index:
                        index[key] = len(order)
                        order.append(key)
                    row.setdefault(sym, set()).add(index[key])
                    opts = a.labels.get((qa, sym, ra))
                    if opts is not None:
                        labels.setdefault((i, sym, index[key]), set()).update(opts)
        delta[i] = row
        i += 1
    accepting = {index[(qa, qb)] for qa, qb in order
                 if qa in a.accepting and qb in b.accepting}
    labels = {k: frozenset(v) for k, v in labels.items()}
    return _renumber(a.alphabet, 0, delta, accepting, labels,
                     deterministic=a.deterministic and b.deterministic)


def includes(a: PathAutomaton, b: PathAutomaton, nonempty=False) -> Tuple[bool, Optional[list]]:
    """Decide ``L(a) <= L(b)`` (ignoring the empty word when ``nonempty``).

    Explores the product of ``a`` with the lazily determinized complement of
    ``b`` breadth-first, so a returned counterexample is a shortest word in
    ``L(a) - L(b)``.
    """
    if a.alphabet != b.alphabet:
        raise AutomatonError("alphabets differ")
    # the flag records whether at least one symbol has been read
    start = (a.start, frozenset([b.start]), False)
    parent = {start: None}
    queue = deque([start])
    step = {}  # (subset of b, symbol) -> successor subset, shared by all states of a
    while queue:
        node = queue.popleft()
        qa, sb, moved = node
        if qa in a.accepting and not (sb & b.accepting) and (moved or not nonempty):
            word = []
            while parent[node] is not None:
                node, sym = parent[node]
                word.append(sym)
            return False, word[::-1]
        for sym in a.alphabet:
            ta = a.delta[qa].get(sym)
            if not ta:
                continue
            nb = step.get((sb, sym))
            if nb is None:
                nb = set()
                for q in sb:
                    nb |= b.delta[q].get(sym, frozenset())
                nb = step[(sb, sym)] = frozenset(nb)
            for ra in sorted(ta):
                nxt = (ra, nb, True)
                if nxt not in parent:
                    parent[nxt] = (node, sym)
                    queue.append(nxt)
    return True, None


def equivalent(a, b):
    return includes(a, b)[0] and includes(b, a)[0]


def symbolic_alphabet(*exprs, extra=()):
    """Alphabet of all symbols in ``exprs`` plus a fresh stand-in for the rest."""
    from .syntax import path_symbols
    names = set(extra)
    for e in exprs:
        names |= path_symbols(e)
    names.add(OTHER)
    return make_alphabet(names)


# stands for every location not named in the expressions being compared
OTHER = "_other"
