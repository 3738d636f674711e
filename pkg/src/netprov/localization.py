"""Split aggregate bandwidth terms into per-statement terms.

Every ``max``/``min`` atom over several identifiers is replaced by one atom
per identifier.  The local bounds always sum to the original bound, so
meeting every local cap (guarantee) meets the aggregate one.
"""

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

from .syntax import FNot, FOr, Formula, Max, Min, Term, conjoin_formulas, formula_conjuncts


class LocalizationError(ValueError):
    pass


class UnsupportedFormula(LocalizationError):
    pass


@dataclass(frozen=True)
class LocalAtom:
    kind: str  # "max" or "min"
    sid: str
    rate: int
    origin: Formula

    def formula(self):
        cls = Max if self.kind == "max" else Min
        return cls(Term((self.sid,)), self.rate)


@dataclass(frozen=True)
class LocalizedFormula:
    atoms: Tuple[LocalAtom, ...] = ()

    def formula(self):
        return conjoin_formulas(a.formula() for a in self.atoms)

    def caps(self) -> Dict[str, int]:
        """Tightest cap per statement."""
        out = {}
        for a in self.atoms:
            if a.kind == "max":
                out[a.sid] = min(out.get(a.sid, a.rate), a.rate)
        return out

    def guarantees(self) -> Dict[str, int]:
        """Largest guarantee per statement; zero-rate guarantees are dropped."""
        out = {}
        for a in self.atoms:
            if a.kind == "min" and a.rate > 0:
                out[a.sid] = max(out.get(a.sid, 0), a.rate)
        return out

    def max_atoms(self):
        return [a for a in self.atoms if a.kind == "max"]


def conjunctive_atoms(f):
    """The Max/Min atoms of a purely conjunctive formula."""
    atoms = formula_conjuncts(f)
    for g in atoms:
        if isinstance(g, (FOr, FNot)):
            raise UnsupportedFormula("bandwidth formulas with 'or' or negation are not supported")
        if not isinstance(g, (Max, Min)):
            raise TypeError(f"not a formula: {g!r}")
    return atoms


def split_bound(total, ids, weights=None):
    """Divide ``total`` among ``ids``; floor shares, remainder to the first id."""
    ids = list(ids)
    if weights is None:
        shares = {i: total // len(ids) for i in ids}
    else:
        try:
            ws = {i: weights[i] for i in ids}
        except KeyError as exc:
            raise LocalizationError(f"no weight for identifier {exc.args[0]}") from None
        if any(w < 0 for w in ws.values()) or sum(ws.values()) <= 0:
            raise LocalizationError("weights must be nonnegative with a positive sum")
        wsum = sum(ws.values())
        # exact integer floor of total * w / wsum (weights may be Fractions)
        shares = {i: int(total * w // wsum) for i, w in ws.items()}
    first = min(ids)
    shares[first] += total - sum(shares.values())
    return shares


def localize(f: Optional[Formula], scheme="equal", weights=None, known_ids=None):
    """Rewrite ``f`` into single-identifier atoms.

    ``scheme`` is ``"equal"`` or ``"weighted"`` (the latter needs ``weights``,
    a map from identifier to a nonnegative number).
    """
    if scheme not in ("equal", "weighted"):
        raise LocalizationError(f"unknown split scheme {scheme!r}")
    if scheme == "weighted" and weights is None:
        raise LocalizationError("weighted split needs weights")
    atoms = []
    for atom in conjunctive_atoms(f):
        kind = "max" if isinstance(atom, Max) else "min"
        ids = atom.term.ids
        if known_ids is not None:
            for i in ids:
                if i not in known_ids:
                    raise LocalizationError(f"unknown statement identifier {i}")
        bound = atom.rate - atom.term.const
        if not ids:
            if kind == "max" and bound < 0:
                raise LocalizationError(f"constant term exceeds its cap in {atom}")
            if kind == "min" and bound > 0:
                raise LocalizationError(f"constant term falls short of its guarantee in {atom}")
            continue
        if bound < 0:
            if kind == "max":
                raise LocalizationError(f"cap is below the term's constant in {atom}")
            bound = 0
        if len(ids) == 1:
            atoms.append(LocalAtom(kind, ids[0], bound, atom))
            continue
        shares = split_bound(bound, ids, weights if scheme == "weighted" else None)
        for i in ids:
            atoms.append(LocalAtom(kind, i, shares[i], atom))
    return LocalizedFormula(tuple(atoms))
