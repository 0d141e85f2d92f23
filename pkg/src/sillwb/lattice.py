"""Security join-semilattices, security-term algebra, and constraint entailment.

A program's security levels form a finite join-semilattice with a greatest
element.  Process definitions are checked under a *theory*: a set of ordering
hypotheses over security variables.  The central judgment here is
``entails(theory, lat, lhs, rhs)``: does ``lhs <= rhs`` hold under every
valuation of the theory's variables that satisfies its hypotheses?
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache


class LatticeError(Exception):
    """Raised when a semilattice spec or a security term is ill-formed."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


# ---------------------------------------------------------------------------
# security terms

@dataclass(frozen=True)
class SecTerm:
    __slots__ = ()


@dataclass(frozen=True)
class Const(SecTerm):
    name: str

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class SVar(SecTerm):
    name: str

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Join(SecTerm):
    left: SecTerm
    right: SecTerm

    def __str__(self):
        return f"{self.left} | {self.right}"


def join_of(terms) -> SecTerm:
    """Right-nested join of a non-empty term sequence."""
    terms = list(terms)
    if not terms:
        raise LatticeError("empty join")
    out = terms[-1]
    for t in reversed(terms[:-1]):
        out = Join(t, out)
    return out


def atoms(t: SecTerm):
    """Yield the non-join leaves of a term, left to right."""
    if isinstance(t, Join):
        yield from atoms(t.left)
        yield from atoms(t.right)
    else:
        yield t


def term_vars(t: SecTerm) -> frozenset[str]:
    return frozenset(a.name for a in atoms(t) if isinstance(a, SVar))


def normalize(t: SecTerm) -> SecTerm:
    """Flatten a term to a canonical join of distinct atoms (sorted)."""
    seen = []
    for a in atoms(t):
        if a not in seen:
            seen.append(a)
    seen.sort(key=lambda a: (isinstance(a, SVar), getattr(a, "name", "")))
    return join_of(seen)


def apply_subst(subst: dict[str, SecTerm], t: SecTerm) -> SecTerm:
    """Capture-free substitution of security variables."""
    if isinstance(t, Const):
        return t
    if isinstance(t, SVar):
        if t.name not in subst:
            raise LatticeError(f"unbound security variable {t.name}")
        return subst[t.name]
    return Join(apply_subst(subst, t.left), apply_subst(subst, t.right))


# ---------------------------------------------------------------------------
# the concrete semilattice

@dataclass(frozen=True)
class SemilatticeSpec:
    """Declared levels plus a set of order pairs ``(lo, hi)``.

    ``lines`` preserves the surface form (levels listed in decreasing order
    of secrecy, one group of mutually incomparable levels per line); it is
    used only for printing.  The order relation itself is ``pairs``.
    """

    elements: tuple[str, ...]
    pairs: tuple[tuple[str, str], ...]
    lines: tuple[tuple[str, ...], ...] = field(default=(), compare=False)

    @classmethod
    def from_lines(cls, lines) -> "SemilatticeSpec":
        lines = tuple(tuple(line) for line in lines)
        elements = tuple(e for line in lines for e in line)
        pairs = []
        for above, below in zip(lines, lines[1:]):
            for hi in above:
                for lo in below:
                    pairs.append((lo, hi))
        return cls(elements, tuple(pairs), lines)

    @classmethod
    def from_pairs(cls, elements, pairs) -> "SemilatticeSpec":
        return cls(tuple(elements), tuple(tuple(p) for p in pairs))


class Semilattice:
    """A validated finite join-semilattice with a top element."""

    def __init__(self, elements, leq_pairs, join_table, top):
        self.elements: tuple[str, ...] = tuple(elements)
        self._leq: frozenset[tuple[str, str]] = frozenset(leq_pairs)
        self._join: dict[tuple[str, str], str] = dict(join_table)
        self.top: str = top

    def leq(self, a: str, b: str) -> bool:
        return (a, b) in self._leq

    def join(self, a: str, b: str) -> str:
        return self._join[(a, b)]

    def join_table(self) -> dict[tuple[str, str], str]:
        return dict(self._join)

    def __contains__(self, name: str) -> bool:
        return name in self.elements

    def __repr__(self):
        return f"Semilattice({', '.join(self.elements)}; top={self.top})"


def validate_semilattice(spec: SemilatticeSpec) -> Semilattice:
    """Check the semilattice axioms and compute the join table.

    The declared order is closed reflexively and transitively.  Rejected:
    order cycles between distinct names, element pairs without an upper
    bound, and pairs whose minimal upper bounds are ambiguous.  A greatest
    element must exist.
    """
    problems = []
    elems = list(dict.fromkeys(spec.elements))
    if len(elems) != len(spec.elements):
        problems.append("duplicate level names")
    if not elems:
        raise LatticeError(["no security levels declared"])
    known = set(elems)
    for lo, hi in spec.pairs:
        for name in (lo, hi):
            if name not in known:
                problems.append(f"undeclared level {name} in order")
    if problems:
        raise LatticeError(problems)

    leq = {(e, e) for e in elems}
    leq.update((lo, hi) for lo, hi in spec.pairs)
    changed = True
    while changed:
        changed = False
        for a, b in list(leq):
            for b2, c in list(leq):
                if b2 == b and (a, c) not in leq:
                    leq.add((a, c))
                    changed = True

    for a, b in itertools.combinations(elems, 2):
        if (a, b) in leq and (b, a) in leq:
            problems.append(f"order cycle between {a} and {b}")
    if problems:
        raise LatticeError(problems)

    join = {}
    for a in elems:
        for b in elems:
            ubs = [c for c in elems if (a, c) in leq and (b, c) in leq]
            if not ubs:
                problems.append(f"no upper bound for {a} and {b}")
                continue
            minimal = [c for c in ubs
                       if not any(d != c and (d, c) in leq for d in ubs)]
            if len(minimal) != 1:
                names = ", ".join(sorted(minimal))
                problems.append(f"ambiguous join for {a} and {b}: {names}")
                continue
            join[(a, b)] = minimal[0]
    if problems:
        raise LatticeError(sorted(set(problems)))

    tops = [c for c in elems if all((e, c) in leq for e in elems)]
    if len(tops) != 1:
        raise LatticeError(["no greatest element"])
    return Semilattice(elems, leq, join, tops[0])


def join_eval(t: SecTerm, val: dict[str, str], lat: Semilattice) -> str:
    """Evaluate a term to a concrete level under a valuation."""
    if isinstance(t, Const):
        if t.name not in lat:
            raise LatticeError(f"unknown level {t.name}")
        return t.name
    if isinstance(t, SVar):
        if t.name not in val:
            raise LatticeError(f"unbound security variable {t.name}")
        return val[t.name]
    return lat.join(join_eval(t.left, val, lat), join_eval(t.right, val, lat))


# ---------------------------------------------------------------------------
# theories and entailment

@dataclass(frozen=True)
class Theory:
    """Named hypotheses ``lhs <= rhs`` over a set of security variables."""

    name: str = ""
    vars: tuple[str, ...] = ()
    hyps: tuple[tuple[SecTerm, SecTerm], ...] = ()

    def well_formed(self, lat: Semilattice):
        declared = set(self.vars)
        for lhs, rhs in self.hyps:
            for side in (lhs, rhs):
                for a in atoms(side):
                    if isinstance(a, SVar) and a.name not in declared:
                        raise LatticeError(
                            f"theory {self.name}: undeclared variable {a.name}")
                    if isinstance(a, Const) and a.name not in lat:
                        raise LatticeError(
                            f"theory {self.name}: unknown level {a.name}")


EMPTY_THEORY = Theory()


def _term_key(t: SecTerm):
    return str(normalize(t))


def _saturate(theory: Theory, lat: Semilattice, goal) -> bool:
    """Closure-based proof search for ``goal`` under the theory.

    Sound but not complete for entailment over a fixed finite lattice
    (completeness would require case analysis over valuations); callers
    fall back to valuation enumeration when this fails to prove the goal.
    """
    lhs_g, rhs_g = goal
    universe: dict[str, SecTerm] = {}

    def add_term(t):
        t = normalize(t)
        universe.setdefault(str(t), t)
        if isinstance(t, Join):
            add_term(t.left)
            add_term(t.right)

    for l, r in theory.hyps:
        add_term(l)
        add_term(r)
    add_term(lhs_g)
    add_term(rhs_g)
    for e in lat.elements:
        add_term(Const(e))

    rel: set[tuple[str, str]] = set()

    def key(t):
        return str(normalize(t))

    terms = list(universe.values())
    for t in terms:
        rel.add((key(t), key(t)))
        rel.add((key(t), key(Const(lat.top))))
        if isinstance(t, Join):
            for a in atoms(t):
                rel.add((key(a), key(t)))
    for a in lat.elements:
        for b in lat.elements:
            if lat.leq(a, b):
                rel.add((key(Const(a)), key(Const(b))))
    for t in terms:
        leaves = list(atoms(t))
        if all(isinstance(a, Const) for a in leaves):
            v = join_eval(t, {}, lat)
            rel.add((key(t), key(Const(v))))
            rel.add((key(Const(v)), key(t)))
    for l, r in theory.hyps:
        rel.add((key(l), key(r)))

    changed = True
    while changed:
        changed = False
        for t in terms:
            if isinstance(t, Join):
                kt = key(t)
                for c in terms:
                    kc = key(c)
                    if (kt, kc) not in rel and all(
                            (key(a), kc) in rel for a in atoms(t)):
                        rel.add((kt, kc))
                        changed = True
        snapshot = list(rel)
        for a, b in snapshot:
            for b2, c in snapshot:
                if b == b2 and (a, c) not in rel:
                    rel.add((a, c))
                    changed = True
    return (key(lhs_g), key(rhs_g)) in rel


def valuations(theory: Theory, lat: Semilattice):
    """All hypothesis-satisfying valuations of the theory's variables."""
    names = sorted(theory.vars)
    for combo in itertools.product(lat.elements, repeat=len(names)):
        val = dict(zip(names, combo))
        if all(lat.leq(join_eval(l, val, lat), join_eval(r, val, lat))
               for l, r in theory.hyps):
            yield val


@lru_cache(maxsize=None)
def _entails_cached(theory, lat_id, lhs, rhs):
    lat = _LATTICES[lat_id]
    if not term_vars(lhs) and not term_vars(rhs) and not theory.hyps:
        return lat.leq(join_eval(lhs, {}, lat), join_eval(rhs, {}, lat))
    if _saturate(theory, lat, (lhs, rhs)):
        return True
    any_val = False
    for val in valuations(theory, lat):
        any_val = True
        if not lat.leq(join_eval(lhs, val, lat), join_eval(rhs, val, lat)):
            return False
    return any_val  # an unsatisfiable theory entails nothing


_LATTICES: dict[int, Semilattice] = {}


def entails(theory: Theory, lat: Semilattice, lhs: SecTerm, rhs: SecTerm) -> bool:
    """Semantic entailment: every satisfying valuation makes ``lhs <= rhs``.

    Fast path is closure-based saturation; valuation enumeration settles
    the cases saturation cannot prove.  An unsatisfiable theory entails
    nothing (definitions with vacuous theories are rejected upstream).
    """
    _LATTICES[id(lat)] = lat
    return _entails_cached(theory, id(lat),
                           normalize(lhs), normalize(rhs))


def entails_eq(theory: Theory, lat: Semilattice, a: SecTerm, b: SecTerm) -> bool:
    return entails(theory, lat, a, b) and entails(theory, lat, b, a)


def satisfiable(theory: Theory, lat: Semilattice) -> dict[str, str] | None:
    """A satisfying valuation if one exists (minimal by total height)."""
    return minimal_valuation(theory, lat)


def minimal_valuation(theory: Theory, lat: Semilattice) -> dict[str, str] | None:
    """The satisfying valuation of least cumulative height, ties by name.

    Height of a level is the number of levels strictly below it; preferring
    low levels keeps instantiated channels observable to low observers.
    """
    def height(e):
        return sum(1 for d in lat.elements if d != e and lat.leq(d, e))

    best = None
    best_score = None
    for val in valuations(theory, lat):
        score = (sum(height(v) for v in val.values()),
                 tuple(val[k] for k in sorted(val)))
        if best_score is None or score < best_score:
            best, best_score = val, score
    return best


def check_subst(caller: Theory, subst: dict[str, SecTerm],
                callee: Theory, lat: Semilattice) -> list[str]:
    """Check that a secrecy substitution lets the caller assert the callee's
    theory: every callee hypothesis, instantiated, must be entailed by the
    caller's theory.  Returns failure messages (empty means accepted)."""
    failures = []
    for v in callee.vars:
        if v not in subst:
            failures.append(f"missing binding for {v}")
    if failures:
        return failures
    for lhs, rhs in callee.hyps:
        inst_l = apply_subst(subst, lhs)
        inst_r = apply_subst(subst, rhs)
        if not entails(caller, lat, inst_l, inst_r):
            failures.append(f"constraint {lhs} <= {rhs} not entailed "
                            f"(instantiated: {inst_l} <= {inst_r})")
    return failures
