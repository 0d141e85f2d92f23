"""Abstract syntax for session types and process terms, plus the
equi-recursive type utilities (contractivity, unfolding, type equality)
and desugaring of tail calls and forwards.

Channel references in terms are variable names (``str``) in source programs;
the runtime substitutes ``runtime.Channel`` values in their place, so every
operation here treats references as opaque hashables.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

from .lattice import SecTerm, SVar, Theory

Ref = object  # str in source terms, runtime.Channel in executing terms


class SillError(Exception):
    """A source-level error carrying one or more diagnostics."""

    def __init__(self, message, span=None, diagnostics=None):
        self.span = span
        self.diagnostics = diagnostics or []
        super().__init__(message)


@dataclass(frozen=True)
class Span:
    line: int
    col: int

    def __str__(self):
        return f"{self.line}:{self.col}"


def _span_field():
    return field(default=None, compare=False, repr=False)


# ---------------------------------------------------------------------------
# session types

@dataclass(frozen=True)
class TypeExpr:
    __slots__ = ()


@dataclass(frozen=True)
class One(TypeExpr):
    span: Span | None = _span_field()


@dataclass(frozen=True)
class Plus(TypeExpr):
    branches: tuple[tuple[str, TypeExpr], ...]
    span: Span | None = _span_field()


@dataclass(frozen=True)
class With(TypeExpr):
    branches: tuple[tuple[str, TypeExpr], ...]
    span: Span | None = _span_field()


@dataclass(frozen=True)
class Tensor(TypeExpr):
    left: TypeExpr
    right: TypeExpr
    span: Span | None = _span_field()


@dataclass(frozen=True)
class Lolli(TypeExpr):
    left: TypeExpr
    right: TypeExpr
    span: Span | None = _span_field()


@dataclass(frozen=True)
class TVar(TypeExpr):
    name: str
    span: Span | None = _span_field()


def branch_map(t) -> dict[str, TypeExpr]:
    return dict(t.branches)


# ---------------------------------------------------------------------------
# process terms

@dataclass(frozen=True)
class ProcTerm:
    __slots__ = ()


@dataclass(frozen=True)
class SendLabel(ProcTerm):
    chan: Ref
    label: str
    cont: ProcTerm
    ann: SecTerm | None = None
    span: Span | None = _span_field()


@dataclass(frozen=True)
class Case(ProcTerm):
    chan: Ref
    branches: tuple[tuple[str, ProcTerm], ...]
    ann: SecTerm | None = None
    span: Span | None = _span_field()


@dataclass(frozen=True)
class SendChan(ProcTerm):
    payload: Ref
    carrier: Ref
    cont: ProcTerm
    ann: SecTerm | None = None
    span: Span | None = _span_field()


@dataclass(frozen=True)
class RecvChan(ProcTerm):
    binder: str
    carrier: Ref
    cont: ProcTerm
    ann: SecTerm | None = None
    span: Span | None = _span_field()


@dataclass(frozen=True)
class Close(ProcTerm):
    chan: Ref
    ann: SecTerm | None = None
    span: Span | None = _span_field()


@dataclass(frozen=True)
class Wait(ProcTerm):
    chan: Ref
    cont: ProcTerm
    ann: SecTerm | None = None
    span: Span | None = _span_field()


@dataclass(frozen=True)
class Spawn(ProcTerm):
    binder: str
    proc: str
    secsubst: tuple[tuple[str, SecTerm], ...] | None
    args: tuple[Ref, ...]
    cont: ProcTerm
    span: Span | None = _span_field()


@dataclass(frozen=True)
class TailCall(ProcTerm):
    """Surface form only; desugars to a spawn followed by a forward."""

    binder: str
    proc: str
    secsubst: tuple[tuple[str, SecTerm], ...] | None
    args: tuple[Ref, ...]
    span: Span | None = _span_field()


@dataclass(frozen=True)
class Fwd(ProcTerm):
    """Identity between two channels of the same type.

    ``tname`` is filled in by desugaring when the shared type is a defined
    type name; such resolved forwards are expanded by their own dynamics
    rule.  Forwards at structural types are expanded inline by desugaring.
    """

    dst: Ref
    src: Ref
    tname: str | None = None
    span: Span | None = _span_field()


# ---------------------------------------------------------------------------
# definitions and signatures

@dataclass(frozen=True)
class TypeDef:
    name: str
    body: TypeExpr
    span: Span | None = _span_field()


@dataclass(frozen=True)
class ProcDef:
    name: str
    theory: Theory
    params: tuple[tuple[str, TypeExpr, SecTerm | None], ...]
    running: SecTerm | None
    offered_var: str
    offered_type: TypeExpr
    offered_sec: SecTerm | None
    body: ProcTerm
    span: Span | None = _span_field()


class Signature:
    """Top-level collection of type and process definitions."""

    def __init__(self):
        from .lattice import SemilatticeSpec  # noqa: F401 (typing aid)
        self.lattice_spec = None
        self.lattice = None
        self.theories: dict[str, Theory] = {}
        self.typedefs: dict[str, TypeDef] = {}
        self.procdefs: dict[str, ProcDef] = {}
        self.forwarders: dict[str, ProcDef] = {}
        self._desugared: dict[str, ProcTerm] = {}
        self._unfold_cache: dict[TypeExpr, TypeExpr] = {}

    @property
    def ifc(self) -> bool:
        return self.lattice_spec is not None

    def desugared_body(self, name: str) -> ProcTerm:
        if name not in self._desugared:
            d = self.procdefs[name]
            ctx = {v: t for v, t, _ in d.params}
            self._desugared[name] = desugar(d.body, self, ctx, d.offered_type)
        return self._desugared[name]

    def structural_eq(self, other: "Signature") -> bool:
        return (self.lattice_spec == other.lattice_spec
                and self.theories == other.theories
                and self.typedefs == other.typedefs
                and self.procdefs == other.procdefs)


# ---------------------------------------------------------------------------
# contractivity, unfolding, equality

def check_contractive(tdef: TypeDef, sig: Signature) -> bool:
    """A definition is contractive iff following bare type-name bodies never
    revisits a name: every recursion must cross a type constructor."""
    seen = set()
    body = tdef.body
    name = tdef.name
    while isinstance(body, TVar):
        if body.name not in sig.typedefs:
            raise SillError(f"undefined type {body.name}", body.span)
        if body.name in seen or body.name == name:
            return False
        seen.add(body.name)
        body = sig.typedefs[body.name].body
    _check_names_defined(tdef.body, sig)
    return True


def _check_names_defined(t: TypeExpr, sig: Signature):
    if isinstance(t, TVar):
        if t.name not in sig.typedefs:
            raise SillError(f"undefined type {t.name}", t.span)
    elif isinstance(t, (Plus, With)):
        for _, b in t.branches:
            _check_names_defined(b, sig)
    elif isinstance(t, (Tensor, Lolli)):
        _check_names_defined(t.left, sig)
        _check_names_defined(t.right, sig)


def unfold(t: TypeExpr, sig: Signature) -> TypeExpr:
    """Expand defined names until the head is a constructor."""
    if not isinstance(t, TVar):
        return t
    cached = sig._unfold_cache.get(t)
    if cached is not None:
        return cached
    seen = set()
    out = t
    while isinstance(out, TVar):
        if out.name in seen:
            raise SillError(f"non-contractive type {out.name}", out.span)
        if out.name not in sig.typedefs:
            raise SillError(f"undefined type {out.name}", out.span)
        seen.add(out.name)
        out = sig.typedefs[out.name].body
    sig._unfold_cache[t] = out
    return out


def type_equal(a: TypeExpr, b: TypeExpr, sig: Signature) -> bool:
    """Equality up to unfolding: the largest relation matching head
    constructors and label sets after expanding definitions."""
    seen: set[tuple[TypeExpr, TypeExpr]] = set()

    def go(x, y):
        if (x, y) in seen:
            return True
        seen.add((x, y))
        ux, uy = unfold(x, sig), unfold(y, sig)
        if type(ux) is not type(uy):
            return False
        if isinstance(ux, One):
            return True
        if isinstance(ux, (Plus, With)):
            mx, my = branch_map(ux), branch_map(uy)
            if set(mx) != set(my):
                return False
            return all(go(mx[k], my[k]) for k in mx)
        return go(ux.left, uy.left) and go(ux.right, uy.right)

    return go(a, b)


# ---------------------------------------------------------------------------
# term traversal helpers

def term_refs(term: ProcTerm):
    """Free channel references in first-use order (binders excluded)."""
    out = []
    seen = set()
    bound = set()

    def note(r):
        if r not in bound and r not in seen:
            seen.add(r)
            out.append(r)

    def walk(t, bound_here):
        nonlocal bound
        old = bound
        bound = bound | bound_here
        try:
            if isinstance(t, SendLabel):
                note(t.chan)
                walk(t.cont, set())
            elif isinstance(t, Case):
                note(t.chan)
                for _, body in t.branches:
                    walk(body, set())
            elif isinstance(t, SendChan):
                note(t.payload)
                note(t.carrier)
                walk(t.cont, set())
            elif isinstance(t, RecvChan):
                note(t.carrier)
                walk(t.cont, {t.binder})
            elif isinstance(t, Close):
                note(t.chan)
            elif isinstance(t, Wait):
                note(t.chan)
                walk(t.cont, set())
            elif isinstance(t, Spawn):
                for a in t.args:
                    note(a)
                walk(t.cont, {t.binder})
            elif isinstance(t, TailCall):
                for a in t.args:
                    note(a)
                note(t.binder)
            elif isinstance(t, Fwd):
                note(t.dst)
                note(t.src)
        finally:
            bound = old

    walk(term, set())
    return out


def subst_refs(term: ProcTerm, mapping: dict) -> ProcTerm:
    """Replace free channel references; binders shadow string keys."""
    def get(r):
        return mapping.get(r, r)

    def walk(t, shadowed):
        def lookup(r):
            if r in shadowed:
                return r
            return get(r)

        if isinstance(t, SendLabel):
            return SendLabel(lookup(t.chan), t.label, walk(t.cont, shadowed),
                             t.ann, t.span)
        if isinstance(t, Case):
            return Case(lookup(t.chan),
                        tuple((l, walk(b, shadowed)) for l, b in t.branches),
                        t.ann, t.span)
        if isinstance(t, SendChan):
            return SendChan(lookup(t.payload), lookup(t.carrier),
                            walk(t.cont, shadowed), t.ann, t.span)
        if isinstance(t, RecvChan):
            return RecvChan(t.binder, lookup(t.carrier),
                            walk(t.cont, shadowed | {t.binder}), t.ann, t.span)
        if isinstance(t, Close):
            return Close(lookup(t.chan), t.ann, t.span)
        if isinstance(t, Wait):
            return Wait(lookup(t.chan), walk(t.cont, shadowed), t.ann, t.span)
        if isinstance(t, Spawn):
            return Spawn(t.binder, t.proc, t.secsubst,
                         tuple(lookup(a) for a in t.args),
                         walk(t.cont, shadowed | {t.binder}), t.span)
        if isinstance(t, TailCall):
            return TailCall(lookup(t.binder), t.proc, t.secsubst,
                            tuple(lookup(a) for a in t.args), t.span)
        if isinstance(t, Fwd):
            return Fwd(lookup(t.dst), lookup(t.src), t.tname, t.span)
        raise TypeError(f"unknown term {t!r}")

    return walk(term, frozenset())


# ---------------------------------------------------------------------------
# desugaring

_fresh_counter = itertools.count()


def fresh_name(base: str) -> str:
    return f"{base}%{next(_fresh_counter)}"


def fwd_expansion(t: TypeExpr, dst: Ref, src: Ref, sig: Signature) -> ProcTerm:
    """Identity expansion at a type: relay one exchange, then recur.

    Defined names become resolved ``Fwd`` references (expanded step by step
    at run time); structural layers are expanded inline.
    """
    if isinstance(t, TVar):
        return Fwd(dst, src, tname=t.name)
    if isinstance(t, One):
        return Wait(src, Close(dst))
    if isinstance(t, Plus):
        return Case(src, tuple(
            (l, SendLabel(dst, l, fwd_expansion(b, dst, src, sig)))
            for l, b in t.branches))
    if isinstance(t, With):
        return Case(dst, tuple(
            (l, SendLabel(src, l, fwd_expansion(b, dst, src, sig)))
            for l, b in t.branches))
    if isinstance(t, Tensor):
        w = fresh_name("w")
        return RecvChan(w, src,
                        SendChan(w, dst, fwd_expansion(t.right, dst, src, sig)))
    if isinstance(t, Lolli):
        w = fresh_name("w")
        return RecvChan(w, dst,
                        SendChan(w, src, fwd_expansion(t.right, dst, src, sig)))
    raise TypeError(f"unknown type {t!r}")


def gen_forwarder(tname: str, sig: Signature) -> ProcDef:
    """The generated identity process for a defined type name."""
    if tname in sig.forwarders:
        return sig.forwarders[tname]
    if tname not in sig.typedefs:
        raise SillError(f"undefined type {tname}")
    body = fwd_expansion(sig.typedefs[tname].body, "y", "z", sig)
    psi = SVar("psi")
    d = ProcDef(
        name=f"fwd_{tname}",
        theory=Theory(name=f"fwd_{tname}", vars=("psi",), hyps=()),
        params=(("z", TVar(tname), psi),),
        running=psi,
        offered_var="y",
        offered_type=TVar(tname),
        offered_sec=psi,
        body=body,
    )
    sig.forwarders[tname] = d
    return d


def desugar(term: ProcTerm, sig: Signature,
            ctx: dict | None = None, offered: TypeExpr | None = None) -> ProcTerm:
    """Rewrite tail calls into spawn+forward and resolve forwards.

    ``ctx``/``offered`` supply the types of free references so that forwards
    can be resolved; they are threaded through the session as it evolves.
    Type errors are left for the checker, except forwards between provably
    unequal types, which are rejected here.
    """
    ctx = dict(ctx or {})

    def step_type(t, label=None, part=None):
        if t is None:
            return None
        u = unfold(t, sig)
        if label is not None and isinstance(u, (Plus, With)):
            return branch_map(u).get(label)
        if part == "left" and isinstance(u, (Tensor, Lolli)):
            return u.left
        if part == "right" and isinstance(u, (Tensor, Lolli)):
            return u.right
        return None

    def walk(t, ctx, offered):
        if isinstance(t, SendLabel):
            if t.chan in ctx:
                nctx = dict(ctx)
                nctx[t.chan] = step_type(ctx[t.chan], label=t.label)
                return SendLabel(t.chan, t.label, walk(t.cont, nctx, offered),
                                 t.ann, t.span)
            return SendLabel(t.chan, t.label,
                             walk(t.cont, ctx, step_type(offered, label=t.label)),
                             t.ann, t.span)
        if isinstance(t, Case):
            branches = []
            for l, body in t.branches:
                if t.chan in ctx:
                    nctx = dict(ctx)
                    nctx[t.chan] = step_type(ctx[t.chan], label=l)
                    branches.append((l, walk(body, nctx, offered)))
                else:
                    branches.append(
                        (l, walk(body, ctx, step_type(offered, label=l))))
            return Case(t.chan, tuple(branches), t.ann, t.span)
        if isinstance(t, SendChan):
            nctx = dict(ctx)
            nctx.pop(t.payload, None)
            if t.carrier in ctx:
                nctx[t.carrier] = step_type(ctx[t.carrier], part="right")
                return SendChan(t.payload, t.carrier,
                                walk(t.cont, nctx, offered), t.ann, t.span)
            return SendChan(t.payload, t.carrier,
                            walk(t.cont, nctx, step_type(offered, part="right")),
                            t.ann, t.span)
        if isinstance(t, RecvChan):
            nctx = dict(ctx)
            if t.carrier in ctx:
                nctx[t.binder] = step_type(ctx[t.carrier], part="left")
                nctx[t.carrier] = step_type(ctx[t.carrier], part="right")
                return RecvChan(t.binder, t.carrier,
                                walk(t.cont, nctx, offered), t.ann, t.span)
            nctx[t.binder] = step_type(offered, part="left")
            return RecvChan(t.binder, t.carrier,
                            walk(t.cont, nctx, step_type(offered, part="right")),
                            t.ann, t.span)
        if isinstance(t, Close):
            return t
        if isinstance(t, Wait):
            nctx = dict(ctx)
            nctx.pop(t.chan, None)
            return Wait(t.chan, walk(t.cont, nctx, offered), t.ann, t.span)
        if isinstance(t, Spawn):
            nctx = dict(ctx)
            for a in t.args:
                nctx.pop(a, None)
            d = sig.procdefs.get(t.proc)
            nctx[t.binder] = d.offered_type if d else None
            return Spawn(t.binder, t.proc, t.secsubst, t.args,
                         walk(t.cont, nctx, offered), t.span)
        if isinstance(t, TailCall):
            d = sig.procdefs.get(t.proc)
            if d is None:
                raise SillError(f"unknown process {t.proc}", t.span)
            tmp = fresh_name(str(t.binder))
            fwd = _resolve_fwd(t.binder, tmp, d.offered_type, t.span)
            return Spawn(tmp, t.proc, t.secsubst, t.args, fwd, t.span)
        if isinstance(t, Fwd):
            if t.tname is not None:
                return t
            src_t = ctx.get(t.src)
            shared = src_t if src_t is not None else offered
            if shared is None:
                return t
            if src_t is not None and offered is not None:
                if not type_equal(src_t, offered, sig):
                    raise SillError(
                        f"forward between unequal types", t.span)
            return _resolve_fwd(t.dst, t.src, shared, t.span)
        raise TypeError(f"unknown term {t!r}")

    def _resolve_fwd(dst, src, shared, span):
        if isinstance(shared, TVar):
            gen_forwarder(shared.name, sig)
            return Fwd(dst, src, tname=shared.name, span=span)
        return fwd_expansion(shared, dst, src, sig)

    return walk(term, ctx, offered)


def erase_signature(sig: Signature) -> Signature:
    """Drop all security structure, keeping types and process code."""
    out = Signature()
    out.typedefs = dict(sig.typedefs)
    for name, d in sig.procdefs.items():
        out.procdefs[name] = ProcDef(
            name=d.name,
            theory=Theory(),
            params=tuple((v, t, None) for v, t, _ in d.params),
            running=None,
            offered_var=d.offered_var,
            offered_type=d.offered_type,
            offered_sec=None,
            body=erase_term(d.body),
            span=d.span,
        )
    return out


def erase_term(t: ProcTerm) -> ProcTerm:
    if isinstance(t, SendLabel):
        return SendLabel(t.chan, t.label, erase_term(t.cont), None, t.span)
    if isinstance(t, Case):
        return Case(t.chan, tuple((l, erase_term(b)) for l, b in t.branches),
                    None, t.span)
    if isinstance(t, SendChan):
        return SendChan(t.payload, t.carrier, erase_term(t.cont), None, t.span)
    if isinstance(t, RecvChan):
        return RecvChan(t.binder, t.carrier, erase_term(t.cont), None, t.span)
    if isinstance(t, Close):
        return Close(t.chan, None, t.span)
    if isinstance(t, Wait):
        return Wait(t.chan, erase_term(t.cont), None, t.span)
    if isinstance(t, Spawn):
        return Spawn(t.binder, t.proc, None, t.args, erase_term(t.cont), t.span)
    if isinstance(t, TailCall):
        return TailCall(t.binder, t.proc, None, t.args, t.span)
    if isinstance(t, Fwd):
        return Fwd(t.dst, t.src, t.tname, t.span)
    raise TypeError(f"unknown term {t!r}")


# ---------------------------------------------------------------------------
# pretty printing (inverse of the parser; parse(print(sig)) == sig)

def print_type(t: TypeExpr, prec: int = 0) -> str:
    if isinstance(t, One):
        return "1"
    if isinstance(t, TVar):
        return t.name
    if isinstance(t, Plus):
        inner = ", ".join(f"{l}: {print_type(b)}" for l, b in t.branches)
        return "+{" + inner + "}"
    if isinstance(t, With):
        inner = ", ".join(f"{l}: {print_type(b)}" for l, b in t.branches)
        return "&{" + inner + "}"
    if isinstance(t, Tensor):
        s = f"{print_type(t.left, 2)} * {print_type(t.right, 1)}"
        return f"({s})" if prec >= 2 else s
    if isinstance(t, Lolli):
        s = f"{print_type(t.left, 1)} -o {print_type(t.right, 0)}"
        return f"({s})" if prec >= 1 else s
    raise TypeError(f"unknown type {t!r}")


def print_sec(t: SecTerm, atom: bool = False) -> str:
    s = str(t)
    from .lattice import Join
    if atom and isinstance(t, Join):
        return f"({s})"
    return s


def _chan(ref, ann) -> str:
    return f"{ref}^{print_sec(ann, atom=True)}" if ann is not None else str(ref)


def print_term(t: ProcTerm) -> str:
    if isinstance(t, SendLabel):
        return f"{_chan(t.chan, t.ann)}.{t.label}; {print_term(t.cont)}"
    if isinstance(t, Case):
        inner = ", ".join(f"{l} => {print_term(b)}" for l, b in t.branches)
        return f"case {_chan(t.chan, t.ann)} {{ {inner} }}"
    if isinstance(t, SendChan):
        return f"send {t.payload} {_chan(t.carrier, t.ann)}; {print_term(t.cont)}"
    if isinstance(t, RecvChan):
        return f"{t.binder} <- recv {_chan(t.carrier, t.ann)}; {print_term(t.cont)}"
    if isinstance(t, Close):
        return f"close {_chan(t.chan, t.ann)}"
    if isinstance(t, Wait):
        return f"wait {_chan(t.chan, t.ann)}; {print_term(t.cont)}"
    if isinstance(t, (Spawn, TailCall)):
        subst = ""
        if t.secsubst is not None:
            subst = "[" + ", ".join(f"{v} -> {print_sec(s)}"
                                    for v, s in t.secsubst) + "]"
        args = ", ".join(str(a) for a in t.args)
        head = f"{t.binder} <- {t.proc}{subst} <- ({args})"
        if isinstance(t, Spawn):
            return f"{head}; {print_term(t.cont)}"
        return head
    if isinstance(t, Fwd):
        return f"fwd {t.dst} {t.src}"
    raise TypeError(f"unknown term {t!r}")


def print_signature(sig: Signature) -> str:
    parts = []
    if sig.lattice_spec is not None:
        lines = "; ".join(" ".join(line) for line in sig.lattice_spec.lines)
        parts.append("secrecy { " + lines + " }")
    for th in sig.theories.values():
        hyps = "; ".join(f"{print_sec(l)} <= {print_sec(r)}" for l, r in th.hyps)
        parts.append(f"theory {th.name}({', '.join(th.vars)}) {{ {hyps} }}")
    for td in sig.typedefs.values():
        parts.append(f"type {td.name} = {print_type(td.body)}")
    for d in sig.procdefs.values():
        tag = f"[{d.theory.name}]" if d.theory.name else ""
        params = ", ".join(
            f"{v}: {print_type(ty)}" + (f"[{print_sec(s)}]" if s is not None else "")
            for v, ty, s in d.params)
        run = f" @{print_sec(d.running)}" if d.running is not None else ""
        osec = (f"[{print_sec(d.offered_sec)}]"
                if d.offered_sec is not None else "")
        parts.append(
            f"proc{tag} {d.name} ({params}){run} :: "
            f"({d.offered_var}: {print_type(d.offered_type)}{osec}) = {{\n"
            f"  {print_term(d.body)}\n}}")
    return "\n\n".join(parts) + ("\n" if parts else "")
