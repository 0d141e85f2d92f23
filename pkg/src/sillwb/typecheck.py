"""Type checking: structural linear session typing, the information-flow
refinement, signature checking, and configuration typing.

Structural checking decides whether a derivation exists in the sequent
calculus for the session connectives, with defined type names unfolded
lazily when a head constructor is demanded.  The refinement layer adds a
security theory, per-channel maximal secrecy, and a running secrecy that
rises on receives and gates sends toward lower-secrecy channels.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from . import runtime as R
from . import syntax as S
from .lattice import (Const, Join, SecTerm, Semilattice, Theory, check_subst,
                      entails, entails_eq, join_of, normalize, satisfiable)
from .syntax import (Case, Close, Fwd, Lolli, One, Plus, ProcTerm, RecvChan,
                     SendChan, SendLabel, Spawn, TailCall, Tensor, TypeExpr,
                     Wait, With, branch_map, type_equal, unfold)


@dataclass(frozen=True)
class Diagnostic:
    rule: str
    span: S.Span | None
    message: str
    constraint: str | None = None

    def as_dict(self):
        d = {"rule": self.rule,
             "span": {"line": self.span.line, "col": self.span.col}
             if self.span else None,
             "message": self.message}
        if self.constraint:
            d["constraint"] = self.constraint
        return d

    def __str__(self):
        where = f" at {self.span}" if self.span else ""
        extra = f" [{self.constraint}]" if self.constraint else ""
        return f"{self.rule}{where}: {self.message}{extra}"


class Rejected(Exception):
    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(str(d) for d in self.diagnostics))


@dataclass(frozen=True)
class Derivation:
    rule: str
    ctx: tuple[tuple[object, TypeExpr, SecTerm | None], ...]
    offered: tuple[object, TypeExpr, SecTerm | None]
    running: SecTerm | None
    span: S.Span | None = field(compare=False, default=None)
    premises: tuple["Derivation", ...] = ()

    def walk(self):
        yield self
        for p in self.premises:
            yield from p.walk()


def _fail(rule, span, message, constraint=None):
    raise Rejected([Diagnostic(rule, span, message, constraint)])


def _span(term):
    return getattr(term, "span", None)


# ---------------------------------------------------------------------------
# structural checking

def check_proc_structural(ctx, term: ProcTerm, offered, sig: S.Signature) -> Derivation:
    """Check a desugared term against ``ctx |- term :: offered``.

    ``ctx`` maps channel references to types; ``offered`` is ``(ref, type)``.
    Returns the derivation or raises ``Rejected``.
    """
    return _check(dict(ctx), term, offered[0], offered[1], sig,
                  ifc=None)


# ---------------------------------------------------------------------------
# shared checking core (structural when ifc is None)

@dataclass
class IfcState:
    theory: Theory
    lat: Semilattice
    running: SecTerm


def _snapshot(ctx, off_ref, off_t, ifc):
    if ifc is None:
        items = tuple(sorted(((str(r), t, None) for r, t in ctx.items()),
                             key=lambda e: e[0]))
        return items, (str(off_ref), off_t, None), None
    items = tuple(sorted(((str(r), t, s) for r, (t, s) in ctx.items()),
                         key=lambda e: e[0]))
    return items, (str(off_ref), off_t[0], off_t[1]), ifc.running


def _ctx_type(ctx, ref, ifc):
    entry = ctx[ref]
    return entry if ifc is None else entry[0]


def _ctx_sec(ctx, ref):
    return ctx[ref][1]


def _check_presup(ctx, off_sec, ifc, span):
    for r, (t, s) in ctx.items():
        if not entails(ifc.theory, ifc.lat, s, off_sec):
            _fail("presup-ctx", span,
                  f"context channel {r} may exceed the offered secrecy",
                  f"{s} <= {off_sec}")
    if not entails(ifc.theory, ifc.lat, ifc.running, off_sec):
        _fail("presup-run", span,
              "running secrecy may exceed the offered secrecy",
              f"{ifc.running} <= {off_sec}")


def _check_ann(rule, ann, expected, ifc, span):
    if ann is None or ifc is None:
        return
    if not entails_eq(ifc.theory, ifc.lat, ann, expected):
        _fail(rule, span, "channel annotation does not match its secrecy",
              f"{ann} = {expected}")


def _join(ifc, a, b):
    return normalize(Join(a, b))


def _check(ctx, term, off_ref, off, sig, ifc):
    """``off`` is the offered type (structural) or ``(type, sec)`` (ifc)."""
    off_t = off if ifc is None else off[0]
    off_sec = None if ifc is None else off[1]
    if ifc is not None:
        _check_presup(ctx, off_sec, ifc, _span(term))
    span = _span(term)

    def deriv(rule, premises=()):
        items, offs, run = _snapshot(ctx, off_ref, off, ifc)
        return Derivation(rule, items, offs, run, span, tuple(premises))

    def sub(ctx2, term2, off2, ifc2):
        return _check(ctx2, term2, off_ref, off2, sig, ifc2)

    if isinstance(term, TailCall):
        _fail("desugar", span, "tail call must be desugared before checking")

    if isinstance(term, Close):
        if term.chan != off_ref:
            _fail("1R", span, f"close on non-offered channel {term.chan}")
        if not isinstance(unfold(off_t, sig), One):
            _fail("1R", span, "offered type is not 1")
        if ctx:
            names = ", ".join(str(k) for k in ctx)
            _fail("1R", span, f"unconsumed channels: {names}")
        _check_ann("1R", term.ann, off_sec, ifc, span)
        return deriv("1R")

    if isinstance(term, Wait):
        if term.chan not in ctx:
            _fail("1L", span, f"unknown channel {term.chan}")
        t = unfold(_ctx_type(ctx, term.chan, ifc), sig)
        if not isinstance(t, One):
            _fail("1L", span, f"wait on channel of non-1 type")
        if ifc is not None:
            _check_ann("1L", term.ann, _ctx_sec(ctx, term.chan), ifc, span)
        ctx2 = dict(ctx)
        del ctx2[term.chan]
        return deriv("1L", [sub(ctx2, term.cont, off, ifc)])

    if isinstance(term, SendLabel):
        if term.chan == off_ref:
            t = unfold(off_t, sig)
            if not isinstance(t, Plus):
                _fail("+R", span, "offered type is not an internal choice")
            bm = branch_map(t)
            if term.label not in bm:
                _fail("+R", span, f"unknown label {term.label}")
            _check_ann("+R", term.ann, off_sec, ifc, span)
            off2 = bm[term.label] if ifc is None else (bm[term.label], off_sec)
            return deriv("+R", [sub(ctx, term.cont, off2, ifc)])
        if term.chan not in ctx:
            _fail("&L", span, f"unknown channel {term.chan}")
        t = unfold(_ctx_type(ctx, term.chan, ifc), sig)
        if not isinstance(t, With):
            _fail("&L", span, "label send on non-external-choice channel")
        bm = branch_map(t)
        if term.label not in bm:
            _fail("&L", span, f"unknown label {term.label}")
        ctx2 = dict(ctx)
        ifc2 = ifc
        if ifc is None:
            ctx2[term.chan] = bm[term.label]
        else:
            c = _ctx_sec(ctx, term.chan)
            _check_ann("&L", term.ann, c, ifc, span)
            if not entails(ifc.theory, ifc.lat, ifc.running, c):
                _fail("&L", span,
                      f"send on {term.chan} after receiving higher-secrecy "
                      f"information", f"{ifc.running} <= {c}")
            ctx2[term.chan] = (bm[term.label], c)
        return deriv("&L", [sub(ctx2, term.cont, off, ifc2)])

    if isinstance(term, Case):
        if term.chan == off_ref:
            t = unfold(off_t, sig)
            if not isinstance(t, With):
                _fail("&R", span, "offered type is not an external choice")
            bm = branch_map(t)
            got = [l for l, _ in term.branches]
            if set(got) != set(bm) or len(got) != len(set(got)):
                _fail("&R", span, "case labels do not match the choice type")
            _check_ann("&R", term.ann, off_sec, ifc, span)
            prems = []
            branch_diags = []
            for l, body in term.branches:
                off2 = bm[l] if ifc is None else (bm[l], off_sec)
                ifc2 = ifc if ifc is None else \
                    IfcState(ifc.theory, ifc.lat, off_sec)
                try:
                    prems.append(sub(dict(ctx), body, off2, ifc2))
                except Rejected as e:
                    branch_diags.extend(e.diagnostics)
            if branch_diags:
                raise Rejected(branch_diags)
            return deriv("&R", prems)
        if term.chan not in ctx:
            _fail("+L", span, f"unknown channel {term.chan}")
        t = unfold(_ctx_type(ctx, term.chan, ifc), sig)
        if not isinstance(t, Plus):
            _fail("+L", span, "case on non-internal-choice channel")
        bm = branch_map(t)
        got = [l for l, _ in term.branches]
        if set(got) != set(bm) or len(got) != len(set(got)):
            _fail("+L", span, "case labels do not match the choice type")
        prems = []
        branch_diags = []
        for l, body in term.branches:
            ctx2 = dict(ctx)
            ifc2 = ifc
            if ifc is None:
                ctx2[term.chan] = bm[l]
            else:
                c = _ctx_sec(ctx, term.chan)
                _check_ann("+L", term.ann, c, ifc, span)
                ctx2[term.chan] = (bm[l], c)
                ifc2 = IfcState(ifc.theory, ifc.lat,
                                _join(ifc, c, ifc.running))
            try:
                prems.append(sub(ctx2, body, off, ifc2))
            except Rejected as e:
                branch_diags.extend(e.diagnostics)
        if branch_diags:
            raise Rejected(branch_diags)
        return deriv("+L", prems)

    if isinstance(term, SendChan):
        if term.payload not in ctx:
            _fail("send", span, f"unknown channel {term.payload}")
        if term.carrier == off_ref:
            t = unfold(off_t, sig)
            if not isinstance(t, Tensor):
                _fail("*R", span, "offered type does not send a channel")
            pt = _ctx_type(ctx, term.payload, ifc)
            if not type_equal(pt, t.left, sig):
                _fail("*R", span,
                      f"sent channel {term.payload} has the wrong type")
            if ifc is not None:
                _check_ann("*R", term.ann, off_sec, ifc, span)
                ps = _ctx_sec(ctx, term.payload)
                if not entails_eq(ifc.theory, ifc.lat, ps, off_sec):
                    _fail("*R", span,
                          "sent channel secrecy must match the carrier",
                          f"{ps} = {off_sec}")
            ctx2 = dict(ctx)
            del ctx2[term.payload]
            off2 = t.right if ifc is None else (t.right, off_sec)
            return deriv("*R", [sub(ctx2, term.cont, off2, ifc)])
        if term.carrier not in ctx:
            _fail("-oL", span, f"unknown channel {term.carrier}")
        t = unfold(_ctx_type(ctx, term.carrier, ifc), sig)
        if not isinstance(t, Lolli):
            _fail("-oL", span, "channel send on non-function channel")
        pt = _ctx_type(ctx, term.payload, ifc)
        if not type_equal(pt, t.left, sig):
            _fail("-oL", span, f"sent channel {term.payload} has the wrong type")
        ctx2 = dict(ctx)
        del ctx2[term.payload]
        if ifc is None:
            ctx2[term.carrier] = t.right
        else:
            c = _ctx_sec(ctx, term.carrier)
            _check_ann("-oL", term.ann, c, ifc, span)
            if not entails(ifc.theory, ifc.lat, ifc.running, c):
                _fail("-oL", span,
                      f"send on {term.carrier} after receiving higher-secrecy "
                      f"information", f"{ifc.running} <= {c}")
            ps = _ctx_sec(ctx, term.payload)
            if not entails_eq(ifc.theory, ifc.lat, ps, c):
                _fail("-oL", span,
                      "sent channel secrecy must match the carrier",
                      f"{ps} = {c}")
            ctx2[term.carrier] = (t.right, c)
        return deriv("-oL", [sub(ctx2, term.cont, off, ifc)])

    if isinstance(term, RecvChan):
        if term.binder in ctx or term.binder == off_ref:
            _fail("recv", span, f"binder {term.binder} shadows a live channel")
        if term.carrier == off_ref:
            t = unfold(off_t, sig)
            if not isinstance(t, Lolli):
                _fail("-oR", span, "offered type does not receive a channel")
            ctx2 = dict(ctx)
            ifc2 = ifc
            if ifc is None:
                ctx2[term.binder] = t.left
            else:
                _check_ann("-oR", term.ann, off_sec, ifc, span)
                ctx2[term.binder] = (t.left, off_sec)
                ifc2 = IfcState(ifc.theory, ifc.lat, off_sec)
            off2 = t.right if ifc is None else (t.right, off_sec)
            return deriv("-oR", [sub(ctx2, term.cont, off2, ifc2)])
        if term.carrier not in ctx:
            _fail("*L", span, f"unknown channel {term.carrier}")
        t = unfold(_ctx_type(ctx, term.carrier, ifc), sig)
        if not isinstance(t, Tensor):
            _fail("*L", span, "receive on channel that does not send")
        ctx2 = dict(ctx)
        ifc2 = ifc
        if ifc is None:
            ctx2[term.binder] = t.left
            ctx2[term.carrier] = t.right
        else:
            c = _ctx_sec(ctx, term.carrier)
            _check_ann("*L", term.ann, c, ifc, span)
            ctx2[term.binder] = (t.left, c)
            ctx2[term.carrier] = (t.right, c)
            ifc2 = IfcState(ifc.theory, ifc.lat, _join(ifc, c, ifc.running))
        return deriv("*L", [sub(ctx2, term.cont, off, ifc2)])

    if isinstance(term, Spawn):
        d = sig.procdefs.get(term.proc) or sig.forwarders.get(term.proc)
        if d is None:
            _fail("spawn", span, f"unknown process {term.proc}")
        if term.binder in ctx or term.binder == off_ref:
            _fail("spawn", span, f"binder {term.binder} shadows a live channel")
        if len(term.args) != len(d.params):
            _fail("spawn", span,
                  f"{term.proc} expects {len(d.params)} arguments, "
                  f"got {len(term.args)}")
        gsub = dict(term.secsubst or ())
        if ifc is not None:
            missing = [v for v in d.theory.vars if v not in gsub]
            if missing:
                _fail("spawn", span,
                      f"secrecy substitution missing {', '.join(missing)}")
            failures = check_subst(ifc.theory, gsub, d.theory, ifc.lat)
            if failures:
                _fail("spawn", span,
                      f"cannot assert the theory of {term.proc}: "
                      + "; ".join(failures))
        ctx2 = dict(ctx)
        for a, (v, pt, psec) in zip(term.args, d.params):
            if a not in ctx2:
                _fail("spawn", span, f"unknown or consumed argument {a}")
            at = _ctx_type(ctx2, a, ifc)
            if not type_equal(at, pt, sig):
                _fail("spawn", span, f"argument {a} has the wrong type for {v}")
            del ctx2[a]
        if ifc is not None:
            from .lattice import apply_subst
            for a, (v, pt, psec) in zip(term.args, d.params):
                want = apply_subst(gsub, psec)
                have = _ctx_sec(ctx, a)
                if not entails_eq(ifc.theory, ifc.lat, have, want):
                    _fail("spawn", span,
                          f"argument {a} has secrecy {have}, "
                          f"but {term.proc} expects {want}")
            off_inst = apply_subst(gsub, d.offered_sec)
            run_inst = apply_subst(gsub, d.running)
            if not entails(ifc.theory, ifc.lat, off_inst, off_sec):
                _fail("spawn", span,
                      f"spawned channel secrecy may exceed the offered secrecy",
                      f"{off_inst} <= {off_sec}")
            if not entails(ifc.theory, ifc.lat, ifc.running, run_inst):
                _fail("spawn", span,
                      f"running secrecy may exceed the callee's",
                      f"{ifc.running} <= {run_inst}")
            ctx2[term.binder] = (d.offered_type, normalize(off_inst))
        else:
            ctx2[term.binder] = d.offered_type
        return deriv("spawn", [sub(ctx2, term.cont, off, ifc)])

    if isinstance(term, Fwd):
        if term.dst != off_ref:
            _fail("fwd", span, "forward must target the offered channel")
        if term.src not in ctx:
            _fail("fwd", span, f"unknown channel {term.src}")
        if set(ctx) != {term.src}:
            names = ", ".join(str(k) for k in ctx if k != term.src)
            _fail("fwd", span, f"unconsumed channels: {names}")
        st = _ctx_type(ctx, term.src, ifc)
        if not type_equal(st, off_t, sig):
            _fail("fwd", span, "forward between unequal types")
        if ifc is not None:
            ss = _ctx_sec(ctx, term.src)
            if not entails_eq(ifc.theory, ifc.lat, ss, off_sec):
                _fail("fwd", span, "forward between unequal secrecies",
                      f"{ss} = {off_sec}")
        return deriv("fwd")

    _fail("check", span, f"unsupported term {type(term).__name__}")


# ---------------------------------------------------------------------------
# refinement checking

def check_proc_ifc(theory: Theory, ctx, term: ProcTerm, running: SecTerm,
                   offered, sig: S.Signature, lat: Semilattice) -> Derivation:
    """Check a desugared term under the information-flow refinement.

    ``ctx`` maps refs to ``(type, secrecy)``; ``offered`` is
    ``(ref, type, secrecy)``.  Presuppositions (context secrecy capped by
    the offered secrecy; running capped by offered) are checked at every
    node, not assumed.
    """
    state = IfcState(theory, lat, normalize(running))
    return _check(dict(ctx), term, offered[0], (offered[1], offered[2]),
                  sig, state)


def gen_forwarder(tname: str, sig: S.Signature) -> S.ProcDef:
    """Generated identity process for a defined type (see syntax module)."""
    return S.gen_forwarder(tname, sig)


# ---------------------------------------------------------------------------
# signature checking

def check_signature_structural(sig: S.Signature) -> list[Diagnostic]:
    """All definitions contractive and every body structurally well-typed.

    Returns the aggregated diagnostics (empty means accepted).  Security
    annotations, if present, are ignored.
    """
    diags = []
    for td in sig.typedefs.values():
        try:
            if not S.check_contractive(td, sig):
                diags.append(Diagnostic("contractive", td.span,
                                        f"type {td.name} is not contractive"))
        except S.SillError as e:
            diags.append(Diagnostic("contractive", e.span, str(e)))
    if diags:
        return diags
    for name in sig.typedefs:
        S.gen_forwarder(name, sig)
    for d in list(sig.procdefs.values()) + list(sig.forwarders.values()):
        try:
            body = _desugared(d, sig)
            ctx = {v: t for v, t, _ in d.params}
            check_proc_structural(ctx, body, (d.offered_var, d.offered_type),
                                  sig)
        except Rejected as e:
            diags.extend(_tag_def(d, e.diagnostics))
        except S.SillError as e:
            diags.append(Diagnostic("desugar", e.span, f"{d.name}: {e}"))
    return diags


def _desugared(d: S.ProcDef, sig: S.Signature):
    if d.name in sig.procdefs and sig.procdefs[d.name] is d:
        return sig.desugared_body(d.name)
    ctx = {v: t for v, t, _ in d.params}
    return S.desugar(d.body, sig, ctx, d.offered_type)


def _tag_def(d, diagnostics):
    return [Diagnostic(x.rule, x.span, f"{d.name}: {x.message}", x.constraint)
            for x in diagnostics]


def check_signature_ifc(sig: S.Signature) -> list[Diagnostic]:
    """Refinement checking of every process definition.

    Adds the definition-level side conditions: the local theory must be
    satisfiable, every parameter secrecy must be capped by the offered
    secrecy, and the declared running secrecy must be capped as well.
    """
    if not sig.ifc:
        return [Diagnostic("sig", None, "no security lattice declared")]
    lat = sig.lattice
    diags = list(check_signature_structural(sig))
    if diags:
        return diags
    for d in list(sig.procdefs.values()) + list(sig.forwarders.values()):
        if d.offered_sec is None or d.running is None or \
                any(s is None for _, _, s in d.params):
            diags.append(Diagnostic("sig", d.span,
                                    f"{d.name}: missing secrecy annotations"))
            continue
        if d.theory.vars and satisfiable(d.theory, lat) is None:
            diags.append(Diagnostic("sig", d.span,
                                    f"{d.name}: unsatisfiable theory"))
            continue
        ok = True
        for v, _, s in d.params:
            if not entails(d.theory, lat, s, d.offered_sec):
                diags.append(Diagnostic(
                    "sig", d.span,
                    f"{d.name}: parameter {v} secrecy exceeds the offered "
                    f"secrecy", f"{s} <= {d.offered_sec}"))
                ok = False
        if not entails(d.theory, lat, d.running, d.offered_sec):
            diags.append(Diagnostic(
                "sig", d.span,
                f"{d.name}: running secrecy exceeds the offered secrecy",
                f"{d.running} <= {d.offered_sec}"))
            ok = False
        if not ok:
            continue
        try:
            body = _desugared(d, sig)
            ctx = {v: (t, s) for v, t, s in d.params}
            check_proc_ifc(d.theory, ctx, body, d.running,
                           (d.offered_var, d.offered_type, d.offered_sec),
                           sig, lat)
        except Rejected as e:
            diags.extend(_tag_def(d, e.diagnostics))
        except S.SillError as e:
            diags.append(Diagnostic("desugar", e.span, f"{d.name}: {e}"))
    return diags


# ---------------------------------------------------------------------------
# configuration typing

def check_config(provided, config: R.Configuration, offered,
                 sig: S.Signature, ifc_mode: bool = False) -> list[Diagnostic]:
    """Check a configuration against its interface.

    ``provided`` and ``offered`` are the expected client/offered entries
    as iterables of ``(Channel, TypeExpr)`` (secrecy levels may be given
    as a third element in ifc mode).  Verifies provider/client linearity,
    the forest shape, the message-node axioms with their generation
    conventions, and each process term; in ifc mode additionally the
    secrecy side conditions on every node.
    """
    diags = []

    def bad(rule, msg):
        diags.append(Diagnostic(rule, None, msg))

    try:
        pm = config.provider_map
        um = config.user_map
    except S.SillError as e:
        return [Diagnostic("linearity", None, str(e))]

    declared_clients = {e[0]: e for e in (tuple(x) for x in provided)}
    declared_offered = {e[0]: e for e in (tuple(x) for x in offered)}

    used = set(um)
    prov = set(pm)
    free_used = used - prov
    free_prov = prov - used
    if free_used != set(declared_clients):
        bad("iface", f"client channels {sorted(map(str, free_used))} "
            f"differ from declared {sorted(map(str, declared_clients))}")
    if free_prov != set(declared_offered):
        bad("iface", f"offered channels {sorted(map(str, free_prov))} "
            f"differ from declared {sorted(map(str, declared_offered))}")
    if diags:
        return diags

    def chan_type(ch):
        if ch in pm:
            return pm[ch].typ
        return declared_clients[ch][1]

    def chan_level(ch):
        if ch in pm:
            n = pm[ch]
            return n.sec[0] if isinstance(n, R.ProcNode) and n.sec else n.sec
        e = declared_clients[ch]
        return e[2] if len(e) > 2 else None

    for ch, e in declared_offered.items():
        if not type_equal(pm[ch].typ, e[1], sig):
            bad("iface", f"offered channel {ch} has the wrong type")

    # forest shape: parent links must be acyclic
    color = {}

    def parent_of(node):
        u = um.get(node.provided)
        return u

    for n in config.nodes:
        seen = []
        cur = n
        while cur is not None:
            if id(cur) in color:
                break
            if id(cur) in (id(x) for x in seen):
                bad("forest", f"cycle through {cur.provided}")
                return diags
            seen.append(cur)
            cur = parent_of(cur)
        for x in seen:
            color[id(x)] = True

    lat = sig.lattice
    for n in config.nodes:
        if isinstance(n, R.ProcNode):
            if ifc_mode and n.sec is None:
                bad("proc", f"node {n.provided} lacks secrecy annotations")
                continue
            ctx = {ch: chan_type(ch) for ch in n.used()}
            try:
                if ifc_mode:
                    ictx = {ch: (chan_type(ch), Const(chan_level(ch)))
                            for ch in n.used()}
                    check_proc_ifc(Theory(), ictx, n.term, Const(n.sec[1]),
                                   (n.chan, n.typ, Const(n.sec[0])), sig, lat)
                else:
                    check_proc_structural(ctx, n.term, (n.chan, n.typ), sig)
            except Rejected as e:
                for d in e.diagnostics:
                    diags.append(Diagnostic(
                        d.rule, d.span, f"node {n.provided}: {d.message}",
                        d.constraint))
            if ifc_mode:
                for ch in n.used():
                    lvl = chan_level(ch)
                    if lvl is not None and not lat.leq(lvl, n.sec[0]):
                        bad("proc", f"node {n.provided}: used channel {ch} "
                            f"has higher secrecy {lvl}")
            continue
        _check_msg_node(n, chan_type, chan_level, sig, ifc_mode, bad)
    return diags


def _check_msg_node(n: R.MsgNode, chan_type, chan_level, sig, ifc_mode, bad):
    p = n.payload

    def expect_gen(ch, base_ch):
        if ch.base != base_ch.base or ch.gen != base_ch.gen + 1:
            bad("msg", f"generation mismatch: {ch} continues {base_ch}")
            return False
        return True

    if isinstance(p, R.CloseMsg):
        if n.provided != p.chan or n.uses:
            bad("msg", f"malformed close message on {p.chan}")
            return
        if not isinstance(unfold(n.typ, sig), One):
            bad("msg", f"close message on non-1 channel {p.chan}")
        return

    if isinstance(p, R.LabelMsg):
        if n.provided == p.chan:  # provider-sent label
            t = unfold(n.typ, sig)
            if not isinstance(t, Plus) or p.label not in branch_map(t):
                bad("msg", f"bad label {p.label} on {p.chan}")
                return
            if len(n.uses) != 1 or not expect_gen(n.uses[0], p.chan):
                return
            if not type_equal(chan_type(n.uses[0]), branch_map(t)[p.label], sig):
                bad("msg", f"continuation of {p.chan} has the wrong type")
        else:  # client-sent label, provides the continuation
            if len(n.uses) != 1 or n.uses[0] != p.chan or \
                    not expect_gen(n.provided, p.chan):
                bad("msg", f"malformed label message on {p.chan}")
                return
            t = unfold(chan_type(p.chan), sig)
            if not isinstance(t, With) or p.label not in branch_map(t):
                bad("msg", f"bad label {p.label} on {p.chan}")
                return
            if not type_equal(n.typ, branch_map(t)[p.label], sig):
                bad("msg", f"continuation of {p.chan} has the wrong type")
        if ifc_mode and n.sec is None:
            bad("msg", f"message on {p.chan} lacks a secrecy level")
        return

    # channel-carrying message
    if n.provided == p.carrier:  # provider-sent
        t = unfold(n.typ, sig)
        if not isinstance(t, Tensor):
            bad("msg", f"channel send on non-sending type at {p.carrier}")
            return
        if len(n.uses) != 2 or n.uses[0] != p.sent or \
                not expect_gen(n.uses[1], p.carrier):
            bad("msg", f"malformed channel message on {p.carrier}")
            return
        if not type_equal(chan_type(p.sent), t.left, sig):
            bad("msg", f"sent channel {p.sent} has the wrong type")
        if not type_equal(chan_type(n.uses[1]), t.right, sig):
            bad("msg", f"continuation of {p.carrier} has the wrong type")
    else:  # client-sent
        t = unfold(chan_type(p.carrier), sig)
        if not isinstance(t, Lolli):
            bad("msg", f"channel send on non-receiving type at {p.carrier}")
            return
        if len(n.uses) != 2 or n.uses[0] != p.sent or n.uses[1] != p.carrier \
                or not expect_gen(n.provided, p.carrier):
            bad("msg", f"malformed channel message on {p.carrier}")
            return
        if not type_equal(chan_type(p.sent), t.left, sig):
            bad("msg", f"sent channel {p.sent} has the wrong type")
        if not type_equal(n.typ, t.right, sig):
            bad("msg", f"continuation of {p.carrier} has the wrong type")
    if ifc_mode:
        sl = chan_level(p.sent)
        if n.sec is not None and sl is not None and sl != n.sec:
            bad("msg", f"sent channel {p.sent} secrecy {sl} differs from "
                f"carrier secrecy {n.sec}")
