"""Asynchronous execution of process configurations.

A configuration is a forest of process nodes and in-flight message nodes
over generation-indexed channels.  Sends are non-blocking: they spawn a
message node and bump the sender's generation; receives consume a matching
message node.  Every node provides exactly one channel and uses zero or
more, which keeps provider/client linearity checkable.
"""
from __future__ import annotations

import random
import re
from dataclasses import dataclass, field
from functools import cached_property

from . import syntax as S
from .lattice import Const, join_eval
from .syntax import (Case, Close, Fwd, ProcTerm, RecvChan, SendChan, SendLabel,
                     SillError, Spawn, TypeExpr, Wait, branch_map, gen_forwarder,
                     subst_refs, term_refs, unfold)


@dataclass(frozen=True, order=True)
class Channel:
    base: str
    gen: int

    def __str__(self):
        return f"{self.base}#{self.gen}"

    def bump(self) -> "Channel":
        return Channel(self.base, self.gen + 1)


# ---------------------------------------------------------------------------
# nodes

@dataclass(frozen=True)
class CloseMsg:
    chan: Channel

    @property
    def session(self):
        return self.chan


@dataclass(frozen=True)
class LabelMsg:
    chan: Channel
    label: str

    @property
    def session(self):
        return self.chan


@dataclass(frozen=True)
class ChanMsg:
    sent: Channel
    carrier: Channel

    @property
    def session(self):
        return self.carrier


@dataclass(frozen=True)
class ProcNode:
    chan: Channel
    typ: TypeExpr
    term: ProcTerm
    sec: tuple[str, str] | None = None  # (maximal, running) levels
    secval: tuple[tuple[str, str], ...] | None = None

    @property
    def provided(self):
        return self.chan

    def used(self):
        return tuple(r for r in term_refs(self.term)
                     if isinstance(r, Channel) and r != self.chan)


@dataclass(frozen=True)
class MsgNode:
    payload: CloseMsg | LabelMsg | ChanMsg
    provided: Channel
    typ: TypeExpr
    uses: tuple[Channel, ...]
    sec: str | None = None

    def used(self):
        return self.uses


Node = ProcNode | MsgNode


@dataclass(frozen=True)
class Configuration:
    """An immutable multiset of nodes with its typed interface.

    ``clients`` lists the free channels the configuration uses (provided
    outside); ``offered`` the free channels it provides.  Entries are
    ``(channel, type, level-or-None)``.
    """

    nodes: tuple[Node, ...]
    clients: tuple[tuple[Channel, TypeExpr, str | None], ...]
    offered: tuple[tuple[Channel, TypeExpr, str | None], ...]
    sig: S.Signature = field(compare=False, repr=False)

    @cached_property
    def provider_map(self) -> dict[Channel, Node]:
        out = {}
        for n in self.nodes:
            if n.provided in out:
                raise SillError(f"two providers for {n.provided}")
            out[n.provided] = n
        return out

    @cached_property
    def user_map(self) -> dict[Channel, Node]:
        out = {}
        for n in self.nodes:
            for ch in n.used():
                if ch in out:
                    raise SillError(f"two clients for {ch}")
                out[ch] = n
        return out

    @cached_property
    def msg_on(self) -> dict[Channel, MsgNode]:
        return {n.payload.session: n for n in self.nodes
                if isinstance(n, MsgNode)}

    def iface_channels(self) -> set[Channel]:
        return ({ch for ch, _, _ in self.clients}
                | {ch for ch, _, _ in self.offered})

    def client_types(self) -> dict[Channel, TypeExpr]:
        return {ch: t for ch, t, _ in self.clients}

    def offered_types(self) -> dict[Channel, TypeExpr]:
        return {ch: t for ch, t, _ in self.offered}

    def chan_type(self, ch: Channel) -> TypeExpr:
        n = self.provider_map.get(ch)
        if n is not None:
            return n.typ
        for c, t, _ in self.clients:
            if c == ch:
                return t
        raise SillError(f"unknown channel {ch}")

    def chan_level(self, ch: Channel) -> str | None:
        n = self.provider_map.get(ch)
        if n is not None:
            return n.sec[0] if isinstance(n, ProcNode) and n.sec else \
                (n.sec if isinstance(n, MsgNode) else None)
        for c, _, lvl in self.clients:
            if c == ch:
                return lvl
        return None


def make_config(nodes, clients, offered, sig) -> Configuration:
    return Configuration(tuple(sorted(nodes, key=lambda n: n.provided)),
                         tuple(sorted(clients, key=lambda e: e[0])),
                         tuple(sorted(offered, key=lambda e: e[0])),
                         sig)


def rebuild(c: Configuration, nodes=None, clients=None, offered=None,
            sig=None) -> Configuration:
    return make_config(c.nodes if nodes is None else nodes,
                       c.clients if clients is None else clients,
                       c.offered if offered is None else offered,
                       c.sig if sig is None else sig)


# ---------------------------------------------------------------------------
# instantiation

def _instantiate(d: S.ProcDef, sig: S.Signature, chan: Channel,
                 args: dict, ifc: bool, val: dict | None) -> ProcNode:
    body = sig.desugared_body(d.name)
    mapping = dict(args)
    mapping[d.offered_var] = chan
    term = subst_refs(body, mapping)
    sec = secval = None
    if ifc:
        lat = sig.lattice
        term = ground_term_sec(term, val or {}, lat)
        sec = (join_eval(d.offered_sec, val or {}, lat),
               join_eval(d.running, val or {}, lat))
        secval = tuple(sorted((val or {}).items()))
    return ProcNode(chan, d.offered_type, term, sec, secval)


def init_config(procname: str, sig: S.Signature, providers=None,
                ifc: bool = False) -> Configuration:
    """Instantiate a definition as the root of a fresh configuration.

    ``providers`` names closed definitions supplying the root's arguments,
    positionally; with ``providers=None`` the arguments are left as free
    client channels.  All channels start at generation 0.
    """
    if procname not in sig.procdefs:
        raise SillError(f"unknown process {procname}")
    d = sig.procdefs[procname]
    lat = sig.lattice
    root_val = None
    if ifc:
        if not sig.ifc:
            raise SillError("signature has no security lattice")
        from .lattice import minimal_valuation
        root_val = minimal_valuation(d.theory, lat)
        if root_val is None and d.theory.vars:
            raise SillError(f"theory of {procname} is unsatisfiable")
        root_val = root_val or {}

    nodes = []
    clients = []
    args = {}
    if providers is not None:
        provs = list(providers)
        if len(provs) != len(d.params):
            raise SillError(f"{procname} needs {len(d.params)} providers")
    else:
        provs = [None] * len(d.params)
    for (var, typ, psec), pname in zip(d.params, provs):
        ch = Channel(var, 0)
        args[var] = ch
        if pname is None:
            lvl = None
            if ifc:
                lvl = join_eval(psec, root_val, lat)
            clients.append((ch, typ, lvl))
            continue
        p = sig.procdefs[pname]
        if p.params:
            raise SillError(f"provider {pname} is not closed")
        if not S.type_equal(p.offered_type, typ, sig):
            raise SillError(f"provider {pname} offers the wrong type for {var}")
        pval = None
        if ifc:
            want = join_eval(psec, root_val, lat)
            pval = _valuation_for(p, want, sig)
        nodes.append(_instantiate(p, sig, ch, {}, ifc, pval))
    root_chan = Channel(d.offered_var, 0)
    nodes.append(_instantiate(d, sig, root_chan, args, ifc, root_val))
    lvl = join_eval(d.offered_sec, root_val, lat) if ifc else None
    return make_config(nodes, clients, [(root_chan, d.offered_type, lvl)], sig)


def _valuation_for(d: S.ProcDef, offered_level: str, sig: S.Signature) -> dict:
    from .lattice import join_eval, valuations
    for val in valuations(d.theory, sig.lattice):
        if join_eval(d.offered_sec, val, sig.lattice) == offered_level:
            return val
    raise SillError(f"no valuation makes {d.name} offer at {offered_level}")


def ground_term_sec(term: ProcTerm, val: dict, lat) -> ProcTerm:
    """Replace security annotations by their concrete levels."""
    def g(t):
        if t is None:
            return None
        return Const(join_eval(t, val, lat))

    def walk(t):
        if isinstance(t, SendLabel):
            return SendLabel(t.chan, t.label, walk(t.cont), g(t.ann), t.span)
        if isinstance(t, Case):
            return Case(t.chan, tuple((l, walk(b)) for l, b in t.branches),
                        g(t.ann), t.span)
        if isinstance(t, SendChan):
            return SendChan(t.payload, t.carrier, walk(t.cont), g(t.ann), t.span)
        if isinstance(t, RecvChan):
            return RecvChan(t.binder, t.carrier, walk(t.cont), g(t.ann), t.span)
        if isinstance(t, Close):
            return Close(t.chan, g(t.ann), t.span)
        if isinstance(t, Wait):
            return Wait(t.chan, walk(t.cont), g(t.ann), t.span)
        if isinstance(t, Spawn):
            subst = t.secsubst
            if subst is not None:
                subst = tuple((v, g(s)) for v, s in subst)
            return Spawn(t.binder, t.proc, subst, t.args, walk(t.cont), t.span)
        if isinstance(t, Fwd):
            return t
        if isinstance(t, S.TailCall):
            raise SillError("tail call survived desugaring", t.span)
        raise TypeError(f"unknown term {t!r}")

    return walk(term)


# ---------------------------------------------------------------------------
# redexes and stepping

@dataclass(frozen=True, order=True)
class Redex:
    chan: Channel  # principal (session) channel
    rule: str
    actor: Channel  # providing channel of the acting process node


SEND_RULES = {"one_snd", "plus_snd", "with_snd", "tensor_snd", "lolli_snd"}


def enabled_redexes(c: Configuration) -> list[Redex]:
    """All rule instances whose left-hand side is present, in canonical
    order by principal channel.  Sends are always enabled; receives need
    their message node."""
    out = []
    for n in c.nodes:
        if not isinstance(n, ProcNode):
            continue
        t = n.term
        if isinstance(t, Close):
            if t.chan == n.chan:
                out.append(Redex(n.chan, "one_snd", n.chan))
        elif isinstance(t, SendLabel):
            rule = "plus_snd" if t.chan == n.chan else "with_snd"
            out.append(Redex(t.chan, rule, n.chan))
        elif isinstance(t, SendChan):
            rule = "tensor_snd" if t.carrier == n.chan else "lolli_snd"
            out.append(Redex(t.carrier, rule, n.chan))
        elif isinstance(t, Spawn):
            out.append(Redex(n.chan, "spawn", n.chan))
        elif isinstance(t, Fwd):
            if t.dst == n.chan and t.tname is not None:
                out.append(Redex(n.chan, "dfwd", n.chan))
        elif isinstance(t, Wait):
            m = c.msg_on.get(t.chan)
            if m is not None and isinstance(m.payload, CloseMsg):
                out.append(Redex(t.chan, "one_rcv", n.chan))
        elif isinstance(t, Case):
            m = c.msg_on.get(t.chan)
            if m is not None and isinstance(m.payload, LabelMsg):
                rule = "with_rcv" if t.chan == n.chan else "plus_rcv"
                out.append(Redex(t.chan, rule, n.chan))
        elif isinstance(t, RecvChan):
            m = c.msg_on.get(t.carrier)
            if m is not None and isinstance(m.payload, ChanMsg):
                rule = "lolli_rcv" if t.carrier == n.chan else "tensor_rcv"
                out.append(Redex(t.carrier, rule, n.chan))
    return sorted(out)


def fresh_base(c: Configuration) -> str:
    best = 0
    pat = re.compile(r"^x%(\d+)$")
    chans = set()
    for n in c.nodes:
        chans.add(n.provided)
        chans.update(n.used())
    chans.update(c.iface_channels())
    for ch in chans:
        m = pat.match(ch.base)
        if m:
            best = max(best, int(m.group(1)) + 1)
    return f"x%{best}"


def _branch_type(c: Configuration, t: TypeExpr, label: str) -> TypeExpr:
    u = unfold(t, c.sig)
    return branch_map(u)[label]


def _level_join(c: Configuration, a: str | None, b: str | None) -> str | None:
    if a is None or b is None:
        return None
    return c.sig.lattice.join(a, b)


def step(c: Configuration, r: Redex) -> Configuration:
    """Apply one rewriting rule instance."""
    node = c.provider_map.get(r.actor)
    if not isinstance(node, ProcNode):
        raise SillError(f"stale redex {r}")
    t = node.term
    nodes = [n for n in c.nodes if n is not node]
    ifc = node.sec is not None

    def bump(term, ch):
        return subst_refs(term, {ch: ch.bump()})

    if r.rule == "one_snd":
        assert isinstance(t, Close) and t.chan == node.chan
        nodes.append(MsgNode(CloseMsg(node.chan), node.chan, node.typ, (),
                             node.sec[0] if ifc else None))
        return rebuild(c, nodes)

    if r.rule == "plus_snd":
        assert isinstance(t, SendLabel) and t.chan == node.chan
        cont_t = _branch_type(c, node.typ, t.label)
        nodes.append(MsgNode(LabelMsg(node.chan, t.label), node.chan, node.typ,
                             (node.chan.bump(),), node.sec[0] if ifc else None))
        nodes.append(ProcNode(node.chan.bump(), cont_t,
                              bump(t.cont, node.chan), node.sec, node.secval))
        return rebuild(c, nodes)

    if r.rule == "with_snd":
        assert isinstance(t, SendLabel) and t.chan != node.chan
        x = t.chan
        x_t = c.chan_type(x)
        cont_t = _branch_type(c, x_t, t.label)
        nodes.append(MsgNode(LabelMsg(x, t.label), x.bump(), cont_t, (x,),
                             c.chan_level(x) if ifc else None))
        nodes.append(ProcNode(node.chan, node.typ, bump(t.cont, x),
                              node.sec, node.secval))
        return rebuild(c, nodes)

    if r.rule == "tensor_snd":
        assert isinstance(t, SendChan) and t.carrier == node.chan
        right = unfold(node.typ, c.sig).right
        nodes.append(MsgNode(ChanMsg(t.payload, node.chan), node.chan, node.typ,
                             (t.payload, node.chan.bump()),
                             node.sec[0] if ifc else None))
        nodes.append(ProcNode(node.chan.bump(), right,
                              bump(t.cont, node.chan), node.sec, node.secval))
        return rebuild(c, nodes)

    if r.rule == "lolli_snd":
        assert isinstance(t, SendChan) and t.carrier != node.chan
        x = t.carrier
        right = unfold(c.chan_type(x), c.sig).right
        nodes.append(MsgNode(ChanMsg(t.payload, x), x.bump(), right,
                             (t.payload, x), c.chan_level(x) if ifc else None))
        nodes.append(ProcNode(node.chan, node.typ, bump(t.cont, x),
                              node.sec, node.secval))
        return rebuild(c, nodes)

    if r.rule == "one_rcv":
        assert isinstance(t, Wait)
        msg = c.msg_on[t.chan]
        nodes.remove(msg)
        nodes.append(ProcNode(node.chan, node.typ, t.cont,
                              node.sec, node.secval))
        return rebuild(c, nodes)

    if r.rule == "plus_rcv":
        assert isinstance(t, Case) and t.chan != node.chan
        msg = c.msg_on[t.chan]
        nodes.remove(msg)
        body = dict(t.branches)[msg.payload.label]
        sec = node.sec
        if ifc:
            sec = (node.sec[0], _level_join(c, msg.sec, node.sec[1]))
        nodes.append(ProcNode(node.chan, node.typ, bump(body, t.chan),
                              sec, node.secval))
        return rebuild(c, nodes)

    if r.rule == "with_rcv":
        assert isinstance(t, Case) and t.chan == node.chan
        msg = c.msg_on[t.chan]
        nodes.remove(msg)
        body = dict(t.branches)[msg.payload.label]
        cont_t = _branch_type(c, node.typ, msg.payload.label)
        sec = node.sec
        if ifc:
            sec = (node.sec[0], node.sec[0])
        nodes.append(ProcNode(node.chan.bump(), cont_t, bump(body, t.chan),
                              sec, node.secval))
        return rebuild(c, nodes)

    if r.rule == "tensor_rcv":
        assert isinstance(t, RecvChan) and t.carrier != node.chan
        msg = c.msg_on[t.carrier]
        nodes.remove(msg)
        body = subst_refs(t.cont, {t.binder: msg.payload.sent})
        sec = node.sec
        if ifc:
            sec = (node.sec[0], _level_join(c, msg.sec, node.sec[1]))
        nodes.append(ProcNode(node.chan, node.typ, bump(body, t.carrier),
                              sec, node.secval))
        return rebuild(c, nodes)

    if r.rule == "lolli_rcv":
        assert isinstance(t, RecvChan) and t.carrier == node.chan
        msg = c.msg_on[t.carrier]
        nodes.remove(msg)
        right = unfold(node.typ, c.sig).right
        body = subst_refs(t.cont, {t.binder: msg.payload.sent})
        sec = node.sec
        if ifc:
            sec = (node.sec[0], node.sec[0])
        nodes.append(ProcNode(node.chan.bump(), right, bump(body, node.chan),
                              sec, node.secval))
        return rebuild(c, nodes)

    if r.rule == "spawn":
        assert isinstance(t, Spawn)
        d = c.sig.procdefs.get(t.proc) or c.sig.forwarders.get(t.proc)
        if d is None:
            raise SillError(f"unknown process {t.proc}", t.span)
        new = Channel(fresh_base(c), 0)
        if len(t.args) != len(d.params):
            raise SillError(f"arity mismatch spawning {t.proc}", t.span)
        args = {v: a for (v, _, _), a in zip(d.params, t.args)}
        cval = None
        if ifc:
            pval = dict(node.secval or ())
            lat = c.sig.lattice
            cval = {v: join_eval(s, pval, lat) for v, s in (t.secsubst or ())}
        nodes.append(_instantiate(d, c.sig, new, args, ifc, cval))
        nodes.append(ProcNode(node.chan, node.typ,
                              subst_refs(t.cont, {t.binder: new}),
                              node.sec, node.secval))
        return rebuild(c, nodes)

    if r.rule == "dfwd":
        assert isinstance(t, Fwd) and t.tname is not None
        fd = gen_forwarder(t.tname, c.sig)
        body = subst_refs(fd.body, {"y": t.dst, "z": t.src})
        if ifc:
            body = ground_term_sec(body, {"psi": node.sec[0]}, c.sig.lattice)
        nodes.append(ProcNode(node.chan, node.typ, body,
                              node.sec, node.secval))
        return rebuild(c, nodes)

    raise SillError(f"unknown rule {r.rule}")


# ---------------------------------------------------------------------------
# runs and traces

@dataclass(frozen=True)
class TraceEvent:
    step: int
    rule: str
    chan: str
    label: str | None = None
    sent: str | None = None

    def as_dict(self):
        d = {"step": self.step, "rule": self.rule, "channel": self.chan}
        if self.label is not None:
            d["label"] = self.label
        if self.sent is not None:
            d["sent"] = self.sent
        return d


def _event(i: int, c: Configuration, r: Redex) -> TraceEvent:
    label = sent = None
    node = c.provider_map[r.actor]
    t = node.term
    if isinstance(t, SendLabel):
        label = t.label
    elif isinstance(t, Case):
        m = c.msg_on.get(t.chan)
        if m is not None and isinstance(m.payload, LabelMsg):
            label = m.payload.label
    if isinstance(t, SendChan):
        sent = str(t.payload)
    elif isinstance(t, RecvChan):
        m = c.msg_on.get(t.carrier)
        if m is not None and isinstance(m.payload, ChanMsg):
            sent = str(m.payload.sent)
    return TraceEvent(i, r.rule, str(r.chan), label, sent)


def run(c: Configuration, seed: int, max_steps: int):
    """Drive a configuration with a seeded uniform scheduler.

    Stops at quiescence (no enabled redexes) or after ``max_steps``.
    Returns the final configuration and the trace of applied rules.
    """
    rng = random.Random(seed)
    trace = []
    cur = c
    for i in range(max_steps):
        redexes = enabled_redexes(cur)
        if not redexes:
            break
        r = redexes[rng.randrange(len(redexes))]
        trace.append(_event(i, cur, r))
        cur = step(cur, r)
    return cur, tuple(trace)


def interface_messages(c: Configuration) -> list[tuple[str, str]]:
    """Pending interface messages as (channel, payload) strings."""
    out = []
    iface = c.iface_channels()
    for n in c.nodes:
        if isinstance(n, MsgNode) and n.payload.session in iface:
            p = n.payload
            if isinstance(p, CloseMsg):
                out.append((str(p.chan), "close"))
            elif isinstance(p, LabelMsg):
                out.append((str(p.chan), p.label))
            else:
                out.append((str(p.carrier), f"chan {p.sent.base}"))
    return sorted(out)


def observables(c: Configuration):
    """Interface channels with a pending message (sends) and interface
    channels some process is blocked receiving on (receives)."""
    iface = c.iface_channels()
    ups = {s for s in c.msg_on if s in iface}
    ths = set()
    for n in c.nodes:
        if not isinstance(n, ProcNode):
            continue
        t = n.term
        subject = None
        if isinstance(t, Wait):
            subject = t.chan
        elif isinstance(t, Case):
            subject = t.chan
        elif isinstance(t, RecvChan):
            subject = t.carrier
        if subject in iface:
            ths.add(subject)
    return ups, ths


# ---------------------------------------------------------------------------
# canonicalization

def rename_bases(c: Configuration, mapping: dict[str, str],
                 gen_shift: dict[str, int] | None = None) -> Configuration:
    """Rename channel bases (and optionally shift their generations)."""
    shift = gen_shift or {}

    def ren(ch):
        if not isinstance(ch, Channel):
            return ch
        base = mapping.get(ch.base, ch.base)
        return Channel(base, ch.gen - shift.get(ch.base, 0))

    def ren_payload(p):
        if isinstance(p, CloseMsg):
            return CloseMsg(ren(p.chan))
        if isinstance(p, LabelMsg):
            return LabelMsg(ren(p.chan), p.label)
        return ChanMsg(ren(p.sent), ren(p.carrier))

    nodes = []
    for n in c.nodes:
        if isinstance(n, ProcNode):
            refs = {r: ren(r) for r in term_refs(n.term)
                    if isinstance(r, Channel)}
            refs[n.chan] = ren(n.chan)
            nodes.append(ProcNode(ren(n.chan), n.typ,
                                  subst_refs(n.term, refs), n.sec, n.secval))
        else:
            nodes.append(MsgNode(ren_payload(n.payload), ren(n.provided),
                                 n.typ, tuple(ren(u) for u in n.uses), n.sec))
    clients = tuple((ren(ch), t, l) for ch, t, l in c.clients)
    offered = tuple((ren(ch), t, l) for ch, t, l in c.offered)
    return make_config(nodes, clients, offered, c.sig)


def canonicalize(c: Configuration) -> Configuration:
    """Deterministically rename bound channel bases by forest traversal
    order.  Free (interface) channels are untouched; idempotent."""
    free = {ch.base for ch in c.iface_channels()}
    order = []
    seen = set()

    def visit(ch: Channel):
        node = c.provider_map.get(ch)
        if node is None or id(node) in seen:
            return
        seen.add(id(node))
        if node.provided.base not in free and node.provided.base not in order:
            order.append(node.provided.base)
        for u in node.used():
            if u.base not in free and u.base not in order:
                order.append(u.base)
            visit(u)

    for ch, _, _ in c.offered:
        visit(ch)
    # orphan roots (defensive; well-typed forests have none)
    for n in sorted(c.nodes, key=lambda n: n.provided):
        if id(n) not in seen:
            visit(n.provided)

    mapping = {}
    i = 0
    for base in order:
        while f"b{i}" in free:
            i += 1
        mapping[base] = f"b{i}"
        i += 1
    if all(mapping.get(b, b) == b for b in order):
        return c
    return rename_bases(c, mapping)


def config_key(c: Configuration, shift_free_gens: bool = False):
    """Hashable identity of a configuration up to bound-base renaming and
    bound-generation shifting (optionally also shifting interface
    generations, for cross-observation memoization)."""
    free = {ch.base for ch in c.iface_channels()}
    chans = set()
    for n in c.nodes:
        chans.add(n.provided)
        chans.update(n.used())
    chans.update(c.iface_channels())
    mins: dict[str, int] = {}
    for ch in chans:
        if ch.base in free and not shift_free_gens:
            continue
        mins[ch.base] = min(mins.get(ch.base, ch.gen), ch.gen)
    shifted = rename_bases(c, {}, mins) if any(mins.values()) else c
    return canonicalize(shifted)
