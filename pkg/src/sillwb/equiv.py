"""Bounded equivalence checking of configurations.

Two engines over the same labelled transition structure:

* ``weak_bisim`` plays the weak asynchronous bisimulation game, treating
  internal steps as unobservable.  The dynamics is confluent, so internal
  steps preserve equivalence; the game therefore explores one canonical
  internal schedule per observable (``_probe``) and quotients states by
  bound-channel renaming, generation shifting, and collapsing of resolved
  forwarder nodes.  Verdicts are three-valued: ``related`` means the game
  closed within bounds, ``distinguished`` carries a replayable witness,
  ``inconclusive`` means a bound was hit first.

* ``rslr_check`` evaluates the observation-indexed relation directly:
  internal stepping is exhaustive (capped), every pending interface message
  must be matched by the other side, and each observed exchange decrements
  the index.  It checks one direction; callers compose both.

``link`` composes configurations, ``project_context`` restricts a
security-annotated interface to an observer level, and ``ni_check`` drives
the noninterference counterexample search over generated high environments.
"""
from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field

from . import runtime as R
from . import syntax as S
from .runtime import (ChanMsg, Channel, CloseMsg, Configuration, LabelMsg,
                      MsgNode, ProcNode, make_config, rename_bases)
from .syntax import (Case, Fwd, Lolli, One, Plus, RecvChan, SillError, Tensor,
                     TypeExpr, Wait, With, branch_map, type_equal, unfold)


# ---------------------------------------------------------------------------
# labels, interfaces, verdicts

@dataclass(frozen=True)
class Tau:
    def __str__(self):
        return "tau"


@dataclass(frozen=True)
class Out:
    chan: Channel
    payload: object  # "close" | label | Channel

    def __str__(self):
        return f"{self.chan}!{self.payload}"


@dataclass(frozen=True)
class InL:
    chan: Channel
    payload: object

    def __str__(self):
        return f"L {self.chan}?{self.payload}"


@dataclass(frozen=True)
class InR:
    chan: Channel
    payload: object

    def __str__(self):
        return f"R {self.chan}?{self.payload}"


Label = Tau | Out | InL | InR


@dataclass(frozen=True)
class Interface:
    """Typed free channels: clients used by the configuration and the
    channels it offers (empty tuple = hole)."""

    clients: tuple[tuple[Channel, TypeExpr], ...]
    offered: tuple[tuple[Channel, TypeExpr], ...]

    @classmethod
    def of(cls, c: Configuration) -> "Interface":
        return cls(tuple((ch, t) for ch, t, _ in c.clients),
                   tuple((ch, t) for ch, t, _ in c.offered))


@dataclass(frozen=True)
class SecInterface:
    """Interface with secrecy levels and an observer level."""

    clients: tuple[tuple[Channel, TypeExpr, str], ...]
    offered: tuple[Channel, TypeExpr, str]
    observer: str


@dataclass(frozen=True)
class Verdict:
    kind: str  # "related" | "distinguished" | "inconclusive"
    witness: dict | None = None
    reason: str = ""
    bounds: dict = field(default_factory=dict)

    @property
    def related(self):
        return self.kind == "related"

    @property
    def distinguished(self):
        return self.kind == "distinguished"

    @property
    def inconclusive(self):
        return self.kind == "inconclusive"

    def as_dict(self):
        d = {"verdict": self.kind}
        if self.witness is not None:
            d["witness"] = self.witness
        if self.reason:
            d["reason"] = self.reason
        if self.bounds:
            d["bounds"] = self.bounds
        return d


RELATED = Verdict("related")


# ---------------------------------------------------------------------------
# interface-aware transition effects

def _offered_map(c):
    return {ch: (t, l) for ch, t, l in c.offered}


def _client_map(c):
    return {ch: (t, l) for ch, t, l in c.clients}


def _entries(m):
    return tuple((ch, t, l) for ch, (t, l) in m.items())


def payload_key(p) -> object:
    if isinstance(p, CloseMsg):
        return "close"
    if isinstance(p, LabelMsg):
        return p.label
    return "chan"


def out_effect(c: Configuration, msg: MsgNode) -> Configuration:
    """Remove a pending interface message: the outside observes it."""
    y = msg.payload.session
    nodes = [n for n in c.nodes if n is not msg]
    off = _offered_map(c)
    cli = _client_map(c)
    sig = c.sig
    def send_away(sent, left_t, lvl):
        # a channel provided inside becomes offered; a free client channel
        # passed through stops being part of the interface
        if sent in cli:
            del cli[sent]
        else:
            off[sent] = (left_t, lvl)

    if msg.provided == y:  # provider-sent: y is offered
        t, lvl = off.pop(y)
        u = unfold(t, sig)
        if isinstance(msg.payload, LabelMsg):
            off[y.bump()] = (branch_map(u)[msg.payload.label], lvl)
        elif isinstance(msg.payload, ChanMsg):
            send_away(msg.payload.sent, u.left, lvl)
            off[y.bump()] = (u.right, lvl)
    else:  # client-sent: y is a client channel
        t, lvl = cli.pop(y)
        u = unfold(t, sig)
        if isinstance(msg.payload, LabelMsg):
            cli[y.bump()] = (branch_map(u)[msg.payload.label], lvl)
        else:
            send_away(msg.payload.sent, u.left, lvl)
            cli[y.bump()] = (u.right, lvl)
    return make_config(nodes, _entries(cli), _entries(off), sig)


def in_effect(c: Configuration, y: Channel, payload) -> Configuration:
    """Append an injected message on an interface channel."""
    off = _offered_map(c)
    cli = _client_map(c)
    sig = c.sig
    nodes = list(c.nodes)
    if y in cli:
        t, lvl = cli.pop(y)
        u = unfold(t, sig)
        if payload == "close":
            nodes.append(MsgNode(CloseMsg(y), y, t, (), lvl))
        elif isinstance(payload, Channel):
            if not isinstance(u, Tensor):
                raise SillError(f"channel input on non-sending {y}")
            nodes.append(MsgNode(ChanMsg(payload, y), y, t,
                                 (payload, y.bump()), lvl))
            cli[payload] = (u.left, lvl)
            cli[y.bump()] = (u.right, lvl)
        else:
            if not isinstance(u, Plus) or payload not in branch_map(u):
                raise SillError(f"bad label input {payload} on {y}")
            nodes.append(MsgNode(LabelMsg(y, payload), y, t, (y.bump(),), lvl))
            cli[y.bump()] = (branch_map(u)[payload], lvl)
    elif y in off:
        t, lvl = off.pop(y)
        u = unfold(t, sig)
        if isinstance(payload, Channel):
            if not isinstance(u, Lolli):
                raise SillError(f"channel input on non-receiving {y}")
            nodes.append(MsgNode(ChanMsg(payload, y), y.bump(), u.right,
                                 (payload, y), lvl))
            cli[payload] = (u.left, lvl)
            off[y.bump()] = (u.right, lvl)
        else:
            if not isinstance(u, With) or payload not in branch_map(u):
                raise SillError(f"bad label input {payload} on {y}")
            nodes.append(MsgNode(LabelMsg(y, payload), y.bump(),
                                 branch_map(u)[payload], (y,), lvl))
            off[y.bump()] = (branch_map(u)[payload], lvl)
    else:
        raise SillError(f"{y} is not an interface channel")
    return make_config(nodes, _entries(cli), _entries(off), sig)


def fresh_input_chan(c: Configuration, y: Channel,
                     avoid: set[str] = frozenset()) -> Channel:
    """Canonical name for a received fresh channel.

    Names depend only on the receiving channel's base and the currently
    live names, so states recur once earlier received channels are gone.
    """
    base = f"q{y.base}"
    existing = set(avoid)
    existing.update(ch.base for ch in c.iface_channels())
    for n in c.nodes:
        existing.add(n.provided.base)
        existing.update(u.base for u in n.used())
    b = base
    k = 0
    while b in existing:
        b = f"{base}_{k}"
        k += 1
    return Channel(b, 0)


def _blocked_subject(node: ProcNode) -> Channel | None:
    t = node.term
    if isinstance(t, Wait):
        return t.chan if isinstance(t.chan, Channel) else None
    if isinstance(t, Case):
        return t.chan if isinstance(t.chan, Channel) else None
    if isinstance(t, RecvChan):
        return t.carrier if isinstance(t.carrier, Channel) else None
    return None


def input_payloads(c: Configuration, y: Channel,
                   other: Configuration | None = None):
    """The possible injected payloads for an interface channel, from its
    type: the labels of a choice, ``close`` at 1, or one fresh channel."""
    cli = _client_map(c)
    off = _offered_map(c)
    t = cli[y][0] if y in cli else off[y][0]
    u = unfold(t, c.sig)
    if isinstance(u, One):
        return ["close"]
    if isinstance(u, (Plus, With)):
        return [l for l, _ in u.branches]
    avoid = set()
    if other is not None:
        avoid.update(ch.base for ch in other.iface_channels())
        for n in other.nodes:
            avoid.add(n.provided.base)
            avoid.update(x.base for x in n.used())
    return [fresh_input_chan(c, y, avoid)]


def lts_transitions(c: Configuration, iface: Interface | None = None):
    """All strong labelled transitions: one internal step per redex, an
    output per pending interface message, and an input per payload for
    each blocked receive on an interface channel."""
    out = []
    for r in R.enabled_redexes(c):
        out.append((Tau(), R.step(c, r)))
    iface_chans = c.iface_channels()
    offered = {ch for ch, _, _ in c.offered}
    for y, msg in sorted(c.msg_on.items()):
        if y in iface_chans:
            p = msg.payload
            pl = ("close" if isinstance(p, CloseMsg)
                  else p.label if isinstance(p, LabelMsg) else p.sent)
            out.append((Out(y, pl), out_effect(c, msg)))
    seen_in = set()
    for n in c.nodes:
        if not isinstance(n, ProcNode):
            continue
        y = _blocked_subject(n)
        if y is None or y not in iface_chans or y in seen_in:
            continue
        seen_in.add(y)
        ctor = InR if y in offered else InL
        for p in input_payloads(c, y):
            out.append((ctor(y, p), in_effect(c, y, p)))
    return out


# ---------------------------------------------------------------------------
# state quotients

def collapse_fwds(c: Configuration) -> Configuration:
    """Remove resolved forwarder nodes whose source is internal, renaming
    the source session onto the destination.  The forwarder is an identity,
    so this preserves weak equivalence; it keeps recursive spawn chains
    from growing without bound."""
    changed = True
    while changed:
        changed = False
        for n in c.nodes:
            if not (isinstance(n, ProcNode) and isinstance(n.term, Fwd)):
                continue
            t = n.term
            if t.tname is None or t.dst != n.chan:
                continue
            src = t.src
            if not isinstance(src, Channel) or src not in c.provider_map:
                continue
            dst = n.chan
            nodes = [x for x in c.nodes if x is not n]
            tmp = make_config(nodes, c.clients, c.offered, c.sig)
            if dst.base != src.base:
                shift = {src.base: src.gen - dst.gen}
                tmp = rename_bases(tmp, {src.base: dst.base}, shift)
            elif src.gen != dst.gen:
                tmp = rename_bases(tmp, {}, {src.base: src.gen - dst.gen})
            c = tmp
            changed = True
            break
    return c


def eq_key(c: Configuration):
    """State identity up to bound renaming, generation shifts, and
    forwarder collapse."""
    return R.config_key(collapse_fwds(c), shift_free_gens=True)


def pair_key(c1: Configuration, c2: Configuration):
    return (eq_key(c1), eq_key(c2))


def _tau_key(c: Configuration):
    # interface generations pinned: within one internal stretch they are
    # part of the observable identity
    return R.config_key(collapse_fwds(c), shift_free_gens=False)


def tau_reachable(c: Configuration, max_states: int):
    """Internally reachable states (BFS, deduplicated up to bound
    renaming).  Returns the states and whether the set is complete."""
    seen = {_tau_key(c)}
    out = [c]
    queue = deque([c])
    complete = True
    while queue:
        cur = queue.popleft()
        for r in R.enabled_redexes(cur):
            nxt = R.step(cur, r)
            k = _tau_key(nxt)
            if k in seen:
                continue
            if len(out) >= max_states:
                complete = False
                continue
            seen.add(k)
            out.append(nxt)
            queue.append(nxt)
    return out, complete


# ---------------------------------------------------------------------------
# directed internal scheduling (the probe)

def _next_action(cur: Configuration, y: Channel):
    """Find the next internal redex on the dependency chain toward ``y``,
    or the interface channel the chain is blocked on.

    Returns ``("redex", r)``, ``("blocked", chan)``, or ``("stuck", None)``
    (silent: cyclic wait, dangling dependency, or an unresolvable forward).
    """
    offered = {ch for ch, _, _ in cur.offered}
    iface = cur.iface_channels()
    node = (cur.provider_map.get(y) if y in offered
            else cur.user_map.get(y))
    seen_nodes = set()
    while True:
        if node is None:
            return "stuck", None
        if id(node) in seen_nodes:
            return "stuck", None
        seen_nodes.add(id(node))
        if isinstance(node, MsgNode):
            s = node.payload.session
            consumer = (cur.user_map.get(s) if node.provided == s
                        else cur.provider_map.get(s))
            node = consumer
            continue
        subj = _blocked_subject(node)
        if subj is None:
            cands = [r for r in R.enabled_redexes(cur)
                     if r.actor == node.chan]
            if not cands:
                return "stuck", None  # e.g. forward of a free channel
            return "redex", cands[0]
        if subj in cur.msg_on:
            cands = [r for r in R.enabled_redexes(cur)
                     if r.actor == node.chan]
            if cands:
                return "redex", cands[0]
            return "stuck", None
        if subj in iface:
            return "blocked", subj
        node = (cur.user_map.get(subj) if subj == node.chan
                else cur.provider_map.get(subj))


def _probe(c: Configuration, y: Channel, budget: int):
    """Advance the (confluent) internal computation toward channel ``y``.

    Returns ``(kind, state, definite)`` where kind is ``out`` (a message on
    ``y`` is pending in ``state``), ``in`` (the node holding ``y`` is
    blocked receiving on it), or ``none`` (``y`` stays silent; definite when
    the silence was proved by a cycle or an external dependency, indefinite
    when the step budget ran out).
    """
    cur = collapse_fwds(c)
    seen = set()
    for _ in range(budget):
        if y in cur.msg_on:
            return "out", cur, True
        kind, what = _next_action(cur, y)
        if kind == "stuck":
            return "none", cur, True
        if kind == "blocked":
            if what == y:
                return "in", cur, True
            return "none", cur, True
        cur = collapse_fwds(R.step(cur, what))
        k = _tau_key(cur)
        if k in seen:
            return "none", cur, True
        seen.add(k)
    return "none", cur, False


def settle(c: Configuration, budget: int = 400) -> Configuration:
    """Advance internal computation to a canonical quiet point.

    Internal steps preserve weak equivalence (the dynamics is confluent),
    so game states may be replaced by any internal descendant.  Sends whose
    session already has a pending interface message are withheld to keep
    producer loops from growing an unbounded queue; a revisited state stops
    a silent loop.
    """
    cur = collapse_fwds(c)
    seen = {_tau_key(cur)}
    iface_bases = {ch.base for ch in cur.iface_channels()}
    for _ in range(budget):
        pend = {s.base for s in cur.msg_on} & iface_bases
        pick = None
        for r in R.enabled_redexes(cur):
            if r.rule in R.SEND_RULES and r.chan.base in pend:
                continue
            pick = r
            break
        if pick is None:
            break
        cur = collapse_fwds(R.step(cur, pick))
        k = _tau_key(cur)
        if k in seen:
            break
        seen.add(k)
    return cur


def weak_moves(c: Configuration, max_tau: int):
    """Weak observable per interface channel.

    Values are ``("out", payload, state)``, ``("in",)``, or
    ``("none", definite)``.
    """
    moves = {}
    for y in sorted(c.iface_channels()):
        kind, state, definite = _probe(c, y, max_tau)
        if kind == "out":
            msg = state.msg_on[y]
            moves[y] = ("out", payload_key(msg.payload), state)
        elif kind == "in":
            moves[y] = ("in",)
        else:
            moves[y] = ("none", definite)
    return moves


def _align_sent(base_state: Configuration, other: Configuration,
                y: Channel) -> Configuration:
    """Rename the channel sent on ``y`` in ``other`` to match
    ``base_state``'s (bound names are not observable)."""
    m1 = base_state.msg_on[y]
    m2 = other.msg_on[y]
    if not isinstance(m1.payload, ChanMsg):
        return other
    s1, s2 = m1.payload.sent, m2.payload.sent
    if s1 == s2:
        return other
    if s1.base != s2.base:
        taken = {ch.base for n in other.nodes for ch in (n.provided, *n.used())}
        if s1.base in taken:
            other = rename_bases(other, {s1.base: s1.base + "~shadow"})
        other = rename_bases(other, {s2.base: s1.base},
                             {s2.base: s2.gen - s1.gen})
    elif s2.gen != s1.gen:
        other = rename_bases(other, {}, {s2.base: s2.gen - s1.gen})
    return other


# ---------------------------------------------------------------------------
# weak asynchronous bisimulation game

def weak_bisim(d1: Configuration, d2: Configuration,
               iface: Interface | None = None,
               max_tau: int = 64, max_depth: int = 48) -> Verdict:
    """Bounded weak asynchronous bisimilarity.

    Outputs must be matched exactly (after internal steps); inputs are
    appended asynchronously on both sides, so they never distinguish
    directly but may set up later distinguishable outputs.
    """
    bounds = {"max_tau": max_tau, "max_depth": max_depth}
    if Interface.of(d1) != Interface.of(d2):
        return Verdict("distinguished", reason="interface mismatch",
                       bounds=bounds)
    d1, d2 = settle(d1), settle(d2)
    start = (d1, d2, ())
    visited = {pair_key(d1, d2)}
    queue = deque([start])
    inconclusive = None
    while queue:
        c1, c2, path = queue.popleft()
        if eq_key(c1) == eq_key(c2):
            continue
        if len(path) >= max_depth:
            inconclusive = "depth bound"
            continue
        mv1 = weak_moves(c1, max_tau)
        mv2 = weak_moves(c2, max_tau)
        chans = set(mv1) | set(mv2)
        for y in sorted(chans):
            k1 = mv1.get(y, ("none", True))
            k2 = mv2.get(y, ("none", True))
            if k1[0] == "out" or k2[0] == "out":
                if k1[0] != "out" or k2[0] != "out":
                    other = k2 if k1[0] == "out" else k1
                    silent = other[0] == "in" or \
                        (other[0] == "none" and other[1])
                    if silent:
                        return Verdict(
                            "distinguished",
                            witness={"trace": list(path),
                                     "channel": str(y),
                                     "left": _mv_str(y, k1),
                                     "right": _mv_str(y, k2)},
                            bounds=bounds)
                    inconclusive = f"unmatched output on {y} under tau bound"
                    continue
                if k1[1] != k2[1]:
                    return Verdict(
                        "distinguished",
                        witness={"trace": list(path), "channel": str(y),
                                 "left": _mv_str(y, k1),
                                 "right": _mv_str(y, k2)},
                        bounds=bounds)
                s1, s2 = k1[2], k2[2]
                s2 = _align_sent(s1, s2, y)
                t1 = out_effect(s1, s1.msg_on[y])
                t2 = out_effect(s2, s2.msg_on[y])
                _enqueue(queue, visited, t1, t2,
                         path + (f"{y}!{k1[1]}",), max_depth)
            elif k1[0] == "in" or k2[0] == "in":
                for p in input_payloads(c1, y, c2):
                    t1 = in_effect(c1, y, p)
                    t2 = in_effect(c2, y, p)
                    _enqueue(queue, visited, t1, t2,
                             path + (f"{y}?{p}",), max_depth)
    if inconclusive:
        return Verdict("inconclusive", reason=inconclusive, bounds=bounds)
    return Verdict("related", bounds=bounds)


def _mv_str(y, k):
    if k[0] == "out":
        return f"{y}!{k[1]}"
    if k[0] == "in":
        return f"{y}? (blocked receiving)"
    return "silent"


def _enqueue(queue, visited, t1, t2, path, max_depth):
    t1, t2 = settle(t1), settle(t2)
    key = pair_key(t1, t2)
    if key in visited:
        return
    visited.add(key)
    queue.append((t1, t2, path))


# ---------------------------------------------------------------------------
# the observation-indexed relation

class _Rslr:
    def __init__(self, sig, max_tau):
        self.sig = sig
        self.max_tau = max_tau
        self.memo = {}
        self.overflow = False

    def check(self, c1, c2, m) -> Verdict:
        if m == 0:
            return RELATED
        if eq_key(c1) == eq_key(c2):
            return RELATED
        key = (pair_key(c1, c2), m)
        hit = self.memo.get(key)
        if hit is not None:
            return hit
        self.memo[key] = RELATED  # guard against re-entry on equal keys
        v = self._term_interp(c1, c2, m)
        self.memo[key] = v
        return v

    def _term_interp(self, c1, c2, m) -> Verdict:
        s1s, comp1 = tau_reachable(c1, self.max_tau)
        s2s, comp2 = tau_reachable(c2, self.max_tau)
        if not (comp1 and comp2):
            self.overflow = True
        offered = {ch for ch, _, _ in c1.offered}
        inconclusive = None
        for s1 in s1s:
            ups1, ths1 = R.observables(s1)
            # definite conflict: an interface message is immutable, so a
            # differing pinned label on the other side can never be matched
            for y in sorted(ups1):
                p1 = s1.msg_on[y].payload
                if not isinstance(p1, LabelMsg):
                    continue
                for s2 in s2s:
                    m2 = s2.msg_on.get(y)
                    if m2 is not None and isinstance(m2.payload, LabelMsg) \
                            and m2.payload.label != p1.label:
                        return Verdict(
                            "distinguished",
                            witness={"channel": str(y),
                                     "left": p1.label,
                                     "right": m2.payload.label})
            matched = False
            definite_fail = comp2
            fail_witness = None
            for s2 in s2s:
                ups2, _ = R.observables(s2)
                if not ups1 <= ups2:
                    continue
                verdicts = []
                for y in sorted(ups1):
                    verdicts.append(self._value_out(y, s1, s2, m))
                for y in sorted(ths1):
                    verdicts.append(self._value_in(y, s1, s2, m))
                if all(v.related for v in verdicts):
                    matched = True
                    break
                bad = next(v for v in verdicts if not v.related)
                if bad.distinguished:
                    fail_witness = fail_witness or bad.witness
                else:
                    definite_fail = False
            if matched:
                continue
            if definite_fail:
                if fail_witness is None:
                    missing = sorted(str(y) for y in ups1)
                    fail_witness = {"channel": ",".join(missing),
                                    "left": "pending message",
                                    "right": "cannot match"}
                return Verdict("distinguished", witness=fail_witness)
            inconclusive = "no matching internal run within tau bound"
        if inconclusive:
            return Verdict("inconclusive", reason=inconclusive)
        if self.overflow:
            return Verdict("inconclusive", reason="tau bound exceeded")
        return RELATED

    # -- value interpretation, output focus ---------------------------------
    def _value_out(self, y, s1, s2, m) -> Verdict:
        m1, m2 = s1.msg_on[y], s2.msg_on.get(y)
        if m2 is None:
            return Verdict("distinguished",
                           witness={"channel": str(y),
                                    "left": str(payload_key(m1.payload)),
                                    "right": "no message"})
        if payload_key(m1.payload) != payload_key(m2.payload):
            return Verdict("distinguished",
                           witness={"channel": str(y),
                                    "left": str(payload_key(m1.payload)),
                                    "right": str(payload_key(m2.payload))})
        if isinstance(m1.payload, ChanMsg):
            inside1 = m1.payload.sent in s1.provider_map
            inside2 = m2.payload.sent in s2.provider_map
            if inside1 != inside2:
                return Verdict("distinguished",
                               witness={"channel": str(y),
                                        "left": "sends an internal tree"
                                        if inside1 else "passes a free channel",
                                        "right": "passes a free channel"
                                        if inside1 else "sends an internal tree"})
            if inside1:
                s2 = _align_sent(s1, s2, y)
                m2 = s2.msg_on[y]
            elif m1.payload.sent != m2.payload.sent:
                return Verdict("distinguished",
                               witness={"channel": str(y),
                                        "left": str(m1.payload.sent),
                                        "right": str(m2.payload.sent)})
        e1 = out_effect(s1, m1)
        e2 = out_effect(s2, m2)
        if isinstance(m1.payload, ChanMsg) and m1.payload.sent in e1.provider_map:
            x = m1.payload.sent
            parts1 = split_tree(e1, x)
            parts2 = split_tree(e2, x)
            if parts1 is None or parts2 is None:
                return Verdict("inconclusive", reason="tree split failed")
            t1, r1 = parts1
            t2, r2 = parts2
            if Interface.of(t1) != Interface.of(t2):
                return Verdict("distinguished",
                               witness={"channel": str(x),
                                        "left": "sent tree interface",
                                        "right": "differs"})
            v = self.check(t1, t2, m - 1)
            if not v.related:
                return self._tag(v, y, m1)
            v = self.check(r1, r2, m - 1)
            return self._tag(v, y, m1)
        v = self.check(e1, e2, m - 1)
        return self._tag(v, y, m1)

    # -- value interpretation, input focus -----------------------------------
    def _value_in(self, y, s1, s2, m) -> Verdict:
        inconclusive = None
        for p in input_payloads(s1, y, s2):
            t1 = in_effect(s1, y, p)
            t2 = in_effect(s2, y, p)
            v = self.check(t1, t2, m - 1)
            if v.distinguished:
                w = dict(v.witness or {})
                w.setdefault("after_input", f"{y}?{p}")
                return Verdict("distinguished", witness=w)
            if v.inconclusive:
                inconclusive = v
        return inconclusive or RELATED

    def _tag(self, v: Verdict, y, msg) -> Verdict:
        if not v.distinguished:
            return v
        w = dict(v.witness or {})
        w.setdefault("after_output", f"{y}!{payload_key(msg.payload)}")
        return Verdict("distinguished", witness=w)


def split_tree(c: Configuration, root: Channel):
    """Split off the subtree providing ``root`` (with its part of the
    interface) from the rest of the configuration."""
    if root not in c.provider_map:
        return None
    sub_nodes = []
    stack = [root]
    seen = set()
    sub_clients = {}
    cli = _client_map(c)
    while stack:
        ch = stack.pop()
        n = c.provider_map.get(ch)
        if n is None:
            if ch in cli:
                sub_clients[ch] = cli[ch]
                continue
            return None
        if id(n) in seen:
            continue
        seen.add(id(n))
        sub_nodes.append(n)
        stack.extend(n.used())
    off = _offered_map(c)
    sub = make_config(sub_nodes, _entries(sub_clients),
                      [(root, *off[root])], c.sig)
    rest_nodes = [n for n in c.nodes if id(n) not in seen]
    rest_cli = {ch: v for ch, v in cli.items() if ch not in sub_clients}
    rest_off = {ch: v for ch, v in off.items() if ch != root}
    rest = make_config(rest_nodes, _entries(rest_cli), _entries(rest_off),
                       c.sig)
    return sub, rest


def rslr_check(d1: Configuration, d2: Configuration,
               iface: Interface | None = None, m: int = 2,
               max_tau: int = 64) -> Verdict:
    """One direction of the observation-indexed relation at index ``m``."""
    bounds = {"m": m, "max_tau": max_tau}
    if Interface.of(d1) != Interface.of(d2):
        return Verdict("distinguished", reason="interface mismatch",
                       bounds=bounds)
    engine = _Rslr(d1.sig, max_tau)
    v = engine.check(d1, d2, m)
    return Verdict(v.kind, v.witness, v.reason, bounds)


def rslr_equiv(d1: Configuration, d2: Configuration, m: int,
               max_tau: int = 64) -> Verdict:
    """Both directions at index ``m``."""
    v1 = rslr_check(d1, d2, m=m, max_tau=max_tau)
    if not v1.related:
        return v1
    v2 = rslr_check(d2, d1, m=m, max_tau=max_tau)
    return v2 if not v2.related else v1


# ---------------------------------------------------------------------------
# linking

def link(provider: Configuration, client: Configuration,
         chan: Channel | None = None) -> Configuration:
    """Parallel composition: the provider's offered channel plugs one of
    the client's free channels of equal type."""
    sig = client.sig if client.sig is not None else provider.sig
    poff = _offered_map(provider)
    ccli = _client_map(client)
    if chan is None:
        shared = [ch for ch in poff if ch in ccli]
        if len(shared) != 1:
            raise SillError(f"cannot determine linking channel: {shared}")
        chan = shared[0]
    if chan not in poff or chan not in ccli:
        raise SillError(f"{chan} is not shared between the configurations")
    if not type_equal(poff[chan][0], ccli[chan][0], sig):
        raise SillError(f"type mismatch on {chan}")

    def bases(c):
        out = set()
        for n in c.nodes:
            out.add(n.provided.base)
            out.update(u.base for u in n.used())
        out.update(ch.base for ch in c.iface_channels())
        return out

    pb, cb = bases(provider), bases(client)
    free_p = {ch.base for ch in provider.iface_channels()}
    free_c = {ch.base for ch in client.iface_channels()}
    collisions = (pb & cb) - {chan.base}
    ren = {}
    taken = pb | cb
    for b in sorted(collisions):
        if b in free_p and b in free_c:
            raise SillError(f"free channel base {b} collides in link")
        i = 0
        while f"{b}_{i}" in taken:
            i += 1
        ren[b] = f"{b}_{i}"
        taken.add(ren[b])
    renamed = client
    if ren:
        bound_c = {b: ren[b] for b in ren if b not in free_c}
        if bound_c:
            renamed = rename_bases(client, bound_c)
        bound_p = {b: ren[b] for b in ren if b in free_c}
        if bound_p:
            provider = rename_bases(provider, bound_p)
    nodes = list(provider.nodes) + list(renamed.nodes)
    clients = list(provider.clients) + [e for e in renamed.clients
                                        if e[0] != chan]
    offered = [e for e in provider.offered if e[0] != chan] \
        + list(renamed.offered)
    return make_config(nodes, clients, offered, sig)


def forwarder_config(tname: str, sig, src: Channel, dst: Channel) -> Configuration:
    """A single-node configuration relaying ``src`` to ``dst`` at a defined
    type: ``src:T |- dst:T``."""
    fd = S.gen_forwarder(tname, sig)
    body = S.subst_refs(fd.body, {"z": src, "y": dst})
    node = ProcNode(dst, S.TVar(tname), body)
    return make_config([node], [(src, S.TVar(tname), None)],
                       [(dst, S.TVar(tname), None)], sig)


# ---------------------------------------------------------------------------
# observer projection and noninterference

def project_context(sctx: SecInterface, lat) -> Interface:
    """Drop channels the observer cannot see; an unobservable offered
    channel becomes the hole."""
    xi = sctx.observer
    clients = tuple((ch, t) for ch, t, lvl in sctx.clients
                    if lat.leq(lvl, xi))
    ch, t, lvl = sctx.offered
    offered = ((ch, t),) if lat.leq(lvl, xi) else ()
    return Interface(clients, offered)


def gen_high_envs(sctx: SecInterface, depth: int, sig,
                  max_variants: int = 4, max_envs: int = 9):
    """Families of closed high environments for the unobservable channels
    (see envgen module)."""
    from .envgen import generate_high_envs
    return generate_high_envs(sctx, depth, sig, max_variants, max_envs)


def ni_check(d1: Configuration, d2: Configuration,
             s1: SecInterface, s2: SecInterface,
             m: int = 2, depth: int = 1, max_tau: int = 64,
             max_envs: int = 9) -> Verdict:
    """Noninterference counterexample search.

    Composes every generated pair of high environments onto the two
    configurations and checks the observation-indexed relation in both
    directions at the projected interface.  ``related`` means no
    counterexample was found at these bounds; it is not a proof.
    """
    lat = d1.sig.lattice or d2.sig.lattice
    if lat is None:
        raise SillError("noninterference checking needs a security lattice")
    p1 = project_context(s1, lat)
    p2 = project_context(s2, lat)
    if p1 != p2:
        raise SillError("projected interfaces differ")
    envs1 = gen_high_envs(s1, depth, d1.sig, max_envs=max_envs)
    envs2 = (envs1 if (s1, d1.sig) == (s2, d2.sig)
             else gen_high_envs(s2, depth, d2.sig, max_envs=max_envs))
    bounds = {"m": m, "depth": depth, "max_tau": max_tau,
              "envs": len(envs1) * len(envs2)}
    for (b1, t1, n1), (b2, t2, n2) in itertools.product(envs1, envs2):
        c1 = _compose_env(d1, b1, t1)
        c2 = _compose_env(d2, b2, t2)
        for left, right, names in ((c1, c2, (n1, n2)), (c2, c1, (n2, n1))):
            v = rslr_check(left, right, m=m, max_tau=max_tau)
            if v.distinguished:
                w = dict(v.witness or {})
                w["environments"] = list(names)
                return Verdict("distinguished", witness=w, bounds=bounds)
    return Verdict("related", reason="no counterexample found", bounds=bounds)


def _compose_env(d: Configuration, bs, t: Configuration | None) -> Configuration:
    c = d
    for b in bs:
        ch = b.offered[0][0]
        c = link(rebuild_sig(b, c.sig), c, ch)
    if t is not None:
        off = c.offered[0][0]
        c = link(c, rebuild_sig(t, c.sig), off)
    return c


def rebuild_sig(c: Configuration, sig) -> Configuration:
    merged = sig
    if c.sig is not sig:
        merged = _merge_sigs(sig, c.sig)
    return make_config(c.nodes, c.clients, c.offered, merged)


def _merge_sigs(a, b):
    if a is b:
        return a
    out = S.Signature()
    out.lattice_spec = a.lattice_spec or b.lattice_spec
    out.lattice = a.lattice or b.lattice
    out.theories = {**b.theories, **a.theories}
    out.typedefs = {**b.typedefs, **a.typedefs}
    out.procdefs = {**b.procdefs, **a.procdefs}
    out.forwarders = {**b.forwarders, **a.forwarders}
    return out
