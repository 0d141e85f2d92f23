"""Generation of closed high environments for noninterference checking.

For every unobservable free channel we enumerate finite families of
well-typed counterpart processes: providers for unobservable client
channels and a consuming client for an unobservable offered channel.
Enumeration unrolls the session type to a given depth, covering every
label choice and every sent-channel variant; past the depth the behavior
is completed canonically (first label, always) and positions that cannot
terminate are closed with a silent self-spawning loop.  Generated
definitions live in a scratch signature merged into the checked
configuration's signature at composition time.
"""
from __future__ import annotations

import itertools

from . import runtime as R
from . import syntax as S
from .lattice import Theory
from .runtime import Channel, make_config
from .syntax import (Case, Close, Lolli, One, Plus, ProcDef, RecvChan,
                     SendChan, SendLabel, TailCall, Tensor, TVar, TypeExpr,
                     Wait, With, unfold)


class EnvGenerator:
    def __init__(self, sig: S.Signature, max_variants: int = 4):
        self.base = sig
        self.max_variants = max_variants
        self.sig = S.Signature()
        self.sig.typedefs = dict(sig.typedefs)
        self._counter = itertools.count()
        self._canonical: dict[tuple[str, str], str] = {}
        self._wedges: dict[tuple, str] = {}
        self._fresh = itertools.count()

    # -- plumbing ------------------------------------------------------------
    def _register(self, name, params, offered_var, offered_type, body):
        self.sig.procdefs[name] = ProcDef(
            name=name, theory=Theory(), params=tuple(params), running=None,
            offered_var=offered_var, offered_type=offered_type,
            offered_sec=None, body=body)

    def _var(self, stem="h"):
        return f"{stem}{next(self._fresh)}"

    def _tkey(self, t: TypeExpr) -> str:
        return S.print_type(t)

    # -- silent divergence ----------------------------------------------------
    def wedge(self, held, offered_type: TypeExpr) -> str:
        """A definition that holds its arguments forever: a well-typed
        silent loop (spawn self, forward)."""
        key = (tuple(self._tkey(t) for _, t in held), self._tkey(offered_type))
        if key in self._wedges:
            return self._wedges[key]
        name = f"GenLoop{next(self._counter)}"
        self._wedges[key] = name
        params = [(f"a{i}", t, None) for i, (_, t) in enumerate(held)]
        body = TailCall("w", name, None, tuple(p[0] for p in params))
        self._register(name, params, "w", offered_type, body)
        return name

    def _wedge_tail(self, held, offered_type, offered_var):
        name = self.wedge(held, offered_type)
        return TailCall(offered_var, name, None, tuple(v for v, _ in held))

    # -- canonical completions -------------------------------------------------
    def canonical(self, role: str, t: TypeExpr) -> str:
        """The canonical completion definition for a type: providers pick
        the first label and keep going; clients pick the first label and
        consume forever.  Recursion goes through the definition itself."""
        key = (role, self._tkey(t))
        if key in self._canonical:
            return self._canonical[key]
        name = f"GenCan{next(self._counter)}"
        self._canonical[key] = name
        if role == "prov":
            body = self._canon_body("prov", t, (), "x")
            self._register(name, (), "x", t, body)
        else:
            body = self._canon_body("cli", t, (), "x")
            self._register(name, [("x", t, None)], "res", One(), body)
        return name

    def _canon_tail(self, role, t, held, subject, offered_var):
        if role == "prov":
            if held:
                return self._wedge_tail(held, t, subject)
            return TailCall(subject, self.canonical("prov", t), None, ())
        if held:
            return self._wedge_tail(((subject, t),) + tuple(held), One(),
                                    offered_var)
        return TailCall(offered_var, self.canonical("cli", t), None, (subject,))

    def _canon_body(self, role, t, held, subject, offered_var="res",
                    seen=frozenset()):
        if isinstance(t, TVar):
            if t.name in seen or held:
                return self._canon_tail(role, t, held, subject, offered_var)
            return self._canon_body(role, unfold(t, self.sig), held, subject,
                                    offered_var, seen | {t.name})
        u = t
        if role == "prov":
            if isinstance(u, One):
                if held:
                    return self._wedge_tail(held, u, subject)
                return Close(subject)
            if isinstance(u, Plus):
                l0, t0 = u.branches[0]
                return SendLabel(subject, l0,
                                 self._canon_body(role, t0, held, subject,
                                                  offered_var, seen))
            if isinstance(u, With):
                return Case(subject, tuple(
                    (l, self._canon_body(role, b, held, subject, offered_var,
                                         seen))
                    for l, b in u.branches))
            if isinstance(u, Tensor):
                w = self._var("w")
                payload = self.canonical("prov", u.left)
                return S.Spawn(w, payload, None, (),
                               SendChan(w, subject,
                                        self._canon_body(role, u.right, held,
                                                         subject, offered_var,
                                                         seen)))
            if isinstance(u, Lolli):
                w = self._var("w")
                return RecvChan(w, subject,
                                self._canon_body(role, u.right,
                                                 held + ((w, u.left),),
                                                 subject, offered_var, seen))
        else:
            if isinstance(u, One):
                return Wait(subject, self._finish(held, offered_var))
            if isinstance(u, Plus):
                return Case(subject, tuple(
                    (l, self._canon_body(role, b, held, subject, offered_var,
                                         seen))
                    for l, b in u.branches))
            if isinstance(u, With):
                l0, t0 = u.branches[0]
                return SendLabel(subject, l0,
                                 self._canon_body(role, t0, held, subject,
                                                  offered_var, seen))
            if isinstance(u, Tensor):
                w = self._var("w")
                return RecvChan(w, subject,
                                self._canon_body(role, u.right,
                                                 held + ((w, u.left),),
                                                 subject, offered_var, seen))
            if isinstance(u, Lolli):
                w = self._var("w")
                payload = self.canonical("prov", u.left)
                return S.Spawn(w, payload, None, (),
                               SendChan(w, subject,
                                        self._canon_body(role, u.right, held,
                                                         subject, offered_var,
                                                         seen)))
        raise TypeError(f"unknown type {u!r}")

    def _finish(self, held, offered_var):
        """Close out a finished client: wait for held unit channels, then
        close, or loop silently if something unconsumable remains."""
        ones = [(v, t) for v, t in held if isinstance(unfold(t, self.sig), One)]
        rest = [(v, t) for v, t in held
                if not isinstance(unfold(t, self.sig), One)]
        term = (Close(offered_var) if not rest
                else self._wedge_tail(tuple(rest), One(), offered_var))
        for v, _ in reversed(ones):
            term = Wait(v, term)
        return term

    # -- enumeration ------------------------------------------------------------
    def _cap(self, xs):
        return xs[: self.max_variants]

    def _terms(self, role, t, budget, held, subject, offered_var="res"):
        if isinstance(t, TVar):
            return self._terms(role, unfold(t, self.sig), budget, held,
                               subject, offered_var)
        if budget <= 0:
            return [self._canon_tail(role, t, held, subject, offered_var)]
        u = t
        out = []
        if role == "prov":
            if isinstance(u, One):
                if held:
                    return [self._wedge_tail(held, u, subject)]
                return [Close(subject)]
            if isinstance(u, Plus):
                for l, b in u.branches:
                    for k in self._terms(role, b, budget - 1, held, subject,
                                         offered_var):
                        out.append(SendLabel(subject, l, k))
                return self._cap(out)
            if isinstance(u, With):
                per = [self._cap(self._terms(role, b, budget - 1, held,
                                             subject, offered_var))
                       for _, b in u.branches]
                for combo in itertools.product(*per):
                    out.append(Case(subject, tuple(
                        (l, k) for (l, _), k in zip(u.branches, combo))))
                return self._cap(out)
            if isinstance(u, Tensor):
                for pd in self.provider_defs(u.left, budget - 1):
                    for k in self._terms(role, u.right, budget - 1, held,
                                         subject, offered_var):
                        w = self._var("w")
                        out.append(S.Spawn(w, pd, None, (),
                                           SendChan(w, subject, k)))
                return self._cap(out)
            if isinstance(u, Lolli):
                w = self._var("w")
                for k in self._terms(role, u.right, budget - 1,
                                     held + ((w, u.left),), subject,
                                     offered_var):
                    out.append(RecvChan(w, subject, k))
                return self._cap(out)
        else:
            if isinstance(u, One):
                return [Wait(subject, self._finish(held, offered_var))]
            if isinstance(u, Plus):
                per = [self._cap(self._terms(role, b, budget - 1, held,
                                             subject, offered_var))
                       for _, b in u.branches]
                for combo in itertools.product(*per):
                    out.append(Case(subject, tuple(
                        (l, k) for (l, _), k in zip(u.branches, combo))))
                return self._cap(out)
            if isinstance(u, With):
                for l, b in u.branches:
                    for k in self._terms(role, b, budget - 1, held, subject,
                                         offered_var):
                        out.append(SendLabel(subject, l, k))
                return self._cap(out)
            if isinstance(u, Tensor):
                w = self._var("w")
                for k in self._terms(role, u.right, budget - 1,
                                     held + ((w, u.left),), subject,
                                     offered_var):
                    out.append(RecvChan(w, subject, k))
                return self._cap(out)
            if isinstance(u, Lolli):
                for pd in self.provider_defs(u.left, budget - 1):
                    for k in self._terms(role, u.right, budget - 1, held,
                                         subject, offered_var):
                        w = self._var("w")
                        out.append(S.Spawn(w, pd, None, (),
                                           SendChan(w, subject, k)))
                return self._cap(out)
        raise TypeError(f"unknown type {u!r}")

    def provider_defs(self, t: TypeExpr, budget: int) -> list[str]:
        """Closed definitions offering ``t``."""
        names = []
        for body in self._cap(self._terms("prov", t, budget, (), "x")):
            name = f"GenP{next(self._counter)}"
            self._register(name, (), "x", t, body)
            names.append(name)
        return names

    def client_defs(self, t: TypeExpr, budget: int) -> list[str]:
        """Definitions consuming an ``t`` channel and offering 1."""
        names = []
        for body in self._cap(self._terms("cli", t, budget, (), "x")):
            name = f"GenC{next(self._counter)}"
            self._register(name, [("x", t, None)], "res", One(), body)
            names.append(name)
        return names


def _provider_config(gen: EnvGenerator, name: str, ch: Channel,
                     t: TypeExpr):
    d = gen.sig.procdefs[name]
    node = R._instantiate(d, gen.sig, ch, {}, False, None)
    return make_config([node], [], [(ch, t, None)], gen.sig)


def _client_config(gen: EnvGenerator, name: str, ch: Channel, t: TypeExpr,
                   taken_bases):
    d = gen.sig.procdefs[name]
    base = "obs"
    while base in taken_bases:
        base += "_"
    out = Channel(base, 0)
    node = R._instantiate(d, gen.sig, out, {"x": ch}, False, None)
    return make_config([node], [(ch, t, None)], [(out, One(), None)], gen.sig)


def generate_high_envs(sctx, depth: int, sig, max_variants: int = 4,
                       max_envs: int = 9):
    """Families ``(providers, client, name)`` of high environments.

    ``providers`` holds one closed configuration per unobservable client
    channel; ``client`` consumes the offered channel when it is
    unobservable (``None`` otherwise).  The cross product is truncated
    deterministically at ``max_envs``.
    """
    lat = sig.lattice
    if lat is None:
        raise S.SillError("high-environment generation needs a lattice")
    xi = sctx.observer
    gen = EnvGenerator(sig, max_variants)
    slots = []
    for ch, t, lvl in sctx.clients:
        if not lat.leq(lvl, xi):
            names = gen.provider_defs(t, depth)
            slots.append([(ch, t, n) for n in names])
    och, ot, olvl = sctx.offered
    client_choices = [None]
    if not lat.leq(olvl, xi):
        client_choices = gen.client_defs(ot, depth)
    taken = {ch.base for ch, _, _ in sctx.clients} | {och.base}
    out = []
    for combo in itertools.product(*slots, client_choices):
        *provs, cli = combo
        bs = tuple(_provider_config(gen, n, ch, t) for ch, t, n in provs)
        t_cfg = (None if cli is None
                 else _client_config(gen, cli, och, ot, taken))
        label = ",".join(f"{ch.base}={n}" for ch, t, n in provs)
        if cli is not None:
            label = f"{label};obs={cli}" if label else f"obs={cli}"
        out.append((bs, t_cfg, label or "(none)"))
        if len(out) >= max_envs:
            break
    return out
