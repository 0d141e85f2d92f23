"""Tokenizer and recursive-descent parser for the source format.

A source file is a sequence of ``secrecy``, ``theory``, ``type``, and
``proc`` items.  Programs without a ``secrecy`` block are plain structural
programs; with one, definitions may carry security annotations.
"""
from __future__ import annotations

from dataclasses import dataclass

from . import syntax as S
from .lattice import Const, Join, LatticeError, SecTerm, SemilatticeSpec, SVar, Theory
from .lattice import validate_semilattice

KEYWORDS = {"secrecy", "theory", "type", "proc", "case", "send", "recv",
            "close", "wait", "fwd"}

PUNCT = ["-o", "<-", "<=", "=>", "::", "->", "{", "}", "(", ")", "[", "]",
         ".", ";", ",", ":", "=", "@", "^", "|", "*", "+", "&"]


@dataclass(frozen=True)
class Token:
    kind: str  # ident, int, punct, eof
    text: str
    span: S.Span


def tokenize(text: str) -> list[Token]:
    toks = []
    i, line, col = 0, 1, 1
    n = len(text)
    while i < n:
        c = text[i]
        if c == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if c in " \t\r":
            i += 1
            col += 1
            continue
        if text.startswith("//", i):
            while i < n and text[i] != "\n":
                i += 1
            continue
        span = S.Span(line, col)
        if c.isalpha() or c == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] in "_'"):
                j += 1
            word = text[i:j]
            toks.append(Token("ident", word, span))
            col += j - i
            i = j
            continue
        if c.isdigit():
            j = i
            while j < n and text[j].isdigit():
                j += 1
            toks.append(Token("int", text[i:j], span))
            col += j - i
            i = j
            continue
        for p in PUNCT:
            if text.startswith(p, i):
                toks.append(Token("punct", p, span))
                i += len(p)
                col += len(p)
                break
        else:
            raise S.SillError(f"unexpected character {c!r}", span)
    toks.append(Token("eof", "", S.Span(line, col)))
    return toks


class Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.pos = 0

    # -- token plumbing ----------------------------------------------------
    def peek(self, k=0) -> Token:
        return self.toks[min(self.pos + k, len(self.toks) - 1)]

    def next(self) -> Token:
        t = self.toks[self.pos]
        if t.kind != "eof":
            self.pos += 1
        return t

    def at(self, text: str, k=0) -> bool:
        return self.peek(k).text == text and self.peek(k).kind in ("punct", "ident")

    def expect(self, text: str) -> Token:
        t = self.peek()
        if t.text != text:
            raise S.SillError(f"expected {text!r}, found {t.text or 'end of input'!r}",
                              t.span)
        return self.next()

    def ident(self, what="identifier") -> Token:
        t = self.peek()
        if t.kind != "ident":
            raise S.SillError(f"expected {what}, found {t.text or 'end of input'!r}",
                              t.span)
        if t.text in KEYWORDS:
            raise S.SillError(f"keyword {t.text!r} cannot be used as {what}", t.span)
        return self.next()

    # -- items --------------------------------------------------------------
    def parse_signature(self) -> S.Signature:
        sig = S.Signature()
        errors = []
        while self.peek().kind != "eof":
            t = self.peek()
            try:
                if t.text == "secrecy":
                    self.parse_secrecy(sig)
                elif t.text == "theory":
                    self.parse_theory(sig)
                elif t.text == "type":
                    self.parse_typedef(sig)
                elif t.text == "proc":
                    self.parse_procdef(sig)
                else:
                    raise S.SillError(
                        f"expected a definition, found {t.text!r}", t.span)
            except S.SillError as e:
                errors.append(e)
                self.skip_item()
        if errors:
            raise S.SillError("; ".join(str(e) for e in errors),
                              errors[0].span, diagnostics=errors)
        return sig

    def skip_item(self):
        depth = 0
        while self.peek().kind != "eof":
            t = self.peek()
            if t.text == "{":
                depth += 1
            elif t.text == "}":
                depth -= 1
                self.next()
                if depth <= 0:
                    return
                continue
            elif depth == 0 and t.text in ("secrecy", "theory", "type", "proc"):
                return
            self.next()

    def parse_secrecy(self, sig: S.Signature):
        kw = self.expect("secrecy")
        if sig.lattice_spec is not None:
            raise S.SillError("duplicate secrecy block", kw.span)
        self.expect("{")
        lines = []
        current = []
        while not self.at("}"):
            if self.at(";"):
                self.next()
                if current:
                    lines.append(tuple(current))
                    current = []
                continue
            current.append(self.ident("security level").text)
        self.expect("}")
        if current:
            lines.append(tuple(current))
        spec = SemilatticeSpec.from_lines(lines)
        try:
            sig.lattice = validate_semilattice(spec)
        except LatticeError as e:
            raise S.SillError(f"invalid security lattice: {e}", kw.span)
        sig.lattice_spec = spec

    def parse_theory(self, sig: S.Signature):
        self.expect("theory")
        name = self.ident("theory name")
        if name.text in sig.theories:
            raise S.SillError(f"duplicate theory {name.text}", name.span)
        self.expect("(")
        vars_ = []
        while not self.at(")"):
            vars_.append(self.ident("security variable").text)
            if self.at(","):
                self.next()
        self.expect(")")
        self.expect("{")
        hyps = []
        declared = set(vars_)
        while not self.at("}"):
            if self.at(";"):
                self.next()
                continue
            lhs = self.parse_secterm(declared)
            op = self.peek()
            if op.text == "<=":
                self.next()
                rhs = self.parse_secterm(declared)
                hyps.append((lhs, rhs))
            elif op.text == "=":
                self.next()
                rhs = self.parse_secterm(declared)
                hyps.append((lhs, rhs))
                hyps.append((rhs, lhs))
            else:
                raise S.SillError("expected <= or = in theory constraint", op.span)
        self.expect("}")
        sig.theories[name.text] = Theory(name.text, tuple(vars_), tuple(hyps))

    def parse_secterm(self, declared_vars=None) -> SecTerm:
        parts = [self.parse_secatom(declared_vars)]
        while self.at("|"):
            self.next()
            parts.append(self.parse_secatom(declared_vars))
        out = parts[-1]
        for p in reversed(parts[:-1]):
            out = Join(p, out)
        return out

    def parse_secatom(self, declared_vars=None) -> SecTerm:
        if self.at("("):
            self.next()
            t = self.parse_secterm(declared_vars)
            self.expect(")")
            return t
        name = self.ident("security term")
        if declared_vars is not None and name.text in declared_vars:
            return SVar(name.text)
        return Const(name.text)

    def resolve_secatoms(self, t: SecTerm, theory: Theory, lat) -> SecTerm:
        """Re-classify parsed atoms against a theory's variables."""
        if isinstance(t, Join):
            return Join(self.resolve_secatoms(t.left, theory, lat),
                        self.resolve_secatoms(t.right, theory, lat))
        name = t.name
        if name in theory.vars:
            return SVar(name)
        if lat is not None and name in lat:
            return Const(name)
        raise S.SillError(f"undeclared secrecy variable {name}")

    def parse_typedef(self, sig: S.Signature):
        self.expect("type")
        name = self.ident("type name")
        if name.text in sig.typedefs:
            raise S.SillError(f"duplicate type {name.text}", name.span)
        self.expect("=")
        body = self.parse_type()
        sig.typedefs[name.text] = S.TypeDef(name.text, body, name.span)

    def parse_type(self) -> S.TypeExpr:
        left = self.parse_type_tensor()
        if self.at("-o"):
            span = self.next().span
            right = self.parse_type()
            return S.Lolli(left, right, span)
        return left

    def parse_type_tensor(self) -> S.TypeExpr:
        left = self.parse_type_atom()
        if self.at("*"):
            span = self.next().span
            right = self.parse_type_tensor()
            return S.Tensor(left, right, span)
        return left

    def parse_type_atom(self) -> S.TypeExpr:
        t = self.peek()
        if t.text == "1":
            self.next()
            return S.One(t.span)
        if t.text in ("+", "&"):
            self.next()
            self.expect("{")
            branches = []
            labels = set()
            while not self.at("}"):
                lab = self.ident("label")
                if lab.text in labels:
                    raise S.SillError(f"duplicate label {lab.text}", lab.span)
                labels.add(lab.text)
                self.expect(":")
                branches.append((lab.text, self.parse_type()))
                if self.at(","):
                    self.next()
            close = self.expect("}")
            if not branches:
                raise S.SillError("empty choice type", close.span)
            ctor = S.Plus if t.text == "+" else S.With
            return ctor(tuple(branches), t.span)
        if t.text == "(":
            self.next()
            inner = self.parse_type()
            self.expect(")")
            return inner
        name = self.ident("type")
        return S.TVar(name.text, name.span)

    def parse_procdef(self, sig: S.Signature):
        self.expect("proc")
        theory = Theory()
        if self.at("["):
            self.next()
            tname = self.ident("theory name")
            if tname.text not in sig.theories:
                raise S.SillError(f"unknown theory {tname.text}", tname.span)
            theory = sig.theories[tname.text]
            self.expect("]")
        name = self.ident("process name")
        if name.text in sig.procdefs:
            raise S.SillError(f"duplicate process {name.text}", name.span)
        self.expect("(")
        params = []
        seen = set()
        while not self.at(")"):
            v = self.ident("parameter")
            if v.text in seen:
                raise S.SillError(f"duplicate parameter {v.text}", v.span)
            seen.add(v.text)
            self.expect(":")
            ty = self.parse_type()
            sec = None
            if self.at("["):
                self.next()
                sec = self._proc_secterm(theory, sig)
                self.expect("]")
            params.append((v.text, ty, sec))
            if self.at(","):
                self.next()
        self.expect(")")
        running = None
        if self.at("@"):
            self.next()
            running = self._proc_secterm(theory, sig, atom=True)
        self.expect("::")
        self.expect("(")
        ov = self.ident("offered channel")
        if ov.text in seen:
            raise S.SillError(f"offered channel {ov.text} shadows a parameter",
                              ov.span)
        self.expect(":")
        oty = self.parse_type()
        osec = None
        if self.at("["):
            self.next()
            osec = self._proc_secterm(theory, sig)
            self.expect("]")
        self.expect(")")
        self.expect("=")
        self.expect("{")
        body = self.parse_term(theory, sig)
        self.expect("}")
        sig.procdefs[name.text] = S.ProcDef(
            name.text, theory, tuple(params), running,
            ov.text, oty, osec, body, name.span)

    def _proc_secterm(self, theory: Theory, sig: S.Signature, atom=False) -> SecTerm:
        span = self.peek().span
        t = (self.parse_secatom(set(theory.vars)) if atom
             else self.parse_secterm(set(theory.vars)))
        self._check_sec(t, theory, sig, span)
        return t

    def _check_sec(self, t: SecTerm, theory: Theory, sig: S.Signature, span):
        for a in [x for x in _sec_atoms(t)]:
            if isinstance(a, SVar):
                continue
            if sig.lattice is None or a.name not in sig.lattice:
                raise S.SillError(f"undeclared secrecy variable {a.name}", span)

    # -- terms ---------------------------------------------------------------
    def parse_term(self, theory: Theory, sig: S.Signature) -> S.ProcTerm:
        t = self.peek()
        if t.text == "case":
            self.next()
            chan, ann = self.parse_chan_use(theory, sig)
            self.expect("{")
            branches = []
            labels = set()
            while not self.at("}"):
                lab = self.ident("label")
                if lab.text in labels:
                    raise S.SillError(f"duplicate label {lab.text}", lab.span)
                labels.add(lab.text)
                self.expect("=>")
                branches.append((lab.text, self.parse_term(theory, sig)))
                if self.at(","):
                    self.next()
            close = self.expect("}")
            if not branches:
                raise S.SillError("empty case", close.span)
            return S.Case(chan, tuple(branches), ann, t.span)
        if t.text == "send":
            self.next()
            payload = self.ident("channel").text
            chan, ann = self.parse_chan_use(theory, sig)
            self.expect(";")
            return S.SendChan(payload, chan, self.parse_term(theory, sig),
                              ann, t.span)
        if t.text == "close":
            self.next()
            chan, ann = self.parse_chan_use(theory, sig)
            return S.Close(chan, ann, t.span)
        if t.text == "wait":
            self.next()
            chan, ann = self.parse_chan_use(theory, sig)
            self.expect(";")
            return S.Wait(chan, self.parse_term(theory, sig), ann, t.span)
        if t.text == "fwd":
            self.next()
            dst = self.ident("channel").text
            src = self.ident("channel").text
            return S.Fwd(dst, src, span=t.span)
        # identifier-led statements
        name = self.ident("channel")
        if self.at("^") or self.at("."):
            ann = None
            if self.at("^"):
                self.next()
                ann = self.parse_secatom(set(theory.vars))
                self._check_sec(ann, theory, sig, name.span)
            self.expect(".")
            lab = self.ident("label")
            self.expect(";")
            return S.SendLabel(name.text, lab.text,
                               self.parse_term(theory, sig), ann, name.span)
        self.expect("<-")
        if self.at("recv"):
            self.next()
            chan, ann = self.parse_chan_use(theory, sig)
            self.expect(";")
            return S.RecvChan(name.text, chan, self.parse_term(theory, sig),
                              ann, name.span)
        callee = self.ident("process name")
        subst = None
        if self.at("["):
            self.next()
            entries = []
            while not self.at("]"):
                v = self.ident("security variable")
                self.expect("->")
                entries.append((v.text, self.parse_secterm(set(theory.vars))))
                if self.at(","):
                    self.next()
            self.expect("]")
            subst = tuple(entries)
        self.expect("<-")
        self.expect("(")
        args = []
        while not self.at(")"):
            args.append(self.ident("argument").text)
            if self.at(","):
                self.next()
        self.expect(")")
        if self.at(";"):
            self.next()
            return S.Spawn(name.text, callee.text, subst, tuple(args),
                           self.parse_term(theory, sig), name.span)
        return S.TailCall(name.text, callee.text, subst, tuple(args), name.span)

    def parse_chan_use(self, theory: Theory, sig: S.Signature):
        name = self.ident("channel")
        ann = None
        if self.at("^"):
            self.next()
            ann = self.parse_secatom(set(theory.vars))
            self._check_sec(ann, theory, sig, name.span)
        return name.text, ann


def _sec_atoms(t: SecTerm):
    if isinstance(t, Join):
        yield from _sec_atoms(t.left)
        yield from _sec_atoms(t.right)
    else:
        yield t


def parse_signature(text: str) -> S.Signature:
    """Parse a source file into a signature.

    Raises ``SillError`` carrying all collected item-level errors.  The
    result round-trips through ``syntax.print_signature``.
    """
    return Parser(text).parse_signature()
