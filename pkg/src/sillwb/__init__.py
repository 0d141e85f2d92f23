"""Workbench for linear session-typed processes.

Parsing, structural and information-flow type checking, asynchronous
execution, and bounded equivalence / noninterference checking.
"""

from .lattice import (Const, Join, LatticeError, SecTerm, Semilattice,
                      SemilatticeSpec, SVar, Theory, apply_subst, check_subst,
                      entails, join_eval, validate_semilattice)
from .parse import parse_signature
from .syntax import (ProcDef, ProcTerm, Signature, SillError, Span, TypeDef,
                     TypeExpr, check_contractive, desugar, erase_signature,
                     gen_forwarder, print_signature, type_equal, unfold)

__all__ = [name for name in dir() if not name.startswith("_")]
