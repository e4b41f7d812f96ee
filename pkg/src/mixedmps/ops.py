"""Symbolic operator expressions.

Expressions are immutable ASTs over named local operators.  A *generic*
expression (no site indices) describes an operator on k abstract slots; an
*indexed* expression pins slots to concrete 1-based chain sites.  Products
are written by adjacency or ``*``; ``Dissipator`` and ``Gate`` mark jump
operators and quantum channels and are only legal where an evolver or a gate
layer is being built.

Names like ``N`` exist for several site kinds with different matrices; such
names stay polymorphic (:class:`GenericName`) until they meet concrete sites.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .sites import OperatorDef, Site, operators
from .tensor import matrix_exponential


class ExprError(ValueError):
    """Ill-formed operator expression for the requested use."""


class OpExpr:
    """Base class; provides the arithmetic sugar shared by all nodes."""

    def __add__(self, other):
        return add_exprs(self, other)

    def __radd__(self, other):
        return add_exprs(other, self)

    def __sub__(self, other):
        return add_exprs(self, scale_expr(-1, as_expr(other)))

    def __neg__(self):
        return scale_expr(-1, self)

    def __mul__(self, other):
        if isinstance(other, OpExpr):
            return mul_exprs(self, other)
        return scale_expr(complex(other), self)

    def __rmul__(self, other):
        return scale_expr(complex(other), self)

    def __truediv__(self, other):
        return scale_expr(1 / complex(other), self)

    def __call__(self, *sites: int):
        return Indexed(self, tuple(int(s) for s in sites))


@dataclass(frozen=True)
class NamedOp(OpExpr):
    op: OperatorDef


@dataclass(frozen=True)
class GenericName(OpExpr):
    """A named operator with one definition per applicable site kind."""

    name: str
    table: tuple[tuple[Site, OperatorDef], ...]

    def __post_init__(self) -> None:
        supports = {d.support for _, d in self.table}
        if len(supports) != 1:
            raise ExprError(
                f"name {self.name!r} maps to operators of different support"
            )

    @property
    def support(self) -> int:
        return self.table[0][1].support


@dataclass(frozen=True)
class Indexed(OpExpr):
    base: OpExpr
    sites: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(set(self.sites)) != len(self.sites):
            raise ExprError(f"duplicate sites in index list {self.sites}")
        if any(s < 1 for s in self.sites):
            raise ExprError(f"sites are 1-based, got {self.sites}")


@dataclass(frozen=True)
class Scale(OpExpr):
    factor: complex
    arg: OpExpr

    def __post_init__(self) -> None:
        object.__setattr__(self, "factor", complex(self.factor))


@dataclass(frozen=True)
class Sum(OpExpr):
    terms: tuple[OpExpr, ...]


@dataclass(frozen=True)
class Prod(OpExpr):
    factors: tuple[OpExpr, ...]


@dataclass(frozen=True)
class TensorProd(OpExpr):
    factors: tuple[OpExpr, ...]


@dataclass(frozen=True)
class Dag(OpExpr):
    arg: OpExpr


@dataclass(frozen=True)
class ExpOp(OpExpr):
    arg: OpExpr


@dataclass(frozen=True)
class Controlled(OpExpr):
    arg: OpExpr


@dataclass(frozen=True)
class Dissipator(OpExpr):
    arg: OpExpr


@dataclass(frozen=True)
class Gate(OpExpr):
    arg: OpExpr


def as_expr(x) -> OpExpr:
    if isinstance(x, OpExpr):
        return x
    raise ExprError(f"not an operator expression: {x!r}")


def add_exprs(*terms) -> OpExpr:
    flat: list[OpExpr] = []
    for t in terms:
        t = as_expr(t)
        if isinstance(t, Sum):
            flat.extend(t.terms)
        else:
            flat.append(t)
    if not flat:
        raise ExprError("empty sum")
    if len(flat) == 1:
        return flat[0]
    return Sum(tuple(flat))


def mul_exprs(*factors) -> OpExpr:
    flat: list[OpExpr] = []
    for f in factors:
        f = as_expr(f)
        if isinstance(f, Prod):
            flat.extend(f.factors)
        else:
            flat.append(f)
    if not flat:
        raise ExprError("empty product")
    if len(flat) == 1:
        return flat[0]
    return Prod(tuple(flat))


def scale_expr(factor, arg: OpExpr) -> OpExpr:
    factor = complex(factor)
    arg = as_expr(arg)
    if isinstance(arg, Scale):
        return Scale(factor * arg.factor, arg.arg)
    if factor == 1:
        return arg
    return Scale(factor, arg)


def tensor_exprs(*factors) -> OpExpr:
    flat: list[OpExpr] = []
    for f in factors:
        f = as_expr(f)
        if isinstance(f, TensorProd):
            flat.extend(f.factors)
        else:
            flat.append(f)
    if len(flat) < 2:
        raise ExprError("tensor(...) needs at least two factors")
    return TensorProd(tuple(flat))


def dag(expr: OpExpr) -> OpExpr:
    """Conjugate transpose, pushed through the AST.

    Anti-linear on scalars, reverses matrix products; channels have no
    adjoint here and are rejected.
    """
    expr = as_expr(expr)
    if isinstance(expr, (Dissipator, Gate)):
        raise ExprError("dag of a Dissipator/Gate is not defined")
    if isinstance(expr, Dag):
        return expr.arg
    if isinstance(expr, (NamedOp, GenericName)):
        return Dag(expr)
    if isinstance(expr, Indexed):
        return Indexed(dag(expr.base), expr.sites)
    if isinstance(expr, Scale):
        return scale_expr(np.conj(expr.factor), dag(expr.arg))
    if isinstance(expr, Sum):
        return add_exprs(*(dag(t) for t in expr.terms))
    if isinstance(expr, Prod):
        return mul_exprs(*(dag(f) for f in reversed(expr.factors)))
    if isinstance(expr, TensorProd):
        return tensor_exprs(*(dag(f) for f in expr.factors))
    if isinstance(expr, ExpOp):
        return ExpOp(dag(expr.arg))
    if isinstance(expr, Controlled):
        return Controlled(dag(expr.arg))
    raise ExprError(f"dag: unsupported node {type(expr).__name__}")


def contains_node(expr: OpExpr, kinds: tuple[type, ...]) -> bool:
    if isinstance(expr, kinds):
        return True
    children: Sequence[OpExpr]
    if isinstance(expr, Sum):
        children = expr.terms
    elif isinstance(expr, (Prod, TensorProd)):
        children = expr.factors
    elif isinstance(expr, (Scale, Dag, ExpOp, Controlled, Dissipator, Gate)):
        children = (expr.arg,)
    elif isinstance(expr, Indexed):
        children = (expr.base,)
    else:
        children = ()
    return any(contains_node(c, kinds) for c in children)


def generic_support(expr: OpExpr) -> int:
    """Number of abstract slots a generic (unindexed) expression acts on."""
    if isinstance(expr, NamedOp):
        return expr.op.support
    if isinstance(expr, GenericName):
        return expr.support
    if isinstance(expr, Indexed):
        raise ExprError("indexed expression where a generic operator is expected")
    if isinstance(expr, Scale):
        return generic_support(expr.arg)
    if isinstance(expr, (Dag, ExpOp)):
        return generic_support(expr.arg)
    if isinstance(expr, Controlled):
        return 1 + generic_support(expr.arg)
    if isinstance(expr, Sum):
        supports = {generic_support(t) for t in expr.terms}
        if len(supports) != 1:
            raise ExprError(f"summands act on different slot counts: {sorted(supports)}")
        return supports.pop()
    if isinstance(expr, Prod):
        supports = {generic_support(f) for f in expr.factors}
        if len(supports) != 1:
            raise ExprError(f"product factors act on different slot counts: {sorted(supports)}")
        return supports.pop()
    if isinstance(expr, TensorProd):
        return sum(generic_support(f) for f in expr.factors)
    if isinstance(expr, (Dissipator, Gate)):
        return generic_support(expr.arg)
    raise ExprError(f"unsupported node {type(expr).__name__}")


# A generic term is (coef, parts); each part is (slots, matrix, fermionic)
# with disjoint slot tuples covering 0..k-1.  Fermionic parts are single-slot.
GPart = tuple[tuple[int, ...], np.ndarray, bool]
GTerm = tuple[complex, tuple[GPart, ...]]

MAX_LOCAL_DIM = 2**14  # guard for dense local matrices


def _resolve_def(e: OpExpr, slots: Sequence[Site]) -> OperatorDef:
    """Pick the operator definition matching the given slot sites."""
    if isinstance(e, NamedOp):
        d = e.op
        need = int(np.prod([s.dim for s in slots]))
        if d.matrix.shape[0] != need:
            raise ExprError(
                f"operator {d.name!r} has dimension {d.matrix.shape[0]}, "
                f"sites require {need}"
            )
        return d
    assert isinstance(e, GenericName)
    if e.support == 1:
        site = slots[0]
        for s, d in e.table:
            if s.kind == site.kind and s.dim == site.dim:
                return d
        raise ExprError(f"operator {e.name!r} is not defined for {site!r}")
    for s, d in e.table:
        if d.matrix.shape[0] == int(np.prod([x.dim for x in slots])):
            return d
    raise ExprError(f"operator {e.name!r} does not fit the given sites")


def name_table(sites: Iterable[Site]) -> dict[str, OpExpr]:
    """Built-in name context for a set of site kinds.

    Names defined for exactly one present kind resolve directly; shared names
    (``Id``, ``N``, ...) stay polymorphic until indexed.
    """
    table: dict[str, list[tuple[Site, OperatorDef]]] = {}
    seen: set[tuple[str, int]] = set()
    for site in sites:
        key = (site.kind, site.dim)
        if key in seen:
            continue
        seen.add(key)
        for name, d in operators(site).items():
            table.setdefault(name, []).append((site, d))
    out: dict[str, OpExpr] = {}
    for name, defs in table.items():
        if len(defs) == 1:
            out[name] = NamedOp(defs[0][1])
        else:
            out[name] = GenericName(name, tuple(defs))
    return out


def _pad_parts(parts: tuple[GPart, ...], slots: Sequence[Site]) -> tuple[GPart, ...]:
    seen = {s for sl, _, _ in parts for s in sl}
    pads = tuple(
        ((k,), np.eye(slots[k].dim, dtype=complex), False)
        for k in range(len(slots))
        if k not in seen
    )
    return parts + pads


def _full_matrix(parts: Iterable[GPart], slots: Sequence[Site]) -> np.ndarray:
    """Assemble one term's parts into a dense matrix over all slots."""
    dims = [s.dim for s in slots]
    total = int(np.prod(dims))
    if total > MAX_LOCAL_DIM:
        raise ExprError(f"local operator dimension {total} too large")
    parts = _pad_parts(tuple(parts), slots)
    m = np.ones((1, 1), dtype=complex)
    covered: list[int] = []
    for sl, mat, _ in sorted(parts, key=lambda p: p[0][0]):
        m = np.kron(m, mat)
        covered.extend(sl)
    if covered != sorted(covered):
        k = len(covered)
        dims_cov = [dims[s] for s in covered]
        t = m.reshape(dims_cov + dims_cov)
        perm = list(np.argsort(covered))
        t = t.transpose(perm + [k + p for p in perm])
        d = int(np.prod(dims_cov))
        m = t.reshape(d, d)
        covered = sorted(covered)
    if covered != list(range(len(slots))):
        raise ExprError("term does not cover all slots")
    return m


def generic_terms(expr: OpExpr, slots: Sequence[Site]) -> list[GTerm]:
    """Expand a generic expression into a sum of slot-factorized terms.

    Single-slot algebra (products, dag) is carried exactly, keeping fermion
    parity flags.  Irreducible multi-slot objects (exp, controlled, wide
    operator matrices, products of wide factors) stay as one dense part and
    must be parity-even.
    """

    def walk(e: OpExpr, sl: Sequence[Site]) -> list[GTerm]:
        k = len(sl)
        if isinstance(e, (NamedOp, GenericName)):
            d = _resolve_def(e, sl)
            return [(1.0 + 0j, ((tuple(range(k)), d.matrix, d.fermionic),))]
        if isinstance(e, Scale):
            return [(c * e.factor, p) for c, p in walk(e.arg, sl)]
        if isinstance(e, Sum):
            out: list[GTerm] = []
            for t in e.terms:
                out.extend(walk(t, sl))
            return out
        if isinstance(e, Dag):
            out = []
            for c, parts in walk(e.arg, sl):
                out.append(
                    (np.conj(c), tuple((s, m.conj().T, f) for s, m, f in parts))
                )
            return out
        if isinstance(e, TensorProd):
            offset = 0
            lists: list[list[GTerm]] = []
            for f in e.factors:
                sup = generic_support(f)
                sub = walk(f, sl[offset : offset + sup])
                shifted: list[GTerm] = []
                for c, parts in sub:
                    shifted.append(
                        (
                            c,
                            tuple(
                                (tuple(x + offset for x in s), m, fm)
                                for s, m, fm in parts
                            ),
                        )
                    )
                lists.append(shifted)
                offset += sup
            if offset != k:
                raise ExprError("tensor factors do not cover all slots")
            out = [(1.0 + 0j, ())]
            for lst in lists:
                out = [(c1 * c2, p1 + p2) for c1, p1 in out for c2, p2 in lst]
            return out
        if isinstance(e, Prod):
            if k == 1:
                out = [
                    (1.0 + 0j, (((0,), np.eye(sl[0].dim, dtype=complex), False),))
                ]
                for f in e.factors:
                    sub = walk(f, sl)
                    nxt: list[GTerm] = []
                    for c1, p1 in out:
                        s1, m1, f1 = p1[0]
                        for c2, p2 in sub:
                            s2, m2, f2 = p2[0]
                            nxt.append((c1 * c2, ((s1, m1 @ m2, f1 != f2),)))
                    out = nxt
                return out
            # wide products collapse to dense matrices; fermionic parts would
            # need an ordering convention between slots, so they are rejected
            total = int(np.prod([s.dim for s in sl]))
            acc = [(1.0 + 0j, np.eye(total, dtype=complex))]
            for f in e.factors:
                sub = walk(f, sl)
                nxt2: list[tuple[complex, np.ndarray]] = []
                for c1, m1 in acc:
                    for c2, parts in sub:
                        if any(fm for _, _, fm in parts):
                            raise ExprError(
                                "fermionic operators inside a multi-slot product are "
                                "ambiguous; index the factors instead (e.g. dag(C)(i)C(j))"
                            )
                        m2 = _full_matrix(parts, sl)
                        nxt2.append((c1 * c2, m1 @ m2))
                acc = nxt2
            return [(c, ((tuple(range(k)), m, False),)) for c, m in acc]
        if isinstance(e, (ExpOp, Controlled)):
            m = local_matrix(e, sl)
            return [(1.0 + 0j, ((tuple(range(k)), m, False),))]
        if isinstance(e, Indexed):
            raise ExprError("indexed expression inside a generic operator")
        if isinstance(e, (Dissipator, Gate)):
            raise ExprError(f"{type(e).__name__} is not allowed in this context")
        raise ExprError(f"unsupported node {type(e).__name__}")

    terms = walk(expr, slots)
    return [(c, _pad_parts(parts, slots)) for c, parts in terms]


def local_matrix(expr: OpExpr, slots: Sequence[Site]) -> np.ndarray:
    """Dense matrix of a generic expression over the given slots.

    ``Controlled(U)`` prepends one qubit control per layer and returns the
    block matrix ``I (+) U``.  Channel nodes are rejected; use
    :func:`channel_matrix` for those.
    """
    k = generic_support(expr)
    if k != len(slots):
        raise ExprError(f"expression acts on {k} slots, {len(slots)} given")
    dims = [s.dim for s in slots]
    total = int(np.prod(dims))
    if total > MAX_LOCAL_DIM:
        raise ExprError(f"local operator dimension {total} too large")

    if isinstance(expr, Controlled):
        if dims[0] != 2:
            raise ExprError("the control slot of controlled(...) must be two-dimensional")
        inner = local_matrix(expr.arg, slots[1:])
        d = inner.shape[0]
        out = np.zeros((2 * d, 2 * d), dtype=complex)
        out[:d, :d] = np.eye(d)
        out[d:, d:] = inner
        return out
    if isinstance(expr, ExpOp):
        return matrix_exponential(local_matrix(expr.arg, slots))
    if isinstance(expr, (Dissipator, Gate)):
        raise ExprError(f"{type(expr).__name__} is not allowed in an operator context")

    acc = np.zeros((total, total), dtype=complex)
    for c, parts in generic_terms(expr, slots):
        acc += c * _full_matrix(parts, slots)
    return acc


def channel_matrix(expr: OpExpr, slots: Sequence[Site]) -> tuple[np.ndarray, float]:
    """Superoperator matrix of a gate/channel expression on the doubled space.

    ``Gate(U)`` contributes ``kron(U, conj(U))``; convex combinations add; a
    plain operator expression is treated as the single-Kraus channel of
    itself.  Returns ``(matrix, tp_defect)`` where ``tp_defect`` measures how
    far the map is from preserving the trace functional (zero for a proper
    Kraus sum).  Callers warn on a large defect instead of failing: general
    linear maps are allowed.
    """
    dims = [s.dim for s in slots]
    d = int(np.prod(dims))
    if d * d > MAX_LOCAL_DIM:
        raise ExprError(f"channel dimension {d * d} too large")

    def walk(e: OpExpr) -> np.ndarray:
        if isinstance(e, Gate):
            u = local_matrix(e.arg, slots)
            return np.kron(u, u.conj())
        if isinstance(e, Scale):
            return e.factor * walk(e.arg)
        if isinstance(e, Sum):
            acc = np.zeros((d * d, d * d), dtype=complex)
            for t in e.terms:
                acc = acc + walk(t)
            return acc
        if isinstance(e, Prod):
            acc = np.eye(d * d, dtype=complex)
            for f in e.factors:
                acc = acc @ walk(f)
            return acc
        if isinstance(e, Dissipator):
            raise ExprError("Dissipator is not a gate; use it in an evolver")
        u = local_matrix(e, slots)
        return np.kron(u, u.conj())

    s = walk(expr)
    vec_id = np.eye(d, dtype=complex).reshape(-1)
    defect = float(np.linalg.norm(vec_id @ s - vec_id))
    return s, defect


def _fmt_complex(z: complex) -> str:
    z = complex(z)
    if z.imag == 0:
        return repr(z.real)
    if z.real == 0:
        return f"{z.imag!r}i"
    sign = "+" if z.imag >= 0 else "-"
    return f"({z.real!r}{sign}{abs(z.imag)!r}i)"


def to_text(expr: OpExpr) -> str:
    """Deterministic text form; parses back to a structurally equal AST."""

    def atom(e: OpExpr) -> str:
        s = to_text(e)
        if isinstance(e, (Sum, Scale, Prod)):
            return f"({s})"
        return s

    if isinstance(expr, NamedOp):
        return expr.op.name
    if isinstance(expr, GenericName):
        return expr.name
    if isinstance(expr, Indexed):
        return f"{atom(expr.base)}({', '.join(str(s) for s in expr.sites)})"
    if isinstance(expr, Scale):
        return f"{_fmt_complex(expr.factor)} * {atom(expr.arg)}"
    if isinstance(expr, Sum):
        return " + ".join(
            to_text(t) if not isinstance(t, Sum) else f"({to_text(t)})"
            for t in expr.terms
        )
    if isinstance(expr, Prod):
        return " * ".join(atom(f) for f in expr.factors)
    if isinstance(expr, TensorProd):
        return f"tensor({', '.join(to_text(f) for f in expr.factors)})"
    if isinstance(expr, Dag):
        return f"dag({to_text(expr.arg)})"
    if isinstance(expr, ExpOp):
        return f"exp({to_text(expr.arg)})"
    if isinstance(expr, Controlled):
        return f"controlled({to_text(expr.arg)})"
    if isinstance(expr, Dissipator):
        return f"Dissipator({to_text(expr.arg)})"
    if isinstance(expr, Gate):
        return f"Gate({to_text(expr.arg)})"
    raise ExprError(f"cannot print {type(expr).__name__}")
