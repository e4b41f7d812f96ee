"""Lowering of operator expressions to site-factorized term sums and MPOs.

The pipeline is: expression -> indexed factor lists -> *materialized* terms
(per-site matrices, with fermion parity strings already multiplied in) ->
either a plain MPO built by a finite-state-machine construction, or an
exponential approximant of ``exp(tau * generator)`` assembled from the FSM
block structure.

For mixed states every local matrix acts on the doubled space: left
multiplication is ``kron(m, I)``, right multiplication ``kron(I, m.T)``, and
a jump term contributes ``kron(l, conj(l))`` per site, consistent with the
row-major vectorization used by :mod:`mixedmps.state`.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .ops import (
    Dag,
    Dissipator,
    ExprError,
    Gate,
    Indexed,
    OpExpr,
    Prod,
    Scale,
    Sum,
    contains_node,
    dag as dag_expr,
    generic_support,
    generic_terms,
)
from .sites import operators
from .state import Rep, State, System, orthogonalize, truncate_sweep_rl
from .tensor import TruncationLimits, UNLIMITED, matrix_exponential, truncated_svd


class LoweringError(ValueError):
    """Expression cannot be lowered in the requested context."""


# ---------------------------------------------------------------------------
# term sums


@dataclass(frozen=True)
class Term:
    """One operator string: ``coef * prod_s factors[s]`` over distinct sites."""

    coef: complex
    factors: tuple[tuple[int, np.ndarray], ...]  # (1-based site, matrix), sites increasing

    def first(self) -> int:
        return self.factors[0][0]

    def last(self) -> int:
        return self.factors[-1][0]


@dataclass(frozen=True)
class TermSum:
    system: System
    rep: Rep
    terms: tuple[Term, ...]

    def phys_dim(self, i: int) -> int:
        return self.system.phys_dim(i, self.rep)


_SCHMIDT_TOL = 1e-14


def _decompose_product(m: np.ndarray, dims: Sequence[int]) -> list[tuple[complex, list[np.ndarray]]]:
    """Split a multi-slot matrix into a sum of slot tensor products (SVD)."""
    if len(dims) == 1:
        return [(1.0 + 0j, [m])]
    d0 = int(dims[0])
    dr = int(np.prod(dims[1:]))
    t = m.reshape(d0, dr, d0, dr).transpose(0, 2, 1, 3).reshape(d0 * d0, dr * dr)
    u, s, vh = np.linalg.svd(t, full_matrices=False)
    out: list[tuple[complex, list[np.ndarray]]] = []
    for k, sv in enumerate(s):
        if sv <= _SCHMIDT_TOL * s[0]:
            break
        a = (u[:, k] * np.sqrt(sv)).reshape(d0, d0)
        rest = (vh[k, :] * np.sqrt(sv)).reshape(dr, dr)
        for c, ms in _decompose_product(rest, dims[1:]):
            out.append((c, [a] + ms))
    return out


def indexed_terms(
    expr: OpExpr, system: System
) -> list[tuple[complex, list[tuple[int, np.ndarray, bool]]]]:
    """Expand an indexed expression into raw factor lists in product order.

    Each factor is ``(site, matrix, fermionic)`` in the physical (single)
    space; repeated sites and out-of-order products are resolved later by
    :func:`materialize`.
    """

    def walk(e: OpExpr):
        if isinstance(e, Sum):
            out = []
            for t in e.terms:
                out.extend(walk(t))
            return out
        if isinstance(e, Scale):
            return [(c * e.factor, f) for c, f in walk(e.arg)]
        if isinstance(e, Prod):
            out = [(1.0 + 0j, [])]
            for f in e.factors:
                sub = walk(f)
                out = [(c1 * c2, f1 + f2) for c1, f1 in out for c2, f2 in sub]
            return out
        if isinstance(e, Dag):
            pushed = dag_expr(e.arg)
            if pushed != e:
                return walk(pushed)
            # leaf dag (dag of a named operator): falls through as generic
        if isinstance(e, Indexed):
            sites = e.sites
            for s in sites:
                if not 1 <= s <= system.n:
                    raise LoweringError(f"site {s} outside 1..{system.n}")
            slot_sites = [system.sites[s - 1] for s in sites]
            out = []
            for c, parts in generic_terms(e.base, slot_sites):
                branches = [(c, [])]
                for slots, m, ferm in sorted(parts, key=lambda p: p[0][0]):
                    if len(slots) == 1:
                        site = sites[slots[0]]
                        branches = [
                            (bc, bf + [(site, m, ferm)]) for bc, bf in branches
                        ]
                    else:
                        if ferm:
                            raise LoweringError(
                                "fermionic multi-slot operators cannot be embedded; "
                                "write an explicit product of indexed factors"
                            )
                        pieces = _decompose_product(m, [slot_sites[s].dim for s in slots])
                        branches = [
                            (
                                bc * pc,
                                bf
                                + [
                                    (sites[slots[j]], pm, False)
                                    for j, pm in enumerate(pms)
                                ],
                            )
                            for bc, bf in branches
                            for pc, pms in pieces
                        ]
                out.extend(branches)
            return out
        if isinstance(e, (Dissipator, Gate)):
            raise LoweringError(
                f"{type(e).__name__} is not allowed in this context"
            )
        # generic expression: implicitly spans the whole chain if it fits
        try:
            k = generic_support(e)
        except ExprError:
            k = -1
        if k == system.n:
            return walk(Indexed(e, tuple(range(1, k + 1))))
        raise LoweringError(
            f"expression must be fully indexed; found generic {type(e).__name__}"
        )

    try:
        return walk(expr)
    except ExprError as exc:
        raise LoweringError(str(exc)) from None


def materialize(
    coef: complex,
    factors: Sequence[tuple[int, np.ndarray, bool]],
    system: System,
) -> Term | None:
    """Multiply raw factors into one matrix per site, resolving fermion signs.

    Each fermionic factor is embedded with a parity string ``F`` on every
    fermion site strictly to its left; multiplying the embedded factors left
    to right yields the exact operator, with strings cancelling pairwise.
    Exact identity factors are dropped; ``None`` flags a vanished term.
    """
    if coef == 0:
        return None
    mats: dict[int, np.ndarray] = {}

    def acc(site: int, m: np.ndarray) -> None:
        cur = mats.get(site)
        mats[site] = m.copy() if cur is None else cur @ m

    fermion_parity = {
        i: system.sites[i - 1].kind == "Fermion" for i in range(1, system.n + 1)
    }
    parity_f = None
    for site, m, ferm in factors:
        d = system.dim(site)
        if m.shape != (d, d):
            raise LoweringError(
                f"operator of dimension {m.shape[0]} on site {site} of dimension {d}"
            )
        if ferm:
            if not fermion_parity[site]:
                raise LoweringError(f"fermionic operator on non-fermion site {site}")
            if parity_f is None:
                parity_f = operators(system.sites[site - 1])["F"].matrix
            for j in range(1, site):
                if fermion_parity[j]:
                    acc(j, parity_f)
        acc(site, m)
    out = []
    for site in sorted(mats):
        m = mats[site]
        if np.array_equal(m, np.eye(m.shape[0], dtype=complex)):
            continue
        out.append((site, m))
    if not out:
        # identity term; keep a sentinel factor so it has a definite site
        out = [(1, np.eye(system.dim(1), dtype=complex))]
    return Term(complex(coef), tuple(out))


def _merge_terms(terms: list[Term]) -> tuple[Term, ...]:
    """Combine terms with identical factor strings; drop exact zeros."""
    table: dict[tuple, list] = {}
    order: list[tuple] = []
    for t in terms:
        key = tuple((s, m.tobytes(), m.shape) for s, m in t.factors)
        if key not in table:
            table[key] = [t.coef, t.factors]
            order.append(key)
        else:
            table[key][0] += t.coef
    out = []
    for key in order:
        coef, factors = table[key]
        if coef != 0:
            out.append(Term(coef, factors))
    return tuple(out)


def _lmul(m: np.ndarray) -> np.ndarray:
    return np.kron(m, np.eye(m.shape[0], dtype=complex))


def _rmul(m: np.ndarray) -> np.ndarray:
    return np.kron(np.eye(m.shape[0], dtype=complex), m.T)


def _super_term(coef: complex, factors, system: System) -> Term:
    """Canonical superoperator term: identity factors dropped, never empty."""
    out = []
    for site, m in factors:
        if np.array_equal(m, np.eye(m.shape[0], dtype=complex)):
            continue
        out.append((site, m))
    if not out:
        d = system.dim(1)
        out = [(1, np.eye(d * d, dtype=complex))]
    return Term(complex(coef), tuple(out))


def lower_observable(expr: OpExpr, system: System, rep: Rep) -> TermSum:
    """Lower a channel-free expression to a term sum.

    Pure: bare local matrices.  Mixed: left multiplication on the doubled
    space, parity strings acting on the ket factor only.
    """
    if contains_node(expr, (Dissipator, Gate)):
        raise LoweringError("channel nodes are not allowed in an observable")
    phys = []
    for c, factors in indexed_terms(expr, system):
        t = materialize(c, factors, system)
        if t is not None:
            phys.append(t)
    if rep is Rep.PURE:
        return TermSum(system, rep, _merge_terms(phys))
    terms = [
        _super_term(t.coef, ((s, _lmul(m)) for s, m in t.factors), system)
        for t in phys
    ]
    return TermSum(system, rep, _merge_terms(terms))


def _split_evolver(expr: OpExpr) -> tuple[list[OpExpr], list[tuple[complex, OpExpr]]]:
    plain: list[OpExpr] = []
    diss: list[tuple[complex, OpExpr]] = []

    def walk(e: OpExpr, mult: complex) -> None:
        if isinstance(e, Sum):
            for t in e.terms:
                walk(t, mult)
        elif isinstance(e, Scale):
            walk(e.arg, mult * e.factor)
        elif isinstance(e, Dissipator):
            diss.append((mult, e.arg))
        elif isinstance(e, Indexed) and isinstance(e.base, Dissipator):
            # Dissipator(L)(i): the index applies to the jump operator
            diss.append((mult, Indexed(e.base.arg, e.sites)))
        elif isinstance(e, Gate):
            raise LoweringError("Gate nodes belong to gate layers, not evolvers")
        else:
            if contains_node(e, (Dissipator, Gate)):
                raise LoweringError(
                    "Dissipator/Gate must appear as top-level summands of an evolver"
                )
            plain.append(e if mult == 1 else Scale(mult, e))

    walk(expr, 1.0 + 0j)
    return plain, diss


def lower_evolver(expr: OpExpr, system: System, rep: Rep) -> TermSum:
    """Lower an evolver (plain generator terms plus dissipators) to a term sum.

    Pure evolvers pass plain terms through unchanged (the caller supplies the
    conventional ``-i`` factors).  Mixed evolvers map each plain term ``c*h``
    to ``c*(h x I - I x h^T)`` and each jump operator ``L`` to
    ``L x conj(L) - (L'L x I)/2 - (I x (L'L)^T)/2``, expanded into per-site
    strings.  Sums inside a ``Dissipator`` describe one jump operator and
    expand into the full cross-term structure.
    """
    plain_exprs, diss = _split_evolver(expr)
    plain: list[Term] = []
    for e in plain_exprs:
        for c, factors in indexed_terms(e, system):
            t = materialize(c, factors, system)
            if t is not None:
                plain.append(t)
    if rep is Rep.PURE:
        if diss:
            raise LoweringError("Dissipator requires a mixed-state evolver")
        return TermSum(system, rep, _merge_terms(plain))

    out: list[Term] = []
    for t in plain:
        out.append(_super_term(t.coef, ((s, _lmul(m)) for s, m in t.factors), system))
        out.append(_super_term(-t.coef, ((s, _rmul(m)) for s, m in t.factors), system))
    for mult, l_expr in diss:
        if contains_node(l_expr, (Dissipator, Gate)):
            raise LoweringError("nested channel nodes inside Dissipator")
        l_terms = []
        for c, factors in indexed_terms(l_expr, system):
            t = materialize(c, factors, system)
            if t is not None:
                l_terms.append(t)
        for t1, t2 in itertools.product(l_terms, l_terms):
            sites = sorted({s for s, _ in t1.factors} | {s for s, _ in t2.factors})
            f1 = dict(t1.factors)
            f2 = dict(t2.factors)
            jump = []
            lsq_ket = []
            lsq_bra = []
            for s in sites:
                d = system.dim(s)
                a = f1.get(s, np.eye(d, dtype=complex))
                b = f2.get(s, np.eye(d, dtype=complex))
                jump.append((s, np.kron(a, b.conj())))
                p = a.conj().T @ b
                lsq_ket.append((s, _lmul(p)))
                lsq_bra.append((s, _rmul(p)))
            c_jump = mult * t1.coef * np.conj(t2.coef)
            c_lsq = -0.5 * mult * np.conj(t1.coef) * t2.coef
            out.append(_super_term(c_jump, jump, system))
            out.append(_super_term(c_lsq, lsq_ket, system))
            out.append(_super_term(c_lsq, lsq_bra, system))
    return TermSum(system, rep, _merge_terms(out))


def term_sum_dense(ts: TermSum, max_size: int = 2**14) -> np.ndarray:
    """Dense matrix of a term sum (small systems, tests)."""
    dims = [ts.phys_dim(i) for i in range(1, ts.system.n + 1)]
    total = int(np.prod(dims))
    if total > max_size:
        raise LoweringError(f"dense expansion of dimension {total} too large")
    acc = np.zeros((total, total), dtype=complex)
    for t in ts.terms:
        fac = dict(t.factors)
        m = np.ones((1, 1), dtype=complex)
        for i in range(1, ts.system.n + 1):
            m = np.kron(m, fac.get(i, np.eye(dims[i - 1], dtype=complex)))
        acc += t.coef * m
    return acc


# ---------------------------------------------------------------------------
# finite-state-machine MPO construction


@dataclass(frozen=True)
class Mpo:
    system: System
    rep: Rep
    tensors: tuple[np.ndarray, ...]  # (left, right, out, in) per site

    @property
    def n(self) -> int:
        return self.system.n

    def bond_dims(self) -> list[int]:
        return [t.shape[1] for t in self.tensors[:-1]]


def mpo_dense(m: Mpo, max_size: int = 2**14) -> np.ndarray:
    dims = [m.system.phys_dim(i, m.rep) for i in range(1, m.n + 1)]
    total = int(np.prod(dims))
    if total > max_size:
        raise LoweringError(f"dense expansion of dimension {total} too large")
    acc = m.tensors[0][0]  # (r, o, p)
    for w in m.tensors[1:]:
        nxt = np.tensordot(acc, w, axes=([0], [0]))  # (O, P, r, o, p)
        r = nxt.shape[2]
        O, P = acc.shape[1], acc.shape[2]
        o, p = nxt.shape[3], nxt.shape[4]
        acc = nxt.transpose(2, 0, 3, 1, 4).reshape(r, O * o, P * p)
    return acc[0]


@dataclass
class _SiteBlocks:
    d: int
    D: np.ndarray
    C: dict[int, np.ndarray]
    B: dict[int, np.ndarray]
    A: dict[int, np.ndarray]
    lanes_in: list[int]
    lanes_out: list[int]


def _build_blocks(ts: TermSum) -> list[_SiteBlocks]:
    n = ts.system.n
    spans = [(t.first(), t.last()) for t in ts.terms]
    lanes_at = [
        [k for k, (f, l) in enumerate(spans) if f <= b < l] for b in range(n + 1)
    ]
    blocks = []
    for i in range(1, n + 1):
        d = ts.phys_dim(i)
        D = np.zeros((d, d), dtype=complex)
        C: dict[int, np.ndarray] = {}
        B: dict[int, np.ndarray] = {}
        A: dict[int, np.ndarray] = {}
        for k, t in enumerate(ts.terms):
            f, l = spans[k]
            if not f <= i <= l:
                continue
            fac = dict(t.factors).get(i)
            if f == l == i:
                D += t.coef * fac
            elif i == f:
                C[k] = t.coef * fac
            elif i == l:
                B[k] = fac
            else:
                A[k] = fac if fac is not None else np.eye(d, dtype=complex)
        blocks.append(
            _SiteBlocks(d, D, C, B, A, lanes_at[i - 1], lanes_at[i])
        )
    return blocks


def _deparallelize(tensors: list[np.ndarray], tol: float = 1e-12) -> list[np.ndarray]:
    """Merge proportional columns (forward) and rows (backward) of MPO tensors."""

    def reduce_matrix(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        # m: (big, r) -> (big, k), (k, r) with m = kept @ T
        big, r = m.shape
        kept: list[np.ndarray] = []
        assign: list[tuple[int, complex] | None] = []
        for j in range(r):
            col = m[:, j]
            nrm = np.linalg.norm(col)
            if nrm == 0.0:
                assign.append(None)
                continue
            hit = None
            for k, kc in enumerate(kept):
                lam = np.vdot(kc, col) / np.vdot(kc, kc)
                if np.linalg.norm(col - lam * kc) <= tol * nrm:
                    hit = (k, lam)
                    break
            if hit is None:
                kept.append(col)
                hit = (len(kept) - 1, 1.0 + 0j)
            assign.append(hit)
        if not kept:
            kept = [np.zeros(big, dtype=complex)]
        K = np.stack(kept, axis=1)
        T = np.zeros((K.shape[1], r), dtype=complex)
        for j, a in enumerate(assign):
            if a is not None:
                T[a[0], j] = a[1]
        return K, T

    tensors = list(tensors)
    for i in range(len(tensors) - 1):
        w = tensors[i]
        l, r, o, p = w.shape
        K, T = reduce_matrix(w.transpose(0, 2, 3, 1).reshape(l * o * p, r))
        k = K.shape[1]
        tensors[i] = K.reshape(l, o, p, k).transpose(0, 3, 1, 2)
        tensors[i + 1] = np.tensordot(T, tensors[i + 1], axes=([1], [0]))
    for i in range(len(tensors) - 1, 0, -1):
        w = tensors[i]
        l, r, o, p = w.shape
        K, T = reduce_matrix(w.reshape(l, r * o * p).T)
        k = K.shape[1]
        tensors[i] = K.T.reshape(k, r, o, p)
        prev = np.tensordot(tensors[i - 1], T, axes=([1], [0]))  # (l, o, p, k)
        tensors[i - 1] = prev.transpose(0, 3, 1, 2)
    return tensors


def mpo_from_terms(ts: TermSum) -> Mpo:
    """MPO of a term sum: one lane per active term segment, then merging."""
    n = ts.system.n
    if not ts.terms:
        tensors = tuple(
            np.zeros((1, 1, ts.phys_dim(i), ts.phys_dim(i)), dtype=complex)
            for i in range(1, n + 1)
        )
        return Mpo(ts.system, ts.rep, tensors)
    blocks = _build_blocks(ts)
    firsts = [t.first() for t in ts.terms]
    lasts = [t.last() for t in ts.terms]

    def bond_states(b: int) -> list:
        states: list = []
        if any(f > b for f in firsts):
            states.append("ini")
        states.extend(k for k, t in enumerate(ts.terms) if firsts[k] <= b < lasts[k])
        if any(l <= b for l in lasts):
            states.append("fin")
        return states

    tensors = []
    left = bond_states(0)
    for i in range(1, n + 1):
        right = bond_states(i)
        blk = blocks[i - 1]
        d = blk.d
        w = np.zeros((len(left), len(right), d, d), dtype=complex)
        lpos = {s: j for j, s in enumerate(left)}
        rpos = {s: j for j, s in enumerate(right)}
        eye = np.eye(d, dtype=complex)
        if "ini" in lpos and "ini" in rpos:
            w[lpos["ini"], rpos["ini"]] = eye
        if "fin" in lpos and "fin" in rpos:
            w[lpos["fin"], rpos["fin"]] = eye
        if "ini" in lpos and "fin" in rpos and np.any(blk.D):
            w[lpos["ini"], rpos["fin"]] = blk.D
        for k, m in blk.C.items():
            w[lpos["ini"], rpos[k]] = m
        for k, m in blk.A.items():
            w[lpos[k], rpos[k]] = m
        for k, m in blk.B.items():
            w[lpos[k], rpos["fin"]] = m
        tensors.append(w)
        left = right
    return Mpo(ts.system, ts.rep, tuple(_deparallelize(tensors)))


# ---------------------------------------------------------------------------
# exponential approximants


def _aux_exponential(
    d: int,
    tau_d: np.ndarray,
    b_part: np.ndarray | None,
    c_part: np.ndarray | None,
    a_part: np.ndarray | None,
) -> np.ndarray:
    """exp of the generator dressed with one creation-only mode per bond side.

    Returns the exponential reshaped to (d, 2, 2, d, 2, 2); the (x, y)
    occupations select which block of the approximant an entry feeds.
    """
    i2 = np.eye(2, dtype=complex)
    up = np.array([[0, 0], [1, 0]], dtype=complex)

    def lift(m: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return np.einsum("ij,kl,mn->ikmjln", m, x, y)

    g = lift(tau_d, i2, i2)
    if b_part is not None:
        g = g + lift(b_part, up, i2)
    if c_part is not None:
        g = g + lift(c_part, i2, up)
    if a_part is not None:
        g = g + lift(a_part, up, up)
    e = matrix_exponential(g.reshape(4 * d, 4 * d))
    return e.reshape(d, 2, 2, d, 2, 2)


def w_mpo(ts: TermSum, tau: complex, variant: str = "WII") -> Mpo:
    """First-order MPO approximant of ``exp(tau * sum(ts))``.

    Both variants share the block layout ``[[1 + tau*D, sqrt(tau)*C],
    [sqrt(tau)*B, A]]`` over (idle, active-term-lane) bond states; the "WII"
    variant resums each block exponentially, which in particular makes it
    exact when only single-site terms are present.
    """
    if variant not in ("WI", "WII"):
        raise LoweringError(f"unknown approximant variant {variant!r}")
    tau = complex(tau)
    sq = np.sqrt(tau)
    blocks = _build_blocks(ts)
    tensors = []
    for blk in blocks:
        d = blk.d
        rows = 1 + len(blk.lanes_in)
        cols = 1 + len(blk.lanes_out)
        w = np.zeros((rows, cols, d, d), dtype=complex)
        ipos = {t: 1 + j for j, t in enumerate(blk.lanes_in)}
        opos = {t: 1 + j for j, t in enumerate(blk.lanes_out)}
        eye = np.eye(d, dtype=complex)
        if variant == "WI":
            w[0, 0] = eye + tau * blk.D
            for t, j in opos.items():
                if t in blk.C:
                    w[0, j] = sq * blk.C[t]
            for t, j in ipos.items():
                if t in blk.B:
                    w[j, 0] = sq * blk.B[t]
                if t in blk.A and t in opos:
                    w[j, opos[t]] = blk.A[t]
        else:
            taud = tau * blk.D
            w[0, 0] = matrix_exponential(taud)
            for t, j in opos.items():
                c = blk.C.get(t)
                if c is not None:
                    e = _aux_exponential(d, taud, None, sq * c, None)
                    w[0, j] = e[:, 0, 1, :, 0, 0]
            for t, j in ipos.items():
                b = blk.B.get(t)
                if b is not None:
                    e = _aux_exponential(d, taud, sq * b, None, None)
                    w[j, 0] = e[:, 1, 0, :, 0, 0]
            for ti, j in ipos.items():
                b = blk.B.get(ti)
                if b is None:
                    b_eff = None
                else:
                    b_eff = sq * b
                for to, k in opos.items():
                    c = blk.C.get(to)
                    c_eff = None if c is None else sq * c
                    a = blk.A.get(ti) if ti == to else None
                    if b_eff is None and c_eff is None and a is None:
                        continue
                    e = _aux_exponential(d, taud, b_eff, c_eff, a)
                    w[j, k] = e[:, 1, 1, :, 0, 0]
        tensors.append(w)
    return Mpo(ts.system, ts.rep, tuple(tensors))


# ---------------------------------------------------------------------------
# application


def apply_mpo(m: Mpo, s: State, limits: TruncationLimits = UNLIMITED) -> State:
    """Apply an MPO with a zip-up sweep, then restore canonical form."""
    if m.system != s.system or m.rep is not s.rep:
        raise LoweringError("MPO and state live on different systems")
    s = orthogonalize(s, 1)
    n = s.n
    carry = np.ones((1, 1, 1), dtype=complex)  # (new left, mpo left, mps left)
    new_tensors: list[np.ndarray] = []
    for i in range(n):
        t = s.tensors[i]
        w = m.tensors[i]
        x = np.tensordot(carry, t, axes=([2], [0]))  # (nl, wl, p, sr)
        y = np.tensordot(x, w, axes=([1, 2], [0, 3]))  # (nl, sr, wr, o)
        y = y.transpose(0, 3, 2, 1)  # (nl, o, wr, sr)
        nl, o, wr, sr = y.shape
        if i == n - 1:
            new_tensors.append(y.reshape(nl, o, wr * sr))
        else:
            u, sing, vh, _ = truncated_svd(y.reshape(nl * o, wr * sr), limits)
            k = len(sing)
            new_tensors.append(u.reshape(nl, o, k))
            carry = (sing[:, None] * vh).reshape(k, wr, sr)
    truncate_sweep_rl(new_tensors, limits)
    return State(s.rep, s.system, tuple(new_tensors), center=1)
