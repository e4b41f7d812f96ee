"""Dense (sparse-matrix) reference simulation for small systems.

States follow the same conventions as the MPS code so results compare
directly: a mixed state is the per-site interleaved vectorization, i.e. the
flattened product over sites of local ``vec(rho_i)`` blocks.  Internally,
superoperators are assembled in the *global* ordering ``kron(A, conj(B))``
over the full Hilbert space and then permuted once into the per-site
ordering.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from ..ops import (
    Dag,
    Dissipator,
    ExprError,
    Gate,
    Indexed,
    OpExpr,
    Prod,
    Scale,
    Sum,
    dag as dag_expr,
    generic_terms,
)
from ..sites import Site, state_matrix, state_vector
from ..state import Rep, System

MAX_VECTOR_DIM = 2**21  # cap on dense state vectors (memory guard)


class OracleError(ValueError):
    pass


def _hilbert_dim(system: System) -> int:
    d = 1
    for s in system.sites:
        d *= s.dim
    return d


def _check_dim(system: System, rep: Rep) -> int:
    d = _hilbert_dim(system)
    dim = d * d if rep is Rep.MIXED else d
    if dim > MAX_VECTOR_DIM:
        raise OracleError(f"dense dimension {dim} exceeds the guard {MAX_VECTOR_DIM}")
    return dim


@dataclass(frozen=True)
class DenseState:
    """Full state vector in the package vectorization conventions."""

    rep: Rep
    system: System
    vector: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.vector, dtype=complex).reshape(-1)
        object.__setattr__(self, "vector", v)
        if len(v) != _check_dim(self.system, self.rep):
            raise OracleError("state vector has the wrong dimension")


def dense_product_state(rep: Rep, system: System, names: str | Sequence[str]) -> DenseState:
    if isinstance(names, str):
        names = [names] * system.n
    v = np.ones(1, dtype=complex)
    for site, name in zip(system.sites, names):
        if rep is Rep.PURE:
            loc = state_vector(site, name)
        else:
            loc = state_matrix(site, name).reshape(-1)
        v = np.kron(v, loc)
    return DenseState(rep, system, v)


# ---------------------------------------------------------------------------
# operator embedding


def _site_perm_arrays(system: System) -> tuple[np.ndarray, np.ndarray]:
    """Maps between global ``(ket, bra)`` and per-site interleaved indices.

    Returns ``(site_to_global, global_to_site)`` index arrays: a vector in
    one ordering is obtained from the other by fancy indexing.
    """
    dims = [s.dim for s in system.sites]
    d = int(np.prod(dims))
    idx = np.arange(d * d)
    # global index = ket * d + bra; decompose both into per-site digits
    ket, bra = np.divmod(idx, d)
    site_index = np.zeros_like(idx)
    stride = 1
    kets = []
    bras = []
    rk, rb = ket, bra
    for dim in reversed(dims):
        rk, kd = np.divmod(rk, dim)
        rb, bd = np.divmod(rb, dim)
        kets.append(kd)
        bras.append(bd)
    kets.reverse()
    bras.reverse()
    for dim, kd, bd in zip(dims, kets, bras):
        site_index = site_index * (dim * dim) + (kd * dim + bd)
    # site_index[g] = interleaved position of global index g
    global_to_site = site_index
    site_to_global = np.empty_like(site_index)
    site_to_global[site_index] = idx
    return site_to_global, global_to_site


def _permute_sparse(mat: sp.spmatrix, new_of_old: np.ndarray) -> sp.csr_matrix:
    coo = mat.tocoo()
    return sp.csr_matrix(
        (coo.data, (new_of_old[coo.row], new_of_old[coo.col])), shape=mat.shape
    )


def _embed_part(
    system: System, sites: Sequence[int], matrix: np.ndarray, fermionic: bool
) -> sp.csr_matrix:
    """Embed a local matrix on the given 1-based sites into the full space."""
    n = system.n
    dims = [s.dim for s in system.sites]
    if fermionic:
        if len(sites) != 1:
            raise OracleError("fermionic parts are single-site")
        s0 = sites[0]
        factors = []
        for j in range(1, n + 1):
            if j == s0:
                factors.append(sp.csr_matrix(matrix))
            elif j < s0 and system.sites[j - 1].kind == "Fermion":
                factors.append(sp.diags([1.0, -1.0]).tocsr())
            else:
                factors.append(sp.identity(dims[j - 1], format="csr"))
        acc = factors[0]
        for f in factors[1:]:
            acc = sp.kron(acc, f, format="csr")
        return acc
    order = sorted(range(len(sites)), key=lambda k: sites[k])
    sorted_sites = [sites[k] for k in order]
    if list(order) != list(range(len(sites))):
        sdims = [dims[s - 1] for s in sites]
        k = len(sites)
        t = matrix.reshape(sdims + sdims)
        t = t.transpose(order + [k + o for o in order])
        dd = int(np.prod(sdims))
        matrix = t.reshape(dd, dd)
    # kron in the ordering (sorted gate sites first, then the rest), then
    # permute indices back to the physical site ordering
    rest = [j for j in range(1, n + 1) if j not in sorted_sites]
    full_order = sorted_sites + rest
    acc = sp.csr_matrix(matrix)
    for j in rest:
        acc = sp.kron(acc, sp.identity(dims[j - 1], format="csr"), format="csr")
    if full_order == list(range(1, n + 1)):
        return acc.tocsr()
    # map kron-order indices (gate sites first) back to chain order
    strides = np.ones(n, dtype=np.int64)
    for j in range(n - 2, -1, -1):
        strides[j] = strides[j + 1] * dims[j + 1]
    total = int(np.prod(dims))
    kron_dims = [dims[j - 1] for j in full_order]
    rem = np.arange(total, dtype=np.int64)
    digit_list = []
    for dsz in reversed(kron_dims):
        rem, dig = np.divmod(rem, dsz)
        digit_list.append(dig)
    digit_list.reverse()
    g = np.zeros(total, dtype=np.int64)
    for pos, j in enumerate(full_order):
        g += digit_list[pos] * strides[j - 1]
    return _permute_sparse(acc, g)


def dense_operator(expr: OpExpr, system: System) -> sp.csr_matrix:
    """Sparse matrix of an indexed operator expression on the full space."""
    d = _hilbert_dim(system)
    if d > MAX_VECTOR_DIM:
        raise OracleError(f"Hilbert dimension {d} exceeds the guard")

    def walk(e: OpExpr) -> sp.csr_matrix:
        if isinstance(e, Sum):
            acc = sp.csr_matrix((d, d), dtype=complex)
            for t in e.terms:
                acc = acc + walk(t)
            return acc
        if isinstance(e, Scale):
            return complex(e.factor) * walk(e.arg)
        if isinstance(e, Prod):
            acc = sp.identity(d, format="csr", dtype=complex)
            for f in e.factors:
                acc = acc @ walk(f)
            return acc
        if isinstance(e, Dag):
            pushed = dag_expr(e.arg)
            if pushed != e:
                return walk(pushed)
        if isinstance(e, Indexed):
            slot_sites = [system.sites[s - 1] for s in e.sites]
            acc = sp.csr_matrix((d, d), dtype=complex)
            for c, parts in generic_terms(e.base, slot_sites):
                term = sp.identity(d, format="csr", dtype=complex)
                for slots, m, ferm in parts:
                    part_sites = [e.sites[k] for k in slots]
                    term = term @ _embed_part(system, part_sites, m, ferm)
                acc = acc + complex(c) * term
            return acc
        if isinstance(e, (Dissipator, Gate)):
            raise OracleError(f"{type(e).__name__} has no plain-operator matrix")
        from ..ops import generic_support

        try:
            k = generic_support(e)
        except ExprError:
            k = -1
        if k == system.n:
            return walk(Indexed(e, tuple(range(1, k + 1))))
        raise OracleError(f"expression must be indexed, found {type(e).__name__}")

    try:
        return walk(expr)
    except ExprError as exc:
        raise OracleError(str(exc)) from None


def _split_evolver(expr: OpExpr):
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
            diss.append((mult, Indexed(e.base.arg, e.sites)))
        else:
            plain.append(e if mult == 1 else Scale(mult, e))

    walk(expr, 1.0 + 0j)
    return plain, diss


def dense_generator(expr: OpExpr, system: System) -> sp.csr_matrix:
    """Sparse Lindblad superoperator in the per-site vectorization ordering.

    Built directly from full-space matrices: plain terms contribute
    ``c * (kron(h, I) - kron(I, h.T))`` and each jump operator ``L``
    contributes ``kron(L, conj(L)) - kron(L'L, I)/2 - kron(I, (L'L).T)/2``.
    """
    d = _hilbert_dim(system)
    _check_dim(system, Rep.MIXED)
    plain, diss = _split_evolver(expr)
    eye = sp.identity(d, format="csr", dtype=complex)
    s_glob = sp.csr_matrix((d * d, d * d), dtype=complex)
    for e in plain:
        h = dense_operator(e, system)
        s_glob = s_glob + sp.kron(h, eye, format="csr") - sp.kron(eye, h.T, format="csr")
    for mult, l_expr in diss:
        l_op = dense_operator(l_expr, system)
        lsq = (l_op.conj().T @ l_op).tocsr()
        s_glob = s_glob + complex(mult) * (
            sp.kron(l_op, l_op.conj(), format="csr")
            - 0.5 * sp.kron(lsq, eye, format="csr")
            - 0.5 * sp.kron(eye, lsq.T, format="csr")
        )
    _, global_to_site = _site_perm_arrays(system)
    return _permute_sparse(s_glob.tocsr(), global_to_site)


# ---------------------------------------------------------------------------
# integration and channels


def _rk4_run(matvec, v0: np.ndarray, t: float, steps: int) -> np.ndarray:
    h = t / steps
    v = v0
    for _ in range(steps):
        k1 = matvec(v)
        k2 = matvec(v + 0.5 * h * k1)
        k3 = matvec(v + 0.5 * h * k2)
        k4 = matvec(v + h * k3)
        v = v + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return v


def rk4_adaptive(matvec, v0: np.ndarray, t: float, tol: float = 1e-10, steps0: int | None = None) -> np.ndarray:
    """Classic RK4 with step halving until two successive runs agree."""
    if t == 0:
        return v0.copy()
    steps = steps0 or max(8, int(np.ceil(t / 0.05)))
    prev = _rk4_run(matvec, v0, t, steps)
    for _ in range(24):
        steps *= 2
        cur = _rk4_run(matvec, v0, t, steps)
        if float(np.max(np.abs(cur - prev))) <= tol:
            return cur
        prev = cur
    raise OracleError(f"RK4 did not converge to {tol} within {steps} steps")


def dense_evolve(
    gen: sp.spmatrix, state: DenseState, t: float, tol: float = 1e-10, steps0: int | None = None
) -> DenseState:
    """Integrate ``d/dt v = gen v`` from the given state."""
    g = gen.tocsr()
    out = rk4_adaptive(lambda v: g @ v, state.vector, t, tol=tol, steps0=steps0)
    return DenseState(state.rep, state.system, out)


def _to_matrix(state: DenseState) -> np.ndarray:
    if state.rep is not Rep.MIXED:
        raise OracleError("density-matrix form needs a mixed state")
    d = _hilbert_dim(state.system)
    _, global_to_site = _site_perm_arrays(state.system)
    # v_glob[g] = v_site[global_to_site[g]]
    return state.vector[global_to_site].reshape(d, d)


def _from_matrix(system: System, rho: np.ndarray) -> DenseState:
    site_to_global, _ = _site_perm_arrays(system)
    # v_site[s] = v_glob[site_to_global[s]]
    return DenseState(Rep.MIXED, system, rho.reshape(-1)[site_to_global])


def dense_channel(
    state: DenseState, kraus: Sequence[np.ndarray], sites: Sequence[int]
) -> DenseState:
    """Apply ``rho -> sum_i E_i rho E_i^dag`` with the E_i embedded on sites."""
    rho = _to_matrix(state)
    out = np.zeros_like(rho)
    for e in kraus:
        full = _embed_part(
            state.system, list(sites), np.asarray(e, dtype=complex), False
        ).toarray()
        out += full @ rho @ full.conj().T
    return _from_matrix(state.system, out)


def dense_expect(expr: OpExpr, state: DenseState) -> complex:
    op = dense_operator(expr, state.system)
    if state.rep is Rep.PURE:
        return complex(np.vdot(state.vector, op @ state.vector))
    rho = _to_matrix(state)
    return complex((op @ rho).diagonal().sum())


def dense_expect_sites(op_generic: OpExpr, state: DenseState) -> list[complex | None]:
    out: list[complex | None] = []
    for i in range(1, state.system.n + 1):
        try:
            out.append(dense_expect(Indexed(op_generic, (i,)), state))
        except (OracleError, ExprError):
            out.append(None)
    return out


def dense_trace(state: DenseState) -> complex:
    if state.rep is Rep.PURE:
        return complex(np.vdot(state.vector, state.vector))
    return complex(_to_matrix(state).trace())


def dense_purity(state: DenseState) -> float:
    if state.rep is Rep.PURE:
        return 1.0
    rho = _to_matrix(state)
    tr = rho.trace()
    return float(np.real(np.trace(rho @ rho) / (tr * tr)))
