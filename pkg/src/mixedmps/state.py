"""MPS containers for pure states and vectorized density matrices.

A :class:`State` holds one rank-3 tensor per site with axes
``(left bond, physical, right bond)`` and boundary bonds of extent 1.  Pure
states carry the local dimension ``d`` on the physical axis; mixed states
carry ``d*d`` with the combined index ``(ket, bra) -> ket*d + bra``, matching
the package-wide vectorization convention.  States are immutable values:
every operation returns a new ``State``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .sites import Site, state_matrix, state_vector
from .tensor import TruncationLimits, UNLIMITED, truncated_svd


class StateError(ValueError):
    """Invalid state construction or combination."""


class Rep(Enum):
    PURE = "pure"
    MIXED = "mixed"


@dataclass(frozen=True)
class System:
    """An ordered chain of local Hilbert spaces."""

    sites: tuple[Site, ...]

    def __post_init__(self) -> None:
        sites = tuple(self.sites)
        object.__setattr__(self, "sites", sites)
        if not sites:
            raise StateError("a system needs at least one site")

    @classmethod
    def uniform(cls, n: int, site: Site) -> "System":
        return cls(tuple([site] * n))

    @property
    def n(self) -> int:
        return len(self.sites)

    def dim(self, i: int) -> int:
        """Local dimension of 1-based site ``i``."""
        return self.sites[i - 1].dim

    def phys_dim(self, i: int, rep: Rep) -> int:
        d = self.dim(i)
        return d if rep is Rep.PURE else d * d


def _check_tensors(system: System, rep: Rep, tensors: Sequence[np.ndarray]) -> None:
    if len(tensors) != system.n:
        raise StateError(f"{len(tensors)} tensors for {system.n} sites")
    left = 1
    for i, t in enumerate(tensors, start=1):
        if t.ndim != 3:
            raise StateError(f"site {i}: tensor must have 3 axes, got {t.ndim}")
        if t.shape[0] != left:
            raise StateError(f"site {i}: left bond {t.shape[0]} != {left}")
        if t.shape[1] != system.phys_dim(i, rep):
            raise StateError(
                f"site {i}: physical dim {t.shape[1]} != {system.phys_dim(i, rep)}"
            )
        left = t.shape[2]
    if left != 1:
        raise StateError(f"right boundary bond must be 1, got {left}")


@dataclass(frozen=True)
class State:
    rep: Rep
    system: System
    tensors: tuple[np.ndarray, ...]
    center: int | None = None  # 1-based orthogonality center, if known

    def __post_init__(self) -> None:
        tensors = tuple(np.asarray(t, dtype=complex) for t in self.tensors)
        object.__setattr__(self, "tensors", tensors)
        _check_tensors(self.system, self.rep, tensors)

    @property
    def n(self) -> int:
        return self.system.n

    def bond_dims(self) -> list[int]:
        """Interior bond dimensions (N-1 values)."""
        return [t.shape[2] for t in self.tensors[:-1]]

    def maxlinkdim(self) -> int:
        dims = self.bond_dims()
        return max(dims) if dims else 1

    def norm(self) -> float:
        """2-norm of the underlying MPS vector."""
        s = orthogonalize(self, 1)
        return float(np.linalg.norm(s.tensors[0]))

    def dense_vector(self, max_size: int = 2**22) -> np.ndarray:
        """Contract to a dense vector (tests and small systems only)."""
        size = 1
        for i in range(1, self.n + 1):
            size *= self.system.phys_dim(i, self.rep)
            if size > max_size:
                raise StateError(f"dense expansion larger than {max_size}")
        acc = self.tensors[0]  # (1, p, r)
        for t in self.tensors[1:]:
            acc = np.tensordot(acc, t, axes=([acc.ndim - 1], [0]))
        return acc.reshape(-1)

    def __add__(self, other: "State") -> "State":
        return add([(1.0, self), (1.0, other)])

    def __sub__(self, other: "State") -> "State":
        return add([(1.0, self), (-1.0, other)])

    def __mul__(self, c) -> "State":
        return add([(complex(c), self)])

    __rmul__ = __mul__

    def __truediv__(self, c) -> "State":
        return add([(1.0 / complex(c), self)])


# ---------------------------------------------------------------------------
# low-level sweeps shared with the MPO application code


def _lq(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    q, r = np.linalg.qr(m.T)
    return r.T, q.T


def left_orthogonalize_step(tensors: list[np.ndarray], i: int) -> None:
    """QR at site ``i`` (0-based), pushing the remainder right. In place."""
    t = tensors[i]
    l, p, r = t.shape
    q, rest = np.linalg.qr(t.reshape(l * p, r))
    k = q.shape[1]
    tensors[i] = q.reshape(l, p, k)
    tensors[i + 1] = np.tensordot(rest, tensors[i + 1], axes=([1], [0]))


def right_orthogonalize_step(tensors: list[np.ndarray], i: int) -> None:
    """LQ at site ``i`` (0-based), pushing the remainder left. In place."""
    t = tensors[i]
    l, p, r = t.shape
    rest, q = _lq(t.reshape(l, p * r))
    k = q.shape[0]
    tensors[i] = q.reshape(k, p, r)
    tensors[i - 1] = np.tensordot(tensors[i - 1], rest, axes=([2], [0]))


def truncate_sweep_rl(
    tensors: list[np.ndarray], limits: TruncationLimits
) -> float:
    """Right-to-left SVD truncation sweep; leaves the center at site 0.

    Assumes the chain is left-orthogonal (or freshly contracted), so each
    local truncation is optimal in the 2-norm.  Returns the summed relative
    discarded weight.
    """
    discarded = 0.0
    for i in range(len(tensors) - 1, 0, -1):
        t = tensors[i]
        l, p, r = t.shape
        u, s, vh, disc = truncated_svd(t.reshape(l, p * r), limits)
        k = len(s)
        tensors[i] = vh.reshape(k, p, r)
        carry = u * s[None, :]
        tensors[i - 1] = np.tensordot(tensors[i - 1], carry, axes=([2], [0]))
        discarded += disc
    return discarded


def orthogonalize(s: State, c: int) -> State:
    """Move the orthogonality center to 1-based site ``c``."""
    if not 1 <= c <= s.n:
        raise StateError(f"center {c} outside 1..{s.n}")
    if s.center == c:
        return s
    tensors = list(s.tensors)
    lo = 0 if s.center is None else min(s.center - 1, c - 1)
    hi = len(tensors) - 1 if s.center is None else max(s.center - 1, c - 1)
    for i in range(lo, c - 1):
        left_orthogonalize_step(tensors, i)
    for i in range(hi, c - 1, -1):
        right_orthogonalize_step(tensors, i)
    return State(s.rep, s.system, tuple(tensors), center=c)


def compress(s: State, limits: TruncationLimits = UNLIMITED) -> State:
    """Two-sweep compression: QR to the right, then truncating SVDs back."""
    tensors = list(s.tensors)
    if s.center is None:
        for i in range(len(tensors) - 1):
            left_orthogonalize_step(tensors, i)
    else:
        for i in range(s.center - 1, len(tensors) - 1):
            left_orthogonalize_step(tensors, i)
    truncate_sweep_rl(tensors, limits)
    return State(s.rep, s.system, tuple(tensors), center=1)


# ---------------------------------------------------------------------------
# constructors and combinations


def product_state(
    rep: Rep, system: System, names: str | Sequence[str]
) -> State:
    """Product state from named local states; all bond dimensions are 1."""
    if isinstance(names, str):
        names = [names] * system.n
    if len(names) != system.n:
        raise StateError(f"{len(names)} state names for {system.n} sites")
    tensors = []
    for site, name in zip(system.sites, names):
        if rep is Rep.PURE:
            v = state_vector(site, name)
        else:
            v = state_matrix(site, name).reshape(-1)
        tensors.append(v.reshape(1, -1, 1))
    return State(rep, system, tuple(tensors), center=1)


def add(
    terms: Iterable[tuple[complex, State]],
    limits: TruncationLimits = UNLIMITED,
) -> State:
    """Linear combination of states via the bond direct sum, then compression."""
    terms = [(complex(c), st) for c, st in terms]
    if not terms:
        raise StateError("empty linear combination")
    rep = terms[0][1].rep
    system = terms[0][1].system
    for _, st in terms:
        if st.rep is not rep or st.system != system:
            raise StateError("states in a sum must share representation and system")
    if len(terms) == 1:
        c, st = terms[0]
        tensors = list(st.tensors)
        tensors[0] = c * tensors[0]
        return compress(State(rep, system, tuple(tensors)), limits)
    n = system.n
    tensors = []
    for i in range(n):
        parts = [st.tensors[i] for _, st in terms]
        if i == 0:
            parts = [c * t for (c, _), t in zip(terms, parts)]
        p = parts[0].shape[1]
        if n == 1:
            block = sum(parts)
        elif i == 0:
            block = np.concatenate(parts, axis=2)
        elif i == n - 1:
            block = np.concatenate(parts, axis=0)
        else:
            lsum = sum(t.shape[0] for t in parts)
            rsum = sum(t.shape[2] for t in parts)
            block = np.zeros((lsum, p, rsum), dtype=complex)
            lo = ro = 0
            for t in parts:
                block[lo : lo + t.shape[0], :, ro : ro + t.shape[2]] = t
                lo += t.shape[0]
                ro += t.shape[2]
        tensors.append(block)
    return compress(State(rep, system, tuple(tensors)), limits)


def mix(s: State) -> State:
    """Promote a pure state to its vectorized projector ``|psi><psi|``.

    Site tensors become ``T (x) conj(T)`` with squared bond dimensions.
    """
    if s.rep is not Rep.PURE:
        raise StateError("mix() takes a pure state")
    tensors = []
    for t in s.tensors:
        l, p, r = t.shape
        m = np.einsum("lpr,msq->lmpsrq", t, t.conj())
        tensors.append(m.reshape(l * l, p * p, r * r))
    return State(Rep.MIXED, s.system, tuple(tensors), center=s.center)


def _trace_vector(dim: int) -> np.ndarray:
    return np.eye(dim, dtype=complex).reshape(-1)


def partial_trace(s: State, keep: Iterable[int]) -> State:
    """Trace out all sites not in ``keep`` (1-based); preserves the trace."""
    if s.rep is not Rep.MIXED:
        raise StateError("partial_trace needs a mixed state")
    keep_set = sorted(set(int(k) for k in keep))
    if not keep_set:
        raise StateError("keep set must not be empty")
    if keep_set[0] < 1 or keep_set[-1] > s.n:
        raise StateError(f"keep sites outside 1..{s.n}")
    kept_sites = []
    kept_tensors: list[np.ndarray] = []
    pending = np.eye(1, dtype=complex)
    for i in range(1, s.n + 1):
        t = s.tensors[i - 1]
        if i in keep_set:
            t = np.tensordot(pending, t, axes=([1], [0]))
            pending = np.eye(t.shape[2], dtype=complex)
            kept_tensors.append(t)
            kept_sites.append(s.system.sites[i - 1])
        else:
            m = np.tensordot(_trace_vector(s.system.dim(i)), t, axes=([0], [1]))
            pending = pending @ m
    kept_tensors[-1] = np.tensordot(kept_tensors[-1], pending, axes=([2], [0]))
    return State(Rep.MIXED, System(tuple(kept_sites)), tuple(kept_tensors))


def complete_graph(n: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(1, n + 1) for j in range(i + 1, n + 1)]


def graph_state(
    rep: Rep,
    n: int,
    edges: Iterable[tuple[int, int]],
    limits: TruncationLimits = UNLIMITED,
) -> State:
    """Apply CZ along the edges to ``|+>^n`` (qubits), in the requested rep.

    Edges are applied in lexicographic order; CZ gates commute, so the order
    only affects truncation noise.
    """
    from .evolve import apply_gates, plan_gates  # deferred: avoids an import cycle
    from .sites import QUBIT, operators

    edges = sorted((min(a, b), max(a, b)) for a, b in edges)
    for a, b in edges:
        if a == b or a < 1 or b > n:
            raise StateError(f"bad edge ({a}, {b}) for {n} vertices")
    system = System.uniform(n, QUBIT)
    st = product_state(rep, system, "+")
    if not edges:
        return st
    from .ops import NamedOp

    cz = NamedOp(operators(QUBIT)["CZ"])
    factors = [cz(a, b) for a, b in edges]
    return apply_gates(st, plan_gates(factors, system, rep, limits))
