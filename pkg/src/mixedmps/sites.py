"""Site kinds, local state bases and the built-in operator table.

Basis orderings are fixed once and used by every module:

* qubits use ``(Up, Dn) == (|0>, |1>)`` with ``Z = diag(1, -1)``;
* bosons use Fock states ``0 .. d-1``;
* fermions use ``(Emp, Occ)``, so ``N = diag(0, 1)`` and the parity operator
  is ``F = diag(1, -1)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


class SiteError(ValueError):
    """Unknown site kind, state name or operator."""


@dataclass(frozen=True)
class Site:
    kind: str
    dim: int

    def __post_init__(self) -> None:
        if self.dim < 2:
            raise SiteError(f"local dimension must be >= 2, got {self.dim}")

    def __repr__(self) -> str:
        if self.kind == "Boson":
            return f"Boson({self.dim})"
        return self.kind


QUBIT = Site("Qubit", 2)
FERMION = Site("Fermion", 2)


def boson(dim: int) -> Site:
    return Site("Boson", dim)


@dataclass(frozen=True, eq=False)
class OperatorDef:
    """A named local operator acting on ``support`` consecutive conceptual sites.

    ``fermionic`` marks odd fermion parity and is restricted to single-site
    operators on fermion sites; parity strings for wider objects cannot be
    attributed to one slot.
    """

    name: str
    support: int
    matrix: np.ndarray
    fermionic: bool = False

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix, dtype=complex)
        object.__setattr__(self, "matrix", m)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise SiteError(f"operator {self.name!r} needs a square matrix")
        if self.support < 1:
            raise SiteError(f"operator {self.name!r} needs support >= 1")
        if self.fermionic and self.support != 1:
            raise SiteError(f"fermionic operator {self.name!r} must be single-site")

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, OperatorDef)
            and self.name == other.name
            and self.support == other.support
            and self.fermionic == other.fermionic
            and self.matrix.shape == other.matrix.shape
            and np.array_equal(self.matrix, other.matrix)
        )

    def __hash__(self) -> int:
        return hash((self.name, self.support, self.fermionic, self.matrix.shape))


def _qubit_operators() -> dict[str, OperatorDef]:
    x = np.array([[0, 1], [1, 0]], dtype=complex)
    y = np.array([[0, -1j], [1j, 0]], dtype=complex)
    z = np.array([[1, 0], [0, -1]], dtype=complex)
    sp = np.array([[0, 1], [0, 0]], dtype=complex)
    sm = np.array([[0, 0], [1, 0]], dtype=complex)
    h = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
    swap = np.zeros((4, 4), dtype=complex)
    swap[0, 0] = swap[3, 3] = swap[1, 2] = swap[2, 1] = 1
    cz = np.diag([1, 1, 1, -1]).astype(complex)
    return {
        "Id": OperatorDef("Id", 1, np.eye(2)),
        "X": OperatorDef("X", 1, x),
        "Y": OperatorDef("Y", 1, y),
        "Z": OperatorDef("Z", 1, z),
        "Sp": OperatorDef("Sp", 1, sp),
        "Sm": OperatorDef("Sm", 1, sm),
        "H": OperatorDef("H", 1, h),
        "Swap": OperatorDef("Swap", 2, swap),
        "CZ": OperatorDef("CZ", 2, cz),
    }


def _boson_operators(dim: int) -> dict[str, OperatorDef]:
    a = np.zeros((dim, dim), dtype=complex)
    for n in range(1, dim):
        a[n - 1, n] = np.sqrt(n)
    num = np.diag(np.arange(dim)).astype(complex)
    return {
        "Id": OperatorDef("Id", 1, np.eye(dim)),
        "A": OperatorDef("A", 1, a),
        "N": OperatorDef("N", 1, num),
    }


def _fermion_operators() -> dict[str, OperatorDef]:
    c = np.array([[0, 1], [0, 0]], dtype=complex)
    num = np.diag([0.0, 1.0]).astype(complex)
    parity = np.diag([1.0, -1.0]).astype(complex)
    return {
        "Id": OperatorDef("Id", 1, np.eye(2)),
        "C": OperatorDef("C", 1, c, fermionic=True),
        "N": OperatorDef("N", 1, num),
        "F": OperatorDef("F", 1, parity),
    }


@lru_cache(maxsize=None)
def _operators_cached(kind: str, dim: int) -> dict[str, OperatorDef]:
    if kind == "Qubit":
        return _qubit_operators()
    if kind == "Boson":
        return _boson_operators(dim)
    if kind == "Fermion":
        return _fermion_operators()
    raise SiteError(f"unknown site kind {kind!r}")


def operators(site: Site) -> dict[str, OperatorDef]:
    """Built-in operators for one site kind, case-sensitive by name."""
    return _operators_cached(site.kind, site.dim)


def state_vector(site: Site, name: str) -> np.ndarray:
    """Normalized local vector for a named pure state."""
    if name == "FullyMixed":
        raise SiteError('"FullyMixed" has no pure-state vector')
    d = site.dim
    v = np.zeros(d, dtype=complex)
    if site.kind == "Qubit":
        if name in ("Up", "0"):
            v[0] = 1
        elif name in ("Dn", "1"):
            v[1] = 1
        elif name == "+":
            v[0] = v[1] = 1 / np.sqrt(2)
        else:
            raise SiteError(f"unknown qubit state {name!r}")
    elif site.kind == "Boson":
        try:
            k = int(name)
        except ValueError:
            raise SiteError(f"unknown boson state {name!r}") from None
        if not 0 <= k < d:
            raise SiteError(f"boson state {name!r} outside 0..{d - 1}")
        v[k] = 1
    elif site.kind == "Fermion":
        if name == "Emp":
            v[0] = 1
        elif name == "Occ":
            v[1] = 1
        else:
            raise SiteError(f"unknown fermion state {name!r}")
    else:
        raise SiteError(f"unknown site kind {site.kind!r}")
    return v


def state_matrix(site: Site, name: str) -> np.ndarray:
    """Local density matrix for a named state; includes ``FullyMixed``."""
    if name == "FullyMixed":
        return np.eye(site.dim, dtype=complex) / site.dim
    v = state_vector(site, name)
    return np.outer(v, v.conj())
