"""Dense complex tensors with named indices and the shared linear-algebra kernels.

Layout convention, adopted package-wide: tensor data is a numpy complex128
array in C (row-major) order with one axis per label, in label order.
Combined indices follow the same rule, so a pair ``(i, j)`` of extents
``(d, d)`` maps to the flat index ``i*d + j``.  A density matrix ``rho`` is
vectorized as ``vec(rho)[i*d + j] = rho[i, j]``, which gives
``vec(A rho B) = kron(A, B.T) vec(rho)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg


class TensorError(ValueError):
    """Malformed tensor, unknown label, or incompatible contraction."""


_UNLIMITED_DIM = 2**62


@dataclass(frozen=True)
class TruncationLimits:
    """Bond truncation policy.

    ``cutoff`` bounds the relative discarded squared-singular-value weight of
    a single split; ``maxdim`` caps the number of kept values.  ``maxdim``
    wins when the two conflict.
    """

    cutoff: float = 0.0
    maxdim: int = _UNLIMITED_DIM

    def __post_init__(self) -> None:
        if self.cutoff < 0:
            raise ValueError(f"cutoff must be >= 0, got {self.cutoff}")
        if self.maxdim < 1:
            raise ValueError(f"maxdim must be >= 1, got {self.maxdim}")


UNLIMITED = TruncationLimits()


@dataclass(frozen=True)
class Tensor:
    """Immutable dense complex tensor with one unique label per axis."""

    labels: tuple[str, ...]
    data: np.ndarray

    def __post_init__(self) -> None:
        labels = tuple(self.labels)
        data = np.asarray(self.data, dtype=complex)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "data", data)
        if len(set(labels)) != len(labels):
            raise TensorError(f"labels must be unique, got {labels}")
        if data.ndim != len(labels):
            raise TensorError(
                f"{data.ndim} axes but {len(labels)} labels ({labels})"
            )

    @property
    def dims(self) -> tuple[int, ...]:
        return self.data.shape

    def axis(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise TensorError(f"unknown label {label!r}; have {self.labels}") from None

    def dim(self, label: str) -> int:
        return self.data.shape[self.axis(label)]

    def relabel(self, mapping: dict[str, str]) -> "Tensor":
        for old in mapping:
            self.axis(old)
        return Tensor(tuple(mapping.get(l, l) for l in self.labels), self.data)

    def transpose(self, labels: Sequence[str]) -> "Tensor":
        labels = tuple(labels)
        if set(labels) != set(self.labels):
            raise TensorError(f"transpose labels {labels} do not match {self.labels}")
        perm = [self.axis(l) for l in labels]
        return Tensor(labels, self.data.transpose(perm))

    def conj(self) -> "Tensor":
        return Tensor(self.labels, self.data.conj())

    def norm(self) -> float:
        return float(np.linalg.norm(self.data))


def contract(a: Tensor, b: Tensor, pairs: Iterable[tuple[str, str]]) -> Tensor:
    """Contract ``a`` with ``b`` over the given ``(label_in_a, label_in_b)`` pairs.

    The result carries the unpaired labels of ``a`` followed by those of ``b``.
    """
    pairs = list(pairs)
    if not pairs:
        raise TensorError("contract needs at least one label pair")
    axes_a = []
    axes_b = []
    for la, lb in pairs:
        ia, ib = a.axis(la), b.axis(lb)
        if a.data.shape[ia] != b.data.shape[ib]:
            raise TensorError(
                f"extent mismatch for pair ({la!r}, {lb!r}): "
                f"{a.data.shape[ia]} vs {b.data.shape[ib]}"
            )
        axes_a.append(ia)
        axes_b.append(ib)
    if len(set(axes_a)) != len(axes_a) or len(set(axes_b)) != len(axes_b):
        raise TensorError("a label may appear in at most one pair")
    out_a = [l for l in a.labels if l not in {p[0] for p in pairs}]
    out_b = [l for l in b.labels if l not in {p[1] for p in pairs}]
    clash = set(out_a) & set(out_b)
    if clash:
        raise TensorError(f"unpaired labels collide: {sorted(clash)}")
    data = np.tensordot(a.data, b.data, axes=(axes_a, axes_b))
    return Tensor(tuple(out_a + out_b), data)


def _svd(m: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # gesdd occasionally fails to converge; fall back to the slower gesvd
    try:
        return np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError:
        return scipy.linalg.svd(m, full_matrices=False, lapack_driver="gesvd")


def _kept_rank(s: np.ndarray, limits: TruncationLimits) -> tuple[int, float]:
    """Smallest kept rank whose discarded relative weight fits the cutoff.

    Ties at the boundary resolve toward keeping the earlier (larger) values;
    maxdim is applied after the cutoff rule.
    """
    w = (s * s).astype(float)
    total = w.sum()
    if total <= 0.0:
        return 1, 0.0
    tail = np.zeros(len(s) + 1)
    tail[:-1] = np.cumsum(w[::-1])[::-1]
    allowed = limits.cutoff * total
    k = int(np.argmax(tail <= allowed))
    k = max(k, 1)
    k = min(k, limits.maxdim, len(s))
    return k, float(tail[k] / total)


def truncated_svd(
    m: np.ndarray, limits: TruncationLimits = UNLIMITED
) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """SVD of a matrix with relative-weight truncation.

    Returns ``(u, s, vh, discarded)`` with ``discarded`` the relative dropped
    squared weight.  An exactly zero matrix yields a single zero singular
    value with ``discarded == 0`` (and canonical unit factors), which keeps
    downstream bond bookkeeping well defined.
    """
    if m.size == 0:
        raise TensorError("cannot SVD an empty matrix")
    if not np.any(m):
        u = np.zeros((m.shape[0], 1), dtype=complex)
        u[0, 0] = 1.0
        vh = np.zeros((1, m.shape[1]), dtype=complex)
        vh[0, 0] = 1.0
        return u, np.zeros(1), vh, 0.0
    u, s, vh = _svd(np.ascontiguousarray(m))
    k, discarded = _kept_rank(s, limits)
    return u[:, :k], s[:k], vh[:k, :], discarded


def svd_split(
    t: Tensor,
    row_labels: Sequence[str],
    limits: TruncationLimits = UNLIMITED,
    new_label: str = "svd",
) -> tuple[Tensor, np.ndarray, Tensor, float]:
    """Split ``t`` into ``U * diag(S) * V`` across the given row labels.

    ``U`` carries ``row_labels + (new_label,)`` and has orthonormal columns,
    ``V`` carries ``(new_label,) + col_labels`` and has orthonormal rows.
    """
    rows = [l for l in t.labels if l in set(row_labels)]
    if len(rows) != len(set(row_labels)):
        missing = set(row_labels) - set(t.labels)
        raise TensorError(f"unknown row labels {sorted(missing)}")
    if not rows or len(rows) == len(t.labels):
        raise TensorError("row labels must be a nonempty proper subset")
    if new_label in t.labels:
        raise TensorError(f"new label {new_label!r} already present")
    cols = [l for l in t.labels if l not in set(rows)]
    tt = t.transpose(rows + cols)
    row_dims = tt.data.shape[: len(rows)]
    col_dims = tt.data.shape[len(rows):]
    m = tt.data.reshape(int(np.prod(row_dims)), int(np.prod(col_dims)))
    u, s, vh, discarded = truncated_svd(m, limits)
    k = len(s)
    ut = Tensor(tuple(rows) + (new_label,), u.reshape(row_dims + (k,)))
    vt = Tensor((new_label,) + tuple(cols), vh.reshape((k,) + col_dims))
    return ut, s, vt, discarded


def matrix_exponential(m: np.ndarray) -> np.ndarray:
    """exp(m) for a small square complex matrix (scaling and squaring)."""
    a = np.asarray(m, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise TensorError(f"matrix exponential needs a square matrix, got {a.shape}")
    return scipy.linalg.expm(a)
