"""Closed two-point-function dynamics for the quasi-free reference models.

For quadratic hopping Hamiltonians ``H = sum_ij h_ij a_i^dag a_j`` with the
jump operators below, the covariance ``C_ij = <a_i^dag a_j>`` obeys a closed
linear ODE obtained from the adjoint equation
``d<A>/dt = <i[H, A]> + sum_k <L_k' A L_k - {L_k' L_k, A}/2>``:

* Hamiltonian part (all models):  ``dC = i (h^T C - C h^T)``.
* Hermitian dephasing ``L_m = sqrt(4 g) n_m``: off-diagonal decay at rate
  ``4 g`` (the double commutator ``-2g [n_m, [n_m, A]]`` summed over m).
* Fermionic source ``L = sqrt(r) c_s^dag``:
  ``dC += r (E_ss - (P_s C + C P_s)/2)``.
* Fermionic sink ``L = sqrt(q) c_s``:  ``dC += -q (P_s C + C P_s)/2``.
* Bosonic source ``L = sqrt(r) b_s^dag``:
  ``dC += r (E_ss + (P_s C + C P_s)/2)`` (stimulated emission flips the sign
  of the anticommutator relative to fermions).

Each right-hand side is validated against the dense Lindblad oracle on small
chains before use at production sizes (see the test suite).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dense import rk4_adaptive


@dataclass(frozen=True)
class CovarianceModel:
    kind: str
    n: int
    hopping: np.ndarray
    sources: tuple[tuple[int, float], ...] = ()  # (1-based site, rate)
    sinks: tuple[tuple[int, float], ...] = ()
    dephasing: float = 0.0
    statistics: str = "fermion"  # "fermion" | "boson"

    def __post_init__(self) -> None:
        h = np.asarray(self.hopping, dtype=complex)
        object.__setattr__(self, "hopping", h)
        if h.shape != (self.n, self.n):
            raise ValueError("hopping matrix must be n x n")
        if np.linalg.norm(h - h.conj().T) > 1e-12:
            raise ValueError("hopping matrix must be Hermitian")


def _chain_hopping(n: int, amplitude: float) -> np.ndarray:
    h = np.zeros((n, n))
    for i in range(n - 1):
        h[i, i + 1] = h[i + 1, i] = amplitude
    return h


def fermion_dephasing(n: int, gamma: float) -> CovarianceModel:
    """Nearest-neighbor hopping ``-1`` with ``L_i = sqrt(4 gamma) n_i``."""
    return CovarianceModel("fermion_dephasing", n, _chain_hopping(n, -1.0), dephasing=4.0 * gamma)


def boson_source(n: int, rate: float, site: int) -> CovarianceModel:
    """Hopping ``+1`` with one bosonic source ``sqrt(2 rate) b_site^dag``."""
    return CovarianceModel(
        "boson_source",
        n,
        _chain_hopping(n, 1.0),
        sources=((site, 2.0 * rate),),
        statistics="boson",
    )


def fermion_source(n: int, rate: float, site: int) -> CovarianceModel:
    return CovarianceModel(
        "fermion_source", n, _chain_hopping(n, 1.0), sources=((site, 2.0 * rate),)
    )


def xx_boundary(n: int, eps_l: float, mu_l: float, eps_r: float, mu_r: float) -> CovarianceModel:
    """XX chain with raising/lowering jumps at both ends, in fermion language.

    Occupation maps to the down spin: ``<sz_i> = 1 - 2 C_ii``, so a ``Sp``
    jump is a sink and ``Sm`` a source; the XX coupling maps to hopping 2.
    """
    return CovarianceModel(
        "xx_boundary",
        n,
        _chain_hopping(n, 2.0),
        sources=((1, eps_l * (1 - mu_l) / 2), (n, eps_r * (1 - mu_r) / 2)),
        sinks=((1, eps_l * (1 + mu_l) / 2), (n, eps_r * (1 + mu_r) / 2)),
    )


def covariance_rhs(model: CovarianceModel, c: np.ndarray) -> np.ndarray:
    h = model.hopping
    dc = 1j * (h.T @ c - c @ h.T)
    if model.dephasing:
        off = c - np.diag(np.diag(c))
        dc = dc - model.dephasing * off
    for site, rate in model.sources:
        s = site - 1
        row = c[s, :].copy()
        col = c[:, s].copy()
        sign = 1.0 if model.statistics == "boson" else -1.0
        dc[s, :] += sign * 0.5 * rate * row
        dc[:, s] += sign * 0.5 * rate * col
        dc[s, s] += rate
    for site, rate in model.sinks:
        s = site - 1
        dc[s, :] += -0.5 * rate * c[s, :]
        dc[:, s] += -0.5 * rate * c[:, s]
    return dc


def covariance_evolve(
    model: CovarianceModel, c0: np.ndarray, t: float, tol: float = 1e-10
) -> np.ndarray:
    """Integrate the covariance ODE with adaptive-step RK4."""
    n = model.n
    c0 = np.asarray(c0, dtype=complex)
    if c0.shape != (n, n):
        raise ValueError("initial covariance must be n x n")

    def matvec(v: np.ndarray) -> np.ndarray:
        return covariance_rhs(model, v.reshape(n, n)).reshape(-1)

    out = rk4_adaptive(matvec, c0.reshape(-1), t, tol=tol)
    return out.reshape(n, n)


def xx_sz(c: np.ndarray, site: int) -> float:
    """``<sigma^z_site>`` of the XX boundary model from the covariance."""
    return float(1.0 - 2.0 * np.real(c[site - 1, site - 1]))


def xx_current(c: np.ndarray, bond: int) -> float:
    """``<sx_i sy_{i+1} - sy_i sx_{i+1}>`` on the given bond."""
    return float(4.0 * np.imag(c[bond - 1, bond]))
