"""Unitary ensembles produced by measurement patterns, and how close they
are to a single-qubit 2-design."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mbqc import MeasurementPattern, sequence_unitary
from .qcore import EXACT_ATOL, PAULIS, PSD_ATOL, choi_from_superoperator, haar_twirl_superoperator, is_unitary

MAX_BISECTION_ITERATIONS = 60


class ConvergenceError(RuntimeError):
    """Bisection did not reach the requested tolerance."""


@dataclass(frozen=True)
class Ensemble:
    """Finite ensemble ``{(p_i, U_i)}`` of single-qubit unitaries."""

    probabilities: np.ndarray
    unitaries: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=float)
        u = np.asarray(self.unitaries, dtype=complex)
        if u.ndim != 3 or u.shape[0] != p.shape[0]:
            raise ValueError("need one unitary per probability")
        if np.any(p < 0) or abs(p.sum() - 1) > EXACT_ATOL:
            raise ValueError(f"probabilities must be non-negative and sum to 1 (sum {p.sum()})")
        for k, v in enumerate(u):
            if not is_unitary(v, atol=EXACT_ATOL):
                raise ValueError(f"member {k} is not unitary")
        object.__setattr__(self, "probabilities", p)
        object.__setattr__(self, "unitaries", u)

    @classmethod
    def from_members(cls, members) -> "Ensemble":
        ps, us = zip(*members)
        return cls(np.array(ps, dtype=float), np.array(us, dtype=complex))

    @property
    def members(self) -> list[tuple[float, np.ndarray]]:
        return [(float(p), u) for p, u in zip(self.probabilities, self.unitaries)]

    def __len__(self) -> int:
        return len(self.probabilities)


def ensemble_from_pattern(pattern: MeasurementPattern) -> Ensemble:
    """All ``2^k`` outcome strings of a pattern, each with weight ``2^-k``."""
    k = pattern.n_measured
    # member index = outcome string read little-endian, as in exact branches
    us = [sequence_unitary(pattern.angles, [(idx >> i) & 1 for i in range(k)]) for idx in range(2**k)]
    return Ensemble(np.full(2**k, 2.0**-k), np.array(us))


def frame_potential(e: Ensemble) -> float:
    """``sum_ij p_i p_j |Tr(U_i^dag U_j)|^4``; at least 2 for qubits, with
    equality exactly for 2-designs."""
    overlaps = np.einsum("iab,jab->ij", e.unitaries.conj(), e.unitaries)
    return float(e.probabilities @ (np.abs(overlaps) ** 4) @ e.probabilities)


def moment_superoperator(e: Ensemble) -> np.ndarray:
    """Row-major 16x16 superoperator of ``rho -> sum_i p_i (U_i x U_i) rho (U_i x U_i)^dag``."""
    s = np.zeros((16, 16), dtype=complex)
    for p, u in zip(e.probabilities, e.unitaries):
        uu = np.kron(u, u)
        s += p * np.kron(uu, uu.conj())
    return s


def apply_superoperator(s: np.ndarray, rho: np.ndarray) -> np.ndarray:
    d = rho.shape[0]
    return (s @ rho.reshape(-1)).reshape(d, d)


def two_qubit_pauli_basis() -> np.ndarray:
    return np.array([np.kron(a, b) for a in PAULIS for b in PAULIS])


def pauli_transfer_matrix(s: np.ndarray) -> np.ndarray:
    """Real matrix ``R_ab = Tr(P_a E(P_b)) / 4`` in the two-qubit Pauli basis."""
    basis = two_qubit_pauli_basis()
    outs = np.array([apply_superoperator(s, p) for p in basis])
    return np.real(np.einsum("aij,bji->ab", basis, outs)) / 4


def _min_choi_eig(s: np.ndarray) -> float:
    j = choi_from_superoperator(s)
    return float(np.linalg.eigvalsh(0.5 * (j + j.conj().T))[0])


def _certified(m: np.ndarray, haar: np.ndarray, eps: float) -> bool:
    return (
        _min_choi_eig(m - (1 - eps) * haar) >= -PSD_ATOL
        and _min_choi_eig((1 + eps) * haar - m) >= -PSD_ATOL
    )


def epsilon_bound(e: Ensemble, bisection_tol: float = 1e-9, max_iter: int = MAX_BISECTION_ITERATIONS) -> float:
    """Smallest ``eps`` for which ``M - (1-eps) E_H`` and ``(1+eps) E_H - M``
    are both completely positive.

    ``M`` is the ensemble's second-moment map and ``E_H`` the Haar twirl.
    Complete positivity implies the positivity required of an
    approximate 2-design, so the value is an upper bound on the smallest
    valid ``eps`` of that weaker definition.
    """
    m = moment_superoperator(e)
    haar = haar_twirl_superoperator()
    if _certified(m, haar, 0.0):
        return 0.0
    hi = 1.0
    while not _certified(m, haar, hi):
        hi *= 2
        if hi > 2.0**20:
            raise ConvergenceError("no finite epsilon certifies this ensemble")
    lo = 0.0
    for _ in range(max_iter):
        if hi - lo <= bisection_tol:
            return hi
        mid = 0.5 * (lo + hi)
        if _certified(m, haar, mid):
            hi = mid
        else:
            lo = mid
    if hi - lo > bisection_tol:
        raise ConvergenceError(f"bisection stopped at width {hi - lo:.3g} after {max_iter} iterations")
    return hi
