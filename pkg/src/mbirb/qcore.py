"""Small dense quantum algebra: fixed gates, channels and fidelities.

States and operators are plain ``numpy`` complex arrays. Only one- and
two-qubit objects are ever built here, so nothing is sparse or batched
beyond what ``numpy`` broadcasting gives for free.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Tolerances used across the package.
ATOL = 1e-10
EXACT_ATOL = 1e-12
PSD_ATOL = 1e-10
# eigenvalues below this (relative) level are rounding noise
ROUNDING_FLOOR = 1e-15

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
T = np.diag([1, np.exp(1j * np.pi / 4)]).astype(complex)
CZ = np.diag([1, 1, 1, -1]).astype(complex)
SWAP = np.array(
    [[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=complex
)
PAULIS = (I2, X, Y, Z)

KET0 = np.array([1, 0], dtype=complex)
KET1 = np.array([0, 1], dtype=complex)
KET_PLUS = np.array([1, 1], dtype=complex) / np.sqrt(2)
KET_MINUS = np.array([1, -1], dtype=complex) / np.sqrt(2)
KET_PLUS_Y = np.array([1, 1j], dtype=complex) / np.sqrt(2)


class NonPhysicalError(ValueError):
    """Raised when an input that must be a quantum state is not one."""


def rz(phi: float) -> np.ndarray:
    """``exp(-i Z phi / 2)``."""
    return np.diag([np.exp(-0.5j * phi), np.exp(0.5j * phi)])


def projector(ket: np.ndarray) -> np.ndarray:
    ket = np.asarray(ket, dtype=complex)
    return np.outer(ket, ket.conj())


def dagger(a: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(a, -1, -2))


def is_unitary(u: np.ndarray, atol: float = EXACT_ATOL) -> bool:
    u = np.asarray(u)
    return u.ndim == 2 and u.shape[0] == u.shape[1] and np.allclose(
        dagger(u) @ u, np.eye(u.shape[0]), atol=atol
    )


def is_density_matrix(rho: np.ndarray, atol: float = ATOL) -> bool:
    """Hermitian, unit trace and positive semidefinite within ``atol``."""
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        return False
    if not np.allclose(rho, dagger(rho), atol=atol):
        return False
    if abs(np.trace(rho) - 1) > atol:
        return False
    return np.linalg.eigvalsh(0.5 * (rho + dagger(rho))).min() >= -PSD_ATOL


def check_density_matrix(rho: np.ndarray, atol: float = ATOL) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if not is_density_matrix(rho, atol):
        raise NonPhysicalError("matrix is not a density matrix")
    return rho


def equal_up_to_phase(a: np.ndarray, b: np.ndarray, atol: float = ATOL) -> bool:
    """Whether two unitaries agree up to a global phase.

    Compares ``|Tr(a^dag b)| / d`` against one, which avoids having to pick
    a reference entry to divide by.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        return False
    d = a.shape[0]
    return abs(abs(np.trace(dagger(a) @ b)) / d - 1) <= atol


def clean_eigenvalues(w: np.ndarray) -> np.ndarray:
    """Clip negatives and zero out rounding-level eigenvalues."""
    w = np.asarray(w, dtype=float)
    return np.where(w > ROUNDING_FLOOR * max(float(w.max()), 1.0), w, 0.0)


def psd_sqrt(a: np.ndarray) -> np.ndarray:
    """Square root of a Hermitian PSD matrix.

    Eigenvalues within rounding of zero are set to zero, so rank-deficient
    inputs keep their exact null space.
    """
    a = 0.5 * (a + dagger(a))
    w, v = np.linalg.eigh(a)
    if w.min() < -PSD_ATOL:
        raise NonPhysicalError(f"matrix has negative eigenvalue {w.min():.3g}")
    w = clean_eigenvalues(w)
    return (v * np.sqrt(w)) @ dagger(v)


def root_fidelity(rho: np.ndarray, sigma: np.ndarray) -> float:
    """``Tr sqrt(sqrt(rho) sigma sqrt(rho))`` for PSD inputs."""
    s = psd_sqrt(rho)
    inner = s @ sigma @ s
    inner = 0.5 * (inner + dagger(inner))
    return float(np.sum(np.sqrt(clean_eigenvalues(np.linalg.eigvalsh(inner)))))


def _clean_det(rho: np.ndarray) -> float:
    # determinants below ~10 eps are rounding noise of a pure state
    d = float(np.linalg.det(rho).real)
    return d if d > 1e-15 else 0.0


def state_fidelity(rho: np.ndarray, sigma: np.ndarray) -> float:
    """Uhlmann fidelity ``(Tr sqrt(sqrt(rho) sigma sqrt(rho)))**2``."""
    rho = check_density_matrix(rho)
    sigma = check_density_matrix(sigma)
    if rho.shape != sigma.shape:
        raise ValueError(f"shape mismatch {rho.shape} vs {sigma.shape}")
    if rho.shape == (2, 2):
        # qubit closed form; avoids square roots of near-zero eigenvalues
        dets = _clean_det(rho) * _clean_det(sigma)
        f = np.real(np.trace(rho @ sigma)) + 2 * np.sqrt(dets)
    else:
        f = root_fidelity(rho, sigma) ** 2
    return float(min(max(f, 0.0), 1.0))


@dataclass(frozen=True)
class Channel:
    """A CPTP map given by its Kraus operators."""

    kraus: tuple[np.ndarray, ...]

    def __post_init__(self):
        ops = tuple(np.asarray(k, dtype=complex) for k in self.kraus)
        if not ops:
            raise ValueError("a channel needs at least one Kraus operator")
        shape = ops[0].shape
        if any(k.shape != shape for k in ops) or shape[0] != shape[1]:
            raise ValueError("Kraus operators must be square and equally sized")
        total = sum(dagger(k) @ k for k in ops)
        if not np.allclose(total, np.eye(shape[0]), atol=ATOL):
            raise ValueError("Kraus operators are not trace preserving")
        object.__setattr__(self, "kraus", ops)

    @property
    def dim(self) -> int:
        return self.kraus[0].shape[0]

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        return apply_channel(rho, self)

    def then(self, other: "Channel") -> "Channel":
        """The channel applying ``self`` first and ``other`` second."""
        return Channel(tuple(b @ a for a in self.kraus for b in other.kraus))

    def superoperator(self) -> np.ndarray:
        """Row-major superoperator: ``vec(E(rho)) = S @ vec(rho)``."""
        return sum(np.kron(k, k.conj()) for k in self.kraus)

    def choi(self) -> np.ndarray:
        return choi_from_superoperator(self.superoperator())

    def is_identity(self) -> bool:
        return np.allclose(self.superoperator(), np.eye(self.dim**2), atol=ATOL)


def identity_channel(dim: int = 2) -> Channel:
    return Channel((np.eye(dim, dtype=complex),))


def unitary_channel(u: np.ndarray) -> Channel:
    return Channel((np.asarray(u, dtype=complex),))


def depolarizing(lam: float, n_qubits: int = 1) -> Channel:
    """``rho -> lam * rho + (1 - lam) * I / d`` as a Pauli-Kraus channel.

    Valid (completely positive) for ``-1/(d^2 - 1) <= lam <= 1``; only
    ``[0, 1]`` is accepted here.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"depolarizing parameter {lam} outside [0, 1]")
    d = 2**n_qubits
    paulis = [np.eye(1, dtype=complex)]
    for _ in range(n_qubits):
        paulis = [np.kron(a, b) for a in paulis for b in PAULIS]
    w_other = (1 - lam) / d**2
    w_id = lam + w_other
    ops = [np.sqrt(w_id) * paulis[0]]
    ops += [np.sqrt(w_other) * p for p in paulis[1:] if w_other > 0]
    return Channel(tuple(ops))


def apply_channel(rho: np.ndarray, ch: Channel) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (ch.dim, ch.dim):
        raise ValueError(f"state shape {rho.shape} does not match channel dim {ch.dim}")
    out = np.zeros_like(rho)
    for k in ch.kraus:
        out += k @ rho @ dagger(k)
    return out


def choi_from_superoperator(s: np.ndarray) -> np.ndarray:
    """``J = sum_ij |i><j| (x) E(|i><j|)`` for a row-major superoperator."""
    d = int(round(np.sqrt(s.shape[0])))
    # S[(a,b),(i,j)] = E(|i><j|)[a,b]  ->  J[(i,a),(j,b)]
    return s.reshape(d, d, d, d).transpose(2, 0, 3, 1).reshape(d * d, d * d)


def random_pure_state(rng: np.random.Generator, dim: int = 2) -> np.ndarray:
    """Haar-random ket from a normalised complex Gaussian vector."""
    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return v / np.linalg.norm(v)


def random_pure_states(rng: np.random.Generator, n: int, dim: int = 2) -> np.ndarray:
    v = rng.normal(size=(n, dim)) + 1j * rng.normal(size=(n, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def random_unitary(rng: np.random.Generator, dim: int = 2) -> np.ndarray:
    """Haar-random unitary via QR with the phase fix of Mezzadri."""
    z = (rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))


def random_density_matrix(rng: np.random.Generator, dim: int = 2, rank: int | None = None) -> np.ndarray:
    rank = dim if rank is None else rank
    g = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    rho = g @ dagger(g)
    return rho / np.trace(rho)


def random_channel(rng: np.random.Generator, dim: int = 2, n_kraus: int = 3) -> Channel:
    """Random CPTP map from a Haar isometry into ``dim * n_kraus``."""
    v = random_unitary(rng, dim * n_kraus)[:, :dim]
    return Channel(tuple(v[i * dim:(i + 1) * dim] for i in range(n_kraus)))


def haar_average_fidelity_mc(
    ideal: Channel,
    noisy: Channel,
    samples: int,
    seed: int | np.random.Generator | None = None,
    return_error: bool = False,
):
    """Monte Carlo estimate of the Haar-averaged fidelity of ``noisy``
    against ``ideal`` over random pure inputs.

    With ``return_error`` the standard error of the mean is returned too,
    as ``(mean, stderr)``.
    """
    if ideal.dim != 2 or noisy.dim != 2:
        raise ValueError("only single-qubit channels are supported")
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    kets = random_pure_states(rng, samples)
    rhos = np.einsum("ni,nj->nij", kets, kets.conj())
    a = _apply_batch(rhos, ideal)
    b = _apply_batch(rhos, noisy)
    vals = _batch_fidelity(a, b)
    mean = float(vals.mean())
    if not return_error:
        return mean
    err = vals.std(ddof=1) / np.sqrt(samples) if samples > 1 else 0.0
    return mean, float(err)


def _apply_batch(rhos: np.ndarray, ch: Channel) -> np.ndarray:
    out = np.zeros_like(rhos)
    for k in ch.kraus:
        out += k @ rhos @ dagger(k)
    return out


def _batch_fidelity(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Uhlmann fidelity of stacks of 2x2 density matrices.

    For qubits ``F = Tr(a b) + 2 sqrt(det a det b)``.
    """
    tr = np.real(np.einsum("nij,nji->n", a, b))
    det = np.clip(np.real(np.linalg.det(a) * np.linalg.det(b)), 0.0, None)
    return np.clip(tr + 2 * np.sqrt(det), 0.0, 1.0)


def haar_twirl_second_moment(rho: np.ndarray) -> np.ndarray:
    """Haar average of ``(U (x) U) rho (U (x) U)^dag`` for one qubit pair.

    By Schur-Weyl duality the result is ``alpha I + beta SWAP`` with the
    two coefficients fixed by ``Tr rho`` and ``Tr(SWAP rho)``.
    """
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (4, 4):
        raise ValueError(f"expected a 4x4 two-qubit operator, got {rho.shape}")
    d = 2
    tr = np.trace(rho)
    tr_s = np.trace(SWAP @ rho)
    alpha = (tr - tr_s / d) / (d * d - 1)
    beta = (tr_s - tr / d) / (d * d - 1)
    return alpha * np.eye(4) + beta * SWAP


def haar_twirl_superoperator() -> np.ndarray:
    """Superoperator (16x16, row-major) of :func:`haar_twirl_second_moment`."""
    cols = []
    for idx in range(16):
        e = np.zeros(16, dtype=complex)
        e[idx] = 1
        cols.append(haar_twirl_second_moment(e.reshape(4, 4)).reshape(16))
    return np.array(cols).T


def haar_average_from_process_fidelity(fp: float, d: int = 2) -> float:
    """Average gate fidelity from the root process fidelity ``fp``:
    ``(d fp^2 + 1) / (d + 1)``."""
    if not -EXACT_ATOL <= fp <= 1 + EXACT_ATOL:
        raise ValueError(f"process fidelity {fp} outside [0, 1]")
    fp = min(max(fp, 0.0), 1.0)
    return (d * fp * fp + 1) / (d + 1)
