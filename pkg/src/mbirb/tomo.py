"""Single-qubit state tomography, projection onto physical states, and
four-probe process tomography in the chi representation.

Chi matrices use the operator basis ``{I, X, -iY, Z}``: a channel
``E(rho) = sum_mn chi_mn E_m rho E_n^dag``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .mbqc import MeasurementPattern, simulate_chain
from .noise import NoiseModel
from .qcore import (
    ATOL,
    KET0,
    KET1,
    KET_PLUS,
    KET_PLUS_Y,
    PSD_ATOL,
    I2,
    X,
    Y,
    Z,
    Channel,
    NonPhysicalError,
    clean_eigenvalues,
    haar_average_from_process_fidelity,
    projector,
    psd_sqrt,
)

BASES = ("X", "Y", "Z")
_BASIS_PAULI = {"X": X, "Y": Y, "Z": Z}
CHI_BASIS = np.array([I2, X, -1j * Y, Z])
CHI_LABELS = ("I", "X", "-iY", "Z")
PROBES = ("0", "1", "+", "+i")
PROBE_STATES = tuple(projector(k) for k in (KET0, KET1, KET_PLUS, KET_PLUS_Y))
DEFAULT_TOMOGRAPHY_SHOTS = 8192
_FRAME_LABELS = "IXZY"
_FRAME_MATRICES = (I2, X, Z, Y)


@dataclass(frozen=True)
class TomographyCounts:
    """Outcome counts of one Pauli-basis measurement; ``n0`` counts the +1
    eigenstate."""

    basis: str
    counts: tuple[int, int]

    def __post_init__(self):
        if self.basis not in BASES:
            raise ValueError(f"basis must be one of {BASES}, got {self.basis!r}")
        n0, n1 = self.counts
        if n0 < 0 or n1 < 0 or n0 + n1 == 0:
            raise ValueError(f"counts must be non-negative with a positive total, got {self.counts}")

    @property
    def expectation(self) -> float:
        n0, n1 = self.counts
        return (n0 - n1) / (n0 + n1)


def _by_basis(counts: Sequence[TomographyCounts] | Mapping[str, TomographyCounts]) -> dict:
    items = counts.values() if isinstance(counts, Mapping) else counts
    table = {}
    for c in items:
        if c.basis in table:
            raise ValueError(f"basis {c.basis} given twice")
        table[c.basis] = c
    missing = [b for b in BASES if b not in table]
    if missing:
        raise ValueError(f"missing tomography basis {missing}")
    return table


def state_tomography(counts) -> np.ndarray:
    """Linear-inversion estimate ``(I + <X>X + <Y>Y + <Z>Z) / 2``; may be
    unphysical."""
    table = _by_basis(counts)
    rho = I2.copy()
    for b in BASES:
        rho = rho + table[b].expectation * _BASIS_PAULI[b]
    return rho / 2


def bloch_expectations(rho: np.ndarray) -> np.ndarray:
    return np.array([np.real(np.trace(_BASIS_PAULI[b] @ rho)) for b in BASES])


def sample_counts(
    rho: np.ndarray, shots: int, rng: np.random.Generator, readout: float = 0.0
) -> list[TomographyCounts]:
    """Binomial counts for ``shots`` measurements in each Pauli basis, with
    a symmetric readout flip of probability ``readout``."""
    out = []
    for b, e in zip(BASES, bloch_expectations(rho)):
        q = (1 + (1 - 2 * readout) * e) / 2
        n0 = int(rng.binomial(shots, min(max(q, 0.0), 1.0)))
        out.append(TomographyCounts(b, (n0, shots - n0)))
    return out


def expected_state(rho: np.ndarray, readout: float = 0.0) -> np.ndarray:
    """Infinite-shot linear-inversion estimate under readout error."""
    e = (1 - 2 * readout) * bloch_expectations(rho)
    return (I2 + sum(v * _BASIS_PAULI[b] for v, b in zip(e, BASES))) / 2


def project_physical(rho: np.ndarray) -> np.ndarray:
    """Frobenius-nearest unit-trace positive semidefinite matrix.

    Keeps the eigenvectors and replaces the eigenvalues by their Euclidean
    projection onto the probability simplex: shift all by a common amount
    and clip at zero, choosing the shift that restores unit trace. The
    input is symmetrised first.
    """
    rho = np.asarray(rho, dtype=complex)
    vals, vecs = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    desc = np.sort(vals)[::-1]
    csum = np.cumsum(desc)
    k = np.arange(1, len(desc) + 1)
    # largest k whose shifted k-th eigenvalue stays positive
    r = np.nonzero(desc - (csum - 1) / k > 0)[0][-1]
    shift = (csum[r] - 1) / (r + 1)
    lam = np.clip(vals - shift, 0.0, None)
    return (vecs * lam) @ vecs.conj().T


def chi_from_choi(j: np.ndarray) -> np.ndarray:
    """``chi_mn = <<E_m| J |E_n>> / 4`` for ``J = sum_ij |i><j| (x) E(|i><j|)``."""
    v = np.array([e.T.reshape(-1) for e in CHI_BASIS]).T
    return v.conj().T @ j @ v / 4


def process_tomography(outputs: Sequence[np.ndarray]) -> np.ndarray:
    """Chi matrix from the channel's outputs on ``|0>, |1>, |+>, |+i>``."""
    if len(outputs) != 4:
        raise ValueError("need outputs for the four probes |0>, |1>, |+>, |+i>")
    r0, r1, rp, ry = (np.asarray(o, dtype=complex) for o in outputs)
    e01 = rp + 1j * ry - (1 + 1j) / 2 * (r0 + r1)
    blocks = {(0, 0): r0, (1, 1): r1, (0, 1): e01, (1, 0): e01.conj().T}
    j = np.zeros((4, 4), dtype=complex)
    for (a, b), out in blocks.items():
        j[2 * a:2 * a + 2, 2 * b:2 * b + 2] = out
    return chi_from_choi(j)


def chi_of_channel(ch: Channel) -> np.ndarray:
    return chi_from_choi(ch.choi())


def chi_of_unitary(u: np.ndarray) -> np.ndarray:
    return chi_from_choi(Channel((np.asarray(u, dtype=complex),)).choi())


def average_chi(chis: Sequence[np.ndarray], weights: Sequence[float] | None = None) -> np.ndarray:
    """Entrywise (optionally weighted) mean of chi matrices."""
    if len(chis) == 0:
        raise ValueError("cannot average an empty list of chi matrices")
    w = np.ones(len(chis)) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (len(chis),) or np.any(w < 0) or w.sum() <= 0:
        raise ValueError("weights must be non-negative, one per chi, with positive sum")
    return np.einsum("k,kij->ij", w / w.sum(), np.asarray(chis, dtype=complex))


def _check_physical_chi(chi: np.ndarray, name: str) -> None:
    if not np.allclose(chi, chi.conj().T, atol=ATOL):
        raise NonPhysicalError(f"{name} is not Hermitian")
    if np.linalg.eigvalsh(0.5 * (chi + chi.conj().T))[0] < -PSD_ATOL:
        raise NonPhysicalError(f"{name} is not positive semidefinite")
    if abs(np.trace(chi) - 1) > 1e-8:
        raise NonPhysicalError(f"{name} has trace {np.trace(chi).real:.6g}, expected 1")


def process_fidelity(chi_ideal: np.ndarray, chi_exp: np.ndarray) -> float:
    """``Tr sqrt(sqrt(chi) chi_exp sqrt(chi))`` for physical chi matrices."""
    _check_physical_chi(chi_ideal, "ideal chi")
    _check_physical_chi(chi_exp, "experimental chi")
    s = psd_sqrt(chi_ideal)
    inner = s @ chi_exp @ s
    vals = clean_eigenvalues(np.linalg.eigvalsh(0.5 * (inner + inner.conj().T)))
    return float(min(np.sum(np.sqrt(vals)), 1.0))


def chi_to_pairs(chi: np.ndarray) -> list[list[float]]:
    """Row-major ``[re, im]`` pairs for JSON output."""
    return [[float(v.real), float(v.imag)] for v in np.asarray(chi).reshape(-1)]


@dataclass
class QptReport:
    gate_id: str
    offset: int
    shots: int | None
    byproduct_chis: dict[str, np.ndarray]
    byproduct_weights: dict[str, float]
    average_chi: np.ndarray
    process_fidelity: float
    average_fidelity: float
    average_fidelity_sigma: float = 0.0
    resamples: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "gate_id": self.gate_id,
            "offset": self.offset,
            "shots_per_basis": self.shots,
            "chi_basis": list(CHI_LABELS),
            "byproducts": {
                k: {"weight": self.byproduct_weights[k], "chi": chi_to_pairs(v)}
                for k, v in sorted(self.byproduct_chis.items())
            },
            "average_chi": chi_to_pairs(self.average_chi),
            "process_fidelity": self.process_fidelity,
            "average_fidelity": self.average_fidelity,
            "average_fidelity_sigma": self.average_fidelity_sigma,
            "resamples": self.resamples,
            **self.extra,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _byproduct_states(pattern: MeasurementPattern, noise: NoiseModel | None, probe: np.ndarray):
    """Byproduct-corrected output state and probability mass per byproduct."""
    run = simulate_chain([pattern], probe, noise, mode="exact")
    codes = run.frames[:, 0]
    if np.any(codes < 0):
        raise ValueError(f"{pattern.gate_id} has outcomes with an undefined byproduct")
    out = {}
    for c in np.unique(codes):
        sel = codes == c
        w = run.weights[sel]
        mass = float(w.sum())
        if mass <= 0:
            continue
        rho = np.einsum("b,bij->ij", w, run.states[sel]) / mass
        p = _FRAME_MATRICES[int(c)]
        out[_FRAME_LABELS[int(c)]] = (p @ rho @ p.conj().T, mass)
    return out


def _chis_from_outputs(per_probe, byproducts, estimate, project: bool):
    chis = {}
    for b in byproducts:
        outs = [estimate(per_probe[k][b][0], per_probe[k][b][1]) for k in range(4)]
        if project:
            outs = [project_physical(o) for o in outs]
        chi = process_tomography(outs)
        chis[b] = project_physical(chi) if project else chi
    return chis


def run_qpt(
    pattern: MeasurementPattern,
    noise: NoiseModel | None = None,
    shots: int | None = DEFAULT_TOMOGRAPHY_SHOTS,
    seed: int | None = None,
    offset: int = 0,
    weighted: bool = False,
    resamples: int = 0,
    ideal_output: bool = False,
) -> QptReport:
    """Process tomography of a gate pattern without feed-forward.

    Each probe is run through the chain; outputs are grouped by byproduct,
    corrected classically, and reconstructed from ``shots`` measurements
    per basis (split over byproducts by their probability), or from exact
    expectations when ``shots`` is ``None``. One chi per byproduct is
    reconstructed and projected, then averaged (unweighted by default).
    ``resamples`` repeats the shot draw to estimate the spread of the
    Haar-averaged fidelity.

    With ``ideal_output`` the output qubit is read without its own
    single-qubit noise or readout error. Inside a longer chain that noise
    belongs to the next block, so the result isolates what the gate block
    itself contributes.
    """
    if pattern.is_design:
        raise ValueError("process tomography needs a gate pattern, not a design block")
    model = None if noise is None else noise.shifted(offset)
    if model is not None and ideal_output:
        model = model.without_qubit_noise(pattern.n_measured)
    per_probe = [_byproduct_states(pattern, model, probe) for probe in PROBE_STATES]
    byproducts = sorted(set.intersection(*(set(p) for p in per_probe)))
    readout = 0.0 if model is None else model.readout(pattern.n_measured)
    weights = {b: float(np.mean([p[b][1] for p in per_probe])) for b in byproducts}
    chi_ideal = chi_of_unitary(pattern.ideal_unitary)
    extra = {"ideal_output": bool(ideal_output)}

    def summarise(chis):
        w = [weights[b] for b in byproducts] if weighted else None
        avg = average_chi([chis[b] for b in byproducts], w)
        fp = process_fidelity(chi_ideal, avg)
        return avg, fp, haar_average_from_process_fidelity(fp)

    if shots is None:
        chis = _chis_from_outputs(per_probe, byproducts, lambda rho, mass: expected_state(rho, readout), True)
        avg, fp, fa = summarise(chis)
        return QptReport(pattern.gate_id, offset, None, chis, weights, avg, fp, fa, extra=extra)

    root = np.random.SeedSequence(seed)
    draws = []
    for r, child in enumerate(root.spawn(1 + max(resamples, 0))):
        rng = np.random.default_rng(child)

        def estimate(rho, mass, rng=rng):
            n = max(int(rng.binomial(shots, mass)), 1)
            return state_tomography(sample_counts(rho, n, rng, readout))

        chis = _chis_from_outputs(per_probe, byproducts, estimate, True)
        draws.append((chis, *summarise(chis)))
    chis, avg, fp, fa = draws[0]
    sigma = float(np.std([d[3] for d in draws[1:]], ddof=1)) if resamples > 1 else 0.0
    return QptReport(pattern.gate_id, offset, shots, chis, weights, avg, fp, fa, sigma, max(resamples, 0), extra)
