"""Measurement patterns on linear cluster states and their noisy simulation.

Measuring qubit ``i`` of a linear cluster in the basis
``|+-_phi> = (|0> +- e^{-i phi}|1>)/sqrt(2)`` with outcome ``m`` applies
``X^m H Rz(phi)`` to the logical state, which then lives on qubit ``i+1``.
Because CZs between neighbours commute, the chain can be simulated exactly
with a two-qubit window: attach a fresh ``|+>``, entangle, measure the older
qubit, repeat. Each such step is a fixed linear map on the 2x2 logical
state, so branching over outcomes is just a stack of 4-vectors doubling at
every measurement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .noise import NOISELESS, NoiseModel
from .qcore import CZ, H, I2, KET_PLUS, T, X, Y, Z, dagger, projector, rz

DEFAULT_BRANCH_LIMIT = 2**20
SHOT_CHUNK = 2**16


class FrameUndefined(ValueError):
    """An X byproduct met a measurement angle it does not commute with."""


class BranchLimitError(RuntimeError):
    """Exact enumeration would exceed the configured branch limit."""


@dataclass(frozen=True)
class MeasurementPattern:
    """Fixed XY-plane measurement angles implementing one block of a chain.

    ``ideal_unitary`` is ``None`` for design blocks, whose purpose is to
    produce a random unitary rather than a particular gate.
    """

    gate_id: str
    angles: tuple[float, ...]
    ideal_unitary: np.ndarray | None = None

    @property
    def n_measured(self) -> int:
        return len(self.angles)

    @property
    def chain_length(self) -> int:
        return len(self.angles) + 1

    @property
    def is_design(self) -> bool:
        return self.ideal_unitary is None

    @property
    def correctable(self) -> bool:
        """Whether fixed angles plus a final Pauli correction realise the
        gate for every outcome string."""
        return not self.is_design and frame_valid(self.angles)


_PATTERNS = {
    "H2": ((0.0,), H),
    "T3": ((math.pi / 4, 0.0), T),
    "I3": ((0.0, 0.0), I2),
    "H4": ((0.0, 0.0, 0.0), H),
    "T5": ((math.pi / 4, 0.0, 0.0, 0.0), T),
    "H6": ((0.0,) * 5, H),
    "T7": ((math.pi / 4,) + (0.0,) * 5, T),
    "D5": ((0.0, math.pi / 4, math.pi / 4, 0.0), None),
    "D6": ((0.0, math.pi / 4, math.acos(math.sqrt(1 / 3)), math.pi / 4, 0.0), None),
}
GATE_IDS = ("H2", "T3", "H4", "T5", "H6", "T7")
DESIGN_IDS = ("D5", "D6")


def build_pattern(gate_id: str) -> MeasurementPattern:
    try:
        angles, ideal = _PATTERNS[gate_id]
    except KeyError:
        raise ValueError(f"unknown gate id {gate_id!r}; known: {sorted(_PATTERNS)}") from None
    return MeasurementPattern(gate_id, angles, None if ideal is None else ideal.copy())


def measurement_unitary(phi: float, m: int) -> np.ndarray:
    u = H @ rz(phi)
    return X @ u if m else u


def sequence_unitary(angles: Sequence[float], outcomes: Sequence[int]) -> np.ndarray:
    """``U_{m_n}(phi_n) ... U_{m_1}(phi_1)`` with ``U_m(phi) = X^m H Rz(phi)``."""
    if len(angles) != len(outcomes):
        raise ValueError(f"{len(angles)} angles but {len(outcomes)} outcomes")
    u = np.eye(2, dtype=complex)
    for phi, m in zip(angles, outcomes):
        u = measurement_unitary(phi, m) @ u
    return u


@dataclass(frozen=True)
class PauliFrame:
    """The Pauli ``i^phase X^x Z^z``."""

    x: int = 0
    z: int = 0
    phase: int = 0

    def __mul__(self, other: "PauliFrame") -> "PauliFrame":
        # Z^b X^c = (-1)^{bc} X^c Z^b
        return PauliFrame(
            self.x ^ other.x, self.z ^ other.z,
            (self.phase + other.phase + 2 * (self.z & other.x)) % 4,
        )

    @property
    def matrix(self) -> np.ndarray:
        m = np.linalg.matrix_power(X, self.x) @ np.linalg.matrix_power(Z, self.z)
        return (1j**self.phase) * m

    @property
    def code(self) -> int:
        return self.x | (self.z << 1)

    @property
    def label(self) -> str:
        return "IXZY"[self.code]

    def canonical(self) -> "PauliFrame":
        """Hermitian representative: ``I``, ``X``, ``Z`` or ``Y = iXZ``."""
        return PauliFrame(self.x, self.z, 1 if self.x and self.z else 0)

    @classmethod
    def from_code(cls, code: int) -> "PauliFrame":
        return cls(code & 1, (code >> 1) & 1).canonical()

    def __str__(self) -> str:
        return self.label


_FRAME_MATRICES = (I2, X, Z, Y)


def _commutes_with_x(phi: float) -> bool:
    """Rz(phi) commutes with X up to phase only for phi in {0, pi} mod 2 pi."""
    r = math.remainder(phi, math.pi)
    return abs(r) < 1e-12


def frame_valid(angles: Sequence[float]) -> bool:
    """Only the first measurement can precede an X byproduct, so every later
    angle has to commute with X."""
    return all(_commutes_with_x(phi) for phi in angles[1:])


def byproduct(pattern: MeasurementPattern, outcomes: Sequence[int]) -> PauliFrame:
    """Pauli ``P`` with ``sequence_unitary(angles, outcomes) ~ P @ ideal``.

    The frame is pushed forward one measurement at a time: ``Rz`` passes
    ``Z`` freely and ``X`` only at angles 0 or pi, ``H`` swaps the X and Z
    parts, and each outcome multiplies in ``X^m`` on the left.
    """
    if len(outcomes) != pattern.n_measured:
        raise ValueError(f"{pattern.gate_id} measures {pattern.n_measured} qubits, got {len(outcomes)} outcomes")
    x = z = 0
    for phi, m in zip(pattern.angles, outcomes):
        if x and not _commutes_with_x(phi):
            raise FrameUndefined(f"{pattern.gate_id}: X byproduct meets angle {phi:.6g}")
        x, z = z ^ int(m), x
    return PauliFrame(x, z).canonical()


@dataclass(frozen=True)
class BranchRecord:
    outcomes: tuple[int, ...]
    probability: float | None
    shots: int | None
    final_state: np.ndarray
    implemented_unitary: np.ndarray
    byproducts: tuple[PauliFrame | None, ...]

    @property
    def byproduct(self) -> PauliFrame | None:
        """Byproduct of the last gate block, if any."""
        for b in reversed(self.byproducts):
            if b is not None:
                return b
        return None


@dataclass
class Branches:
    """All branches (exact) or all shots (sampled) of one chain execution.

    Arrays are indexed by branch. ``outcomes`` packs recorded bits
    little-endian, measured qubit ``i`` at bit ``i``; in exact mode the
    branch index equals this integer. ``frames[:, b]`` is the byproduct
    code (``x | z << 1``) of block ``b``, or -1 where undefined.
    """

    blocks: tuple[MeasurementPattern, ...]
    outcomes: np.ndarray
    weights: np.ndarray
    states: np.ndarray
    unitaries: np.ndarray
    frames: np.ndarray
    exact: bool
    adaptive: bool = False

    def __len__(self) -> int:
        return len(self.outcomes)

    @property
    def n_measured(self) -> int:
        return sum(b.n_measured for b in self.blocks)

    @property
    def probabilities(self) -> np.ndarray:
        return self.weights / self.weights.sum()

    def outcome_bits(self) -> np.ndarray:
        """``(branches, n_measured)`` array of 0/1 outcomes."""
        shifts = np.arange(self.n_measured, dtype=np.int64)
        return ((self.outcomes[:, None] >> shifts) & 1).astype(np.int8)

    def __getitem__(self, i: int) -> BranchRecord:
        if not -len(self) <= i < len(self):
            raise IndexError(i)
        word = int(self.outcomes[i])
        bits = tuple((word >> k) & 1 for k in range(self.n_measured))
        frames = tuple(None if c < 0 else PauliFrame.from_code(int(c)) for c in self.frames[i])
        return BranchRecord(
            outcomes=bits,
            probability=float(self.weights[i]) if self.exact else None,
            shots=None if self.exact else int(self.weights[i]),
            final_state=self.states[i].copy(),
            implemented_unitary=self.unitaries[i].copy(),
            byproducts=frames,
        )

    def __iter__(self) -> Iterator[BranchRecord]:
        for i in range(len(self)):
            yield self[i]


def _plus() -> np.ndarray:
    return projector(KET_PLUS)


def _kraus_superop(kraus: Sequence[np.ndarray]) -> np.ndarray:
    return sum(np.kron(k, k.conj()) for k in kraus)


def step_superoperators(
    phi: float, cz_channel=None, meas_channel=None, readout: float = 0.0, entangle_channel=None
) -> np.ndarray:
    """Linear maps taking the logical qubit's (unnormalised) state to the
    next qubit's state for recorded outcomes 0 and 1.

    Returns a ``(2, 4, 4)`` array acting on row-major ``vec(rho)``. The
    window operations are: optional channel on the logical qubit, attach
    ``|+>``, CZ, optional two-qubit channel,
    optional channel on the qubit about to be measured, projective
    measurement at ``phi``, then the readout flip on the recorded bit.
    """
    bras = [
        np.array([1, np.exp(1j * phi)], dtype=complex) / np.sqrt(2),
        np.array([1, -np.exp(1j * phi)], dtype=complex) / np.sqrt(2),
    ]
    plus = _plus()
    out = np.zeros((2, 4, 4), dtype=complex)
    for col in range(4):
        unit = np.zeros(4, dtype=complex)
        unit[col] = 1
        logical = unit.reshape(2, 2)
        if entangle_channel is not None:
            logical = sum(k @ logical @ dagger(k) for k in entangle_channel.kraus)
        sigma = np.kron(logical, plus)
        sigma = CZ @ sigma @ CZ
        if cz_channel is not None:
            sigma = sum(k @ sigma @ dagger(k) for k in cz_channel.kraus)
        if meas_channel is not None:
            ks = [np.kron(k, I2) for k in meas_channel.kraus]
            sigma = sum(k @ sigma @ dagger(k) for k in ks)
        s4 = sigma.reshape(2, 2, 2, 2)
        for m, bra in enumerate(bras):
            # <bra|_0 sigma |bra>_0, leaving qubit 1
            reduced = np.einsum("a,abcd,c->bd", bra, s4, bra.conj())
            out[m, :, col] = reduced.reshape(4)
    if readout:
        out = np.stack([(1 - readout) * out[0] + readout * out[1],
                        (1 - readout) * out[1] + readout * out[0]])
    return out


def _conj_superop(u: np.ndarray) -> np.ndarray:
    return np.kron(u, u.conj())


def _apply_superop(vecs: np.ndarray, s: np.ndarray) -> np.ndarray:
    return vecs @ s.T


@dataclass
class _Step:
    pos: int
    block: int
    phi: float
    last_in_block: bool


def _steps(blocks: Sequence[MeasurementPattern]) -> list[_Step]:
    steps, pos = [], 0
    for b, block in enumerate(blocks):
        for k, phi in enumerate(block.angles):
            steps.append(_Step(pos, b, phi, k == block.n_measured - 1))
            pos += 1
    return steps


class _Engine:
    """Shared per-step bookkeeping for exact and sampled execution."""

    def __init__(self, blocks, noise: NoiseModel, adaptive: bool):
        self.blocks = tuple(blocks)
        self.noise = noise
        self.adaptive = adaptive
        self.steps = _steps(self.blocks)
        n = len(self.steps)
        noise.check_chain(n + 1)
        self._ops = []
        for st in self.steps:
            args = (noise.cz(st.pos), noise.measure(st.pos), noise.readout(st.pos), noise.entangle(st.pos))
            plus = step_superoperators(st.phi, *args)
            minus = step_superoperators(-st.phi, *args) if adaptive else plus
            u = np.stack([measurement_unitary(st.phi, m) for m in (0, 1)])
            um = np.stack([measurement_unitary(-st.phi, m) for m in (0, 1)]) if adaptive else u
            self._ops.append((plus, minus, u, um))
        gate = noise.after_gate_block
        self.gate_superop = None if gate is None else gate.superoperator()
        finals = [c for c in (noise.entangle(n), noise.measure(n)) if c is not None]
        self.final_superop = None
        for c in finals:
            s = c.superoperator()
            self.final_superop = s if self.final_superop is None else s @ self.final_superop
        self.track = [not b.is_design and (adaptive or frame_valid(b.angles)) for b in self.blocks]

    def _flip(self, i, x):
        block = self.blocks[self.steps[i].block]
        if self.adaptive and not block.is_design:
            return x == 1
        return np.zeros(len(x), dtype=bool)

    def propagate(self, i, vecs, x, m):
        """Unnormalised next-qubit states for outcome array ``m``."""
        plus, minus, _, _ = self._ops[i]
        flip = self._flip(i, x)
        out = np.empty_like(vecs)
        for mm in (0, 1):
            for f, ops in ((False, plus), (True, minus)):
                sel = (m == mm) & (flip == f)
                if sel.any():
                    out[sel] = _apply_superop(vecs[sel], ops[mm])
        return out

    def advance(self, i, us, x, z, valid, m):
        """Implemented unitary and byproduct frame after step ``i``."""
        st = self.steps[i]
        _, _, u, um = self._ops[i]
        flip = self._flip(i, x)
        out = np.empty_like(us)
        for mm in (0, 1):
            for f, ops in ((False, u), (True, um)):
                sel = (m == mm) & (flip == f)
                if sel.any():
                    out[sel] = ops[mm] @ us[sel]
        if not self.blocks[st.block].is_design:
            if not self.adaptive and not _commutes_with_x(st.phi):
                valid = valid & (x == 0)
            x, z = z ^ m.astype(np.int8), x
        return out, x, z, valid

    def end_of_block(self, i, vecs, us, x, z, valid, frames):
        st = self.steps[i]
        block = self.blocks[st.block]
        if block.is_design:
            return vecs, us, x, z, valid
        if self.gate_superop is not None:
            vecs = _apply_superop(vecs, self.gate_superop)
        code = (x | (z << 1)).astype(np.int8)
        if self.track[st.block]:
            frames[:, st.block] = np.where(valid, code, -1)
        if self.adaptive:
            # Pauli correction on the output qubit; frames are self-inverse up to phase
            for c, p in enumerate(_FRAME_MATRICES):
                sel = code == c
                if c and sel.any():
                    vecs[sel] = _apply_superop(vecs[sel], _conj_superop(p))
                    us[sel] = p @ us[sel]
        x = np.zeros_like(x)
        z = np.zeros_like(z)
        valid = np.ones_like(valid)
        return vecs, us, x, z, valid

    def finish(self, vecs):
        if self.final_superop is not None:
            vecs = _apply_superop(vecs, self.final_superop)
        return vecs


def simulate_chain(
    blocks: Sequence[MeasurementPattern],
    input_state: np.ndarray,
    noise: NoiseModel | None = None,
    mode: str = "exact",
    shots: int | None = None,
    seed: int | None = None,
    branch_limit: int = DEFAULT_BRANCH_LIMIT,
    adaptive: bool = False,
) -> Branches:
    """Run the chain made of ``blocks`` on a logical ``input_state``.

    ``mode="exact"`` enumerates every outcome string with its probability;
    ``mode="sampled"`` draws ``shots`` outcome strings. With ``adaptive``
    the angles inside gate blocks are sign-flipped by the running X
    byproduct and the byproduct is corrected on the output at the end of
    each gate block.

    Final states are the state of the last qubit after that position's
    pre-entangle and pre-measurement channels, without any readout error.
    """
    noise = NOISELESS if noise is None else noise
    rho = np.asarray(input_state, dtype=complex)
    if rho.shape != (2, 2):
        raise ValueError("input state must be a single-qubit density matrix")
    eng = _Engine(blocks, noise, adaptive)
    if mode == "exact":
        return _run_exact(eng, rho, branch_limit)
    if mode == "sampled":
        if shots is None or shots < 1:
            raise ValueError("sampled mode needs shots >= 1")
        return _run_sampled(eng, rho, shots, seed)
    raise ValueError(f"unknown mode {mode!r}")


def _run_exact(eng: _Engine, rho: np.ndarray, branch_limit: int) -> Branches:
    n = len(eng.steps)
    if 2**n > branch_limit:
        raise BranchLimitError(f"{2**n} branches exceed the limit of {branch_limit}")
    vecs = rho.reshape(1, 4).copy()
    us = np.eye(2, dtype=complex)[None].copy()
    x = np.zeros(1, dtype=np.int8)
    z = np.zeros(1, dtype=np.int8)
    valid = np.ones(1, dtype=bool)
    frames = np.full((1, len(eng.blocks)), -1, dtype=np.int8)
    for i in range(n):
        b = len(vecs)
        m = np.repeat(np.array([0, 1], dtype=np.int64), b)
        # new index = old index + m * 2^i keeps little-endian ordering
        vecs, us = np.tile(vecs, (2, 1)), np.tile(us, (2, 1, 1))
        x, z, valid = np.tile(x, 2), np.tile(z, 2), np.tile(valid, 2)
        vecs = eng.propagate(i, vecs, x, m)
        us, x, z, valid = eng.advance(i, us, x, z, valid, m)
        frames = np.tile(frames, (2, 1))
        if eng.steps[i].last_in_block:
            vecs, us, x, z, valid = eng.end_of_block(i, vecs, us, x, z, valid, frames)
    vecs = eng.finish(vecs)
    states = vecs.reshape(-1, 2, 2)
    probs = np.real(np.trace(states, axis1=1, axis2=2))
    safe = np.where(probs > 1e-300, probs, 1.0)
    states = states / safe[:, None, None]
    states[probs <= 1e-300] = 0.5 * np.eye(2)
    return Branches(
        blocks=eng.blocks, outcomes=np.arange(2**n, dtype=np.int64),
        weights=np.clip(probs, 0.0, None), states=states, unitaries=us,
        frames=frames, exact=True, adaptive=eng.adaptive,
    )


def _run_sampled(eng: _Engine, rho: np.ndarray, shots: int, seed) -> Branches:
    n = len(eng.steps)
    parts = []
    root = np.random.SeedSequence(seed)
    for c, start in enumerate(range(0, shots, SHOT_CHUNK)):
        size = min(SHOT_CHUNK, shots - start)
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(root.entropy, spawn_key=(c,))))
        vecs = np.tile(rho.reshape(1, 4), (size, 1))
        us = np.tile(np.eye(2, dtype=complex), (size, 1, 1))
        x = np.zeros(size, dtype=np.int8)
        z = np.zeros(size, dtype=np.int8)
        valid = np.ones(size, dtype=bool)
        frames = np.full((size, len(eng.blocks)), -1, dtype=np.int8)
        outcomes = np.zeros(size, dtype=np.int64)
        for i in range(n):
            u = rng.random(size)
            v0 = eng.propagate(i, vecs, x, np.zeros(size, dtype=np.int64))
            v1 = eng.propagate(i, vecs, x, np.ones(size, dtype=np.int64))
            p0 = np.real(v0[:, 0] + v0[:, 3])
            p1 = np.real(v1[:, 0] + v1[:, 3])
            m = (u * (p0 + p1) >= p0).astype(np.int64)
            vecs = np.where(m[:, None] == 1, v1, v0)
            tr = np.where(m == 1, p1, p0)
            vecs = vecs / np.where(tr > 0, tr, 1.0)[:, None]
            us, x, z, valid = eng.advance(i, us, x, z, valid, m)
            outcomes |= m << i
            if eng.steps[i].last_in_block:
                vecs, us, x, z, valid = eng.end_of_block(i, vecs, us, x, z, valid, frames)
        vecs = eng.finish(vecs)
        parts.append((outcomes, vecs, us, frames))
    outcomes = np.concatenate([p[0] for p in parts])
    states = np.concatenate([p[1] for p in parts]).reshape(-1, 2, 2)
    return Branches(
        blocks=eng.blocks, outcomes=outcomes, weights=np.ones(shots),
        states=states, unitaries=np.concatenate([p[2] for p in parts]),
        frames=np.concatenate([p[3] for p in parts]), exact=False,
        adaptive=eng.adaptive,
    )


def adaptive_execute(
    pattern: MeasurementPattern,
    input_state: np.ndarray,
    noise: NoiseModel | None = None,
    seed: int | None = None,
) -> tuple[np.ndarray, PauliFrame]:
    """Deterministic (feed-forward) execution of one gate pattern.

    Samples one outcome path, returns the corrected output state and the
    Pauli correction that was applied to it.
    """
    run = simulate_chain([pattern], input_state, noise, mode="sampled", shots=1, seed=seed, adaptive=True)
    rec = run[0]
    return rec.final_state, rec.byproducts[0] or PauliFrame()
