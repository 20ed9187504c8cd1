"""Calibration tables and the per-position noise models built from them.

A chain position ``i`` (0 = input qubit) maps to the ``i``-th entry of the
calibration table's qubit list, and the two-qubit channel for the pair
``(i, i + 1)`` is taken from the matching entry of the pair list.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .qcore import Channel, depolarizing

LOCATIONS = frozenset({"after_cz", "pre_measurement", "readout"})
SYNTHETIC_LOCATIONS = ("pre_entangle", "pre_measurement")
BUNDLED = {
    "hanoi": "hanoi.json",
    "brooklyn": "brooklyn.json",
}


class CalibrationError(ValueError):
    """Malformed or out-of-range calibration data."""


class NoiseLocationError(ValueError):
    """A chain position has no noise entry in the model."""


@dataclass(frozen=True)
class QubitCalibration:
    qubit: int
    t1_us: float
    t2_us: float
    sx_error: float
    readout_error: float


@dataclass(frozen=True)
class PairCalibration:
    a: int
    b: int
    cx_error: float


@dataclass(frozen=True)
class CalibrationTable:
    qubits: tuple[QubitCalibration, ...]
    pairs: tuple[PairCalibration, ...]

    def __len__(self) -> int:
        return len(self.qubits)

    def pair_error(self, a: int, b: int) -> float:
        for p in self.pairs:
            if {p.a, p.b} == {a, b}:
                return p.cx_error
        raise NoiseLocationError(f"no pair calibration for qubits {a}-{b}")


@dataclass(frozen=True)
class Durations:
    """Gate durations in nanoseconds; not part of the calibration tables."""

    cz_ns: float = 400.0
    measure_ns: float = 300.0


_QUBIT_FIELDS = {"qubit", "t1_us", "t2_us", "sx_error", "readout_error"}
_PAIR_FIELDS = {"a", "b", "cx_error"}


def _number(entry: Mapping, key: str, where: str) -> float:
    try:
        value = entry[key]
    except KeyError:
        raise CalibrationError(f"{where}: missing field {key!r}") from None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise CalibrationError(f"{where}.{key}: expected a number, got {value!r}")
    return float(value)


def _probability(entry: Mapping, key: str, where: str) -> float:
    value = _number(entry, key, where)
    if not 0.0 <= value <= 1.0:
        raise CalibrationError(f"{where}.{key}: {value} is not a probability")
    return value


def _check_fields(entry, allowed: set, where: str) -> None:
    if not isinstance(entry, dict):
        raise CalibrationError(f"{where}: expected an object")
    unknown = set(entry) - allowed
    if unknown:
        raise CalibrationError(f"{where}: unknown field(s) {sorted(unknown)}")


def parse_calibration(doc) -> CalibrationTable:
    """Validate an already-decoded calibration document."""
    _check_fields(doc, {"qubits", "pairs"}, "calibration")
    if "qubits" not in doc or "pairs" not in doc:
        raise CalibrationError("calibration: both 'qubits' and 'pairs' are required")
    raw_qubits, raw_pairs = doc["qubits"], doc["pairs"]
    if not isinstance(raw_qubits, list) or not raw_qubits:
        raise CalibrationError("calibration.qubits: must be a non-empty list")
    if not isinstance(raw_pairs, list):
        raise CalibrationError("calibration.pairs: must be a list")

    qubits = []
    for i, q in enumerate(raw_qubits):
        where = f"qubits[{i}]"
        _check_fields(q, _QUBIT_FIELDS, where)
        label = _number(q, "qubit", where)
        t1 = _number(q, "t1_us", where)
        t2 = _number(q, "t2_us", where)
        if t1 <= 0:
            raise CalibrationError(f"{where}.t1_us: must be > 0, got {t1}")
        if t2 <= 0:
            raise CalibrationError(f"{where}.t2_us: must be > 0, got {t2}")
        if t2 > 2 * t1:
            warnings.warn(f"{where}: T2={t2} exceeds 2*T1={2 * t1}; it will be clamped", stacklevel=2)
        qubits.append(QubitCalibration(
            qubit=int(label), t1_us=t1, t2_us=t2,
            sx_error=_probability(q, "sx_error", where),
            readout_error=_probability(q, "readout_error", where),
        ))
    pairs = []
    for i, p in enumerate(raw_pairs):
        where = f"pairs[{i}]"
        _check_fields(p, _PAIR_FIELDS, where)
        pairs.append(PairCalibration(
            a=int(_number(p, "a", where)), b=int(_number(p, "b", where)),
            cx_error=_probability(p, "cx_error", where),
        ))
    return CalibrationTable(tuple(qubits), tuple(pairs))


def load_calibration(path: str | Path) -> CalibrationTable:
    """Read a calibration JSON file.

    ``path`` may also be one of the bundled table names ``hanoi`` or
    ``brooklyn``.
    """
    if str(path) in BUNDLED:
        text = resources.files("mbirb.data").joinpath(BUNDLED[str(path)]).read_text()
        source = str(path)
    else:
        text = Path(path).read_text()
        source = str(path)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CalibrationError(f"{source}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    try:
        return parse_calibration(doc)
    except CalibrationError as exc:
        raise CalibrationError(f"{source}: {exc}") from None


def amplitude_damping(gamma: float) -> Channel:
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma={gamma} outside [0, 1]")
    k0 = np.array([[1, 0], [0, math.sqrt(1 - gamma)]], dtype=complex)
    k1 = np.array([[0, math.sqrt(gamma)], [0, 0]], dtype=complex)
    return Channel((k0, k1))


def phase_damping(coherence: float) -> Channel:
    """Scales off-diagonal entries by ``coherence`` and leaves populations."""
    if not 0.0 <= coherence <= 1.0:
        raise ValueError(f"coherence factor {coherence} outside [0, 1]")
    k0 = np.diag([1.0, coherence]).astype(complex)
    k1 = np.diag([0.0, math.sqrt(1 - coherence**2)]).astype(complex)
    return Channel((k0, k1))


def thermal_relaxation(t1_us: float, t2_us: float, duration_ns: float) -> Channel:
    """Idle relaxation towards ``|0>`` for ``duration_ns``.

    Populations relax with ``T1`` and coherences decay as ``exp(-t/T2)``.
    ``T2`` is clamped to ``2 T1``, the largest physical value.
    """
    t = duration_ns * 1e-3
    t2_us = min(t2_us, 2 * t1_us)
    gamma = 0.0 if math.isinf(t1_us) else -math.expm1(-t / t1_us)
    # amplitude damping alone leaves coherence exp(-t / 2T1)
    rate = (0.0 if math.isinf(t2_us) else 1 / t2_us) - (0.0 if math.isinf(t1_us) else 0.5 / t1_us)
    coherence = min(math.exp(-t * max(rate, 0.0)), 1.0)
    return amplitude_damping(gamma).then(phase_damping(coherence))


def depolarizing_parameter(error: float, n_qubits: int, convention: str = "process") -> float:
    """Depolarizing parameter ``lam`` reproducing a reported error rate.

    ``"process"`` reads the rate as the Pauli (process) infidelity, giving
    ``lam = 1 - d^2/(d^2 - 1) * error`` (16/15 for two qubits).
    ``"average"`` reads it as average gate infidelity,
    ``lam = 1 - d/(d - 1) * error``.
    """
    d = 2**n_qubits
    if convention == "process":
        lam = 1 - d * d / (d * d - 1) * error
    elif convention == "average":
        lam = 1 - d / (d - 1) * error
    else:
        raise ValueError(f"unknown error convention {convention!r}")
    return min(max(lam, 0.0), 1.0)


@dataclass(frozen=True)
class NoiseModel:
    """Channels at fixed locations along a linear chain.

    Per-position entries win over the ``default_*`` fallbacks. Positions are
    counted from the chain start plus ``offset``; ``n_positions`` bounds the
    calibrated range (``None`` for uniform synthetic models).
    """

    after_cz: Mapping[int, Channel] = field(default_factory=dict)
    pre_entangle: Mapping[int, Channel] = field(default_factory=dict)
    pre_measurement: Mapping[int, Channel] = field(default_factory=dict)
    readout_flip: Mapping[int, float] = field(default_factory=dict)
    default_after_cz: Channel | None = None
    default_pre_entangle: Channel | None = None
    default_pre_measurement: Channel | None = None
    default_readout: float = 0.0
    after_gate_block: Channel | None = None
    n_positions: int | None = None
    offset: int = 0
    durations: Durations = Durations()

    def _position(self, pos: int, span: int = 1) -> int:
        p = pos + self.offset
        if p < 0 or (self.n_positions is not None and p + span > self.n_positions):
            raise NoiseLocationError(
                f"chain position {p} is outside the calibrated range of {self.n_positions} qubits"
            )
        return p

    def cz(self, pos: int) -> Channel | None:
        """Two-qubit channel after the CZ between ``pos`` and ``pos + 1``."""
        return self.after_cz.get(self._position(pos, 2), self.default_after_cz)

    def entangle(self, pos: int) -> Channel | None:
        """Channel on qubit ``pos`` while it alone carries the logical state,
        just before its CZ with ``pos + 1``."""
        return self.pre_entangle.get(self._position(pos), self.default_pre_entangle)

    def measure(self, pos: int) -> Channel | None:
        return self.pre_measurement.get(self._position(pos), self.default_pre_measurement)

    def readout(self, pos: int) -> float:
        return self.readout_flip.get(self._position(pos), self.default_readout)

    def check_chain(self, length: int) -> None:
        """Raise unless positions ``0 .. length-1`` are all covered."""
        if length < 1:
            raise ValueError("chain length must be positive")
        self._position(length - 1)

    def shifted(self, offset: int) -> "NoiseModel":
        """The same model viewed from chain position ``offset``."""
        return replace(self, offset=self.offset + offset)

    def with_after_gate_block(self, ch: Channel | None) -> "NoiseModel":
        return replace(self, after_gate_block=ch)

    def without_readout(self) -> "NoiseModel":
        return replace(self, readout_flip={}, default_readout=0.0)

    def with_readout(self, r: float) -> "NoiseModel":
        return replace(self, readout_flip={}, default_readout=float(r))

    def without_qubit_noise(self, pos: int) -> "NoiseModel":
        """Drop the single-qubit channels and readout error at ``pos``.

        CZ channels touching ``pos`` are kept.
        """
        p = self._position(pos)
        return replace(
            self,
            pre_entangle={**self.pre_entangle, p: None},
            pre_measurement={**self.pre_measurement, p: None},
            readout_flip={**self.readout_flip, p: 0.0},
        )


NOISELESS = NoiseModel()


def noise_model_from_calibration(
    cal: CalibrationTable,
    durations: Durations = Durations(),
    placement_policy: Iterable[str] = LOCATIONS,
    error_convention: str = "process",
) -> NoiseModel:
    """Build channels from a calibration table.

    * ``after_cz``: two-qubit depolarizing from the pair's CX error.
    * ``pre_measurement``: thermal relaxation over ``measure_ns`` followed by
      single-qubit depolarizing from the sqrt(X) error.
    * ``readout``: classical flip of the recorded bit with the readout error.

    ``placement_policy`` selects which of these locations are populated.
    """
    policy = set(placement_policy)
    if not policy <= LOCATIONS:
        raise ValueError(f"unknown noise locations {sorted(policy - LOCATIONS)}")
    n = len(cal.qubits)
    after_cz, pre, readout = {}, {}, {}
    for i, q in enumerate(cal.qubits):
        if "pre_measurement" in policy:
            lam = depolarizing_parameter(q.sx_error, 1, error_convention)
            pre[i] = thermal_relaxation(q.t1_us, q.t2_us, durations.measure_ns).then(depolarizing(lam))
        if "readout" in policy:
            readout[i] = q.readout_error
        if "after_cz" in policy and i + 1 < n:
            err = cal.pair_error(q.qubit, cal.qubits[i + 1].qubit)
            after_cz[i] = depolarizing(depolarizing_parameter(err, 2, error_convention), 2)
    return NoiseModel(
        after_cz=after_cz, pre_measurement=pre, readout_flip=readout,
        n_positions=n, durations=durations,
    )


def synthetic_noise(
    kind: str = "depolarizing",
    lam: float = 1.0,
    after_gate: float | None = None,
    location: str = "pre_entangle",
) -> NoiseModel:
    """Uniform single-qubit depolarizing on every qubit of the chain.

    With ``location="pre_entangle"`` the channel hits each qubit while it
    holds the logical state, so it acts as gate-independent depolarizing
    on the encoded qubit. ``"pre_measurement"`` applies it after all CZs
    instead, where it spreads to neighbouring outcomes. ``after_gate``
    optionally adds a depolarizing channel with that parameter after each
    interleaved gate block.
    """
    if location not in SYNTHETIC_LOCATIONS:
        raise ValueError(f"unknown synthetic noise location {location!r}; use one of {SYNTHETIC_LOCATIONS}")
    if kind == "none":
        model = NOISELESS
    elif kind == "depolarizing":
        if not 0.0 <= lam <= 1.0:
            raise ValueError(f"depolarizing parameter {lam} outside [0, 1]")
        ch = None if lam == 1.0 else depolarizing(lam)
        model = NoiseModel(**{f"default_{location}": ch})
    else:
        raise ValueError(f"unknown synthetic noise kind {kind!r}")
    if after_gate is not None and after_gate != 1.0:
        model = model.with_after_gate_block(depolarizing(after_gate))
    return model
