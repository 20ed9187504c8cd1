"""Reference and interleaved benchmarking experiments on simulated chains.

A reference experiment of length ``m`` runs ``m`` design blocks; an
interleaved one alternates design and gate blocks. Every outcome string
fixes the random unitary that was applied, so the inverse is computed
classically and applied to the final qubit's state before measuring the
overlap with the input ``|+>``.

``mode="adjusted"`` runs without feed-forward: gate byproducts stay in the
sequence and are inverted along with it. ``mode="native"`` corrects each
gate block on the fly.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from typing import Sequence

import numpy as np

from .mbqc import (
    DEFAULT_BRANCH_LIMIT,
    BranchRecord,
    Branches,
    FrameUndefined,
    MeasurementPattern,
    build_pattern,
    simulate_chain,
)
from .noise import NoiseModel
from .qcore import KET_PLUS, dagger, projector
from .tomo import BASES, TomographyCounts, project_physical, sample_counts, state_tomography

KINDS = ("reference", "interleaved")
CSV_VERSION = "mbirb-points/1"
CSV_COLUMNS = ("kind", "m", "F", "sigma", "groups")
PLAN_N_CAP = 62
EXACT_MEASUREMENT_CAP = 20


@dataclass(frozen=True)
class RbConfig:
    """One benchmarking campaign.

    ``execution="auto"`` enumerates exactly when a chain has at most
    ``exact_cap`` measured qubits and samples ``shots`` strings otherwise.
    ``tomography`` reconstructs each group's final state from simulated
    Pauli-basis counts (adjusted mode only) instead of using it directly.
    ``final_readout`` overrides the readout error of the last qubit.
    """

    design_id: str = "D5"
    gate_id: str | None = None
    m_values: tuple[int, ...] = (1, 2, 3)
    mode: str = "adjusted"
    execution: str = "exact"
    shots: int = 100_000
    shots_per_run: int = 8192
    seed: int = 0
    noise: NoiseModel | None = None
    tomography: bool = False
    tomography_shots: int = 8192
    project_states: bool = True
    tomography_points_target: int = 500
    final_readout: float | None = None
    exact_cap: int = EXACT_MEASUREMENT_CAP
    branch_limit: int = DEFAULT_BRANCH_LIMIT

    def __post_init__(self):
        object.__setattr__(self, "m_values", tuple(int(m) for m in self.m_values))
        if not self.m_values or min(self.m_values) < 1:
            raise ValueError("m_values must be non-empty with every m >= 1")
        if not build_pattern(self.design_id).is_design:
            raise ValueError(f"{self.design_id!r} is not a design block")
        if self.gate_id is not None and build_pattern(self.gate_id).is_design:
            raise ValueError(f"{self.gate_id!r} is not a gate pattern")
        if self.mode not in ("native", "adjusted"):
            raise ValueError(f"mode must be 'native' or 'adjusted', got {self.mode!r}")
        if self.execution not in ("exact", "sampled", "auto"):
            raise ValueError(f"execution must be 'exact', 'sampled' or 'auto', got {self.execution!r}")
        if self.tomography and self.mode == "native":
            raise ValueError("tomography of the final state is only used in adjusted mode")
        for name in ("shots", "shots_per_run", "tomography_shots", "tomography_points_target"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    def blocks(self, kind: str, m: int) -> list[MeasurementPattern]:
        design = build_pattern(self.design_id)
        if kind == "reference":
            return [design] * m
        if kind == "interleaved":
            if self.gate_id is None:
                raise ValueError("interleaved experiments need a gate_id")
            gate = build_pattern(self.gate_id)
            return [design, gate] * m
        raise ValueError(f"unknown experiment kind {kind!r}")

    def n_measured(self, kind: str, m: int) -> int:
        return sum(b.n_measured for b in self.blocks(kind, m))

    def execution_for(self, kind: str, m: int) -> str:
        if self.execution != "auto":
            return self.execution
        return "exact" if self.n_measured(kind, m) <= self.exact_cap else "sampled"

    def kinds(self) -> tuple[str, ...]:
        return KINDS if self.gate_id is not None else KINDS[:1]

    def echo(self) -> dict:
        """JSON-friendly view, with the noise model summarised."""
        d = asdict(replace(self, noise=None))
        d["noise"] = None if self.noise is None else "custom"
        d["m_values"] = list(self.m_values)
        return d


@dataclass(frozen=True)
class SequenceFidelityPoint:
    kind: str
    m: int
    F: float
    sigma: float
    group_count: int
    execution: str = "exact"

    def __post_init__(self):
        if not -1e-9 <= self.F <= 1 + 1e-9:
            raise ValueError(f"sequence fidelity {self.F} outside [0, 1]")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")


def plan_runs(n_measured: int, shots_per_run: int, points_target: int, n_cap: int = PLAN_N_CAP) -> int:
    """Circuit runs needed for ``points_target`` tomography points per basis on
    every one of ``2^n`` outcome strings: ``ceil(3 * target * 2^n / shots)``."""
    if n_measured < 1 or shots_per_run < 1 or points_target < 1:
        raise ValueError("all arguments must be positive")
    if n_measured > n_cap:
        raise OverflowError(f"n = {n_measured} exceeds the planning cap of {n_cap}")
    return -(-3 * points_target * 2**n_measured // shots_per_run)


def survival_probability(rho_final: np.ndarray, inverse: np.ndarray, readout: float = 0.0) -> float:
    """``<+| V rho V^dag |+>``, optionally through a symmetric readout flip."""
    v = np.asarray(inverse, dtype=complex)
    out = v @ np.asarray(rho_final, dtype=complex) @ dagger(v)
    s = float(np.real(KET_PLUS.conj() @ out @ KET_PLUS))
    s = (1 - readout) * s + readout * (1 - s)
    return min(max(s, 0.0), 1.0)


def _survivals(states: np.ndarray, unitaries: np.ndarray, readout: float) -> np.ndarray:
    # <+| U^dag rho U |+> = (U|+>)^dag rho (U|+>)
    w = unitaries @ KET_PLUS
    s = np.real(np.einsum("bi,bij,bj->b", w.conj(), states, w))
    return np.clip((1 - readout) * s + readout * (1 - s), 0.0, 1.0)


@dataclass
class Group:
    """Branches sharing one random sequence."""

    key: tuple
    weight: float
    state: np.ndarray
    unitary: np.ndarray
    size: int


def group_records(records: Sequence[BranchRecord], blocks: Sequence[MeasurementPattern]) -> dict[tuple, Group]:
    """Pool branch records by random sequence.

    The key holds each design block's outcome bits verbatim and each gate
    block's byproduct label; raises :class:`FrameUndefined` when a gate
    block's byproduct is not a Pauli. Weights are probabilities (exact
    records) or shot counts (sampled records).
    """
    groups: dict[tuple, Group] = {}
    for rec in records:
        key, pos = [], 0
        for b, block in enumerate(blocks):
            bits = rec.outcomes[pos:pos + block.n_measured]
            pos += block.n_measured
            if block.is_design:
                key.append(tuple(bits))
            else:
                frame = rec.byproducts[b]
                if frame is None:
                    raise FrameUndefined(f"block {b} ({block.gate_id}) has no Pauli byproduct for {bits}")
                key.append(frame.label)
        key = tuple(key)
        w = rec.probability if rec.probability is not None else float(rec.shots)
        if key in groups:
            g = groups[key]
            g.state = g.state + w * rec.final_state
            g.weight += w
            g.size += 1
        else:
            groups[key] = Group(key, w, w * rec.final_state, rec.implemented_unitary, 1)
    for g in groups.values():
        g.state = g.state / g.weight if g.weight > 0 else 0.5 * np.eye(2)
    return groups


def _group_ids(run: Branches, native: bool) -> np.ndarray:
    """Integer sequence label per branch: design bits plus 2 bits per gate
    block (gate bits omitted under feed-forward)."""
    key = np.zeros(len(run), dtype=np.int64)
    shift, pos = 0, 0
    for b, block in enumerate(run.blocks):
        k = block.n_measured
        if block.is_design:
            key |= ((run.outcomes >> pos) & ((1 << k) - 1)) << shift
            shift += k
        elif not native:
            codes = run.frames[:, b].astype(np.int64)
            if np.any(codes < 0):
                raise FrameUndefined(f"block {b} ({block.gate_id}) has outcomes without a Pauli byproduct")
            key |= codes << shift
            shift += 2
        pos += k
    return key


def _pool(run: Branches, ids: np.ndarray):
    labels, first, inv = np.unique(ids, return_index=True, return_inverse=True)
    g = len(labels)
    w = np.zeros(g)
    np.add.at(w, inv, run.weights)
    states = np.zeros((g, 2, 2), dtype=complex)
    np.add.at(states, inv, run.weights[:, None, None] * run.states)
    safe = np.where(w > 0, w, 1.0)
    states = states / safe[:, None, None]
    return labels, w, states, run.unitaries[first], inv


def _weighted_stats(values: np.ndarray, weights: np.ndarray) -> tuple[float, float]:
    p = weights / weights.sum()
    mean = float(p @ values)
    var = float(p @ (values - mean) ** 2)
    return mean, math.sqrt(max(var, 0.0))


def _tomography_sampled(run: Branches, inv: np.ndarray, n_groups: int, readout: float, rng) -> tuple:
    """Per-shot single-basis measurements, basis = shot index mod 3."""
    counts = np.zeros((n_groups, 3, 2), dtype=np.int64)
    basis = np.arange(len(run)) % 3
    ev = _bloch_batch(run.states)[np.arange(len(run)), basis]
    q0 = np.clip((1 + (1 - 2 * readout) * ev) / 2, 0.0, 1.0)
    bit = (rng.random(len(run)) >= q0).astype(np.int64)
    np.add.at(counts, (inv, basis, bit), 1)
    keep = np.all(counts.sum(axis=2) > 0, axis=1)
    return counts, keep


def _bloch_batch(states: np.ndarray) -> np.ndarray:
    x = 2 * np.real(states[:, 0, 1])
    y = -2 * np.imag(states[:, 0, 1])
    z = np.real(states[:, 0, 0] - states[:, 1, 1])
    return np.stack([x, y, z], axis=1)


def _reconstruct(counts: np.ndarray, project: bool) -> np.ndarray:
    rho = state_tomography([TomographyCounts(b, (int(counts[i, 0]), int(counts[i, 1]))) for i, b in enumerate(BASES)])
    return project_physical(rho) if project else rho


def _experiment_seed(seed: int, kind: str, m: int) -> list[int]:
    return [int(seed), KINDS.index(kind), int(m)]


def run_sequence(cfg: RbConfig, kind: str, m: int) -> SequenceFidelityPoint:
    """Simulate one (kind, m) experiment and reduce it to a sequence fidelity."""
    blocks = cfg.blocks(kind, m)
    execution = cfg.execution_for(kind, m)
    native = cfg.mode == "native"
    entropy = _experiment_seed(cfg.seed, kind, m)
    run = simulate_chain(
        blocks, projector(KET_PLUS), cfg.noise, mode=execution,
        shots=cfg.shots if execution == "sampled" else None,
        seed=entropy, branch_limit=cfg.branch_limit, adaptive=native,
    )
    n = run.n_measured
    readout = cfg.final_readout
    if readout is None:
        readout = 0.0 if cfg.noise is None else cfg.noise.readout(n)
    ids = _group_ids(run, native)
    labels, w, states, unitaries, inv = _pool(run, ids)

    if not cfg.tomography:
        s = _survivals(states, unitaries, readout)
        keep = w > 0
    else:
        rng = np.random.default_rng(np.random.SeedSequence(entropy + [1]))
        if execution == "exact":
            counts = np.zeros((len(labels), 3, 2), dtype=np.int64)
            for g in range(len(labels)):
                for i, c in enumerate(sample_counts(states[g], cfg.tomography_shots, rng, readout)):
                    counts[g, i] = c.counts
            keep = w > 0
        else:
            counts, keep = _tomography_sampled(run, inv, len(labels), readout, rng)
        s = np.zeros(len(labels))
        for g in np.nonzero(keep)[0]:
            s[g] = _survivals(_reconstruct(counts[g], cfg.project_states)[None], unitaries[g:g + 1], 0.0)[0]
    if not np.any(keep):
        raise RuntimeError("no sequence group has data")
    F, sigma = _weighted_stats(s[keep], w[keep])
    return SequenceFidelityPoint(kind, m, min(max(F, 0.0), 1.0), sigma, int(keep.sum()), execution)


def run_reference(cfg: RbConfig, m: int) -> SequenceFidelityPoint:
    return run_sequence(cfg, "reference", m)


def run_interleaved(cfg: RbConfig, m: int) -> SequenceFidelityPoint:
    if cfg.gate_id is None:
        raise ValueError("interleaved experiments need a gate_id")
    return run_sequence(cfg, "interleaved", m)


def run_all(cfg: RbConfig, threads: int = 1) -> list[SequenceFidelityPoint]:
    """All (kind, m) experiments, ordered by kind then m; results do not
    depend on ``threads``."""
    jobs = [(k, m) for k in cfg.kinds() for m in cfg.m_values]
    if threads <= 1:
        return [run_sequence(cfg, k, m) for k, m in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda job: run_sequence(cfg, *job), jobs))


def _fmt(x: float) -> str:
    return repr(float(x))


def points_to_csv(points: Sequence[SequenceFidelityPoint]) -> str:
    buf = io.StringIO()
    buf.write(f"# {CSV_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for p in points:
        w.writerow([p.kind, p.m, _fmt(p.F), _fmt(p.sigma), p.group_count])
    return buf.getvalue()


def points_from_csv(text: str) -> list[SequenceFidelityPoint]:
    """Parse :func:`points_to_csv` output; raises ``ValueError`` on malformed input."""
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise ValueError("empty points file")
    reader = csv.DictReader(lines)
    if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
        raise ValueError(f"expected columns {','.join(CSV_COLUMNS)}, got {reader.fieldnames}")
    points = []
    for row_no, row in enumerate(reader, start=2):
        try:
            if row["kind"] not in KINDS:
                raise ValueError(f"unknown kind {row['kind']!r}")
            points.append(SequenceFidelityPoint(
                row["kind"], int(row["m"]), float(row["F"]), float(row["sigma"]), int(row["groups"])
            ))
        except (TypeError, ValueError) as exc:
            raise ValueError(f"row {row_no}: {exc}") from None
    return points


def manifest(cfg: RbConfig, points: Sequence[SequenceFidelityPoint], extra: dict | None = None) -> dict:
    plans = {}
    for kind in cfg.kinds():
        for m in cfg.m_values:
            n = cfg.n_measured(kind, m)
            plans[f"{kind}:{m}"] = {
                "n_measured": n,
                "execution": cfg.execution_for(kind, m),
                "runs_all_outcomes": plan_runs(n, cfg.shots_per_run, cfg.tomography_points_target),
            }
    doc = {
        "config": cfg.echo(),
        "seed": cfg.seed,
        "plan_runs": plans,
        "points": [asdict(p) for p in points],
    }
    if extra:
        doc.update(extra)
    return doc


def manifest_json(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"
