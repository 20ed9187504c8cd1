import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mbirb.fit import fit_decay
from mbirb.mbqc import DESIGN_IDS, FrameUndefined, MeasurementPattern, build_pattern, simulate_chain
from mbirb.noise import NoiseModel, synthetic_noise
from mbirb.qcore import KET_MINUS, KET_PLUS, H, T, depolarizing, projector, random_unitary
from mbirb.rb import (
    CSV_COLUMNS, RbConfig, SequenceFidelityPoint, group_records, manifest, manifest_json,
    plan_runs, points_from_csv, points_to_csv, run_all, run_interleaved, run_reference,
    run_sequence, survival_probability,
)

PLUS = projector(KET_PLUS)


@pytest.mark.parametrize("n, shots, target, expected", [(18, 8000, 500, 49152), (1, 3000, 500, 1), (4, 8192, 500, 3)])
def test_plan_runs(n, shots, target, expected):
    assert plan_runs(n, shots, target) == expected


@given(st.integers(1, 40), st.integers(1, 10**5), st.integers(1, 10**4))
def test_plan_runs_is_ceiling(n, shots, target):
    r = plan_runs(n, shots, target)
    assert (r - 1) * shots < 3 * target * 2**n <= r * shots


def test_plan_runs_errors():
    with pytest.raises(OverflowError):
        plan_runs(100, 8192, 500)
    with pytest.raises(ValueError):
        plan_runs(0, 8192, 500)


def test_survival_examples():
    u = random_unitary(np.random.default_rng(0))
    rho = u @ PLUS @ u.conj().T
    assert survival_probability(rho, u.conj().T) == pytest.approx(1.0, abs=1e-12)
    assert survival_probability(np.eye(2) / 2, u) == pytest.approx(0.5, abs=1e-12)
    assert survival_probability(projector(KET_MINUS), np.eye(2)) == pytest.approx(0.0, abs=1e-12)


def test_survival_with_readout():
    assert survival_probability(PLUS, np.eye(2), readout=0.1) == pytest.approx(0.9)


def test_config_validation():
    with pytest.raises(ValueError):
        RbConfig(m_values=())
    with pytest.raises(ValueError):
        RbConfig(m_values=(0, 1))
    with pytest.raises(ValueError):
        RbConfig(design_id="H2")
    with pytest.raises(ValueError):
        RbConfig(gate_id="D5")
    with pytest.raises(ValueError):
        RbConfig(mode="magic")
    with pytest.raises(ValueError):
        RbConfig(mode="native", tomography=True)
    with pytest.raises(ValueError):
        run_interleaved(RbConfig(), 1)


def test_chain_sizes():
    cfg = RbConfig(design_id="D5", gate_id="T7")
    assert cfg.n_measured("reference", 2) == 8
    assert cfg.n_measured("interleaved", 3) == 30
    assert cfg.execution_for("interleaved", 3) == "exact"
    auto = RbConfig(design_id="D5", gate_id="T7", execution="auto")
    assert auto.execution_for("interleaved", 3) == "sampled"
    assert auto.execution_for("interleaved", 2) == "exact"


def test_noiseless_reference_closure():
    pt = run_reference(RbConfig(m_values=(2,)), 2)
    assert pt.F == pytest.approx(1.0, abs=1e-10)
    assert pt.sigma <= 1e-10
    assert pt.group_count == 256


@pytest.mark.parametrize("gate_id", ["H2", "T3", "H4", "T5"])
@pytest.mark.parametrize("design", DESIGN_IDS)
def test_noiseless_interleaved_closure(design, gate_id):
    pt = run_interleaved(RbConfig(design_id=design, gate_id=gate_id), 1)
    assert pt.F == pytest.approx(1.0, abs=1e-10)


def test_noiseless_t7_sampled_closure():
    cfg = RbConfig(gate_id="T7", execution="sampled", shots=20_000, seed=4)
    pt = run_interleaved(cfg, 1)
    assert pt.F == pytest.approx(1.0, abs=1e-10)
    assert pt.execution == "sampled"


@pytest.mark.parametrize("gate_id", ["H2", "T3", "H4"])
def test_native_matches_adjusted_noiseless(gate_id):
    for m in (1, 2):
        a = run_interleaved(RbConfig(gate_id=gate_id, mode="adjusted"), m)
        n = run_interleaved(RbConfig(gate_id=gate_id, mode="native"), m)
        assert a.F == pytest.approx(n.F, abs=1e-9)


def test_native_matches_adjusted_under_depolarizing():
    noise = synthetic_noise("depolarizing", 0.97)
    a = run_interleaved(RbConfig(gate_id="T3", noise=noise), 2)
    n = run_interleaved(RbConfig(gate_id="T3", noise=noise, mode="native"), 2)
    # depolarizing commutes with Pauli corrections, so feed-forward changes nothing
    assert a.F == pytest.approx(n.F, abs=1e-12)


def test_depolarizing_reference_decay():
    lam = 0.98
    cfg = RbConfig(noise=synthetic_noise("depolarizing", lam))
    pts = run_all(cfg)
    fs = np.array([p.F for p in pts])
    # survival = 1/2 + lam^(4m+1)/2: the final qubit also holds the state once
    expected = 0.5 + 0.5 * lam ** (4 * np.array(cfg.m_values) + 1)
    assert np.allclose(fs, expected, atol=1e-12)
    assert (fs[1] - 0.5) / (fs[0] - 0.5) == pytest.approx(lam**4, abs=1e-12)


@pytest.mark.parametrize("design, k", [("D5", 4), ("D6", 5)])
def test_interleaved_depolarizing_ratio(design, k):
    lam = 0.99
    cfg = RbConfig(design_id=design, gate_id="H2", noise=synthetic_noise("depolarizing", lam, after_gate=0.95))
    fs = np.array([run_interleaved(cfg, m).F for m in (1, 2)])
    # each design plus gate block contributes lam^(k+1) * 0.95
    assert (fs[1] - 0.5) / (fs[0] - 0.5) == pytest.approx(lam ** (k + 1) * 0.95, abs=1e-12)


def test_tomography_within_shot_noise():
    noise = synthetic_noise("depolarizing", 0.97)
    exact = run_reference(RbConfig(noise=noise, m_values=(1,)), 1)
    tomo = run_reference(RbConfig(noise=noise, m_values=(1,), tomography=True, seed=3), 1)
    # one group's survival has shot noise ~ 1/sqrt(8192) per basis; 16 groups average it down
    se = np.sqrt(3 * 0.25 / 8192 / 16)
    assert abs(tomo.F - exact.F) <= 3 * se


def test_tomography_sampled_mode_runs():
    cfg = RbConfig(gate_id="T3", execution="sampled", shots=30_000, tomography=True, seed=2,
                   noise=synthetic_noise("depolarizing", 0.98))
    pt = run_interleaved(cfg, 1)
    exact = run_interleaved(RbConfig(gate_id="T3", noise=synthetic_noise("depolarizing", 0.98)), 1)
    assert 0 < pt.group_count <= 64
    assert pt.F == pytest.approx(exact.F, abs=0.05)


def test_project_flag_changes_only_unphysical_cases():
    noise = synthetic_noise("depolarizing", 1.0)
    a = run_reference(RbConfig(noise=noise, m_values=(1,), tomography=True, tomography_shots=50, seed=1), 1)
    b = run_reference(RbConfig(noise=noise, m_values=(1,), tomography=True, tomography_shots=50, seed=1,
                               project_states=False), 1)
    # pure states measured with few shots often land outside the Bloch ball
    assert a.F != b.F


@pytest.mark.parametrize("gate_id, m, expected", [("T3", 1, 64), ("T5", 1, 64), ("H2", 2, 2**12), ("T5", 2, 2**12)])
def test_group_count_law(gate_id, m, expected):
    # four byproducts per gate block: 2^(k+2)m groups with k = 4 for D5
    pt = run_interleaved(RbConfig(gate_id=gate_id), m)
    if gate_id == "H2":
        # H2 can only produce I or X, so it has two byproducts
        expected = 2 ** (5 * m)
    assert pt.group_count == expected


def test_group_records_examples():
    blocks = [build_pattern("D5"), build_pattern("T5")]
    run = simulate_chain(blocks, PLUS)
    groups = group_records(list(run), blocks)
    assert len(run) == 256 and len(groups) == 64
    assert sum(g.weight for g in groups.values()) == pytest.approx(1.0)
    t3 = [build_pattern("D5"), build_pattern("T3")]
    assert len(group_records(list(simulate_chain(t3, PLUS)), t3)) == 64
    single = simulate_chain([build_pattern("H2")], PLUS)[0]
    assert len(group_records([single], [build_pattern("H2")])) == 1


def test_group_records_raises_without_frame():
    bad = MeasurementPattern("late", (0.0, np.pi / 4), T)
    run = simulate_chain([bad], PLUS)
    with pytest.raises(FrameUndefined):
        group_records(list(run), [bad])


def test_spam_insensitivity():
    noise = synthetic_noise("depolarizing", 0.98)
    ps, As = [], []
    for r in (0.0, 0.02, 0.05):
        pts = run_all(RbConfig(noise=noise, final_readout=r))
        fit = fit_decay([(p.m, p.F, 0.0) for p in pts], mc_samples=1)
        ps.append(fit.p)
        As.append(fit.A)
    assert max(ps) - min(ps) < 1e-6
    assert As[0] > As[1] > As[2]


def test_seed_determinism_sampled():
    cfg = RbConfig(gate_id="T5", execution="sampled", shots=5000, seed=9,
                   noise=synthetic_noise("depolarizing", 0.97))
    assert run_interleaved(cfg, 2) == run_interleaved(cfg, 2)


def test_threads_do_not_change_results():
    cfg = RbConfig(gate_id="T3", execution="sampled", shots=5000, noise=synthetic_noise("depolarizing", 0.97))
    assert run_all(cfg, threads=1) == run_all(cfg, threads=3)


def test_readout_from_noise_model_lowers_fidelity():
    base = synthetic_noise("depolarizing", 0.99)
    with_ro = NoiseModel(default_pre_entangle=depolarizing(0.99), default_readout=0.03)
    a = run_reference(RbConfig(noise=base), 1)
    b = run_reference(RbConfig(noise=with_ro), 1)
    assert b.F < a.F


def test_point_validation():
    with pytest.raises(ValueError):
        SequenceFidelityPoint("reference", 1, 1.5, 0.0, 1)
    with pytest.raises(ValueError):
        SequenceFidelityPoint("reference", 1, 0.5, -0.1, 1)


def test_csv_roundtrip():
    pts = run_all(RbConfig(gate_id="H2", noise=synthetic_noise("depolarizing", 0.97)))
    text = points_to_csv(pts)
    assert text.splitlines()[0] == "# mbirb-points/1"
    assert text.splitlines()[1] == ",".join(CSV_COLUMNS)
    back = points_from_csv(text)
    assert [(p.kind, p.m, p.F, p.sigma, p.group_count) for p in back] == \
           [(p.kind, p.m, p.F, p.sigma, p.group_count) for p in pts]


@pytest.mark.parametrize("text", ["", "kind,m\nreference,1\n", "kind,m,F,sigma,groups\nbogus,1,0.5,0,1\n",
                                  "kind,m,F,sigma,groups\nreference,x,0.5,0,1\n"])
def test_csv_malformed(text):
    with pytest.raises(ValueError):
        points_from_csv(text)


def test_manifest_contents():
    cfg = RbConfig(gate_id="H2")
    doc = manifest(cfg, run_all(cfg))
    assert doc["seed"] == 0
    assert doc["plan_runs"]["interleaved:1"]["n_measured"] == 5
    assert doc["plan_runs"]["reference:1"]["runs_all_outcomes"] == plan_runs(4, 8192, 500)
    assert manifest_json(doc) == manifest_json(manifest(cfg, run_all(cfg)))


def test_kinds_without_gate():
    assert RbConfig().kinds() == ("reference",)
    assert len(run_all(RbConfig())) == 3


def test_run_sequence_unknown_kind():
    with pytest.raises(ValueError):
        run_sequence(RbConfig(), "sideways", 1)


def test_hadamard_only_interleaved_unitary_matches_closed_form():
    # D5 + H2, m = 1: survival of every group is exactly 1 with no noise and
    # the stored unitary is the full sequence
    blocks = RbConfig(gate_id="H2").blocks("interleaved", 1)
    run = simulate_chain(blocks, PLUS)
    for i in (0, 5, 31):
        rec = run[i]
        assert np.allclose(rec.implemented_unitary @ PLUS @ rec.implemented_unitary.conj().T, rec.final_state,
                           atol=1e-12)
    assert H.shape == (2, 2)
