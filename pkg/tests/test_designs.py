import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mbirb.designs import (
    ConvergenceError, Ensemble, apply_superoperator, ensemble_from_pattern, epsilon_bound,
    frame_potential, moment_superoperator, pauli_transfer_matrix, two_qubit_pauli_basis,
)
from mbirb.mbqc import DESIGN_IDS, GATE_IDS, MeasurementPattern, build_pattern
from mbirb.qcore import H, I2, X, Y, Z, haar_twirl_second_moment, haar_twirl_superoperator, random_unitary

from oracles import frame_potential_loop, sym_projector

IDENTITY = Ensemble.from_members([(1.0, I2)])
PAULI = Ensemble.from_members([(0.25, p) for p in (I2, X, Y, Z)])


@pytest.mark.parametrize("design, size", [("D5", 16), ("D6", 32)])
def test_ensemble_sizes(design, size):
    e = ensemble_from_pattern(build_pattern(design))
    assert len(e) == size
    assert np.allclose(e.probabilities, 1 / size)


def test_single_angle_ensemble():
    e = ensemble_from_pattern(MeasurementPattern("h", (0.0,), H))
    assert np.allclose(e.unitaries[0], H)
    assert np.allclose(e.unitaries[1], X @ H)


def test_ensemble_validation():
    with pytest.raises(ValueError):
        Ensemble.from_members([(0.5, I2)])
    with pytest.raises(ValueError):
        Ensemble.from_members([(1.0, 2 * I2)])
    with pytest.raises(ValueError):
        Ensemble.from_members([(1.5, I2), (-0.5, X)])


def test_frame_potential_examples():
    assert frame_potential(IDENTITY) == pytest.approx(16.0)
    assert frame_potential(PAULI) == pytest.approx(4.0)
    assert frame_potential(ensemble_from_pattern(build_pattern("D6"))) == pytest.approx(2.0, abs=1e-9)


@pytest.mark.parametrize("design", DESIGN_IDS)
def test_frame_potential_matches_loop(design):
    e = ensemble_from_pattern(build_pattern(design))
    assert frame_potential(e) == pytest.approx(frame_potential_loop(e.unitaries, e.probabilities), abs=1e-10)


def test_d5_frame_potential_frozen():
    # direct 16x16 summation, frozen
    assert frame_potential(ensemble_from_pattern(build_pattern("D5"))) == pytest.approx(2.25, abs=1e-12)


@pytest.mark.parametrize("gate_id", GATE_IDS + DESIGN_IDS)
def test_pattern_frame_potential_at_least_two(gate_id):
    assert frame_potential(ensemble_from_pattern(build_pattern(gate_id))) >= 2 - 1e-9


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-4, 4), min_size=1, max_size=6))
def test_random_pattern_frame_potential_at_least_two(angles):
    e = ensemble_from_pattern(MeasurementPattern("r", tuple(angles), None))
    assert frame_potential(e) >= 2 - 1e-9


def test_identity_moment_is_identity_map():
    assert np.allclose(moment_superoperator(IDENTITY), np.eye(16))


def test_d6_moment_on_ket00():
    rho = np.zeros((4, 4))
    rho[0, 0] = 1
    out = apply_superoperator(moment_superoperator(ensemble_from_pattern(build_pattern("D6"))), rho)
    assert np.allclose(out, sym_projector() / 3, atol=1e-12)


def test_d6_moment_equals_haar_on_pauli_basis():
    m = moment_superoperator(ensemble_from_pattern(build_pattern("D6")))
    for p in two_qubit_pauli_basis():
        assert np.allclose(apply_superoperator(m, p), haar_twirl_second_moment(p), atol=1e-9)


@pytest.mark.parametrize("design", DESIGN_IDS)
def test_moment_map_trace_preserving(design):
    m = moment_superoperator(ensemble_from_pattern(build_pattern(design)))
    rng = np.random.default_rng(1)
    a = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    assert np.trace(apply_superoperator(m, a)) == pytest.approx(np.trace(a), abs=1e-12)


def test_pauli_transfer_matrix_of_haar_twirl():
    r = pauli_transfer_matrix(haar_twirl_superoperator())
    assert r[0, 0] == pytest.approx(1.0)
    assert np.allclose(r, r.real)


def test_epsilon_examples():
    assert epsilon_bound(ensemble_from_pattern(build_pattern("D6"))) < 1e-6
    assert epsilon_bound(IDENTITY) >= 1


def test_d5_epsilon_frozen():
    # Choi certificate value, computed once and frozen; compare with 0.5 quoted for D5
    assert epsilon_bound(ensemble_from_pattern(build_pattern("D5"))) == pytest.approx(1.0, abs=1e-8)


def test_epsilon_monotone_d5_vs_d6():
    d5 = epsilon_bound(ensemble_from_pattern(build_pattern("D5")))
    d6 = epsilon_bound(ensemble_from_pattern(build_pattern("D6")))
    assert d6 <= d5


def test_epsilon_certificate_is_tight():
    e = ensemble_from_pattern(build_pattern("D5"))
    eps = epsilon_bound(e, bisection_tol=1e-10)
    from mbirb.designs import _certified
    m, haar = moment_superoperator(e), haar_twirl_superoperator()
    assert _certified(m, haar, eps)
    assert not _certified(m, haar, eps - 1e-6)


def test_epsilon_iteration_cap():
    with pytest.raises(ConvergenceError):
        epsilon_bound(IDENTITY, bisection_tol=1e-12, max_iter=3)


def test_haar_like_mixing_reduces_epsilon():
    rng = np.random.default_rng(4)
    d5 = ensemble_from_pattern(build_pattern("D5"))
    d6 = ensemble_from_pattern(build_pattern("D6"))
    mixed = Ensemble(
        np.concatenate([0.5 * d5.probabilities, 0.5 * d6.probabilities]),
        np.concatenate([d5.unitaries, d6.unitaries]),
    )
    assert epsilon_bound(mixed) <= epsilon_bound(d5) + 1e-9
    # a random unitary conjugation leaves the certificate unchanged
    u = random_unitary(rng)
    rotated = Ensemble(d5.probabilities, np.einsum("ab,ibc->iac", u, d5.unitaries))
    assert epsilon_bound(rotated) == pytest.approx(epsilon_bound(d5), abs=1e-8)
