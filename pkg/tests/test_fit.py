import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mbirb.fit import (
    A_BOUNDS, B_BOUNDS, CI_MC_SAMPLES, DEFAULT_MC_SAMPLES, FitError, FitResult, estimate_gate_fidelity,
    fit_decay, fit_report, gate_fidelity,
)

from oracles import depolarized_decay

MS = (1, 2, 3, 4, 6, 8, 12, 16)


def _exact_points(a, p, b, ms=MS):
    return [(m, a * p**m + b, 0.0) for m in ms]


def _fit(p, sigma_p=0.0):
    return FitResult(0.45, 0.0, p, sigma_p, 0.5, 0.0, 1)


@pytest.mark.parametrize("a, p, b", [(0.45, 0.9, 0.5), (0.5, 1.0, 0.5), (0.4, 0.7, 0.48), (0.5, 0.99, 0.52)])
def test_exact_recovery(a, p, b):
    r = fit_decay(_exact_points(a, p, b))
    assert (r.A, r.p, r.B) == pytest.approx((a, p, b), abs=1e-9)
    assert r.sigma_p == 0.0 and r.samples_used == 1


def test_exact_recovery_random_truths():
    rng = np.random.default_rng(5)
    for _ in range(100):
        a = rng.uniform(*A_BOUNDS)
        b = rng.uniform(*B_BOUNDS)
        p = rng.uniform(0.5, 0.999)
        r = fit_decay(_exact_points(a, p, b, ms=(1, 2, 3, 5, 8)))
        assert r.p == pytest.approx(p, abs=1e-9)


def test_depolarizing_decay_oracle():
    lam = 0.97
    decay = depolarized_decay(lam, (1, 2, 3), per_block=4)
    pts = [(m, 0.5 + 0.5 * lam * f, 0.0) for m, f in zip((1, 2, 3), decay)]
    assert fit_decay(pts).p == pytest.approx(lam**4, abs=1e-10)


@pytest.mark.parametrize("points", [[], [(1, 0.9, 0.0), (2, 0.8, 0.0)], [(1, 0.9, 0.0)] * 3,
                                     [(1, 0.9, -1.0), (2, 0.8, 0.0), (3, 0.7, 0.0)],
                                     [(1, np.nan, 0.0), (2, 0.8, 0.0), (3, 0.7, 0.0)]])
def test_fit_rejects_bad_points(points):
    with pytest.raises(FitError):
        fit_decay(points)


def test_mc_samples_must_be_positive():
    with pytest.raises(FitError):
        fit_decay([(1, 0.9, 0.01), (2, 0.85, 0.01), (3, 0.8, 0.01)], mc_samples=0)


def test_parameters_stay_in_box():
    r = fit_decay([(1, 0.99, 0.05), (2, 0.6, 0.05), (3, 0.9, 0.05)], mc_samples=2000)
    assert A_BOUNDS[0] - 1e-12 <= r.A <= A_BOUNDS[1] + 1e-12
    assert B_BOUNDS[0] - 1e-12 <= r.B <= B_BOUNDS[1] + 1e-12
    assert 0 <= r.p <= 1
    assert sum(r.boundary_hits.values()) > 0


def test_mc_fit_near_truth():
    truth = (0.45, 0.9, 0.5)
    pts = [(m, f, 0.01) for m, f, _ in _exact_points(*truth, ms=(1, 2, 3))]
    r = fit_decay(pts, mc_samples=20000, seed=1)
    assert r.p == pytest.approx(0.9, abs=2 * r.sigma_p)
    assert 0 < r.sigma_p < 0.1


def test_sigma_scales_with_noise():
    base = _exact_points(0.45, 0.9, 0.5, ms=(1, 2, 4, 8, 16))
    small = fit_decay([(m, f, 0.002) for m, f, _ in base], mc_samples=20000, seed=2)
    big = fit_decay([(m, f, 0.004) for m, f, _ in base], mc_samples=20000, seed=2)
    # far from the constraints the fit is close to linear, so sigma_p doubles
    assert big.sigma_p / small.sigma_p == pytest.approx(2.0, rel=0.2)


def test_fit_seed_and_thread_determinism():
    pts = [(1, 0.9, 0.02), (2, 0.85, 0.02), (3, 0.8, 0.02)]
    a = fit_decay(pts, mc_samples=70000, seed=3)
    b = fit_decay(pts, mc_samples=70000, seed=3, threads=3)
    assert a == b
    assert fit_decay(pts, mc_samples=70000, seed=4) != a


def test_gate_fidelity_formula():
    assert gate_fidelity(0.9, 0.9) == 1.0
    assert gate_fidelity(0.95, 0.90) == pytest.approx(1 - 0.5 * (1 - 0.9 / 0.95))
    assert gate_fidelity(0.9, 0.0) == 0.5


@pytest.mark.parametrize("p_ref, p_int, expected", [(0.9, 0.9, 1.0), (0.9, 0.81, 0.95), (1.0, 0.9, 0.95)])
def test_estimate_examples(p_ref, p_int, expected):
    est = estimate_gate_fidelity(_fit(p_ref), _fit(p_int))
    assert est.F == pytest.approx(expected, abs=1e-12)
    assert est.sigma == 0.0


def test_estimate_with_uncertainty():
    est = estimate_gate_fidelity(_fit(0.95, 0.01), _fit(0.90, 0.01), mc_samples=100000, seed=0)
    assert est.F == pytest.approx(0.9737, abs=1e-3)
    # linear propagation: 0.5 * sqrt((0.01/0.95)^2 + (0.9 * 0.01 / 0.95^2)^2)
    lin = 0.5 * np.hypot(0.01 / 0.95, 0.9 * 0.01 / 0.95**2)
    assert est.sigma == pytest.approx(lin, rel=0.05)
    assert est.rejected == 0


@settings(max_examples=30, deadline=None)
@given(st.floats(0.5, 1.0), st.floats(0.0, 1.0), st.floats(0.0, 0.3))
def test_estimate_monotone_in_p_int(p_ref, frac, dp):
    lo = estimate_gate_fidelity(_fit(p_ref), _fit(p_ref * frac))
    hi = estimate_gate_fidelity(_fit(p_ref), _fit(min(p_ref * frac + dp, 1.0)))
    assert hi.F >= lo.F - 1e-12
    assert 0 <= lo.F <= 1


def test_estimate_rejection():
    est = estimate_gate_fidelity(_fit(0.05, 0.05), _fit(0.04, 0.01), mc_samples=10000, seed=1)
    assert 0 < est.rejected < 5000
    with pytest.raises(FitError, match="non-positive"):
        estimate_gate_fidelity(_fit(0.0, 0.05), _fit(0.04, 0.01), mc_samples=10000, seed=1, max_rejection=0.4)
    with pytest.raises(FitError):
        estimate_gate_fidelity(_fit(0.0), _fit(0.5))


def test_estimate_seed_determinism():
    a = estimate_gate_fidelity(_fit(0.9, 0.02), _fit(0.85, 0.02), mc_samples=5000, seed=7)
    assert a == estimate_gate_fidelity(_fit(0.9, 0.02), _fit(0.85, 0.02), mc_samples=5000, seed=7)


def test_report_json():
    pts = [(1, 0.9, 0.02), (2, 0.85, 0.02), (3, 0.8, 0.02)]
    fits = {"reference": fit_decay(pts, mc_samples=1000), "interleaved": fit_decay(pts, mc_samples=1000)}
    est = estimate_gate_fidelity(fits["reference"], fits["interleaved"], mc_samples=1000)
    doc = json.loads(fit_report(fits, est, 1000, 0))
    assert set(doc["fits"]) == {"interleaved", "reference"}
    assert doc["fits"]["reference"]["constraints"]["A"] == [0.4, 0.5]
    assert doc["estimate"]["F"] == pytest.approx(1.0, abs=0.05)
    assert json.loads(fit_report(fits, None, 1000, 0))["estimate"] is None


def test_ci_sample_count_equivalent_to_full():
    # the CI default of 10^5 draws reproduces the 10^6-draw fit to within Monte Carlo error
    pts = [(1, 0.92, 0.01), (2, 0.86, 0.01), (3, 0.81, 0.01)]
    ci = fit_decay(pts, mc_samples=CI_MC_SAMPLES, seed=0)
    full = fit_decay(pts, mc_samples=DEFAULT_MC_SAMPLES, seed=1)
    assert ci.p == pytest.approx(full.p, abs=4 * full.sigma_p / np.sqrt(CI_MC_SAMPLES))
    assert ci.sigma_p == pytest.approx(full.sigma_p, rel=0.02)
