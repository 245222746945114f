import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from krflab.comparison import (PROBES, BracketPair, bracket_initial, check_potential_bounds,
                               check_trace_volume_bounds, classify_singularity,
                               equivalence_constant, evolve_comparison, metric_independence,
                               mp_probe, pairwise_equivalence, rm_series)
from krflab.flow import FlowConfig
from krflab.geometry import MetricField, TorusGrid, cosine_metric, random_metric

CFG = FlowConfig(dt=1e-2, horizon=6.0, sample_stride=5)


@pytest.fixture(scope="module")
def grid():
    return TorusGrid(1, 16)


@pytest.fixture(scope="module")
def cosine_state(grid):
    return evolve_comparison(cosine_metric(grid, 0.3, (1, 0)), MetricField.flat(grid), CFG)


@pytest.fixture(scope="module")
def flat_state(grid):
    return evolve_comparison(MetricField.flat(grid, 2.0), MetricField.flat(grid), CFG)


def test_bracket_initial(grid):
    g = cosine_metric(grid, 0.3, (1, 0))
    pair = bracket_initial(g, MetricField.flat(grid), slack=0.1)
    assert pair.lambda_minus == pytest.approx(0.9 * 0.7)
    assert pair.lambda_plus == pytest.approx(1.1 * 1.3)
    assert pair.verify(g, MetricField.flat(grid))
    assert not BracketPair(0.8, 1.0).verify(g, MetricField.flat(grid))
    with pytest.raises(ValueError):
        BracketPair(1.0, 0.5)
    with pytest.raises(ValueError):
        bracket_initial(g, MetricField.flat(grid), slack=1.0)


def test_bracket_identical_metrics(grid):
    g = cosine_metric(grid, 0.2, (0, 1))
    pair = bracket_initial(g, g, slack=0.1)
    assert pair.lambda_minus < 1 < pair.lambda_plus


def test_flat_comparison_matches_closed_form(flat_state):
    s = flat_state
    lm = s.bracket.lambda_minus
    expected = math.log(2.0 / lm) * (1 - np.exp(-s.times))
    assert np.max(np.abs(s.series["u_max"] - expected)) <= 1e-9
    assert np.max(s.series["u_max"] - s.series["u_min"]) <= 1e-12
    assert np.max(s.series["S_max"]) == 0.0
    # both flows shrink by e^{-t}, so their ratio stays 2
    assert np.allclose(s.series["ratio_min"], 2.0, atol=1e-12)
    assert np.allclose(s.series["ratio_max"], 2.0, atol=1e-12)


def test_potential_identities(cosine_state):
    s = cosine_state.series
    assert np.max(s["uv_residual"]) <= 1e-10
    assert np.max(s["v_max"]) <= 1e-8
    assert np.min(s["u_min"]) >= -1e-8
    assert np.all(s["psi_min"] >= -1e-10)


def test_trace_volume_inequalities(cosine_state):
    rep = check_trace_volume_bounds(cosine_state)
    assert rep.chain_ok and rep.hm_gm_ok
    # the exponent-1 chain form is not valid for n = 1
    assert rep.printed_chain_holds is False
    assert rep.C_trace > 0 and rep.C_volume >= 1.0


def test_potential_bounds_report(cosine_state):
    rep = check_potential_bounds(cosine_state)
    assert rep.passed
    assert rep.v_ok and rep.udot_plateau
    assert rep.C_u_upper >= 0 and math.isfinite(rep.C_psi)
    with pytest.raises(ValueError):
        check_potential_bounds(cosine_state, eta=0.6)
    with pytest.raises(ValueError):
        check_potential_bounds(cosine_state, min_range=10.0)


def test_equivalence_plateau(cosine_state):
    rep = equivalence_constant(cosine_state)
    assert rep.plateaus
    assert rep.sup >= 1.0
    assert np.all(rep.series >= 1.0)


def test_probes(cosine_state):
    for q in PROBES:
        rep = mp_probe(cosine_state, q)
        assert rep.laplacian_ok
        assert math.isfinite(rep.C)
        assert len(rep.values) == len(cosine_state.times) - 2
    with pytest.raises(ValueError):
        mp_probe(cosine_state, "unknown")
    with pytest.raises(ValueError):
        mp_probe(cosine_state, PROBES[0], max_interval=0.01)


def test_csv_rows(cosine_state):
    rows = list(cosine_state.csv_rows())
    assert len(rows) == len(cosine_state.times)
    assert rows[0]["t"] == 0.0 and rows[0]["u_max"] == 0.0


def test_both_flows_type_iii(cosine_state):
    for traj in (cosine_state.omega, cosine_state.tilde):
        assert classify_singularity(rm_series(traj)).classification == "TypeIII"


def test_pairwise_equivalence_symmetric(cosine_state):
    a, b = cosine_state.omega, cosine_state.minus
    ab, ba = pairwise_equivalence(a, b), pairwise_equivalence(b, a)
    assert np.allclose(ab.series, ba.series, rtol=1e-10)


def test_metric_independence_small(grid):
    cfg = FlowConfig(dt=1e-2, horizon=6.0, sample_stride=20)
    initials = [random_metric(grid, 0.2, 2, seed=s) for s in (1, 2)]
    rep = metric_independence(initials, cfg)
    assert rep.agree and rep.all_type_iii and rep.all_plateau


# --- classifier -----------------------------------------------------------------

def _series(f, t0=0.0, t1=10.0, m=200):
    t = np.linspace(t0, t1, m)
    return np.column_stack([t, f(t)])


@given(rate=st.floats(-3, 3), scale=st.floats(1e-6, 1e6))
@settings(max_examples=40, deadline=None)
def test_classifier_exponential_rate(rate, scale):
    assume(abs(rate - 0.05) > 1e-6 and abs(rate - 0.5) > 1e-6)
    rep = classify_singularity(_series(lambda t: scale * np.exp(rate * t)), rel_floor=1e-30)
    assert rep.growth_exponent == pytest.approx(rate, abs=1e-8)
    expected = "TypeIII" if rate <= 0.05 else "TypeIIb" if rate >= 0.5 else "Inconclusive"
    assert rep.classification == expected


@given(scale=st.floats(1e-3, 1e3))
@settings(max_examples=20, deadline=None)
def test_classifier_scale_invariant(scale):
    s = _series(lambda t: 1 + np.sin(t) ** 2 + 0.1 * t)
    a = classify_singularity(s)
    s2 = s.copy()
    s2[:, 1] *= scale
    b = classify_singularity(s2)
    assert a.classification == b.classification
    assert a.growth_exponent == pytest.approx(b.growth_exponent, abs=1e-10)


def test_classifier_noise_floor():
    # decay into round-off must not read as growth
    s = _series(lambda t: np.maximum(np.exp(-6 * t), 1e-17 * (1 + np.sin(40 * t) ** 2)))
    assert classify_singularity(s).classification == "TypeIII"


def test_classifier_ceiling_and_zero():
    assert classify_singularity(_series(lambda t: 0 * t)).growth_exponent == 0.0
    assert classify_singularity(_series(lambda t: 0 * t + 1e9)).classification == "TypeIIb"


def test_classifier_validation():
    with pytest.raises(ValueError):
        classify_singularity(_series(lambda t: t, m=8))
    with pytest.raises(ValueError):
        classify_singularity(_series(lambda t: t, t1=2.0))
    with pytest.raises(ValueError):
        classify_singularity(_series(lambda t: -t - 1))
    with pytest.raises(ValueError):
        classify_singularity(np.zeros((20, 3)))


def test_explicit_pair_must_bracket(grid):
    g = cosine_metric(grid, 0.3, (1, 0))
    with pytest.raises(ValueError):
        evolve_comparison(g, MetricField.flat(grid), CFG, bracket=BracketPair(0.9, 1.0))
