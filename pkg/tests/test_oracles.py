import logging
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from krflab.flow import FlowConfig, init_flow, run
from krflab.geometry import MetricField, TorusGrid, cosine_metric
from krflab.oracles import (CalabiYau, ProductSolution, cy_solution, product_rm_series,
                            rescaling_check, scaled_family)
from krflab.scaling import TrajectoryRangeError, lambda_of_t, tau_of_t


@pytest.fixture(scope="module")
def base():
    grid = TorusGrid(1, 16)
    cfg = FlowConfig(dt=1e-2, horizon=4.0, sample_stride=10)
    return run(init_flow(cosine_metric(grid, 0.3, (1, 0)), config=cfg), cfg)


def test_cy_flat_torus():
    grid = TorusGrid(2, 8)
    g, rm = cy_solution(MetricField.flat(grid, 1.5), 2.0)
    assert np.allclose(g.values, 1.5 * math.exp(-2.0) * np.eye(2))
    assert rm == 0.0
    assert CalabiYau(MetricField.flat(grid)).ricci_flat


def test_cy_flow_matches_solver():
    grid = TorusGrid(1, 8)
    cfg = FlowConfig(dt=1e-2, horizon=2.0, sample_stride=50)
    traj = run(init_flow(MetricField.flat(grid, 3.0), config=cfg), cfg)
    for i, t in enumerate(traj.times):
        assert np.allclose(traj.metric(i).values, cy_solution(MetricField.flat(grid, 3.0), t)[0].values,
                           atol=1e-13)


def test_cy_warns_when_not_ricci_flat(caplog):
    grid = TorusGrid(1, 16)
    g = cosine_metric(grid, 0.3, (1, 0))
    with caplog.at_level(logging.WARNING):
        _, rm = cy_solution(g, 1.0)
    assert "not Ricci-flat" in caplog.text
    assert rm == pytest.approx(math.e * CalabiYau(g).sup_rm(0.0))
    with pytest.raises(ValueError):
        cy_solution(g, -1.0)


@given(a=st.floats(0.01, 10), b=st.floats(0.01, 10))
def test_product_critical_time_is_minimiser(a, b):
    sol = ProductSolution(a, b)
    tc = sol.critical_time()
    res = minimize_scalar(sol.rm_sq, bounds=(1e-3, 20), method="bounded",
                          options={"xatol": 1e-10})
    assert tc == pytest.approx(res.x, abs=1e-4)


def test_product_series_shape_and_values():
    t = np.linspace(0.1, 5, 20)
    s = product_rm_series(1.0, 2.0, t)
    assert s.shape == (20, 2)
    assert np.array_equal(s[:, 0], t)
    assert np.allclose(s[:, 1], np.exp(2 * t) + 2.0 / (1 - np.exp(-t)) ** 2)
    assert np.array_equal(product_rm_series(0.0, 0.0, t)[:, 1], np.zeros(20))


def test_product_validation():
    with pytest.raises(ValueError):
        ProductSolution(-1.0, 0.0)
    with pytest.raises(ValueError):
        ProductSolution(1.0, 1.0).rm_sq(0.0)
    with pytest.raises(ValueError):
        ProductSolution(0.0, 1.0).critical_time()
    assert ProductSolution(1.0, 0.0).rm_sq(0.0) == 1.0


@pytest.mark.parametrize("lam0", [2.0, 0.5])
def test_scaled_family_metric_identity(base, lam0):
    fam = scaled_family(base, lam0)
    for i, t in enumerate(fam.times):
        lam, tau = lambda_of_t(lam0, t), tau_of_t(lam0, t)
        target = lam * base.state_at(tau).metric.values
        assert np.max(np.abs(fam.metric(i).values - target)) <= 1e-12
    assert fam.times[0] == 0.0
    assert np.allclose(fam.metric(0).values, lam0 * base.metric(0).values, atol=1e-13)


def test_scaled_family_range(base):
    with pytest.raises(TrajectoryRangeError):
        scaled_family(base, 0.2, horizon=4.0)


@pytest.mark.parametrize("lam0", [2.0, 0.5])
def test_rescaling_against_direct_flow(base, lam0):
    cfg = base.config
    if lam0 < 1:
        cfg = FlowConfig(dt=cfg.dt, horizon=2.0, sample_stride=cfg.sample_stride)
    direct = run(init_flow(base.omega0.scaled(lam0), chi=base.chi,
                           volume_form=base.volume_form, config=cfg), cfg)
    rep = rescaling_check(direct, base, lam0)
    assert rep.max_metric_residual <= 1e-10
    assert rep.max_u_spread <= 1e-10
    assert rep.max_ode_error <= 1e-9
