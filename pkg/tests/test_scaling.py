import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from krflab.cohomology import KahlerClass
from krflab.geometry import MetricField, TorusGrid
from krflab.scaling import (TrajectoryRangeError, bracket_check, lambda_of_t,
                            scaled_potential_ode, t_of_tau, tau_of_t, verify_class_identity)

lam0s = st.floats(0.05, 20)


def quadrature_u(lambda0, n, t):
    """u(t) = int_0^t e^{-(t-s)} n log lambda(s) ds."""
    val, _ = quad(lambda s: math.exp(s - t) * n * math.log(lambda_of_t(lambda0, s)), 0, t,
                  epsabs=1e-13, epsrel=1e-13, limit=200)
    return val


@given(lam0=lam0s, t=st.floats(0, 20))
def test_scaling_system(lam0, t):
    lam, tau = lambda_of_t(lam0, t), tau_of_t(lam0, t)
    assert abs(lam * math.exp(-tau) - lam0 * math.exp(-t)) <= 1e-12 * max(1, lam0)
    assert abs(lam * (1 - math.exp(-tau)) - (1 - math.exp(-t))) <= 1e-12 * max(1, lam0)


@given(lam0=lam0s, t=st.floats(0, 15))
def test_tau_inverse(lam0, t):
    assert abs(t_of_tau(lam0, tau_of_t(lam0, t)) - t) <= 1e-9 * max(1.0, t)


def test_schedule_endpoints():
    assert lambda_of_t(3.0, 0.0) == 3.0
    assert tau_of_t(3.0, 0.0) == 0.0
    assert np.allclose(lambda_of_t(3.0, np.array([40.0])), 1.0)
    with pytest.raises(ValueError):
        lambda_of_t(0.0, 1.0)
    with pytest.raises(ValueError):
        lambda_of_t(2.0, -1.0)


@pytest.mark.parametrize("lam0", [0.1, 0.5, 2.0, 10.0])
def test_class_identity(lam0):
    t = np.linspace(0, 20, 200)
    assert verify_class_identity(lam0, KahlerClass(1.0, 0.0), t) <= 1e-12
    assert verify_class_identity(lam0, KahlerClass(2.5, -0.3), t) <= 1e-12


@pytest.mark.parametrize("lam0,n", [(2.0, 1), (0.5, 1), (10.0, 2), (0.1, 2)])
def test_ode_against_quadrature(lam0, n):
    sol = scaled_potential_ode(lam0, n, 10.0, dt=1e-2)
    for i in range(0, sol.times.size, 97):
        assert abs(sol.u[i] - quadrature_u(lam0, n, sol.times[i])) <= 1e-9
    # udot is the right-hand side evaluated on the solution
    rhs = n * np.log(lambda_of_t(lam0, sol.times)) - sol.u
    assert np.array_equal(sol.udot, rhs)


def test_ode_trivial_for_unit_lambda():
    sol = scaled_potential_ode(1.0, 1, 2.0)
    assert np.all(sol.u == 0)


def _flat_trajectory(grid, ts):
    # chi = 0 on a flat torus, so the flow from 2 * flat is 2 e^{-t} * flat
    return [(t, MetricField.flat(grid, 2 * math.exp(-t))) for t in ts]


def test_bracket_flat_family():
    grid = TorusGrid(1, 8)
    ts = np.linspace(0, 8, 161)
    traj = _flat_trajectory(grid, ts)
    rep = bracket_check(traj, 2.0, C0=0.0, times=ts[ts <= 6])
    assert rep.increasing_ok and rep.decreasing_ok
    assert 1.0 <= rep.equivalence_constant <= 2.0


def test_bracket_range_error():
    grid = TorusGrid(1, 8)
    traj = _flat_trajectory(grid, np.linspace(0, 2, 21))
    with pytest.raises(TrajectoryRangeError):
        bracket_check(traj, 0.2, C0=0.0)


@given(lam0=st.floats(0.2, 5), c0=st.floats(0, 3))
@settings(max_examples=15, deadline=None)
def test_bracket_monotonicity_property(lam0, c0):
    grid = TorusGrid(1, 8)
    ts = np.linspace(0, 12, 121)
    traj = _flat_trajectory(grid, ts)
    keep = ts[np.asarray(tau_of_t(lam0, ts)) <= ts[-1]]
    rep = bracket_check(traj, lam0, C0=c0 + 1.0, times=keep)
    # |Ric| = 0 here, so any C0 >= 1 bounds the normalised flow's velocity
    assert rep.increasing_ok and rep.decreasing_ok
