"""Closed-form reference solutions used to check the integrator and the classifier."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .flow import assemble_trajectory, init_flow
from .geometry import curvature
from .scaling import TrajectoryRangeError, lambda_of_t, scaled_potential_ode, tau_of_t

log = logging.getLogger(__name__)

RICCI_FLAT_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class CalabiYau:
    """omega(t) = e^{-t} omega_CY, valid as a flow solution when omega_CY is Ricci-flat."""

    omega_cy: object

    def __post_init__(self):
        curv = curvature(self.omega_cy)
        object.__setattr__(self, "_rm0", curv.sup_rm_norm)
        object.__setattr__(self, "_ric0", float(np.max(np.abs(curv.ric))))

    @property
    def ricci_defect(self):
        return self._ric0

    @property
    def ricci_flat(self):
        return self._ric0 <= RICCI_FLAT_TOL

    def metric(self, t):
        return self.omega_cy.scaled(math.exp(-t))

    def sup_rm(self, t):
        return math.exp(t) * self._rm0


def cy_solution(omega_cy, t):
    """(e^{-t} omega_CY, e^t sup|Rm(omega_CY)|).

    For an input that is not Ricci-flat the scaling still holds but the pair is
    not a flow solution; this is logged and exposed by ``CalabiYau.ricci_flat``.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    sol = CalabiYau(omega_cy)
    if not sol.ricci_flat:
        log.warning("omega_CY is not Ricci-flat (sup|Ric| = %.3e); "
                    "the scaled metric is not a flow solution", sol.ricci_defect)
    return sol.metric(t), sol.sup_rm(t)


@dataclass(frozen=True)
class ProductSolution:
    """Curvature of omega_CY x (hyperbolic base) under the flow, through its two magnitudes."""

    rm_cy_sq: float
    rm_b_sq: float

    def __post_init__(self):
        if self.rm_cy_sq < 0 or self.rm_b_sq < 0:
            raise ValueError("curvature magnitudes must be non-negative")

    def rm_sq(self, t):
        t = np.asarray(t, dtype=float)
        if self.rm_b_sq > 0 and np.any(t <= 0):
            raise ValueError("the base term diverges at t <= 0; use t > 0")
        base = self.rm_b_sq / (-np.expm1(-t)) ** 2 if self.rm_b_sq > 0 else 0.0 * t
        out = self.rm_cy_sq * np.exp(2 * t) + base
        return float(out) if out.ndim == 0 else out

    def critical_time(self):
        """Minimiser of rm_sq for positive coefficients: (e^t - 1)^3 = B / A."""
        if not (self.rm_cy_sq > 0 and self.rm_b_sq > 0):
            raise ValueError("the series is monotone unless both magnitudes are positive")
        return math.log1p((self.rm_b_sq / self.rm_cy_sq) ** (1.0 / 3.0))


def product_rm_series(rm_cy_sq, rm_b_sq, t_grid):
    """|Rm|^2(t) = e^{2t} |Rm_CY|^2 + |Rm_B|^2 / (1 - e^{-t})^2 on ``t_grid``."""
    t = np.asarray(t_grid, dtype=float)
    return np.column_stack([t, ProductSolution(rm_cy_sq, rm_b_sq).rm_sq(t)])


def _ode_spline(lambda0, n, horizon, dt):
    sol = scaled_potential_ode(lambda0, n, horizon, dt=dt)
    return CubicHermiteSpline(sol.times, sol.u, sol.udot)


def scaled_family(base, lambda0, horizon=None, refine=True):
    """The flow started at lambda0 * omega_tilde_0, built from ``base`` by rescaling.

    omega(t) = lambda(t) omega_tilde(tau(t)); the potentials satisfy
    phi(t) = lambda(t) phi_tilde(tau(t)) + c(t) where c solves the scalar ODE
    c' = n log lambda - c, c(0) = 0 (both flows share chi and Omega).
    Samples are taken at the base sample times up to ``horizon``.  With
    ``refine`` the base is re-integrated up to each tau(t) instead of being
    read from its cubic Hermite interpolant.
    """
    if not lambda0 > 0:
        raise ValueError("lambda0 must be positive")
    t_end = float(base.times[-1])
    if horizon is None:
        times = base.times[np.asarray(tau_of_t(lambda0, base.times)) <= t_end + 1e-12]
    else:
        times = base.times[base.times <= horizon + 1e-12]
        if times[-1] < horizon - 1e-9:
            times = np.append(times, horizon)
    taus = np.atleast_1d(tau_of_t(lambda0, times))
    if np.any(taus > t_end + 1e-12):
        raise TrajectoryRangeError(
            f"tau(t) reaches {taus.max():.4g} beyond base coverage {t_end:.4g}")
    grid = base.grid
    bg = init_flow(base.omega0.scaled(lambda0), chi=base.chi,
                   volume_form=base.volume_form, config=base.config).background
    c = _ode_spline(lambda0, grid.n, max(float(times[-1]), base.config.dt), base.config.dt)
    lam = np.atleast_1d(lambda_of_t(lambda0, times))
    means, oscs, dots = [], [], []
    for t, tau, la in zip(times, taus, lam):
        if refine:
            st = base.state_at(tau)
            m, osc = st.pot_mean, st.pot_osc
            dot = st.potential_velocity
            dm = float(dot.mean())
            dosc = dot - dm
        else:
            m, osc = base.potential_at(tau)
            dm, dosc = base.potential_at(tau, derivative=True)
        ct, dct = float(c(t)), float(c(t, 1))
        means.append(la * m + ct)
        oscs.append(la * osc)
        # d/dt [lambda Phi(tau)] = (1 - lambda) Phi(tau) + Phi'(tau), since tau' = 1/lambda
        dots.append((1.0 - la) * (m + osc) + (dm + dosc) + dct)
    return assemble_trajectory(bg, base.config, times, means, oscs, dots,
                               label=f"scaled({lambda0:g})")


@dataclass(frozen=True, eq=False)
class RescalingReport:
    times: np.ndarray
    metric_residual: np.ndarray     # sup |omega(t) - lambda(t) omega_tilde(tau(t))| per sample
    u_min: np.ndarray               # u = phi(t) - lambda(t) phi_tilde(tau(t))
    u_max: np.ndarray
    ode_error: np.ndarray           # sup |u - c(t)| with c from the scalar ODE

    @property
    def max_metric_residual(self):
        return float(np.max(self.metric_residual))

    @property
    def max_u_spread(self):
        return float(np.max(self.u_max - self.u_min))

    @property
    def max_ode_error(self):
        return float(np.max(self.ode_error))


def rescaling_check(trajectory, base, lambda0, refine=True):
    """Compare an independently integrated flow from lambda0 * omega_tilde_0 with
    the rescaled ``base`` flow at every sample whose tau(t) the base covers.

    With ``refine`` the base is re-integrated from its nearest sample up to tau(t);
    otherwise it is read from the cubic Hermite interpolant.
    """
    taus = np.atleast_1d(tau_of_t(lambda0, trajectory.times))
    keep = taus <= base.times[-1] + 1e-12
    if not keep.any():
        raise TrajectoryRangeError("no sample of the trajectory maps into the base range")
    times = trajectory.times[keep]
    c = _ode_spline(lambda0, trajectory.grid.n, max(float(times[-1]), trajectory.config.dt),
                    trajectory.config.dt)
    phis = trajectory.phi
    res, umin, umax, err = [], [], [], []
    for i in np.flatnonzero(keep):
        t, tau = float(trajectory.times[i]), float(taus[i])
        lam = lambda_of_t(lambda0, t)
        if refine:
            s = base.state_at(tau)
            g_tau, phi_tau = s.metric.values, s.phi
        else:
            g_tau, phi_tau = base.metric_at(tau).values, base.phi_at(tau)
        res.append(float(np.max(np.abs(trajectory.metric(i).values - lam * g_tau))))
        u = phis[i] - lam * phi_tau
        umin.append(float(u.min()))
        umax.append(float(u.max()))
        err.append(float(np.max(np.abs(u - c(t)))))
    return RescalingReport(times=times, metric_residual=np.array(res), u_min=np.array(umin),
                        u_max=np.array(umax), ode_error=np.array(err))
