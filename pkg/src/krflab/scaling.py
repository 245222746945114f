"""Space-time rescaling between flows whose initial metrics differ by a constant.

If omega(0) = lambda0 * omega_tilde(0) then omega(t) = lambda(t) * omega_tilde(tau(t)) with

    lambda(t) = e^{-t} (lambda0 - 1) + 1,      tau(t) = t + log(lambda(t) / lambda0).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator

from .cohomology import evolve_class
from .geometry import generalized_eigenvalues


class TrajectoryRangeError(ValueError):
    """A rescaled time fell outside the span of a stored trajectory."""


def _check_lambda0(lambda0):
    if not lambda0 > 0:
        raise ValueError(f"lambda0 must be positive, got {lambda0}")


def lambda_of_t(lambda0, t):
    _check_lambda0(lambda0)
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be non-negative")
    out = np.exp(-t) * (lambda0 - 1.0) + 1.0
    return float(out) if out.ndim == 0 else out


def tau_of_t(lambda0, t):
    lam = lambda_of_t(lambda0, t)
    out = np.asarray(t, dtype=float) + np.log(np.asarray(lam) / lambda0)
    out = np.maximum(out, 0.0)  # tau >= 0 exactly; clip round-off near t = 0
    return float(out) if out.ndim == 0 else out


def t_of_tau(lambda0, tau):
    """Inverse of tau_of_t: e^{-t} = e^{-tau} / (lambda0 - (lambda0 - 1) e^{-tau})."""
    _check_lambda0(lambda0)
    e = math.exp(-tau)
    return -math.log(e / (lambda0 - (lambda0 - 1.0) * e))


def verify_class_identity(lambda0, c_tilde0, t_grid):
    """max_t || [omega(t)] - lambda(t) [omega_tilde(tau(t))] || for omega_0 = lambda0 omega_tilde_0."""
    worst = 0.0
    for t in t_grid:
        lhs = evolve_class(lambda0 * c_tilde0, t)
        rhs = lambda_of_t(lambda0, t) * evolve_class(c_tilde0, tau_of_t(lambda0, t))
        worst = max(worst, (lhs - rhs).norm())
    return worst


@dataclass(frozen=True, eq=False)
class ScaledPotential:
    times: np.ndarray
    u: np.ndarray
    udot: np.ndarray
    lambda0: float
    n: int


def scaled_potential_ode(lambda0, n, horizon, dt=1e-3, tol=1e-10):
    """Integrate u' = n log(lambda(t)) - u, u(0) = 0 with classical RK4.

    Each step is checked by step doubling; a step whose local error estimate
    exceeds ``tol`` is split in halves until it passes.
    """
    _check_lambda0(lambda0)
    if not dt > 0:
        raise ValueError("dt must be positive")

    def rhs(t, u):
        return n * math.log(math.exp(-t) * (lambda0 - 1.0) + 1.0) - u

    def rk4(t, u, h):
        k1 = rhs(t, u)
        k2 = rhs(t + h / 2, u + h / 2 * k1)
        k3 = rhs(t + h / 2, u + h / 2 * k2)
        k4 = rhs(t + h, u + h * k3)
        return u + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)

    def advance(t, u, h, depth=0):
        full = rk4(t, u, h)
        half = rk4(t + h / 2, rk4(t, u, h / 2), h / 2)
        if abs(full - half) <= tol or depth >= 20:
            return half
        mid = advance(t, u, h / 2, depth + 1)
        return advance(t + h / 2, mid, h / 2, depth + 1)

    steps = int(round(horizon / dt))
    times = np.arange(steps + 1) * dt
    u = np.zeros(steps + 1)
    for i in range(steps):
        u[i + 1] = advance(times[i], u[i], dt)
    udot = n * np.log(np.exp(-times) * (lambda0 - 1.0) + 1.0) - u
    return ScaledPotential(times=times, u=u, udot=udot, lambda0=lambda0, n=n)


@dataclass(frozen=True, eq=False)
class BracketReport:
    times: np.ndarray
    ratio_min: np.ndarray        # min eigenvalue of omega_tilde(tau) relative to omega_tilde(t)
    ratio_max: np.ndarray
    equivalence_constant: float
    increasing_ok: bool          # e^{(C0+1)t} omega_tilde nondecreasing
    decreasing_ok: bool          # e^{(1-C0)t} omega_tilde nonincreasing
    worst_increasing: float = field(default=0.0)
    worst_decreasing: float = field(default=0.0)


def _metric_interpolant(times, values):
    """Monotone cubic interpolation of stacked metric values in t."""
    re = PchipInterpolator(times, values.real, axis=0)
    im = PchipInterpolator(times, values.imag, axis=0)
    return lambda t: re(t) + 1j * im(t)


def bracket_check(trajectory, lambda0, C0, times=None, tol=1e-10):
    """Empirical constant C with C^{-1} w(t) <= w(tau(t)) <= C w(t) along a sampled flow,
    plus the two monotonicity properties implied by |Ric| <= C0.

    ``trajectory`` is a list of (t, MetricField) pairs with increasing t.
    """
    _check_lambda0(lambda0)
    ts = np.array([t for t, _ in trajectory], dtype=float)
    if ts.size < 2 or np.any(np.diff(ts) <= 0):
        raise ValueError("trajectory times must be strictly increasing with >= 2 samples")
    stack = np.stack([m.values for _, m in trajectory])
    eval_times = ts if times is None else np.asarray(times, dtype=float)
    taus = tau_of_t(lambda0, eval_times)
    taus = np.atleast_1d(taus)
    span = (ts[0] - 1e-12, ts[-1] + 1e-12)
    if np.any(taus < span[0]) or np.any(taus > span[1]):
        raise TrajectoryRangeError(
            f"tau(t) spans [{taus.min():.4g}, {taus.max():.4g}] outside trajectory "
            f"[{ts[0]:.4g}, {ts[-1]:.4g}]")
    interp = _metric_interpolant(ts, stack)
    at_tau = interp(np.clip(taus, ts[0], ts[-1]))
    at_t = interp(eval_times)
    ev = generalized_eigenvalues(at_tau, at_t)
    axes = tuple(range(1, ev.ndim))
    rmin, rmax = ev.min(axis=axes), ev.max(axis=axes)
    C = float(np.max(np.maximum(rmax, 1.0 / rmin)))

    steps = generalized_eigenvalues(stack[1:], stack[:-1])
    saxes = tuple(range(1, steps.ndim))
    dt = np.diff(ts)
    inc = steps.min(axis=saxes) * np.exp((C0 + 1.0) * dt)
    dec = steps.max(axis=saxes) * np.exp((1.0 - C0) * dt)
    return BracketReport(
        times=eval_times, ratio_min=rmin, ratio_max=rmax, equivalence_constant=C,
        increasing_ok=bool(np.all(inc >= 1.0 - tol)),
        decreasing_ok=bool(np.all(dec <= 1.0 + tol)),
        worst_increasing=float(np.min(inc)), worst_decreasing=float(np.max(dec)))
