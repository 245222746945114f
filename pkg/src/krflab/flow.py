"""Normalised Kähler-Ricci flow on torus grids, integrated in potential form.

The evolving metric is

    omega(t) = e^{-t} omega_0 + (1 - e^{-t}) chi + i ddbar(phi)

with chi = -Ric(Omega) = i ddbar(log Omega), and the potential obeys

    d phi / dt = log(omega^n / Omega) - phi.

No time-dependent normalisation is added to the right-hand side, so two
flows sharing (chi, Omega) have potentials whose difference solves the
relative Monge-Ampère equation exactly.

Internally the solver works with

    Phi = phi + e^{-t} rho_0 + (1 - e^{-t}) log Omega,   omega_0 = mean(omega_0) + i ddbar rho_0,

so that omega(t) = e^{-t} mean(omega_0) + i ddbar(Phi) and dPhi/dt = log det omega - Phi.
This form carries no spatially varying forcing: the late-time oscillation of
Phi decays on its own, and both truncation and round-off errors stay
relative to it rather than to the O(1) terms that cancel in phi.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property, lru_cache

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .cohomology import KahlerClass, evolve_class
from .geometry import (POSITIVITY_FLOOR, MetricField, PositivityLoss, _as_form,
                       complex_laplacian_symbol, curvature, flat_decomposition, herm_det,
                       herm_eigvalsh, hessian_from_spectrum, potential_hessian)

log = logging.getLogger(__name__)

SCHEMES = ("explicit-rk4", "semi-implicit")
CLOSURE_TOL = 1e-8


class StabilityViolation(RuntimeError):
    """The requested time step exceeds the scheme's stability bound."""

    def __init__(self, message, max_dt=None):
        super().__init__(message)
        self.max_dt = max_dt
        self.partial = None


@dataclass(frozen=True)
class FlowConfig:
    dt: float = 1e-3
    horizon: float = 10.0
    scheme: str = "semi-implicit"
    positivity_floor: float = POSITIVITY_FLOOR
    sample_stride: int = 10
    rm_ceiling: float = 1e8
    stability_limit: float = 2.5

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.horizon >= 0:
            raise ValueError("horizon must be non-negative")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.sample_stride < 1:
            raise ValueError("sample_stride must be >= 1")
        if not self.rm_ceiling > 0:
            raise ValueError("rm_ceiling must be positive")

    @property
    def steps(self):
        return int(round(self.horizon / self.dt))

    @property
    def sample_interval(self):
        return self.dt * self.sample_stride


@dataclass(frozen=True, eq=False)
class Background:
    """Time-independent data of one flow: omega_0, chi, Omega and the flat split of omega_0."""

    omega0: MetricField
    chi: np.ndarray
    volume_form: np.ndarray
    flat0: np.ndarray        # mean of omega_0, an (n, n) Hermitian matrix
    rho0: np.ndarray         # omega_0 = flat0 + i ddbar rho0

    @property
    def grid(self):
        return self.omega0.grid

    @cached_property
    def log_volume(self):
        return np.log(self.volume_form)

    def reference_form(self, t):
        decay = math.exp(-t)
        return decay * self.omega0.values + (1.0 - decay) * self.chi

    def shift(self, t):
        """Phi - phi at time t."""
        decay = math.exp(-t)
        return decay * self.rho0 + (1.0 - decay) * self.log_volume

    def shift_rate(self, t):
        """d/dt (Phi - phi)."""
        return math.exp(-t) * (self.log_volume - self.rho0)

    def metric_values(self, t, pot_osc, floor, hess=None):
        hess = potential_hessian(pot_osc, self.grid) if hess is None else hess
        g = math.exp(-t) * self.flat0 + hess
        eig_min = herm_eigvalsh(g)[..., 0]
        if not np.all(eig_min > floor):
            bad = np.where(np.isfinite(eig_min), eig_min, -np.inf)
            flat = int(np.argmin(bad))
            node = self.grid.node_index(flat)
            raise PositivityLoss(f"metric left the Kähler cone at node {node}",
                                 node=node, min_eigenvalue=float(bad.ravel()[flat]))
        return g, hess


@dataclass(frozen=True, eq=False)
class FlowState:
    """Flow state.  Phi is held as a spatial mean plus a mean-zero oscillation:
    the mean drifts like -n t while the oscillation shrinks, and a single
    array would lose the oscillation to round-off."""

    t: float
    pot_mean: float
    pot_osc: np.ndarray
    background: Background
    metric: MetricField

    @property
    def grid(self):
        return self.background.grid

    @property
    def omega0(self):
        return self.background.omega0

    @property
    def chi(self):
        return self.background.chi

    @property
    def volume_form(self):
        return self.background.volume_form

    @property
    def phi(self):
        return (self.pot_mean + self.pot_osc) - self.background.shift(self.t)

    def reference_form(self, t=None):
        return self.background.reference_form(self.t if t is None else t)

    @property
    def potential_velocity(self):
        """dPhi/dt = log det omega - Phi."""
        return (np.log(self.metric.det) - self.pot_mean) - self.pot_osc

    @property
    def velocity(self):
        """d phi / dt = log(omega^n / Omega) - phi."""
        return self.potential_velocity - self.background.shift_rate(self.t)

    def reconstruction_residual(self):
        """Mismatch between the stored metric and e^{-t} w0 + (1-e^{-t}) chi + i ddbar phi."""
        rebuilt = self.reference_form() + potential_hessian(self.phi, self.grid)
        return float(np.max(np.abs(self.metric.values - rebuilt)))


def init_flow(omega0, chi=None, volume_form=None, config=None):
    """State at t = 0 with phi = 0.

    ``volume_form`` defaults to det(omega_0).  ``chi`` defaults to
    i ddbar(log Omega); if given it must agree with that form, since the
    potential equation only reproduces the flow when chi = -Ric(Omega).
    """
    config = config or FlowConfig()
    grid = omega0.grid
    if volume_form is None:
        volume_form = omega0.det.copy()
    volume_form = np.broadcast_to(np.asarray(volume_form, dtype=float), grid.shape).copy()
    if not np.all(np.isfinite(volume_form)) or not np.all(volume_form > 0):
        raise ValueError("volume form must be finite and strictly positive")
    ric_form = potential_hessian(np.log(volume_form), grid)
    if chi is None:
        chi_values = ric_form
    else:
        chi_values = np.array(_as_form(chi, grid))
        scale = max(1.0, float(np.max(np.abs(ric_form))))
        if np.max(np.abs(chi_values - ric_form)) > CLOSURE_TOL * scale:
            raise ValueError("chi must equal i ddbar log(volume_form), i.e. -Ric(Omega)")
    flat0, rho0, residual = flat_decomposition(omega0, grid)
    if residual > CLOSURE_TOL * max(1.0, float(np.max(np.abs(omega0.values)))):
        raise ValueError(f"initial metric is not closed on the grid (residual {residual:.2e})")
    for arr in (chi_values, volume_form, rho0):
        arr.setflags(write=False)
    bg = Background(omega0=omega0, chi=chi_values, volume_form=volume_form,
                    flat0=flat0, rho0=rho0)
    g, _ = bg.metric_values(0.0, rho0, config.positivity_floor)
    return FlowState(t=0.0, pot_mean=0.0, pot_osc=rho0.copy(), background=bg,
                     metric=MetricField(grid, g, config.positivity_floor))


def stability_bound(state, config):
    """Largest admissible dt for ``config.scheme`` at this state."""
    grid = state.grid
    eig = state.metric.eigenvalues
    if config.scheme == "explicit-rk4":
        return 0.2 * float(eig[..., 0].min()) * grid.spacing ** 2
    a_max = 1.0 / float(eig[..., 0].min())
    a_min = 1.0 / float(eig[..., -1].max())
    spread = grid.max_kappa_sq() * 0.5 * (a_max - a_min)
    return math.inf if spread <= 0 else config.stability_limit / spread


def step(state, config):
    """Advance one time step.

    ``explicit-rk4`` is classical RK4 on the potential equation.
    ``semi-implicit`` splits off the frozen-coefficient operator
    sigma * Laplacian - 1 (sigma = midrange of the eigenvalues of g^{-1}),
    treats it exactly in Fourier space and advances the variable-coefficient
    remainder with exponential time differencing (ETDRK4).
    """
    bound = stability_bound(state, config)
    if config.dt > bound:
        raise StabilityViolation(
            f"dt={config.dt:.3e} exceeds the {config.scheme} bound {bound:.3e} at t={state.t:.4f}",
            max_dt=bound)
    if config.scheme == "explicit-rk4":
        mean, osc = _rk4(state, config)
    else:
        mean, osc = _etdrk4(state, config)
    k = round(state.t / config.dt)
    # stay on the lattice k * dt so sample times do not drift
    t = (k + 1) * config.dt if abs(state.t - k * config.dt) < 1e-9 * config.dt else state.t + config.dt
    g, _ = state.background.metric_values(t, osc, config.positivity_floor)
    metric = MetricField(state.grid, g, config.positivity_floor)
    return replace(state, t=t, pot_mean=mean, pot_osc=osc, metric=metric)


def _from_spectrum(vhat, grid):
    """(mean, mean-zero oscillation) of a potential given by rfft coefficients."""
    origin = (0,) * grid.ndim
    mean = float(vhat[origin].real) / grid.size
    vhat = vhat.copy()
    vhat[origin] = 0.0
    return mean, np.fft.irfftn(vhat, s=grid.shape, axes=grid.axes)


def _rk4(state, config):
    bg, floor, h = state.background, config.positivity_floor, config.dt

    def rhs(y, t):
        mean, osc = y
        g, _ = bg.metric_values(t, osc, floor)
        logdet = np.log(herm_det(g))
        m = float(logdet.mean())
        return m - mean, (logdet - m) - osc

    def axpy(y, a, k):
        return y[0] + a * k[0], y[1] + a * k[1]

    t, y = state.t, (state.pot_mean, state.pot_osc)
    k1 = rhs(y, t)
    k2 = rhs(axpy(y, h / 2, k1), t + h / 2)
    k3 = rhs(axpy(y, h / 2, k2), t + h / 2)
    k4 = rhs(axpy(y, h, k3), t + h)
    return tuple(y[j] + h / 6 * (k1[j] + 2 * k2[j] + 2 * k3[j] + k4[j]) for j in range(2))


def _etd_coefficients(z, h, points=32, contour_below=2.0):
    """ETDRK4 weights for L h = z (real, <= 0).

    Closed forms cancel badly near z = 0, so values with |z| < contour_below
    are averaged over a small circle around z instead.
    """
    def weights(lr):
        e = np.exp(lr)
        return ((np.exp(lr / 2) - 1.0) / lr,
                (-4.0 - lr + e * (4.0 - 3.0 * lr + lr ** 2)) / lr ** 3,
                (2.0 + lr + e * (lr - 2.0)) / lr ** 3,
                (-4.0 - 3.0 * lr - lr ** 2 + e * (4.0 - lr)) / lr ** 3)

    out = [np.empty_like(z) for _ in range(4)]
    near = np.abs(z) < contour_below
    if near.any():
        r = np.exp(1j * np.pi * (np.arange(1, points + 1) - 0.5) / points)
        for o, w in zip(out, weights(z[near, None] + r[None, :])):
            o[near] = np.real(np.mean(w, axis=1))
    if (~near).any():
        for o, w in zip(out, weights(z[~near])):
            o[~near] = w
    q, f1, f2, f3 = (h * o for o in out)
    return np.exp(z), np.exp(z / 2), q, f1, f2, f3


@lru_cache(maxsize=None)
def _laplacian_levels(grid):
    """Distinct values of the Laplacian symbol and the map back to the rfft grid."""
    lap = complex_laplacian_symbol(grid)
    levels, inverse = np.unique(lap, return_inverse=True)
    return levels, inverse.reshape(lap.shape)


def _etdrk4(state, config):
    bg, floor, h = state.background, config.positivity_floor, config.dt
    grid = bg.grid
    eig = state.metric.eigenvalues
    sigma = 0.5 * (1.0 / eig[..., 0].min() + 1.0 / eig[..., -1].max())
    # the weights depend on |k|^2 only, so evaluate them once per distinct value
    levels, inverse = _laplacian_levels(grid)
    E, E2, Q, f1, f2, f3 = (c[inverse]
                            for c in _etd_coefficients(h * (sigma * levels - 1.0), h))

    def remainder(vhat, t):
        hess = hessian_from_spectrum(vhat, grid)
        g, _ = bg.metric_values(t, None, floor, hess=hess)
        lap_pot = np.trace(hess, axis1=-2, axis2=-1).real
        return np.fft.rfftn(np.log(herm_det(g)) - sigma * lap_pot, axes=grid.axes)

    t = state.t
    v = np.fft.rfftn(state.pot_osc, axes=grid.axes)
    v[(0,) * grid.ndim] = state.pot_mean * grid.size
    nv = remainder(v, t)
    a = E2 * v + Q * nv
    na = remainder(a, t + h / 2)
    b = E2 * v + Q * na
    nb = remainder(b, t + h / 2)
    c = E2 * a + Q * (2.0 * nb - nv)
    nc = remainder(c, t + h)
    return _from_spectrum(E * v + f1 * nv + 2.0 * f2 * (na + nb) + f3 * nc, grid)


def _expand(values, ndim):
    return np.asarray(values).reshape((-1,) + (1,) * ndim)


@dataclass(eq=False)
class Trajectory:
    """Sampled flow.  Potentials and their time derivatives are kept per
    sample; metrics are rebuilt on demand."""

    background: Background
    config: FlowConfig
    times: np.ndarray
    pot_mean: np.ndarray
    pot_osc: np.ndarray
    pot_dot: np.ndarray
    sup_rm: np.ndarray
    eig_min: np.ndarray
    eig_max: np.ndarray
    class_a: np.ndarray
    class_b: np.ndarray
    terminal: dict | None = None
    steps_taken: int = 0
    label: str = ""
    _splines: object = field(default=None, repr=False)

    @property
    def grid(self):
        return self.background.grid

    @property
    def omega0(self):
        return self.background.omega0

    @property
    def chi(self):
        return self.background.chi

    @property
    def volume_form(self):
        return self.background.volume_form

    def __len__(self):
        return len(self.times)

    def _shifts(self):
        d = self.grid.ndim
        decay = _expand(np.exp(-self.times), d)
        bg = self.background
        return decay * bg.rho0 + (1.0 - decay) * bg.log_volume, decay * (bg.log_volume - bg.rho0)

    @property
    def phi(self):
        """Stacked phi, shape (samples, *grid.shape)."""
        return _expand(self.pot_mean, self.grid.ndim) + self.pot_osc - self._shifts()[0]

    @property
    def phidot(self):
        return self.pot_dot - self._shifts()[1]

    def phi_sample(self, i):
        t = float(self.times[i])
        return (self.pot_mean[i] + self.pot_osc[i]) - self.background.shift(t)

    def phidot_sample(self, i):
        return self.pot_dot[i] - self.background.shift_rate(float(self.times[i]))

    def reference_form(self, t):
        return self.background.reference_form(t)

    def metric(self, i):
        g, _ = self.background.metric_values(float(self.times[i]), self.pot_osc[i], -np.inf)
        return MetricField(self.grid, g, self.config.positivity_floor)

    def state(self, i):
        return FlowState(t=float(self.times[i]), pot_mean=float(self.pot_mean[i]),
                         pot_osc=self.pot_osc[i], background=self.background,
                         metric=self.metric(i))

    def _interpolate(self, t):
        if self._splines is None:
            axes = tuple(range(1, self.pot_dot.ndim))
            dmean = self.pot_dot.mean(axis=axes)
            dosc = self.pot_dot - _expand(dmean, len(axes))
            self._splines = (CubicHermiteSpline(self.times, self.pot_mean, dmean),
                             CubicHermiteSpline(self.times, self.pot_osc, dosc, axis=0))
        if t < self.times[0] - 1e-12 or t > self.times[-1] + 1e-12:
            raise ValueError(f"t={t} outside trajectory span [{self.times[0]}, {self.times[-1]}]")
        t = min(max(float(t), self.times[0]), self.times[-1])
        return t, float(self._splines[0](t)), self._splines[1](t)

    def potential_at(self, t, derivative=False):
        """Interpolated (Phi_mean, Phi_osc) at t, or their time derivatives."""
        self._interpolate(t)
        t = min(max(float(t), self.times[0]), self.times[-1])
        if derivative:
            return float(self._splines[0](t, 1)), self._splines[1](t, 1)
        return float(self._splines[0](t)), self._splines[1](t)

    def phi_at(self, t):
        """Cubic Hermite interpolation of phi using the stored time derivative."""
        t, mean, osc = self._interpolate(t)
        return (mean + osc) - self.background.shift(t)

    def state_at(self, t):
        """State at an arbitrary t, re-integrated from the last sample at or before t.

        Sub-steps are no longer than the configured dt, so the result carries the
        solver's own error rather than an interpolation error.
        """
        if t < self.times[0] - 1e-12 or t > self.times[-1] + 1e-12:
            raise ValueError(f"t={t} outside trajectory span [{self.times[0]}, {self.times[-1]}]")
        i = max(int(np.searchsorted(self.times, t, side="right")) - 1, 0)
        gap = float(t) - float(self.times[i])
        state = self.state(i)
        if gap <= 1e-12 * max(1.0, abs(t)):
            return state
        steps = math.ceil(gap / self.config.dt - 1e-9)
        sub = replace(self.config, dt=gap / steps)
        for _ in range(steps):
            state = step(state, sub)
        return state

    def metric_at(self, t):
        t, _, osc = self._interpolate(t)
        g, _ = self.background.metric_values(t, osc, -np.inf)
        return MetricField(self.grid, g, self.config.positivity_floor)

    def class_residual(self):
        """max |observed class coefficient - evolve_class| over samples."""
        a, b = np.array([evolve_class(KahlerClass(1.0, 0.0), t).as_tuple()
                         for t in self.times]).T
        return float(max(np.max(np.abs(self.class_a - a)), np.max(np.abs(self.class_b - b))))


def _diagnostics(state, flat0_inv):
    metric = state.metric
    eig = metric.eigenvalues
    mean_g = metric.values.mean(axis=state.grid.axes)
    class_a = float(np.trace(flat0_inv @ mean_g).real) / state.grid.n
    return (curvature(metric).sup_rm_norm, float(eig[..., 0].min()),
            float(eig[..., -1].max()), class_a, 1.0 - math.exp(-state.t))


def assemble_trajectory(background, config, times, pot_mean, pot_osc, pot_dot, label=""):
    """Trajectory from externally computed potentials; diagnostics are recomputed."""
    flat0_inv = np.linalg.inv(background.flat0)
    diags = []
    for t, mean, osc in zip(times, pot_mean, pot_osc):
        g, _ = background.metric_values(float(t), osc, -np.inf)
        state = FlowState(t=float(t), pot_mean=float(mean), pot_osc=osc, background=background,
                          metric=MetricField(background.grid, g, config.positivity_floor))
        diags.append(_diagnostics(state, flat0_inv))
    cols = np.array(diags, dtype=float).T
    return Trajectory(background=background, config=config, times=np.asarray(times, float),
                      pot_mean=np.asarray(pot_mean, float), pot_osc=np.asarray(pot_osc),
                      pot_dot=np.asarray(pot_dot), sup_rm=cols[0], eig_min=cols[1],
                      eig_max=cols[2], class_a=cols[3], class_b=cols[4], label=label)


def run(initial, config, label=""):
    """Integrate from ``initial`` to ``config.horizon``.

    Samples every ``sample_stride`` steps and at the final step.  Loss of
    positivity or sup|Rm| above ``rm_ceiling`` ends the run early with
    ``Trajectory.terminal`` set; StabilityViolation propagates with the
    partial trajectory attached as ``.partial``.
    """
    flat0_inv = np.linalg.inv(initial.background.flat0)
    keys = ("times", "pot_mean", "pot_osc", "pot_dot", "sup_rm", "eig_min", "eig_max",
            "class_a", "class_b")
    buf = {k: [] for k in keys}
    terminal = None

    def record(s):
        diag = _diagnostics(s, flat0_inv)
        for key, val in zip(keys, (s.t, s.pot_mean, s.pot_osc, s.potential_velocity) + diag):
            buf[key].append(val)
        return diag[0]

    def build(steps):
        arrays = {k: np.asarray(v, dtype=float) for k, v in buf.items()}
        return Trajectory(background=initial.background, config=config, terminal=terminal,
                          steps_taken=steps, label=label, **arrays)

    state = initial
    record(state)
    n_steps = config.steps
    done = 0
    for i in range(n_steps):
        try:
            state = step(state, config)
        except PositivityLoss as exc:
            terminal = {"reason": "positivity_loss", "t": state.t, "node": exc.node,
                        "min_eigenvalue": exc.min_eigenvalue}
            log.warning("flow %s terminated: %s", label, exc)
            break
        except StabilityViolation as exc:
            exc.partial = build(done)
            raise
        done = i + 1
        if done % config.sample_stride == 0 or done == n_steps:
            sup_rm = record(state)
            if not sup_rm <= config.rm_ceiling:
                terminal = {"reason": "curvature_ceiling", "t": state.t, "sup_rm": sup_rm}
                log.warning("flow %s hit the curvature ceiling at t=%.4f", label, state.t)
                break
    return build(done)
