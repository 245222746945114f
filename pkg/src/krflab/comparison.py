"""Comparison of a flow against rescaled copies of a reference flow.

Given omega_0 and a reference omega_tilde_0, the bracket lambda_- omega_tilde_0 <= omega_0 <=
lambda_+ omega_tilde_0 yields flows omega^- <= ... <= omega^+ obtained from omega_tilde by the
lambda/tau rescaling.  With a shared (chi, Omega) the potential differences

    u = phi - phi^-,   psi = phi^+ - phi^-,   v = phi - phi^+

are tracked together with traces, volume ratios and the connection deviation S.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .flow import init_flow, run
from .geometry import (MetricField, PositivityLoss, eigen_ratio, generalized_eigenvalues,
                       laplacian_at, psi_and_s, trace)
from .oracles import scaled_family

log = logging.getLogger(__name__)

PROBES = ("udot_minus_Au", "udot_plus_Au", "log_trace_minus_Au", "s_plus_A_trace")


@dataclass(frozen=True)
class BracketPair:
    lambda_minus: float
    lambda_plus: float

    def __post_init__(self):
        if not self.lambda_minus > 0:
            raise ValueError("lambda_minus must be positive")
        if not self.lambda_plus >= self.lambda_minus:
            raise ValueError("lambda_plus must be >= lambda_minus")

    def verify(self, omega0, tilde0, tol=1e-12):
        """True when lambda_- w~ <= w <= lambda_+ w~ at every node."""
        ev = generalized_eigenvalues(omega0.values, tilde0.values)
        return bool(ev.min() >= self.lambda_minus * (1 - tol)
                    and ev.max() <= self.lambda_plus * (1 + tol))


def bracket_initial(omega0, tilde0, slack=0.1):
    """lambda_- = (1 - slack) min ratio and lambda_+ = (1 + slack) max ratio of omega0 to tilde0."""
    if omega0.grid != tilde0.grid:
        raise ValueError("metrics live on different grids")
    if not 0 < slack < 1:
        raise ValueError("slack must lie in (0, 1)")
    lo, hi = eigen_ratio(omega0, tilde0)
    pair = BracketPair((1 - slack) * lo, (1 + slack) * hi)
    # omega_* = omega_0 - lambda_- omega_tilde_0 must be strictly positive
    star = omega0.values - pair.lambda_minus * tilde0.values
    MetricField(omega0.grid, star, positivity_floor=0.0)
    if not pair.verify(omega0, tilde0):
        raise PositivityLoss("bracket ordering failed")
    return pair


SERIES = ("u_min", "u_max", "psi_min", "psi_max", "v_min", "v_max", "udot_min", "udot_max",
          "uv_residual", "tr_w_wminus_min", "tr_w_wminus_max", "tr_wminus_w_max",
          "volratio_min", "volratio_max", "S_max", "ratio_min", "ratio_max",
          "chain_excess", "printed_chain_excess", "hm_gm_excess", "printed_amgm_excess")


@dataclass(eq=False)
class ComparisonState:
    omega: object                 # Trajectory of omega
    tilde: object                 # Trajectory of omega_tilde (may extend past the horizon)
    plus: object                  # rescaled omega_tilde with lambda_+
    minus: object                 # rescaled omega_tilde with lambda_-
    bracket: BracketPair
    times: np.ndarray
    series: dict
    terminal: dict | None = None
    _fields: list = field(default=None, repr=False)

    @property
    def n(self):
        return self.omega.grid.n

    def __len__(self):
        return len(self.times)

    def tilde_index(self, i):
        return int(np.argmin(np.abs(self.tilde.times - self.times[i])))

    def potentials(self, i):
        """(u, psi, v, udot) fields at sample i."""
        phi, phim, phip = (tr.phi_sample(i) for tr in (self.omega, self.minus, self.plus))
        udot = self.omega.phidot_sample(i) - self.minus.phidot_sample(i)
        return phi - phim, phip - phim, phi - phip, udot

    def probe_fields(self):
        """Per-sample dict of u, udot, tr_w w^-, S and the metric omega; cached."""
        if self._fields is None:
            out = []
            for i in range(len(self)):
                g, gm = self.omega.metric(i), self.minus.metric(i)
                u, _, _, udot = self.potentials(i)
                out.append({"u": u, "udot": udot, "trace": trace(g, gm, check=False),
                            "S": psi_and_s(g, gm).s_field, "metric": g})
            self._fields = out
        return self._fields

    def csv_rows(self):
        """Rows for the time-series CSV (columns shared with plain flow runs)."""
        s = self.series
        for i, t in enumerate(self.times):
            yield {"t": t, "sup_rm": self.omega.sup_rm[i], "eig_min": self.omega.eig_min[i],
                   "eig_max": self.omega.eig_max[i], "u_min": s["u_min"][i],
                   "u_max": s["u_max"][i], "udot_min": s["udot_min"][i],
                   "udot_max": s["udot_max"][i],
                   "psi_max_abs": max(abs(s["psi_min"][i]), abs(s["psi_max"][i])),
                   "v_max": s["v_max"][i], "tr_w_wminus_max": s["tr_w_wminus_max"][i],
                   "tr_wminus_w_max": s["tr_wminus_w_max"][i],
                   "volratio_min": s["volratio_min"][i], "volratio_max": s["volratio_max"][i],
                   "S_max": s["S_max"][i], "class_a": self.omega.class_a[i],
                   "class_b": self.omega.class_b[i]}


def _sample_series(omega, tilde, plus, minus, i, j):
    n = omega.grid.n
    g, gm, gt = omega.metric(i), minus.metric(i), tilde.metric(j)
    phi, phim, phip = omega.phi_sample(i), minus.phi_sample(i), plus.phi_sample(i)
    u, psi, v = phi - phim, phip - phim, phi - phip
    udot = omega.phidot_sample(i) - minus.phidot_sample(i)
    tr_w_wm = trace(g, gm, check=False)
    tr_wm_w = trace(gm, g, check=False)
    vol = g.det / gm.det
    rmin, rmax = eigen_ratio(g, gt)
    chain = n * vol * tr_w_wm ** (n - 1)
    printed = n * vol * tr_w_wm
    return {
        "u_min": u.min(), "u_max": u.max(), "psi_min": psi.min(), "psi_max": psi.max(),
        "v_min": v.min(), "v_max": v.max(), "udot_min": udot.min(), "udot_max": udot.max(),
        "uv_residual": np.max(np.abs(u - (v + psi))),
        "tr_w_wminus_min": tr_w_wm.min(), "tr_w_wminus_max": tr_w_wm.max(),
        "tr_wminus_w_max": tr_wm_w.max(),
        "volratio_min": vol.min(), "volratio_max": vol.max(),
        "S_max": psi_and_s(g, gm).sup_s, "ratio_min": rmin, "ratio_max": rmax,
        # positive values are violations
        "chain_excess": np.max(tr_wm_w - chain),
        "printed_chain_excess": np.max(tr_wm_w - printed),
        "hm_gm_excess": np.max((n / tr_w_wm) ** n - vol),
        "printed_amgm_excess": np.max((n / tr_wm_w.max()) ** n - vol),
    }


def evolve_comparison(omega0, tilde0, config, slack=0.1, bracket=None, volume_form=None):
    """Run omega and omega_tilde, build omega^+- by rescaling omega_tilde, record the series.

    All flows share Omega (default det omega_tilde_0) and chi = i ddbar log Omega.
    The omega_tilde run is extended by log(1 / min(lambda_-, 1)) so that tau(t)
    stays covered for the lower rescaling.
    """
    if omega0.grid != tilde0.grid:
        raise ValueError("metrics live on different grids")
    pair = bracket or bracket_initial(omega0, tilde0, slack)
    if not pair.verify(omega0, tilde0):
        raise ValueError(f"{pair} does not bracket omega0 against tilde0")
    if volume_form is None:
        volume_form = tilde0.det
    omega = run(init_flow(omega0, volume_form=volume_form, config=config), config, label="omega")
    extra = math.log(1.0 / min(pair.lambda_minus, 1.0))
    if extra > 0:
        interval = config.sample_interval
        extra = math.ceil((extra + 1e-9) / interval) * interval
    tcfg = config.__class__(**{**config.__dict__, "horizon": config.horizon + extra})
    tilde = run(init_flow(tilde0, volume_form=volume_form, config=tcfg), tcfg, label="tilde")
    terminal = None
    for tr in (omega, tilde):
        if tr.terminal is not None:
            terminal = {"trajectory": tr.label, **tr.terminal}
    horizon = float(omega.times[-1])
    if tilde.terminal is not None:
        # keep only times whose tau is still covered by the truncated reference run
        horizon = min(horizon, float(tilde.times[-1]) - extra)
    if horizon <= 0:
        raise RuntimeError(f"comparison truncated at t=0: {terminal}")
    plus = scaled_family(tilde, pair.lambda_plus, horizon=horizon)
    minus = scaled_family(tilde, pair.lambda_minus, horizon=horizon)
    count = min(len(plus), len(minus), int(np.searchsorted(omega.times, horizon + 1e-12)))
    times = omega.times[:count]
    if not (np.allclose(plus.times[:count], times) and np.allclose(minus.times[:count], times)):
        raise RuntimeError("sample times of the comparison flows do not align")
    rows = [_sample_series(omega, tilde, plus, minus, i,
                           int(np.argmin(np.abs(tilde.times - times[i]))))
            for i in range(count)]
    series = {k: np.array([r[k] for r in rows], dtype=float) for k in SERIES}
    return ComparisonState(omega=omega, tilde=tilde, plus=plus, minus=minus, bracket=pair,
                           times=times, series=series, terminal=terminal)


@dataclass
class BoundReport:
    C_u_lower: float | None = None
    C_u_upper: float | None = None
    eta: float | None = None
    C_u_decay: float | None = None
    decay_holds: bool | None = None
    C_udot: float | None = None
    udot_plateau: bool | None = None
    C_psi: float | None = None
    v_max: float | None = None
    v_ok: bool | None = None
    C_trace: float | None = None
    C_trace_minus: float | None = None
    C_volume: float | None = None
    chain_ok: bool | None = None
    chain_excess: float | None = None
    printed_chain_excess: float | None = None
    printed_chain_holds: bool | None = None
    hm_gm_ok: bool | None = None
    printed_amgm_holds: bool | None = None
    C_equiv: float | None = None

    def merge(self, other):
        for k, v in other.__dict__.items():
            if v is not None:
                setattr(self, k, v)
        return self

    def constants(self):
        return {k: v for k, v in self.__dict__.items() if k.startswith("C_") or k in ("eta", "v_max")}

    @property
    def passed(self):
        flags = [self.v_ok, self.chain_ok, self.hm_gm_ok, self.udot_plateau]
        finite = all(v is None or math.isfinite(v) for v in self.constants().values())
        return finite and all(f is not False for f in flags)


def _halves(times):
    mid = times[0] + 0.5 * (times[-1] - times[0])
    return times <= mid, times >= mid


def check_potential_bounds(state, eta=0.4, v_tol=1e-8, plateau_tol=0.05, min_range=5.0):
    """Smallest constants with -C e^{-t} <= u, u <= C (plain) and u <= C e^{-eta t} (decay),
    |udot| <= C and |psi| <= C on the sampled range; v_max against ``v_tol``.

    The decay form is reported with ``decay_holds`` (the constant needed over the
    final half does not exceed the one over the first half) but does not enter
    ``passed``; the plain bound does.
    """
    if not 0 < eta < 0.5:
        raise ValueError("eta must lie in (0, 1/2)")
    t = state.times
    if t[-1] - t[0] < min_range:
        raise ValueError(f"potential bounds need a t-range >= {min_range}, got {t[-1] - t[0]:.3g}")
    s = state.series
    first, last = _halves(t)
    decay = np.maximum(s["u_max"], 0.0) * np.exp(eta * t)
    udot = np.maximum(np.abs(s["udot_min"]), np.abs(s["udot_max"]))
    return BoundReport(
        C_u_lower=float(np.max(np.maximum(-s["u_min"], 0.0) * np.exp(t))),
        C_u_upper=float(max(np.max(s["u_max"]), 0.0)),
        eta=eta,
        C_u_decay=float(np.max(decay)),
        decay_holds=bool(np.max(decay[last]) <= np.max(decay[first]) * (1 + plateau_tol) + 1e-14),
        C_udot=float(np.max(udot)),
        udot_plateau=bool(np.max(udot[last]) <= np.max(udot[first]) * (1 + plateau_tol) + 1e-14),
        C_psi=float(np.max(np.maximum(np.abs(s["psi_min"]), np.abs(s["psi_max"])))),
        v_max=float(np.max(s["v_max"])),
        v_ok=bool(np.max(s["v_max"]) <= v_tol),
    )


def check_trace_volume_bounds(state, tol=1e-10):
    """Sup of both traces, volume-ratio bounds and the pointwise eigenvalue inequalities.

    ``chain_ok``: tr_{w-} w <= n (w^n / w-^n) (tr_w w-)^{n-1} everywhere.
    The same inequality with exponent 1 on the last factor is evaluated too
    and reported through ``printed_chain_holds``.  ``hm_gm_ok`` checks the
    harmonic/geometric mean bound w^n / w-^n >= (n / tr_w w-)^n.
    """
    s = state.series
    scale = max(1.0, float(np.max(s["tr_wminus_w_max"])))
    return BoundReport(
        C_trace=float(np.max(s["tr_w_wminus_max"])),
        C_trace_minus=float(np.max(s["tr_wminus_w_max"])),
        C_volume=float(max(np.max(s["volratio_max"]), 1.0 / np.min(s["volratio_min"]))),
        chain_excess=float(np.max(s["chain_excess"])),
        chain_ok=bool(np.max(s["chain_excess"]) <= tol * scale),
        printed_chain_excess=float(np.max(s["printed_chain_excess"])),
        printed_chain_holds=bool(np.max(s["printed_chain_excess"]) <= tol * scale),
        hm_gm_ok=bool(np.max(s["hm_gm_excess"]) <= tol * scale),
        printed_amgm_holds=bool(np.max(s["printed_amgm_excess"]) <= tol * scale),
    )


@dataclass(frozen=True, eq=False)
class EquivalenceReport:
    times: np.ndarray
    series: np.ndarray
    sup: float
    final_half_increase: float
    plateau_tol: float

    @property
    def plateaus(self):
        return self.final_half_increase <= self.plateau_tol


def _equivalence(times, rmin, rmax, plateau_tol):
    c = np.maximum(rmax, 1.0 / rmin)
    mid = times[0] + 0.5 * (times[-1] - times[0])
    i_mid = int(np.searchsorted(times, mid - 1e-12))
    base = c[i_mid]
    increase = float((np.max(c[i_mid:]) - base) / base)
    return EquivalenceReport(times=times, series=c, sup=float(np.max(c)),
                             final_half_increase=increase, plateau_tol=plateau_tol)


def equivalence_constant(state, plateau_tol=0.05):
    """C(t) = max(max ratio, 1 / min ratio) of omega(t) against omega_tilde(t)."""
    return _equivalence(state.times, state.series["ratio_min"], state.series["ratio_max"],
                        plateau_tol)


def pairwise_equivalence(a, b, plateau_tol=0.05):
    """Equivalence constant series between two trajectories sampled at the same times."""
    count = min(len(a), len(b))
    if not np.allclose(a.times[:count], b.times[:count]):
        raise ValueError("trajectories are not sampled at the same times")
    ratios = np.array([eigen_ratio(a.metric(i), b.metric(i)) for i in range(count)])
    return _equivalence(a.times[:count], ratios[:, 0], ratios[:, 1], plateau_tol)


@dataclass(frozen=True, eq=False)
class ProbeReport:
    quantity: str
    A: float
    times: np.ndarray
    values: np.ndarray              # the bounded expression at the extremal node, per interior sample
    C: float
    laplacian_worst: float          # signed Laplacian at the extremum relative to ||Q||_inf
    laplacian_ok: bool
    nodes: list


def _probe_terms(quantity, f, A):
    """(Q, extremum, bounded expression given (d_t - Delta) Q)."""
    if quantity == "udot_minus_Au":
        return f["udot"] - A * f["u"], "max", lambda heat, k: heat + (A + 1) * f["udot"][k]
    if quantity == "udot_plus_Au":
        return (f["udot"] + A * f["u"], "min",
                lambda heat, k: (A - 1) * f["udot"][k] + f["trace"][k] - heat)
    if quantity == "log_trace_minus_Au":
        return np.log(f["trace"]) - A * f["u"], "max", lambda heat, k: heat + f["trace"][k]
    if quantity == "s_plus_A_trace":
        return f["S"] + A * f["trace"], "max", lambda heat, k: heat + f["S"][k]
    raise ValueError(f"unknown probe quantity {quantity!r}; expected one of {PROBES}")


def default_probe_A(state):
    """A = 2 + C0 with C0 the sup of |Rm(omega^-)| over the run."""
    return 2.0 + float(np.max(state.minus.sup_rm))


def mp_probe(state, quantity, A=None, max_interval=0.1, lap_tol=1e-6):
    """Maximum-principle probe: at the spatial extremum of Q, evaluate (d_t - Delta_w) Q by
    centered time differences and the discrete Laplacian, and fit the constant C of the
    corresponding differential inequality.
    """
    if quantity not in PROBES:
        raise ValueError(f"unknown probe quantity {quantity!r}; expected one of {PROBES}")
    t = state.times
    if len(t) < 3:
        raise ValueError("probes need at least three samples")
    if np.max(np.diff(t)) > max_interval + 1e-12:
        raise ValueError(f"sample interval {np.max(np.diff(t)):.3g} exceeds {max_interval}")
    A = default_probe_A(state) if A is None else float(A)
    fields = state.probe_fields()
    qs, exprs = [], []
    for f in fields:
        q, ext, expr = _probe_terms(quantity, f, A)
        qs.append(q)
        exprs.append(expr)
    values, nodes, worst = [], [], -np.inf
    for i in range(1, len(t) - 1):
        q = qs[i]
        flat = int(np.argmax(q) if ext == "max" else np.argmin(q))
        k = np.unravel_index(flat, q.shape)
        dq = (qs[i + 1][k] - qs[i - 1][k]) / (t[i + 1] - t[i - 1])
        lap = laplacian_at(q, fields[i]["metric"], k)
        scale = max(float(np.max(np.abs(q))), 1e-300)
        signed = lap / scale if ext == "max" else -lap / scale
        worst = max(worst, signed)
        values.append(float(exprs[i](dq - lap, k)))
        nodes.append(tuple(int(x) for x in k))
    values = np.array(values)
    return ProbeReport(quantity=quantity, A=A, times=t[1:-1], values=values,
                       C=float(np.max(values)), laplacian_worst=float(worst),
                       laplacian_ok=bool(worst <= lap_tol), nodes=nodes)


@dataclass(frozen=True)
class SingularityReport:
    classification: str
    growth_exponent: float
    window: tuple
    max_value: float = 0.0


def classify_singularity(rm_series, window_fraction=0.5, eps_iii=0.05, eps_iib=0.5,
                         ceiling=1e8, rel_floor=1e-6, min_length=16, min_range=5.0):
    """Type III / IIb classification from the log-slope of sup|Rm| over the trailing window.

    ``rm_series`` is an (m, 2) array-like of (t, value).  Values below
    ``rel_floor * max(series)`` are clamped to that floor before taking logs,
    so a series decaying into round-off noise reads as decaying rather than as
    noise growth; the clamp scales with the series and keeps the result
    invariant under multiplication by a positive constant.
    TypeIII needs slope <= eps_iii (decay counts) and values within ``ceiling``;
    slope >= eps_iib or an exceeded ceiling gives TypeIIb.
    """
    arr = np.asarray(rm_series, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("rm_series must be a sequence of (t, value) pairs")
    if len(arr) < min_length:
        raise ValueError(f"need at least {min_length} samples, got {len(arr)}")
    t, val = arr[:, 0], arr[:, 1]
    if np.any(np.diff(t) <= 0):
        raise ValueError("times must be strictly increasing")
    if t[-1] - t[0] < min_range:
        raise ValueError(f"need a t-range of at least {min_range}")
    if np.any(val < 0) or not np.all(np.isfinite(val)):
        raise ValueError("curvature values must be finite and non-negative")
    if not 0 < window_fraction <= 1:
        raise ValueError("window_fraction must lie in (0, 1]")
    start = t[-1] - window_fraction * (t[-1] - t[0])
    sel = t >= start - 1e-12
    window = (float(t[sel][0]), float(t[-1]))
    top = float(np.max(val))
    if top == 0.0:
        return SingularityReport("TypeIII", 0.0, window, 0.0)
    logs = np.log(np.maximum(val[sel], rel_floor * top))
    slope = float(np.polyfit(t[sel], logs, 1)[0])
    if top > ceiling or slope >= eps_iib:
        kind = "TypeIIb"
    elif slope <= eps_iii:
        kind = "TypeIII"
    else:
        kind = "Inconclusive"
    return SingularityReport(kind, slope, window, top)


def rm_series(trajectory):
    return np.column_stack([trajectory.times, trajectory.sup_rm])


@dataclass(frozen=True, eq=False)
class IndependenceReport:
    trajectories: list
    classifications: list
    equivalences: dict              # (i, j) -> EquivalenceReport

    @property
    def agree(self):
        return len({c.classification for c in self.classifications}) == 1

    @property
    def all_type_iii(self):
        return all(c.classification == "TypeIII" for c in self.classifications)

    @property
    def all_plateau(self):
        return all(e.plateaus for e in self.equivalences.values())


def metric_independence(initials, config, window_fraction=0.5, eps_iii=0.05, eps_iib=0.5,
                        plateau_tol=0.05):
    """Flow several initial metrics in the same class; classify each and compare pairwise."""
    trajs = [run(init_flow(g0, config=config), config, label=f"metric{k}")
             for k, g0 in enumerate(initials)]
    classes = [classify_singularity(rm_series(tr), window_fraction, eps_iii, eps_iib,
                                    ceiling=config.rm_ceiling) for tr in trajs]
    eq = {(i, j): pairwise_equivalence(trajs[i], trajs[j], plateau_tol)
          for i in range(len(trajs)) for j in range(i + 1, len(trajs))}
    return IndependenceReport(trajectories=trajs, classifications=classes, equivalences=eq)
