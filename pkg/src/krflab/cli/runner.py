"""Scenario execution: runs the configured pipeline and writes CSV series and a JSON summary."""
from __future__ import annotations

import csv
import datetime as _dt
import json
import logging
import math
import os
import time
from dataclasses import asdict, replace

import numpy as np

from .. import __version__
from ..cohomology import (KahlerClass, NefCanonical, ToyFano, class_series, is_kahler,
                          singular_time, singular_time_bisection)
from ..comparison import (PROBES, check_potential_bounds, check_trace_volume_bounds,
                          classify_singularity, default_probe_A, equivalence_constant,
                          evolve_comparison, mp_probe, rm_series)
from ..flow import init_flow, run
from ..oracles import rescaling_check, product_rm_series
from ..scaling import bracket_check, tau_of_t, verify_class_identity
from .config import SCHEMA_VERSION, ConfigError

log = logging.getLogger(__name__)

CSV_COLUMNS = ("t", "sup_rm", "eig_min", "eig_max", "u_min", "u_max", "udot_min", "udot_max",
               "psi_max_abs", "v_max", "tr_w_wminus_max", "tr_wminus_w_max", "volratio_min",
               "volratio_max", "S_max", "class_a", "class_b")

EXIT_OK, EXIT_CHECK_FAILED, EXIT_TERMINATED, EXIT_CONFIG = 0, 1, 2, 3


def _fmt(value):
    if value is None:
        return ""
    value = float(value)
    return repr(value) if math.isfinite(value) else ""


def write_csv(path, rows, scenario_id):
    """Write rows (dicts keyed by CSV_COLUMNS) after a timestamped comment line."""
    stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    with open(path, "w", newline="") as fh:
        fh.write(f"# krflab {__version__} scenario={scenario_id} generated={stamp}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(row.get(c)) for c in CSV_COLUMNS])


def trajectory_rows(traj):
    for i, t in enumerate(traj.times):
        yield {"t": t, "sup_rm": traj.sup_rm[i], "eig_min": traj.eig_min[i],
               "eig_max": traj.eig_max[i], "class_a": traj.class_a[i], "class_b": traj.class_b[i]}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        obj = float(obj)
        return obj if math.isfinite(obj) else str(obj)
    return obj


class _Checks:
    """Collects verdicts for the enabled checks; a check that raises is recorded as failed."""

    def __init__(self, enabled):
        self.enabled = enabled
        self.results = {}

    def __call__(self, name, fn):
        if name not in self.enabled:
            return
        try:
            passed, value, threshold, detail = fn()
        except (ValueError, RuntimeError, ArithmeticError) as exc:
            passed, value, threshold, detail = False, None, None, f"error: {exc}"
        self.results[name] = {"passed": bool(passed), "value": value, "threshold": threshold,
                              "detail": detail}


def _volume(cfg, metric):
    return np.ones(metric.grid.shape) if cfg.volume_form == "flat" else None


def _singularity_check(report, expected, cfg):
    def fn():
        if isinstance(report, Exception):
            raise report
        threshold = cfg.checks.eps_iii if expected == "TypeIII" else cfg.checks.eps_iib
        return (report.classification == expected, report.growth_exponent, threshold,
                f"{report.classification} (expected {expected}) over t in "
                f"[{report.window[0]:.4g}, {report.window[1]:.4g}]")
    return fn


def _class_check(trajs, tol):
    def fn():
        worst = max(tr.class_residual() for tr in trajs)
        return worst <= tol, worst, tol, "max |class coefficient - evolve_class| over samples"
    return fn


def _classify(cfg, series):
    """Classification report, or the ValueError when the series is too short to classify."""
    c = cfg.checks
    try:
        return classify_singularity(series, c.window_fraction, c.eps_iii, c.eps_iib,
                                    ceiling=cfg.flow.rm_ceiling)
    except ValueError as exc:
        return exc


def _report_dict(report):
    return None if isinstance(report, Exception) else asdict(report)


def _run_torus(cfg, checks, outdir):
    grid = cfg.grid()
    g0 = cfg.model["initial"].build(grid, cfg.seed)
    traj = run(init_flow(g0, volume_form=_volume(cfg, g0), config=cfg.flow), cfg.flow, "omega")
    write_csv(os.path.join(outdir, "trajectory.csv"), trajectory_rows(traj), cfg.id)
    report = _classify(cfg, rm_series(traj))
    checks("singularity", _singularity_check(report, "TypeIII", cfg))
    checks("class_consistency", _class_check([traj], cfg.checks.class_tol))
    constants = {"sup_rm_max": float(np.max(traj.sup_rm)), "eig_min": float(np.min(traj.eig_min))}
    return {"constants": constants, "singularity": _report_dict(report), "trajectories": [traj],
            "artifacts": ["trajectory.csv"]}


def _run_scaled(cfg, checks, outdir):
    grid = cfg.grid()
    lam0 = cfg.model["lambda0"]
    tilde0 = cfg.model["base"].build(grid, cfg.seed)
    flow = cfg.flow
    extra = math.log(1.0 / min(lam0, 1.0))
    if extra > 0:
        extra = math.ceil((extra + 1e-9) / flow.sample_interval) * flow.sample_interval
    base_cfg = replace(flow, horizon=flow.horizon + extra)
    base_init = init_flow(tilde0, volume_form=_volume(cfg, tilde0), config=base_cfg)
    base = run(base_init, base_cfg, "tilde")
    direct = run(init_flow(tilde0.scaled(lam0), chi=base.chi, volume_form=base.volume_form,
                           config=flow), flow, "omega")
    write_csv(os.path.join(outdir, "base.csv"), trajectory_rows(base), cfg.id)
    write_csv(os.path.join(outdir, "scaled.csv"), trajectory_rows(direct), cfg.id)
    c = cfg.checks
    constants = {}

    def class_identity():
        res = verify_class_identity(lam0, KahlerClass(1.0, 0.0), np.linspace(0, flow.horizon, 200))
        constants["class_identity_residual"] = res
        return res <= c.identity_tol, res, c.identity_tol, "max class residual on 200 samples"

    cache = {}

    def rescaling():
        if "rep" not in cache:
            cache["rep"] = rescaling_check(direct, base, lam0)
        return cache["rep"]

    def rescaled_metric():
        res = rescaling().max_metric_residual
        constants["rescaled_metric_residual"] = res
        return res <= c.rescaled_tol, res, c.rescaled_tol, "sup |w(t) - lambda(t) w~(tau(t))|"

    def scaled_potential():
        rep = rescaling()
        constants["u_spread"] = rep.max_u_spread
        constants["u_ode_error"] = rep.max_ode_error
        ok = rep.max_u_spread <= c.spread_tol and rep.max_ode_error <= c.ode_tol
        return (ok, rep.max_ode_error, c.ode_tol,
                f"spatial spread of u {rep.max_u_spread:.3e} (tolerance {c.spread_tol:g})")

    def bracket():
        c0 = math.sqrt(grid.n) * float(np.max(base.sup_rm))
        span = base.times[np.atleast_1d(tau_of_t(lam0, base.times)) <= base.times[-1] + 1e-12]
        samples = [(float(t), base.metric(i)) for i, t in enumerate(base.times)]
        rep = bracket_check(samples, lam0, c0, times=span[span <= flow.horizon + 1e-12])
        constants["bracket_C0"] = c0
        constants["bracket_equivalence"] = rep.equivalence_constant
        ok = rep.increasing_ok and rep.decreasing_ok
        return (ok, rep.equivalence_constant, None,
                f"monotonicity increasing={rep.increasing_ok} decreasing={rep.decreasing_ok}")

    checks("class_identity", class_identity)
    checks("rescaled_metric", rescaled_metric)
    checks("scaled_potential", scaled_potential)
    checks("bracket", bracket)
    checks("class_consistency", _class_check([base, direct], c.class_tol))
    return {"constants": constants, "singularity": None, "trajectories": [base, direct],
            "artifacts": ["base.csv", "scaled.csv"]}


def _run_comparison(cfg, checks, outdir):
    grid = cfg.grid()
    a = cfg.model["metric_a"].build(grid, cfg.seed)
    b = cfg.model["metric_b"].build(grid, cfg.seed)
    c = cfg.checks
    state = evolve_comparison(a, b, cfg.flow, slack=c.slack, volume_form=_volume(cfg, b))
    write_csv(os.path.join(outdir, "comparison.csv"), state.csv_rows(), cfg.id)
    write_csv(os.path.join(outdir, "tilde.csv"), trajectory_rows(state.tilde), cfg.id)
    constants = {"lambda_minus": state.bracket.lambda_minus,
                 "lambda_plus": state.bracket.lambda_plus}
    report = _classify(cfg, rm_series(state.omega))

    def potential_bounds():
        rep = check_potential_bounds(state, c.eta, c.v_tol, c.plateau_tol)
        constants.update({k: v for k, v in rep.constants().items() if v is not None})
        constants["decay_holds"] = rep.decay_holds
        return (rep.passed, rep.v_max, c.v_tol,
                f"udot plateau={rep.udot_plateau}; decay e^(-eta t) holds={rep.decay_holds}")

    def trace_volume():
        rep = check_trace_volume_bounds(state)
        constants.update({k: v for k, v in rep.constants().items() if v is not None})
        constants["printed_chain_excess"] = rep.printed_chain_excess
        ok = rep.chain_ok and rep.hm_gm_ok
        return (ok, rep.chain_excess, 0.0,
                f"exponent-1 form holds={rep.printed_chain_holds}; "
                f"mean bound from tr_(w-) w holds={rep.printed_amgm_holds}")

    def equivalence():
        rep = equivalence_constant(state, c.plateau_tol)
        constants["C_equiv"] = rep.sup
        return (rep.plateaus, rep.final_half_increase, c.plateau_tol,
                "relative increase of C(t) over the final half")

    def type_agreement():
        keep = state.tilde.times <= state.times[-1] + 1e-12
        tilde = _classify(cfg, np.column_stack([state.tilde.times[keep], state.tilde.sup_rm[keep]]))
        for rep in (report, tilde):
            if isinstance(rep, Exception):
                raise rep
        return (tilde.classification == report.classification,
                abs(tilde.growth_exponent - report.growth_exponent), None,
                f"omega {report.classification}, tilde {tilde.classification}")

    def probes():
        A = default_probe_A(state) if c.probe_A is None else c.probe_A
        worst, ok, parts = -math.inf, True, []
        for q in PROBES:
            rep = mp_probe(state, q, A)
            constants[f"probe_{q}"] = rep.C
            worst = max(worst, rep.laplacian_worst)
            ok = ok and rep.laplacian_ok and math.isfinite(rep.C)
            parts.append(f"{q}: C={rep.C:.6g}")
        constants["probe_A"] = A
        return ok, worst, 1e-6, "; ".join(parts)

    checks("potential_bounds", potential_bounds)
    checks("trace_volume", trace_volume)
    checks("equivalence", equivalence)
    checks("type_agreement", type_agreement)
    checks("mp_probes", probes)
    checks("singularity", _singularity_check(report, "TypeIII", cfg))
    checks("class_consistency", _class_check([state.omega], c.class_tol))
    return {"constants": constants, "singularity": _report_dict(report),
            "trajectories": [state.omega, state.tilde], "artifacts": ["comparison.csv", "tilde.csv"],
            "terminal": state.terminal}


def _run_synthetic(cfg, checks, outdir):
    m = cfg.model
    t = np.linspace(m["t_start"], m["t_end"], m["samples"])
    series = product_rm_series(m["rm_cy_sq"], m["rm_b_sq"], t)
    rows = ({"t": ti, "sup_rm": math.sqrt(v)} for ti, v in series)
    write_csv(os.path.join(outdir, "series.csv"), rows, cfg.id)
    report = _classify(cfg, series)
    expected = "TypeIII" if m["rm_cy_sq"] == 0 else "TypeIIb"
    checks("singularity", _singularity_check(report, expected, cfg))
    return {"constants": {}, "singularity": _report_dict(report), "trajectories": [],
            "artifacts": ["series.csv"]}


def _run_toy_cone(cfg, checks, outdir):
    m = cfg.model
    cone = ToyFano(m["kappa"]) if m["cone"] == "toy_fano" else NefCanonical()
    c0 = KahlerClass(*map(float, m["class"]))
    if not is_kahler(c0, cone):
        raise ConfigError([f"model.class: {list(m['class'])} is not Kähler in the {m['cone']} cone"])
    T = singular_time(c0, cone)
    t_end = T if math.isfinite(T) else 10.0
    times = np.linspace(0.0, t_end, 200)
    a, b = class_series(c0, times)
    rows = ({"t": ti, "class_a": ai, "class_b": bi} for ti, ai, bi in zip(times, a, b))
    write_csv(os.path.join(outdir, "classes.csv"), rows, cfg.id)

    def fn():
        ref = singular_time_bisection(c0, cone)
        if math.isinf(T) or math.isinf(ref):
            return T == ref, 0.0 if T == ref else math.inf, 1e-9, f"T={T}, bisection={ref}"
        diff = abs(T - ref)
        return diff <= 1e-9, diff, 1e-9, f"T={T!r}, bisection={ref!r}"

    checks("singular_time", fn)
    return {"constants": {"singular_time": T}, "singularity": None, "trajectories": [],
            "artifacts": ["classes.csv"]}


RUNNERS = {"torus": _run_torus, "scaled": _run_scaled, "comparison": _run_comparison,
           "synthetic": _run_synthetic, "toy_cone": _run_toy_cone}


def run_scenario(cfg):
    """Execute a validated scenario. Returns (summary dict, exit code)."""
    outdir = os.path.join(cfg.output_dir, cfg.id)
    os.makedirs(outdir, exist_ok=True)
    checks = _Checks(cfg.checks.enabled)
    start = time.perf_counter()
    result = RUNNERS[cfg.kind](cfg, checks, outdir)
    elapsed = time.perf_counter() - start
    terminal = result.get("terminal")
    for tr in result["trajectories"]:
        if terminal is None and tr.terminal is not None:
            terminal = {"trajectory": tr.label, **tr.terminal}
    summary = {
        "schema_version": SCHEMA_VERSION,
        "scenario_id": cfg.id,
        "model": cfg.kind,
        "config_hash": cfg.config_hash(),
        "version": __version__,
        "generated": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "checks": {name: checks.results[name] for name in cfg.checks.enabled},
        "constants": result["constants"],
        "singularity": result["singularity"],
        "terminal": terminal,
        "runtime": {"seconds": elapsed,
                    "steps": sum(tr.steps_taken for tr in result["trajectories"])},
        "artifacts": result["artifacts"] + ["summary.json"],
    }
    summary = _jsonable(summary)
    with open(os.path.join(outdir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
    if terminal is not None:
        code = EXIT_TERMINATED
    elif all(r["passed"] for r in summary["checks"].values()):
        code = EXIT_OK
    else:
        code = EXIT_CHECK_FAILED
    return summary, code
