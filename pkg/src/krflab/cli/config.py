"""Scenario configuration: TOML schema, defaults and validation."""
from __future__ import annotations

import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass, field

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..flow import SCHEMES, FlowConfig
from ..geometry import MetricField, TorusGrid, cosine_metric, random_metric

SCHEMA_VERSION = 1
OUTPUT_ENV = "KRFLAB_OUTPUT_DIR"

MODEL_KINDS = ("torus", "scaled", "comparison", "synthetic", "toy_cone")

CHECKS = {
    "class_identity": "scaled: class identity [w(t)] = lambda(t)[w~(tau(t))] on a t-grid",
    "rescaled_metric": "scaled: integrated flow from lambda0*w~0 equals the rescaled reference flow",
    "scaled_potential": "scaled: u = phi - lambda*phi~(tau) is spatially constant and solves the ODE",
    "bracket": "scaled: e^{(C0+1)t} w~ nondecreasing, e^{(1-C0)t} w~ nonincreasing, w~(tau) ~ w~(t)",
    "singularity": "torus/comparison/synthetic: Type III vs IIb classification matches theory",
    "class_consistency": "torus/scaled/comparison: sampled class coefficients follow evolve_class",
    "potential_bounds": "comparison: u, udot, psi bounds and v <= tolerance",
    "trace_volume": "comparison: trace/volume bounds and pointwise eigenvalue inequalities",
    "equivalence": "comparison: equivalence constant plateaus over the final half",
    "type_agreement": "comparison: w and w~ receive the same classification",
    "mp_probes": "comparison: maximum-principle probes at spatial extrema",
    "singular_time": "toy_cone: closed-form singular time agrees with bisection",
}

APPLICABLE = {
    "torus": ("singularity", "class_consistency"),
    "scaled": ("class_identity", "rescaled_metric", "scaled_potential", "bracket",
               "class_consistency"),
    "comparison": ("potential_bounds", "trace_volume", "equivalence", "type_agreement",
                   "mp_probes", "singularity", "class_consistency"),
    "synthetic": ("singularity",),
    "toy_cone": ("singular_time",),
}


class ConfigError(ValueError):
    """Invalid scenario configuration; ``errors`` lists every violated constraint."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {e}" for e in self.errors))


@dataclass(frozen=True)
class MetricSpec:
    kind: str
    params: dict

    def build(self, grid, seed):
        if self.kind == "flat":
            return MetricField.flat(grid, float(self.params.get("scale", 1.0)))
        if self.kind == "cosine":
            return cosine_metric(grid, float(self.params["amplitude"]),
                                 tuple(self.params.get("mode", [1] + [0] * (grid.ndim - 1))),
                                 float(self.params.get("phase", 0.0)))
        return random_metric(grid, float(self.params["eps"]), int(self.params.get("modes", 1)),
                             seed=seed + int(self.params.get("seed_offset", 0)),
                             max_wavenumber=int(self.params.get("max_wavenumber", 2)))


@dataclass(frozen=True)
class ChecksConfig:
    enabled: tuple
    eta: float = 0.4
    eps_iii: float = 0.05
    eps_iib: float = 0.5
    window_fraction: float = 0.5
    slack: float = 0.1
    probe_A: float | None = None
    v_tol: float = 1e-8
    plateau_tol: float = 0.05
    identity_tol: float = 1e-12
    rescaled_tol: float = 1e-6
    spread_tol: float = 1e-10
    ode_tol: float = 1e-6
    class_tol: float = 1e-10


@dataclass(frozen=True)
class ScenarioConfig:
    id: str
    seed: int
    model: dict
    flow: FlowConfig
    checks: ChecksConfig
    output_dir: str
    volume_form: str
    raw: dict = field(repr=False, default_factory=dict)

    @property
    def kind(self):
        return self.model["kind"]

    def grid(self):
        return TorusGrid(int(self.model["n"]), int(self.model["N"]))

    def config_hash(self):
        """sha256 of the canonical JSON form of the configuration without [output]."""
        payload = {k: v for k, v in self.raw.items() if k != "output"}
        text = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(text.encode()).hexdigest()


def _num(errors, where, value, lo=None, hi=None, lo_open=False, hi_open=False, integer=False):
    kind = int if integer else (int, float)
    if isinstance(value, bool) or not isinstance(value, kind):
        errors.append(f"{where}: expected {'an integer' if integer else 'a number'}, got {value!r}")
        return None
    if not math.isfinite(value):
        errors.append(f"{where}: must be finite")
        return None
    if lo is not None and (value <= lo if lo_open else value < lo):
        errors.append(f"{where}: must be {'>' if lo_open else '>='} {lo}, got {value}")
    if hi is not None and (value >= hi if hi_open else value > hi):
        errors.append(f"{where}: must be {'<' if hi_open else '<='} {hi}, got {value}")
    return value


def _check_keys(errors, where, table, allowed):
    for key in table:
        if key not in allowed:
            errors.append(f"{where}.{key}: unknown key")


def _metric_spec(errors, where, spec, n):
    if not isinstance(spec, dict):
        errors.append(f"{where}: expected a table with a 'kind' key")
        return None
    kind = spec.get("kind")
    allowed = {"flat": ("kind", "scale"),
               "cosine": ("kind", "amplitude", "mode", "phase"),
               "random": ("kind", "eps", "modes", "max_wavenumber", "seed_offset")}
    if kind not in allowed:
        errors.append(f"{where}.kind: must be one of {sorted(allowed)}, got {kind!r}")
        return None
    _check_keys(errors, where, spec, allowed[kind])
    if kind == "flat":
        _num(errors, f"{where}.scale", spec.get("scale", 1.0), lo=0, lo_open=True)
    elif kind == "cosine":
        if "amplitude" not in spec:
            errors.append(f"{where}.amplitude: required")
        else:
            # the perturbation amplitude * cos stays positive only for |amplitude| < 1
            _num(errors, f"{where}.amplitude", spec["amplitude"], lo=-1, hi=1,
                 lo_open=True, hi_open=True)
        mode = spec.get("mode", [1] + [0] * (2 * n - 1))
        if (not isinstance(mode, list) or len(mode) != 2 * n
                or not all(isinstance(m, int) and not isinstance(m, bool) for m in mode)
                or not any(mode)):
            errors.append(f"{where}.mode: expected a non-zero list of {2 * n} integers, got {mode!r}")
        _num(errors, f"{where}.phase", spec.get("phase", 0.0))
    else:
        modes = _num(errors, f"{where}.modes", spec.get("modes", 1), lo=1, integer=True)
        if "eps" not in spec:
            errors.append(f"{where}.eps: required")
        elif modes is not None:
            _num(errors, f"{where}.eps", spec["eps"], lo=0, hi=1.0 / (2 * modes), hi_open=True)
        _num(errors, f"{where}.max_wavenumber", spec.get("max_wavenumber", 2), lo=1, integer=True)
        _num(errors, f"{where}.seed_offset", spec.get("seed_offset", 0), integer=True)
    return MetricSpec(kind, {k: v for k, v in spec.items() if k != "kind"})


def _validate_model(errors, model):
    if not isinstance(model, dict):
        errors.append("model: expected a table")
        return {"kind": None}
    kind = model.get("kind", "torus")
    if kind not in MODEL_KINDS:
        errors.append(f"model.kind: must be one of {list(MODEL_KINDS)}, got {kind!r}")
        return {"kind": None}
    out = {"kind": kind}
    if kind in ("torus", "scaled", "comparison"):
        n = _num(errors, "model.n", model.get("n", 1), lo=1, hi=2, integer=True)
        N = _num(errors, "model.N", model.get("N", 32), lo=8, integer=True)
        if N is not None and N % 2:
            errors.append(f"model.N: must be even, got {N}")
        out.update(n=n, N=N)
        n = n if n in (1, 2) else 1
    if kind == "torus":
        _check_keys(errors, "model", model, ("kind", "n", "N", "initial"))
        out["initial"] = _metric_spec(errors, "model.initial",
                                      model.get("initial", {"kind": "cosine", "amplitude": 0.3}), n)
    elif kind == "scaled":
        _check_keys(errors, "model", model, ("kind", "n", "N", "lambda0", "base"))
        out["lambda0"] = _num(errors, "model.lambda0", model.get("lambda0", 2.0), lo=0, lo_open=True)
        out["base"] = _metric_spec(errors, "model.base", model.get("base", {"kind": "flat"}), n)
    elif kind == "comparison":
        _check_keys(errors, "model", model, ("kind", "n", "N", "metric_a", "metric_b"))
        out["metric_a"] = _metric_spec(errors, "model.metric_a",
                                       model.get("metric_a", {"kind": "cosine", "amplitude": 0.3}), n)
        out["metric_b"] = _metric_spec(errors, "model.metric_b",
                                       model.get("metric_b", {"kind": "flat"}), n)
    elif kind == "synthetic":
        _check_keys(errors, "model", model, ("kind", "rm_cy_sq", "rm_b_sq", "t_start", "t_end",
                                             "samples"))
        out["rm_cy_sq"] = _num(errors, "model.rm_cy_sq", model.get("rm_cy_sq", 1.0), lo=0)
        out["rm_b_sq"] = _num(errors, "model.rm_b_sq", model.get("rm_b_sq", 1.0), lo=0)
        t0 = _num(errors, "model.t_start", model.get("t_start", 0.05), lo=0, lo_open=True)
        t1 = _num(errors, "model.t_end", model.get("t_end", 10.0), lo=0, lo_open=True)
        if t0 is not None and t1 is not None and t1 <= t0:
            errors.append("model.t_end: must exceed model.t_start")
        out.update(t_start=t0, t_end=t1,
                   samples=_num(errors, "model.samples", model.get("samples", 200), lo=16,
                                integer=True))
    elif kind == "toy_cone":
        _check_keys(errors, "model", model, ("kind", "cone", "kappa", "class"))
        cone = model.get("cone", "toy_fano")
        if cone not in ("toy_fano", "nef"):
            errors.append(f"model.cone: must be 'toy_fano' or 'nef', got {cone!r}")
        out["cone"] = cone
        out["kappa"] = _num(errors, "model.kappa", model.get("kappa", 1.0), lo=0, lo_open=True)
        cls = model.get("class", [2.0, 0.0])
        if (not isinstance(cls, list) or len(cls) != 2
                or not all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in cls)):
            errors.append(f"model.class: expected [a, b], got {cls!r}")
            cls = None
        out["class"] = cls
    return out


def _validate_flow(errors, flow):
    if not isinstance(flow, dict):
        errors.append("flow: expected a table")
        return None, "initial"
    _check_keys(errors, "flow", flow, ("dt", "horizon", "scheme", "sample_stride",
                                       "positivity_floor", "rm_ceiling", "volume_form"))
    defaults = FlowConfig()
    dt = _num(errors, "flow.dt", flow.get("dt", defaults.dt), lo=0, lo_open=True)
    horizon = _num(errors, "flow.horizon", flow.get("horizon", defaults.horizon), lo=0, lo_open=True)
    stride = _num(errors, "flow.sample_stride", flow.get("sample_stride", 50), lo=1, integer=True)
    floor = _num(errors, "flow.positivity_floor",
                 flow.get("positivity_floor", defaults.positivity_floor), lo=0)
    ceiling = _num(errors, "flow.rm_ceiling", flow.get("rm_ceiling", defaults.rm_ceiling),
                   lo=0, lo_open=True)
    scheme = flow.get("scheme", defaults.scheme)
    if scheme not in SCHEMES:
        errors.append(f"flow.scheme: must be one of {list(SCHEMES)}, got {scheme!r}")
    volume = flow.get("volume_form", "initial")
    if volume not in ("initial", "flat"):
        errors.append(f"flow.volume_form: must be 'initial' or 'flat', got {volume!r}")
    if None in (dt, horizon, stride, floor, ceiling) or scheme not in SCHEMES:
        return None, volume
    return FlowConfig(dt=dt, horizon=horizon, scheme=scheme, positivity_floor=floor,
                      sample_stride=stride, rm_ceiling=ceiling), volume


def _validate_checks(errors, checks, kind):
    if not isinstance(checks, dict):
        errors.append("checks: expected a table")
        return None
    fields = ("enabled", "eta", "eps_iii", "eps_iib", "window_fraction", "slack", "probe_A",
              "v_tol", "plateau_tol", "identity_tol", "rescaled_tol", "spread_tol", "ode_tol",
              "class_tol")
    _check_keys(errors, "checks", checks, fields)
    applicable = APPLICABLE.get(kind, ())
    enabled = checks.get("enabled", list(applicable))
    if not isinstance(enabled, list) or not all(isinstance(c, str) for c in enabled):
        errors.append(f"checks.enabled: expected a list of check names, got {enabled!r}")
        enabled = []
    for name in enabled:
        if name not in CHECKS:
            errors.append(f"checks.enabled: unknown check {name!r}")
        elif kind is not None and name not in applicable:
            errors.append(f"checks.enabled: {name!r} does not apply to model kind {kind!r}")
    if len(set(enabled)) != len(enabled):
        errors.append("checks.enabled: duplicate entries")
    d = ChecksConfig(enabled=())
    vals = {
        "eta": _num(errors, "checks.eta", checks.get("eta", d.eta), lo=0, hi=0.5,
                    lo_open=True, hi_open=True),
        "eps_iii": _num(errors, "checks.eps_iii", checks.get("eps_iii", d.eps_iii), lo=0, lo_open=True),
        "eps_iib": _num(errors, "checks.eps_iib", checks.get("eps_iib", d.eps_iib), lo=0, lo_open=True),
        "window_fraction": _num(errors, "checks.window_fraction",
                                checks.get("window_fraction", d.window_fraction), lo=0, hi=1,
                                lo_open=True),
        "slack": _num(errors, "checks.slack", checks.get("slack", d.slack), lo=0, hi=1,
                      lo_open=True, hi_open=True),
        "probe_A": (None if checks.get("probe_A") is None
                    else _num(errors, "checks.probe_A", checks["probe_A"], lo=0)),
    }
    for key in ("v_tol", "plateau_tol", "identity_tol", "rescaled_tol", "spread_tol", "ode_tol",
                "class_tol"):
        vals[key] = _num(errors, f"checks.{key}", checks.get(key, getattr(d, key)), lo=0)
    if (vals["eps_iii"] is not None and vals["eps_iib"] is not None
            and vals["eps_iib"] <= vals["eps_iii"]):
        errors.append("checks.eps_iib: must exceed checks.eps_iii")
    if any(v is None for k, v in vals.items() if k != "probe_A"):
        return None
    return ChecksConfig(enabled=tuple(enabled), **vals)


def validate(raw):
    """Validated ScenarioConfig from a parsed TOML mapping; raises ConfigError."""
    errors = []
    if not isinstance(raw, dict):
        raise ConfigError(["top level: expected a table"])
    _check_keys(errors, "config", raw, ("schema_version", "id", "seed", "model", "flow",
                                        "checks", "output"))
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        errors.append(f"schema_version: unsupported version {version!r} (expected {SCHEMA_VERSION})")
    sid = raw.get("id")
    if not isinstance(sid, str) or not sid.strip():
        errors.append("id: required non-empty string")
    elif any(c in sid for c in "/\\") or sid.startswith("."):
        errors.append(f"id: must be usable as a directory name, got {sid!r}")
    seed = _num(errors, "seed", raw.get("seed", 0), lo=0, integer=True)
    model = _validate_model(errors, raw.get("model", {}))
    flow, volume = _validate_flow(errors, raw.get("flow", {}))
    checks = _validate_checks(errors, raw.get("checks", {}), model["kind"])
    output = raw.get("output", {})
    if not isinstance(output, dict):
        errors.append("output: expected a table")
        output = {}
    _check_keys(errors, "output", output, ("dir",))
    out_dir = output.get("dir", "krflab-output")
    if not isinstance(out_dir, str):
        errors.append("output.dir: expected a string")
    if model["kind"] in ("torus", "scaled", "comparison") and flow is not None:
        n = model.get("n")
        if flow.sample_interval > flow.horizon:
            errors.append("flow.sample_stride: sample interval exceeds the horizon")
        if model["kind"] == "comparison" and checks and "mp_probes" in checks.enabled \
                and flow.sample_interval > 0.1:
            errors.append("flow.sample_stride: mp_probes needs a sample interval <= 0.1")
        if n == 2 and model.get("N") and model["N"] > 32:
            errors.append("model.N: n = 2 grids are limited to N <= 32")
    if errors:
        raise ConfigError(errors)
    return ScenarioConfig(id=sid, seed=seed, model=model, flow=flow, checks=checks,
                          output_dir=os.environ.get(OUTPUT_ENV) or out_dir, volume_form=volume,
                          raw=raw)


def parse_config(path):
    """Read and validate a TOML scenario file."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError([f"{path}: file not found"]) from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"{path}: {exc}"]) from None
    return validate(raw)
