"""Experiment configuration: YAML schema, overrides, validation and builders.

Schema (sections and keys; defaults in brackets)::

    process:  name (drifted-bm | ou | gbm), params {mu, sigma, theta},
              lower [null], upper [null], bound_mode [none | gbm: reflect],
              noise [gaussian]
    kernel:   kind [deterministic] (deterministic | partial-fraction |
              additive-noise | custom-table), params {u_lo, u_hi | s |
              values, probs | csv}
    policy:   s, S, probe [null] {corruption, strength [0.3]}
    cost:     K [1], c [0], h [0]            (holding rate h * x)
    run:      seed, dt, horizon, replications [1], n_cycles [1000],
              x0 [S] (number or list), level [0.95]
    simulate: record_every [1]
    verify:   alpha [0.01], cycles_per_rep [10], pairs, permutations [999],
              markov {s_past, s, t, bins [8, 4, 4], min_cell [50],
              replications, dt}
    optimize: s_range, S_range, grid [1, 16], refine_iterations [8],
              min_step [0], budget [200], n_cycles [30]
    oracle:   lower, upper, points, step, n_steps, k_max [3],
              max_length [n_steps], times, mc_samples [0]
    calibrate: repetitions [500], alpha [0.05], tests [ks, lag1, markov],
              size [200]

Every validation failure raises :class:`ConfigError` naming the key.
"""
from __future__ import annotations

import copy
import math
from pathlib import Path
from typing import Any

import yaml

from . import impulse as imp
from .errors import ConfigError, DomainError
from .policy import NonMarkovProbe, ss_policy
from .process import BUILTIN_SPECS, BOUND_MODES, NOISE_KINDS
from .renewal import CostSpec, LinearHolding, SearchSpace

SCHEMA_VERSION = 1
SECTIONS = ("process", "kernel", "policy", "cost", "run", "simulate", "verify", "optimize",
            "oracle", "calibrate")
# required sections per command; kernel and cost are optional everywhere
COMMAND_SECTIONS = {
    "simulate": ("process", "policy", "run"),
    "verify": ("process", "policy", "run", "verify"),
    "estimate": ("process", "policy", "run"),
    "optimize": ("process", "run", "optimize"),
    "oracle": ("process", "policy", "oracle"),
    "calibrate": ("run",),
}


def load(path) -> dict:
    try:
        with open(Path(path), encoding="utf-8") as fh:
            cfg = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"invalid YAML in {path}: {exc}") from exc
    if cfg is None:
        cfg = {}
    if not isinstance(cfg, dict):
        raise ConfigError("config", "top level must be a mapping")
    return cfg


def apply_overrides(cfg: dict, overrides) -> dict:
    """Apply ``key.sub=value`` overrides; values are parsed as YAML scalars/lists."""
    cfg = copy.deepcopy(cfg)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(item, "override must look like key=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        if not all(parts):
            raise ConfigError(key, "empty key component")
        node = cfg
        for p in parts[:-1]:
            nxt = node.get(p)
            if nxt is None:
                nxt = node[p] = {}
            if not isinstance(nxt, dict):
                raise ConfigError(key, f"{p!r} is not a section")
            node = nxt
        try:
            node[parts[-1]] = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(key, f"cannot parse value {raw!r}") from exc
    return cfg


def _section(cfg: dict, name: str, required: bool = True) -> dict:
    sec = cfg.get(name)
    if sec is None:
        if required:
            raise ConfigError(name, "section is required")
        return {}
    if not isinstance(sec, dict):
        raise ConfigError(name, "section must be a mapping")
    return sec


def _num(sec: dict, key: str, path: str, default: Any = ConfigError, positive=False,
         nonneg=False, integer=False):
    if key not in sec or sec[key] is None:
        if default is ConfigError:
            raise ConfigError(f"{path}.{key}", "is required")
        return default
    val = sec[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{path}.{key}", f"must be a number, got {val!r}")
    if integer and (not float(val).is_integer()):
        raise ConfigError(f"{path}.{key}", f"must be an integer, got {val!r}")
    if not math.isfinite(val):
        raise ConfigError(f"{path}.{key}", "must be finite")
    if positive and not val > 0:
        raise ConfigError(f"{path}.{key}", f"must be positive, got {val!r}")
    if nonneg and val < 0:
        raise ConfigError(f"{path}.{key}", f"must be nonnegative, got {val!r}")
    return int(val) if integer else float(val)


def _pair(sec, key, path, default=ConfigError):
    if key not in sec:
        if default is ConfigError:
            raise ConfigError(f"{path}.{key}", "is required")
        return default
    val = sec[key]
    if not isinstance(val, (list, tuple)) or len(val) != 2:
        raise ConfigError(f"{path}.{key}", "must be a two-element list")
    return tuple(_num({"v": v}, "v", f"{path}.{key}") for v in val)


def _check_keys(sec: dict, allowed, path: str):
    for k in sec:
        if k not in allowed:
            raise ConfigError(f"{path}.{k}", "unknown key")


# -- builders ---------------------------------------------------------------

def build_process(cfg: dict):
    sec = _section(cfg, "process")
    _check_keys(sec, ("name", "params", "lower", "upper", "bound_mode", "noise"), "process")
    name = sec.get("name")
    if name not in BUILTIN_SPECS:
        raise ConfigError("process.name", f"unknown process {name!r}; "
                          f"choose from {sorted(BUILTIN_SPECS)}")
    params = sec.get("params") or {}
    if not isinstance(params, dict):
        raise ConfigError("process.params", "must be a mapping")
    ctor, names = BUILTIN_SPECS[name]
    _check_keys(params, names, "process.params")
    args = [_num(params, p, "process.params") for p in names]
    if args[-1] < 0:
        raise ConfigError("process.params.sigma", "must be nonnegative")
    kw = {}
    for key, field_name in (("lower", "state_lower"), ("upper", "state_upper")):
        if sec.get(key) is not None:
            kw[field_name] = _num(sec, key, "process")
    if "bound_mode" in sec:
        if sec["bound_mode"] not in BOUND_MODES:
            raise ConfigError("process.bound_mode", f"unknown mode {sec['bound_mode']!r}")
        kw["bound_mode"] = sec["bound_mode"]
    if "noise" in sec:
        if sec["noise"] not in NOISE_KINDS:
            raise ConfigError("process.noise", f"unknown noise {sec['noise']!r}")
        kw["noise"] = sec["noise"]
    try:
        return ctor(*args, **kw)
    except DomainError as exc:
        raise ConfigError("process", str(exc)) from exc


def build_kernel(cfg: dict, base_dir=None):
    sec = _section(cfg, "kernel", required=False)
    _check_keys(sec, ("kind", "params"), "kernel")
    kind = sec.get("kind", "deterministic")
    params = sec.get("params") or {}
    if not isinstance(params, dict):
        raise ConfigError("kernel.params", "must be a mapping")
    try:
        if kind == "deterministic":
            return imp.deterministic()
        if kind == "partial-fraction":
            return imp.partial_fraction(_num(params, "u_lo", "kernel.params"),
                                        _num(params, "u_hi", "kernel.params"))
        if kind == "additive-noise":
            return imp.additive_noise(_num(params, "s", "kernel.params", nonneg=True))
        if kind == "custom-table":
            if "csv" in params:
                path = Path(params["csv"])
                if base_dir is not None and not path.is_absolute():
                    path = Path(base_dir) / path
                values, probs = imp.load_table_csv(path)
            else:
                values, probs = params.get("values"), params.get("probs")
                if not isinstance(values, list) or not isinstance(probs, list):
                    raise ConfigError("kernel.params", "custom-table needs values and probs lists")
            return imp.custom_table(values, probs)
    except DomainError as exc:
        raise ConfigError("kernel", str(exc)) from exc
    raise ConfigError("kernel.kind", f"unknown kernel {kind!r}")


def build_policy(cfg: dict):
    sec = _section(cfg, "policy")
    _check_keys(sec, ("s", "S", "probe"), "policy")
    s, S = _num(sec, "s", "policy"), _num(sec, "S", "policy")
    if not s < S:
        raise ConfigError("policy", f"need s < S, got s={s}, S={S}")
    base = ss_policy(s, S)
    probe = sec.get("probe")
    if probe is None:
        return base
    if not isinstance(probe, dict):
        raise ConfigError("policy.probe", "must be a mapping")
    _check_keys(probe, ("corruption", "strength"), "policy.probe")
    try:
        return NonMarkovProbe(base, probe.get("corruption"),
                              _num(probe, "strength", "policy.probe", 0.3))
    except DomainError as exc:
        raise ConfigError("policy.probe.corruption", str(exc)) from exc


def build_cost(cfg: dict) -> CostSpec:
    sec = _section(cfg, "cost", required=False)
    _check_keys(sec, ("K", "c", "h"), "cost")
    K = _num(sec, "K", "cost", 1.0, nonneg=True)
    c = _num(sec, "c", "cost", 0.0)
    h = _num(sec, "h", "cost", 0.0)
    return CostSpec(K, c, LinearHolding(h) if h != 0.0 else None)


def run_settings(cfg: dict, command: str) -> dict:
    sec = _section(cfg, "run", required=command != "oracle")
    _check_keys(sec, ("seed", "dt", "horizon", "replications", "n_cycles", "x0", "level"), "run")
    out = {"seed": _num(sec, "seed", "run", integer=True, nonneg=True)}
    needs_dt = command in ("simulate", "verify", "estimate", "optimize")
    out["dt"] = _num(sec, "dt", "run", ConfigError if needs_dt else None, positive=True)
    out["horizon"] = _num(sec, "horizon", "run",
                          ConfigError if command == "simulate" else None, positive=True)
    if out["horizon"] is not None and out["dt"] is not None and out["horizon"] < out["dt"]:
        raise ConfigError("run.horizon", "must be at least dt")
    out["replications"] = _num(sec, "replications", "run", 1, positive=True, integer=True)
    out["n_cycles"] = _num(sec, "n_cycles", "run", 1000, positive=True, integer=True)
    level = _num(sec, "level", "run", 0.95)
    if not 0 < level < 1:
        raise ConfigError("run.level", "must lie in (0, 1)")
    out["level"] = level
    x0 = sec.get("x0")
    if isinstance(x0, list):
        if not x0:
            raise ConfigError("run.x0", "list must be nonempty")
        out["x0"] = [_num({"v": v}, "v", "run.x0") for v in x0]
    elif x0 is not None:
        out["x0"] = _num(sec, "x0", "run")
    else:
        out["x0"] = None
    return out


def verify_settings(cfg: dict) -> dict:
    sec = _section(cfg, "verify")
    _check_keys(sec, ("alpha", "cycles_per_rep", "pairs", "permutations", "markov"), "verify")
    out = {
        "alpha": _num(sec, "alpha", "verify", 0.01, positive=True),
        "cycles_per_rep": _num(sec, "cycles_per_rep", "verify", 10, positive=True, integer=True),
        "permutations": _num(sec, "permutations", "verify", 999, positive=True, integer=True),
        "pairs": None,
        "markov": None,
    }
    if out["cycles_per_rep"] < 2:
        raise ConfigError("verify.cycles_per_rep", "must be at least 2")
    if sec.get("pairs") is not None:
        pairs = sec["pairs"]
        if not isinstance(pairs, list) or not all(isinstance(p, list) and len(p) == 2
                                                  for p in pairs):
            raise ConfigError("verify.pairs", "must be a list of [k, k'] pairs")
        out["pairs"] = [tuple(int(k) for k in p) for p in pairs]
    mk = sec.get("markov")
    if mk is not None:
        if not isinstance(mk, dict):
            raise ConfigError("verify.markov", "must be a mapping")
        _check_keys(mk, ("s_past", "s", "t", "bins", "min_cell", "replications", "dt"),
                    "verify.markov")
        m = {k: _num(mk, k, "verify.markov", nonneg=True) for k in ("s_past", "s", "t")}
        if not m["s_past"] < m["s"] < m["t"]:
            raise ConfigError("verify.markov", "need s_past < s < t")
        bins = mk.get("bins", [8, 4, 4])
        if not (isinstance(bins, list) and len(bins) == 3
                and all(isinstance(b, int) and b >= 2 for b in bins)):
            raise ConfigError("verify.markov.bins", "must be three integers >= 2")
        m["bins"] = tuple(bins)
        m["min_cell"] = _num(mk, "min_cell", "verify.markov", 50, positive=True, integer=True)
        m["replications"] = _num(mk, "replications", "verify.markov", None, positive=True,
                                 integer=True)
        m["dt"] = _num(mk, "dt", "verify.markov", None, positive=True)
        out["markov"] = m
    return out


def optimize_settings(cfg: dict) -> dict:
    sec = _section(cfg, "optimize")
    _check_keys(sec, ("s_range", "S_range", "grid", "refine_iterations", "min_step", "budget",
                      "n_cycles"), "optimize")
    grid = sec.get("grid", [1, 16])
    if not (isinstance(grid, list) and len(grid) == 2 and all(isinstance(g, int) and g >= 1
                                                              for g in grid)):
        raise ConfigError("optimize.grid", "must be two positive integers")
    try:
        search = SearchSpace(_pair(sec, "s_range", "optimize"), _pair(sec, "S_range", "optimize"),
                             tuple(grid),
                             _num(sec, "refine_iterations", "optimize", 8, nonneg=True,
                                  integer=True),
                             _num(sec, "min_step", "optimize", 0.0, nonneg=True))
    except DomainError as exc:
        raise ConfigError("optimize", str(exc)) from exc
    n_cycles = _num(sec, "n_cycles", "optimize", 30, positive=True, integer=True)
    if n_cycles < 30:
        raise ConfigError("optimize.n_cycles", "must be at least 30")
    return {"search": search,
            "budget": _num(sec, "budget", "optimize", 200, positive=True, integer=True),
            "n_cycles": n_cycles}


def oracle_settings(cfg: dict) -> dict:
    sec = _section(cfg, "oracle")
    _check_keys(sec, ("lower", "upper", "points", "step", "n_steps", "k_max", "max_length",
                      "times", "mc_samples", "x0"), "oracle")
    out = {
        "lower": _num(sec, "lower", "oracle"),
        "upper": _num(sec, "upper", "oracle"),
        "points": _num(sec, "points", "oracle", positive=True, integer=True),
        "step": _num(sec, "step", "oracle", positive=True),
        "n_steps": _num(sec, "n_steps", "oracle", positive=True, integer=True),
        "k_max": _num(sec, "k_max", "oracle", 3, nonneg=True, integer=True),
        "mc_samples": _num(sec, "mc_samples", "oracle", 0, nonneg=True, integer=True),
        "x0": _num(sec, "x0", "oracle", None),
    }
    if not out["lower"] < out["upper"]:
        raise ConfigError("oracle.upper", "must exceed oracle.lower")
    if out["points"] < 2:
        raise ConfigError("oracle.points", "need at least two points")
    out["max_length"] = _num(sec, "max_length", "oracle", out["n_steps"], positive=True,
                             integer=True)
    times = sec.get("times", [out["n_steps"]])
    if not (isinstance(times, list) and times and all(isinstance(t, int) for t in times)):
        raise ConfigError("oracle.times", "must be a nonempty list of step indices")
    if min(times) < 0 or max(times) > out["n_steps"]:
        raise ConfigError("oracle.times", f"steps must lie in 0..{out['n_steps']}")
    out["times"] = sorted(set(times))
    return out


def calibrate_settings(cfg: dict) -> dict:
    sec = _section(cfg, "calibrate", required=False)
    _check_keys(sec, ("repetitions", "alpha", "tests", "size", "permutations"), "calibrate")
    tests = sec.get("tests", ["ks", "lag1", "markov"])
    if not isinstance(tests, list) or not set(tests) <= {"ks", "lag1", "markov"}:
        raise ConfigError("calibrate.tests", "must be a subset of [ks, lag1, markov]")
    return {
        "repetitions": _num(sec, "repetitions", "calibrate", 500, positive=True, integer=True),
        "alpha": _num(sec, "alpha", "calibrate", 0.05, positive=True),
        "size": _num(sec, "size", "calibrate", 200, positive=True, integer=True),
        "permutations": _num(sec, "permutations", "calibrate", 199, positive=True, integer=True),
        "tests": list(tests),
    }


def validate(cfg: dict, command: str) -> None:
    """Check every section the command reads before anything runs."""
    if command not in COMMAND_SECTIONS:
        raise ConfigError("command", f"unknown command {command!r}")
    for k in cfg:
        if k not in SECTIONS:
            raise ConfigError(k, "unknown section")
    for name in COMMAND_SECTIONS[command]:
        _section(cfg, name)
    run_settings(cfg, command)
    if "process" in COMMAND_SECTIONS[command]:
        build_process(cfg)
    build_kernel(cfg)
    if "policy" in COMMAND_SECTIONS[command]:
        build_policy(cfg)
    build_cost(cfg)
    if command == "verify":
        verify_settings(cfg)
    elif command == "optimize":
        optimize_settings(cfg)
    elif command == "oracle":
        oracle_settings(cfg)
    elif command == "calibrate":
        calibrate_settings(cfg)
