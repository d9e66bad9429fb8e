"""Command-line front end: ``impulsekit <command> --config FILE --seed N``.

Commands: simulate, verify, estimate, optimize, oracle, calibrate. Exit
status 0 on success, 1 on configuration/validation errors, 2 on runtime
errors, 3 when a policy is flagged inadmissible (intervention rate above
the cap). Outputs are written to ``--out`` (default ``out``): UTF-8 CSV
with a header and 12 significant digits, and JSON summaries carrying
``schema_version`` and the effective configuration. Reruns with the same
configuration and seed give byte-identical files for any ``--threads``.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cf
from .controller import (cycle_cost, cycle_matrix, global_path, initial_state, sample_states,
                         simulate_trajectory)
from .errors import ConfigError, DomainError, ImpulseKitError, InadmissiblePolicyError
from .oracle import (build_lattice, compare_tv, compose_controlled_marginal,
                     lattice_process_spec, mc_histogram)
from .parallel import run_replications
from .policy import ConstantTarget, hit_lower
from .renewal import estimate_average_cost, optimize_sS
from .rng import Streams
from . import stats as st

logger = logging.getLogger("impulsekit")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_INADMISSIBLE = 0, 1, 2, 3
COMMANDS = ("simulate", "verify", "estimate", "optimize", "oracle", "calibrate")


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.12g}"
    return str(x)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def write_json(path: Path, command: str, cfg: dict, payload: dict) -> None:
    doc = {"schema_version": cf.SCHEMA_VERSION, "command": command, "version": __version__,
           "config": cfg, **payload}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(doc), fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def _x0(run: dict, policy) -> object:
    if run["x0"] is not None:
        return run["x0"]
    base = getattr(policy, "base", policy)
    return base.target(None)


# -- simulate -------------------------------------------------------------------

def _simulate_worker(args, rep):
    spec, kernel, policy, x0, horizon, dt, streams, cost, every = args
    x = initial_state(x0, streams, rep)
    traj = simulate_trajectory(spec, kernel, policy, x, horizon, dt, streams, rep)
    t, states, cyc, is_int = global_path(traj)
    keep = np.zeros(t.size, dtype=bool)
    keep[::every] = True
    keep |= is_int
    path_rows = [(rep, t[i], states[i], cyc[i], is_int[i]) for i in np.flatnonzero(keep)]
    cycle_rows = []
    for c in traj.cycles[1:]:
        if c.draw is None:
            break
        entry = traj.cycles[c.index - 1].draw
        cycle_rows.append((rep, c.index, c.start * dt, c.v, c.sigma, c.draw.y, c.draw.z,
                           c.sigma, cycle_cost(c, entry, cost)))
    return path_rows, cycle_rows, traj.intervention_count, traj.inadmissible_suspect


def cmd_simulate(cfg, out: Path, threads: int) -> dict:
    run = cf.run_settings(cfg, "simulate")
    spec, kernel, policy = cf.build_process(cfg), cf.build_kernel(cfg), cf.build_policy(cfg)
    cost = cf.build_cost(cfg)
    sim = cf._section(cfg, "simulate", required=False)
    cf._check_keys(sim, ("record_every",), "simulate")
    every = cf._num(sim, "record_every", "simulate", 1, positive=True, integer=True)
    args = (spec, kernel, policy, _x0(run, policy), run["horizon"], run["dt"],
            Streams(run["seed"]), cost, every)
    res = run_replications(_simulate_worker, args, run["replications"], threads)
    suspects = [i for i, r in enumerate(res) if r[3]]
    if suspects:
        raise InadmissiblePolicyError(f"replications {suspects[:10]} exceed the intervention "
                                      "rate cap")
    write_csv(out / "trajectories.csv", ["rep", "time", "state", "cycle_index",
                                         "is_intervention"],
              (row for r in res for row in r[0]))
    write_csv(out / "cycles.csv", ["rep", "k", "start_time", "v", "sigma", "y_next", "z_next",
                                   "length", "cost"],
              (row for r in res for row in r[1]))
    counts = [r[2] for r in res]
    lengths = np.array([row[7] for r in res for row in r[1]])
    return {"interventions": counts,
            "completed_cycles": int(lengths.size),
            "mean_cycle_length": float(lengths.mean()) if lengths.size else None}


# -- verify ---------------------------------------------------------------------

def cmd_verify(cfg, out: Path, threads: int) -> dict:
    run = cf.run_settings(cfg, "verify")
    ver = cf.verify_settings(cfg)
    spec, kernel, policy = cf.build_process(cfg), cf.build_kernel(cfg), cf.build_policy(cfg)
    streams = Streams(run["seed"])
    x0 = _x0(run, policy)
    lengths, costs = cycle_matrix(spec, kernel, policy, x0, run["dt"], streams.child(0),
                                  run["replications"], ver["cycles_per_rep"],
                                  cost=cf.build_cost(cfg), threads=threads)
    reports = st.test_cycles_iid(lengths, costs, ver["alpha"], ver["pairs"],
                                 ver["permutations"], seed=run["seed"])
    mk = ver["markov"]
    if mk is not None:
        vals, _ = sample_states(spec, kernel, policy, x0, [mk["s_past"], mk["s"], mk["t"]],
                                mk["dt"] or run["dt"], streams.child(1),
                                mk["replications"] or run["replications"], threads)
        reports.append(st.test_markov(vals, mk["s_past"], mk["s"], mk["t"], mk["bins"],
                                      ver["alpha"], mk["min_cell"]))
    (out / "reports.txt").write_text(st.format_reports(reports) + "\n", encoding="utf-8")
    write_csv(out / "cycle_lengths.csv", ["rep"] + [f"cycle{k}" for k in range(lengths.shape[1])],
              ([r, *row] for r, row in enumerate(lengths)))
    return {"reports": [r.to_dict() for r in reports]}


# -- estimate -------------------------------------------------------------------

def _estimate_worker(args, rep):
    spec, kernel, policy, cost, x0, n_cycles, dt, streams, level = args
    x = initial_state(x0, streams, rep)
    return estimate_average_cost(spec, kernel, policy, cost, x, n_cycles, dt, streams, rep,
                                 level).to_dict()


def cmd_estimate(cfg, out: Path, threads: int) -> dict:
    run = cf.run_settings(cfg, "estimate")
    spec, kernel, policy = cf.build_process(cfg), cf.build_kernel(cfg), cf.build_policy(cfg)
    if run["n_cycles"] < 30:
        raise ConfigError("run.n_cycles", "estimation needs at least 30 cycles")
    args = (spec, kernel, policy, cf.build_cost(cfg), _x0(run, policy), run["n_cycles"],
            run["dt"], Streams(run["seed"]), run["level"])
    ests = run_replications(_estimate_worker, args, run["replications"], threads)
    write_csv(out / "estimates.csv", ["rep", "g", "ci_low", "ci_high", "mean_cycle_cost",
                                      "mean_cycle_length", "n_cycles"],
              ((i, e["g"], e["ci_low"], e["ci_high"], e["mean_cycle_cost"],
                e["mean_cycle_length"], e["n_cycles"]) for i, e in enumerate(ests)))
    return {"estimates": ests}


# -- optimize -------------------------------------------------------------------

def cmd_optimize(cfg, out: Path, threads: int) -> dict:
    run = cf.run_settings(cfg, "optimize")
    opt = cf.optimize_settings(cfg)
    spec, kernel = cf.build_process(cfg), cf.build_kernel(cfg)
    x0 = run["x0"] if not isinstance(run["x0"], list) else None
    res = optimize_sS(spec, kernel, cf.build_cost(cfg), opt["search"], opt["budget"],
                      Streams(run["seed"]), n_cycles=opt["n_cycles"], dt=run["dt"],
                      level=run["level"], x0=x0)
    write_csv(out / "trace.csv", ["iteration", "s", "S", "g", "ci_low", "ci_high", "n_cycles"],
              ((r.iteration, r.s, r.S, r.g, r.ci_low, r.ci_high, r.n_cycles) for r in res.trace))
    return {"result": res.to_dict()}


# -- oracle ---------------------------------------------------------------------

def cmd_oracle(cfg, out: Path, threads: int) -> dict:
    run = cf.run_settings(cfg, "oracle")
    orc = cf.oracle_settings(cfg)
    spec, policy = cf.build_process(cfg), cf.build_policy(cfg)
    kernel = cf.build_kernel(cfg)
    if not hasattr(policy, "sigma") or getattr(policy, "markov", True) is False:
        raise ConfigError("policy.probe", "the oracle supports plain (s,S) policies only")
    grid = np.linspace(orc["lower"], orc["upper"], orc["points"])
    s, S = policy.sigma.params[0], policy.target(None)
    model = build_lattice(spec, grid, orc["step"], hit_lower(s), ConstantTarget(S), kernel)
    x0 = S if orc["x0"] is None else orc["x0"]
    law = compose_controlled_marginal(model, x0, orc["n_steps"], orc["k_max"], orc["max_length"])
    law.to_csv(out / "law.csv", orc["times"])
    write_csv(out / "cycle_pmf.csv", ["cycle_index", "length", "probability"],
              ((k, L, law.cycle_length_pmf[k, L]) for k in range(law.k_max + 1)
               for L in range(law.cycle_length_pmf.shape[1]) if law.cycle_length_pmf[k, L] > 0))
    payload = {"overflow": law.overflow[orc["times"]].tolist(),
               "unfinished": law.unfinished.tolist(), "times": orc["times"]}
    if orc["mc_samples"] > 0:
        mc_spec = lattice_process_spec(spec, orc["step"], model.dx)
        times = [t * orc["step"] for t in orc["times"]]
        vals, _ = sample_states(mc_spec, kernel, policy, x0, times, orc["step"],
                                Streams(run["seed"]), orc["mc_samples"], threads)
        payload["tv"] = [compare_tv(mc_histogram(vals[:, j], grid), law.state_marginal(t))
                         for j, t in enumerate(orc["times"])]
        payload["mc_samples"] = orc["mc_samples"]
    return payload


# -- calibrate ------------------------------------------------------------------

def cmd_calibrate(cfg, out: Path, threads: int) -> dict:
    run = cf.run_settings(cfg, "calibrate")
    cal = cf.calibrate_settings(cfg)
    n, alpha, size, B = cal["repetitions"], cal["alpha"], cal["size"], cal["permutations"]
    P = st.random_transition_matrix(np.random.default_rng(run["seed"]), 3)
    runs = {
        "ks": lambda rng: st.ks_two_sample(rng.standard_normal(size),
                                           rng.standard_normal(size), alpha),
        "lag1": lambda rng: st.lag1_permutation_test(st.synthetic_iid_cycles(rng, size, 4),
                                                     alpha, B, rng),
        "markov": lambda rng: st.test_markov(st.synthetic_markov_triples(rng, 20 * size, P),
                                             0, 1, 2, (3, 3, 3), alpha),
    }
    rows = []
    for i, name in enumerate(cal["tests"]):
        c = st.calibrate(runs[name], n, alpha, seed=run["seed"] * 1000 + i)
        rows.append({"test": name, **c.to_dict()})
    write_csv(out / "calibration.csv", ["test", "n", "alpha", "rejections", "rate", "lower",
                                        "upper", "ok"],
              ((r["test"], r["n"], r["alpha"], r["rejections"], r["rate"], r["lower"],
                r["upper"], r["ok"]) for r in rows))
    return {"calibration": rows}


HANDLERS = {"simulate": cmd_simulate, "verify": cmd_verify, "estimate": cmd_estimate,
            "optimize": cmd_optimize, "oracle": cmd_oracle, "calibrate": cmd_calibrate}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="impulsekit",
                                description="Simulate and verify impulse-controlled diffusions.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="YAML experiment file")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="override a config entry (repeatable)")
    p.add_argument("--threads", type=int, default=1, help="worker processes over replications")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--seed", type=int, default=None, help="top-level seed (overrides run.seed)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def effective_config(path, overrides, seed) -> dict:
    cfg = cf.apply_overrides(cf.load(path), overrides)
    if seed is not None:
        if seed < 0:
            raise ConfigError("seed", "must be nonnegative")
        run = cfg.get("run")
        if run is None:
            run = cfg["run"] = {}
        if not isinstance(run, dict):
            raise ConfigError("run", "section must be a mapping")
        run["seed"] = seed
    if not isinstance(cfg.get("run"), dict) or cfg["run"].get("seed") is None:
        raise ConfigError("run.seed", "a seed is required (config or --seed)")
    # a relative kernel table is read next to the config file
    params = (cfg.get("kernel") or {}).get("params") if isinstance(cfg.get("kernel"), dict) else None
    if isinstance(params, dict) and isinstance(params.get("csv"), str):
        table = Path(params["csv"])
        if not table.is_absolute():
            params["csv"] = str(Path(path).resolve().parent / table)
    return cfg


def run(command: str, config_path, overrides=(), threads: int = 1, out="out",
        seed=None) -> int:
    """Execute one command; returns the exit status."""
    try:
        cfg = effective_config(config_path, overrides, seed)
        cf.validate(cfg, command)
        if threads < 1:
            raise ConfigError("threads", "must be at least 1")
    except (ConfigError, DomainError) as exc:
        print(f"impulsekit {command}: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    outdir = Path(out)
    try:
        outdir.mkdir(parents=True, exist_ok=True)
        payload = HANDLERS[command](copy.deepcopy(cfg), outdir, threads)
        write_json(outdir / f"{command}.json", command, cfg, payload)
    except ConfigError as exc:
        print(f"impulsekit {command}: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InadmissiblePolicyError as exc:
        print(f"impulsekit {command}: inadmissible policy: {exc}", file=sys.stderr)
        return EXIT_INADMISSIBLE
    except (ImpulseKitError, ArithmeticError, ValueError, OSError) as exc:
        print(f"impulsekit {command}: runtime error in {type(exc).__module__}: {exc}",
              file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return run(args.command, args.config, args.overrides, args.threads, args.out, args.seed)


if __name__ == "__main__":
    sys.exit(main())
