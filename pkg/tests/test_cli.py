import csv
import json
from pathlib import Path

import pytest
import yaml

from impulsekit import config as cf
from impulsekit.cli import main, run
from impulsekit.errors import ConfigError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def write_cfg(tmp_path, cfg, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(cfg), encoding="utf-8")
    return p


def sawtooth_cfg():
    return cf.load(CONFIGS / "sawtooth.yaml")


# -- validation -----------------------------------------------------------------

def test_missing_policy_names_section(tmp_path, capsys):
    cfg = sawtooth_cfg()
    del cfg["policy"]
    code = run("estimate", write_cfg(tmp_path, cfg), out=tmp_path / "o")
    assert code == 1
    assert "policy" in capsys.readouterr().err


def test_seed_is_required(tmp_path, capsys):
    cfg = sawtooth_cfg()
    del cfg["run"]["seed"]
    assert run("simulate", write_cfg(tmp_path, cfg), out=tmp_path / "o") == 1
    assert "run.seed" in capsys.readouterr().err
    assert run("simulate", write_cfg(tmp_path, cfg), out=tmp_path / "o", seed=4) == 0


@pytest.mark.parametrize("override,key", [
    ("run.dt=-1", "run.dt"),
    ("process.name=levy", "process.name"),
    ("kernel.kind=teleport", "kernel.kind"),
    ("policy.S=-1", "policy"),
    ("run.bogus=1", "run.bogus"),
    ("cost.K=-2", "cost.K"),
])
def test_invalid_values_name_key(tmp_path, capsys, override, key):
    assert run("simulate", CONFIGS / "sawtooth.yaml", [override], out=tmp_path / "o") == 1
    assert key in capsys.readouterr().err


def test_overrides_parse_yaml_values():
    cfg = cf.apply_overrides({"run": {"seed": 1}}, ["run.x0=[0.5, 1.0]", "verify.alpha=0.05"])
    assert cfg["run"]["x0"] == [0.5, 1.0] and cfg["verify"]["alpha"] == 0.05
    with pytest.raises(ConfigError):
        cf.apply_overrides({}, ["novalue"])


def test_all_shipped_configs_validate():
    commands = {"sawtooth": "simulate", "partial_delivery": "estimate", "markov_check": "verify",
                "nonmarkov_probe": "verify", "eoq": "optimize", "oracle_walk": "oracle",
                "calibrate": "calibrate"}
    for name, command in commands.items():
        cf.validate(cf.load(CONFIGS / f"{name}.yaml"), command)


def test_custom_table_csv_relative_to_config(tmp_path):
    (tmp_path / "table.csv").write_text("v,p\n1,0.5\n2,0.5\n", encoding="utf-8")
    cfg = sawtooth_cfg()
    cfg["kernel"] = {"kind": "custom-table", "params": {"csv": "table.csv"}}
    cfg["run"]["replications"] = 1
    assert run("simulate", write_cfg(tmp_path, cfg), out=tmp_path / "o") == 0
    vs = {float(r["v"]) for r in read_csv(tmp_path / "o" / "cycles.csv")}
    assert vs <= {1.0, 2.0}


# -- commands ---------------------------------------------------------------------

def test_simulate_sawtooth(tmp_path):
    out = tmp_path / "o"
    assert main(["simulate", "--config", str(CONFIGS / "sawtooth.yaml"), "--out", str(out)]) == 0
    rows = read_csv(out / "cycles.csv")
    assert rows and list(rows[0]) == ["rep", "k", "start_time", "v", "sigma", "y_next", "z_next",
                                      "length", "cost"]
    for r in rows:
        assert abs(float(r["length"]) - 1.0) <= 1e-3 + 1e-12
        assert float(r["cost"]) == 1.0
    doc = json.loads((out / "simulate.json").read_text())
    assert doc["schema_version"] == cf.SCHEMA_VERSION
    assert doc["config"] == sawtooth_cfg()
    assert doc["interventions"] == [10, 10] or doc["interventions"] == [9, 9]
    traj = read_csv(out / "trajectories.csv")
    assert list(traj[0]) == ["rep", "time", "state", "cycle_index", "is_intervention"]


def test_simulate_inadmissible_exit(tmp_path):
    code = run("simulate", CONFIGS / "sawtooth.yaml", ["policy.S=0.0015", "run.x0=0.0015"],
               out=tmp_path / "o")
    assert code == 3


def test_estimate(tmp_path):
    out = tmp_path / "o"
    assert run("estimate", CONFIGS / "partial_delivery.yaml",
               ["run.n_cycles=2000", "run.replications=2"], out=out) == 0
    rows = read_csv(out / "estimates.csv")
    assert len(rows) == 2
    for r in rows:
        assert abs(float(r["g"]) - 2 / 3) <= 0.02
    doc = json.loads((out / "estimate.json").read_text())
    assert doc["estimates"][0]["n_cycles"] == 2000


def test_verify_probe_rejects_markov(tmp_path):
    out = tmp_path / "o"
    assert run("verify", CONFIGS / "nonmarkov_probe.yaml", ["run.replications=100"], out=out) == 0
    doc = json.loads((out / "verify.json").read_text())
    markov = [r for r in doc["reports"] if r["test_name"].startswith("markov")]
    assert markov[0]["verdict"] == "reject"
    assert "markov" in (out / "reports.txt").read_text()


def test_verify_ss_policy_passes(tmp_path):
    out = tmp_path / "o"
    assert run("verify", CONFIGS / "markov_check.yaml",
               ["run.replications=200", "verify.markov.replications=20000"], out=out) == 0
    doc = json.loads((out / "verify.json").read_text())
    assert all(r["verdict"] == "fail-to-reject" for r in doc["reports"])


def test_optimize(tmp_path):
    out = tmp_path / "o"
    assert run("optimize", CONFIGS / "eoq.yaml", ["run.dt=0.001"], out=out) == 0
    rows = read_csv(out / "trace.csv")
    assert list(rows[0]) == ["iteration", "s", "S", "g", "ci_low", "ci_high", "n_cycles"]
    res = json.loads((out / "optimize.json").read_text())["result"]
    assert abs(res["S"] - 1.0) <= 0.42


def test_oracle(tmp_path):
    out = tmp_path / "o"
    assert run("oracle", CONFIGS / "oracle_walk.yaml", ["oracle.mc_samples=2000", "oracle.times=[0, 5, 60]"],
               out=out) == 0
    doc = json.loads((out / "oracle.json").read_text())
    assert all(tv <= 0.06 for tv in doc["tv"])
    assert read_csv(out / "law.csv")[0] == {"time": "0", "state": "5", "cycle_index": "0",
                                            "probability": "1"}
    assert read_csv(out / "cycle_pmf.csv")


def test_calibrate(tmp_path):
    out = tmp_path / "o"
    assert run("calibrate", CONFIGS / "calibrate.yaml",
               ["calibrate.repetitions=40", "calibrate.size=50"], out=out) == 0
    rows = read_csv(out / "calibration.csv")
    assert [r["test"] for r in rows] == ["ks", "lag1", "markov"]


def test_echoed_config_reproduces_outputs(tmp_path):
    first = tmp_path / "a"
    assert run("estimate", CONFIGS / "partial_delivery.yaml",
               ["run.n_cycles=500", "run.replications=2"], out=first, seed=99) == 0
    echoed = json.loads((first / "estimate.json").read_text())["config"]
    second = tmp_path / "b"
    assert run("estimate", write_cfg(tmp_path, echoed, "echo.yaml"), out=second) == 0
    for name in ("estimates.csv", "estimate.json"):
        assert (first / name).read_bytes() == (second / name).read_bytes()
