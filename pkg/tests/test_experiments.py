import json
import subprocess
import sys

import numpy as np
import pytest

from propswitch.cli import main
from propswitch.config import ConfigError, load_config, parse_config
from propswitch.experiments import (
    ExperimentConfig, confidence_interval, emit_outputs, growth_exponent, run_linear_experiment, run_tree_experiment,
)

TANDEM = "demos/configs/tandem.json"


def test_growth_exponent():
    J = [8, 16, 32]
    assert growth_exponent(J, [3 * j ** 2 for j in J]) == pytest.approx(2.0)


def test_confidence_interval():
    assert confidence_interval([1.0, 1.0, 1.0]) == 0.0
    assert confidence_interval([1.0], np.arange(100.0)) > 0
    assert np.isnan(confidence_interval([1.0]))


def test_experiment_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"bogus": 1})
    with pytest.raises(ValueError):
        ExperimentConfig(name="tree", loads=(1.2,))
    assert ExperimentConfig(schedulers=("MaxWeight",)).schedulers == ("mw",)


def test_linear_and_tree_outputs(tmp_path):
    lin = run_linear_experiment([2, 4], 0.5, ["ps", "bp"], slots=3000, trials=2, profile_J=4)
    assert {s for _, s, _, _ in lin.rows} == {"ps", "bp"}
    tree = run_tree_experiment(3, 2, 1.0, [0.5], ["ps"], slots=10_000)
    files = emit_outputs([lin, tree], tmp_path)
    names = {p.name for p in files}
    assert {"linear_totals.csv", "linear_profile.csv", "tree_stability.csv", "plot_data.csv"} <= names
    assert (tmp_path / "linear_totals.csv").read_text().splitlines()[0] == "J,scheduler,mean_total_queue,ci95"
    assert tree.rows[0][4] == "stable"


class TestConfig:
    def test_load(self):
        cfg = load_config(TANDEM)
        assert cfg.topo.n_classes == 2 and cfg.S.cardinality == 3
        assert cfg.fluid["h"] == 0.002

    @pytest.mark.parametrize("mutate, msg", [
        (lambda d: d.pop("routes"), "missing key 'routes'"),
        (lambda d: d["classes"][0].update(queue="zz"), "unknown queue"),
        (lambda d: d["classes"][1].update(position=3), "positions"),
        (lambda d: d["routes"][0].update(rate=0), "non-positive arrival rate"),
        (lambda d: d.update(schedules=[[1, 0]]), "never served"),
        (lambda d: d.update(schedules={"blocks": [{"queues": ["q1", "qq"], "schedules": [[1, 1]]}]}), "unknown queue"),
    ])
    def test_errors(self, mutate, msg):
        doc = json.loads(open(TANDEM).read())
        mutate(doc)
        with pytest.raises(ConfigError, match=msg):
            parse_config(doc)

    def test_block_schedules(self):
        doc = json.loads(open(TANDEM).read())
        doc["schedules"] = {"blocks": [{"queues": ["q1"], "schedules": [[2]]}, {"queues": ["q2"], "schedules": [[1]]}]}
        assert parse_config(doc).S.caps.tolist() == [2, 1]


class TestCli:
    def test_simulate(self, tmp_path, capsys):
        assert main(["simulate", "--config", TANDEM, "--slots", "2000", "--trace", "--out", str(tmp_path)]) == 0
        assert {"stats.csv", "trace.csv", "trace.jsonl"} <= {p.name for p in tmp_path.iterdir()}
        assert main(["verify-trace", "--config", TANDEM, "--trace", str(tmp_path / "trace.jsonl")]) == 0
        assert "ok:" in capsys.readouterr().out

    def test_verify_detects_corruption(self, tmp_path):
        main(["simulate", "--config", TANDEM, "--slots", "500", "--trace", "--out", str(tmp_path)])
        lines = (tmp_path / "trace.jsonl").read_text().splitlines()
        for i in range(1, len(lines)):
            rec = json.loads(lines[i])
            if rec["served"]:
                rec["served"].pop()
                lines[i] = json.dumps(rec)
                break
        (tmp_path / "bad.jsonl").write_text("\n".join(lines) + "\n")
        assert main(["verify-trace", "--config", TANDEM, "--trace", str(tmp_path / "bad.jsonl")]) == 1

    def test_fluid(self, tmp_path):
        assert main(["fluid", "--config", TANDEM, "--out", str(tmp_path)]) == 0
        head = (tmp_path / "trajectory.csv").read_text().splitlines()[0]
        assert head == "t,Q_q1,Q_q2,sigma_q1,sigma_q2,H,L,M"

    def test_experiment_preset(self, tmp_path):
        assert main(["experiment", "--preset", "linear", "--scheduler", "ps", "--slots", "2000",
                     "--out", str(tmp_path)]) == 0
        assert (tmp_path / "linear_totals.csv").exists()

    def test_errors_exit_2(self, tmp_path):
        assert main(["simulate", "--config", str(tmp_path / "missing.json")]) == 2
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert main(["fluid", "--config", str(bad)]) == 2
        assert main(["experiment"]) == 2

    def test_module_entry(self):
        out = subprocess.run([sys.executable, "-m", "propswitch", "--help"], capture_output=True, text=True)
        assert out.returncode == 0 and "verify-trace" in out.stdout
