import json
from pathlib import Path

import numpy as np
import pytest

from tvcbf.catalog import example_catalog, get_example
from tvcbf.cli import main
from tvcbf.config import parse_config
from tvcbf.errors import ConfigError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def report(out, name, command):
    return json.loads((out / name / command / "report.json").read_text())


class TestExitCodes:
    def test_verify_pass(self, tmp_path):
        assert main(["verify", "counterexample", "--out-dir", str(tmp_path), "--no-plots"]) == 0
        rep = report(tmp_path, "counterexample", "verify")
        assert rep["passed"] and rep["command"] == "verify"

    def test_verify_fail_writes_witnesses(self, tmp_path):
        code = main(["verify", "counterexample", "--set", "Lambda=0.3", "--out-dir", str(tmp_path), "--no-plots"])
        assert code == 1
        rows = (tmp_path / "counterexample" / "verify" / "violations.csv").read_text().splitlines()
        assert rows[0].startswith("x1,x2,b")
        assert len(rows) > 1

    def test_unknown_example(self, tmp_path):
        assert main(["verify", "nosuch", "--out-dir", str(tmp_path)]) == 2

    def test_bad_flag(self):
        assert main(["verify", "--grid", "many"]) == 2

    def test_c_alpha_not_applicable(self, tmp_path):
        assert main(["verify", "pendulum", "--c-alpha", "0.5", "--out-dir", str(tmp_path)]) == 2

    def test_env_out_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv("TVCBF_OUT_DIR", str(tmp_path))
        assert main(["compose", "counterexample", "--no-plots"]) == 0
        assert (tmp_path / "counterexample" / "compose" / "report.json").exists()

    def test_list(self, capsys):
        assert main(["example", "--list"]) == 0
        assert "quadcopter" in capsys.readouterr().out


class TestRefusals:
    def test_domination(self, tmp_path):
        code = main(["compose", "--config", str(CONFIGS / "refuse_domination.yaml"), "--out-dir", str(tmp_path)])
        assert code == 1
        rep = report(tmp_path, "pendulum", "compose")
        assert rep["compose"]["refused"] and rep["compose"]["step"] == "(1)"

    def test_downward_jump(self, tmp_path):
        code = main(["compose", "--config", str(CONFIGS / "refuse_downward_jump.yaml"), "--out-dir", str(tmp_path)])
        assert code == 1
        assert report(tmp_path, "pendulum", "compose")["compose"]["step"] == "assumption-1"


class TestConfig:
    def test_unknown_key_has_line(self):
        with pytest.raises(ConfigError) as err:
            parse_config("example: pendulum\nverify:\n  grdi: 10\n", "x.yaml")
        assert err.value.line == 3
        assert "grdi" in str(err.value)

    def test_type_error_has_line(self):
        with pytest.raises(ConfigError) as err:
            parse_config("example: pendulum\nsimulate:\n  dt: fast\n", "x.yaml")
        assert err.value.line == 3

    def test_yaml_syntax(self):
        with pytest.raises(ConfigError) as err:
            parse_config("example: [pendulum\n", "x.yaml")
        assert err.value.line is not None

    def test_needs_one_source(self):
        with pytest.raises(ConfigError):
            parse_config("verify:\n  grid: 10\n", "x.yaml")

    def test_bad_mode(self):
        with pytest.raises(ConfigError):
            parse_config("example: pendulum\nsimulate:\n  mode: gentle\n", "x.yaml")

    def test_config_error_exit_code(self, tmp_path):
        p = tmp_path / "bad.yaml"
        p.write_text("example: pendulum\nverify:\n  grid: -\n    x\n")
        assert main(["verify", "--config", str(p), "--out-dir", str(tmp_path)]) == 2

    def test_external_table(self, tmp_path):
        assert main(["verify", "--config", str(CONFIGS / "external_table.yaml"), "--out-dir", str(tmp_path)]) == 0
        assert report(tmp_path, "external_table", "verify")["passed"]


class TestOutputs:
    def test_simulate_files_and_determinism(self, tmp_path):
        args = ["simulate", "counterexample", "--random-x0", "2", "--seed", "3"]
        assert main([*args, "--out-dir", str(tmp_path / "a")]) == 0
        assert main([*args, "--out-dir", str(tmp_path / "b"), "--no-plots"]) == 0
        rep = report(tmp_path / "a", "counterexample", "simulate")
        base = tmp_path / "a" / "counterexample" / "simulate"
        for f in rep["files"]:
            assert (base / f).exists()
        assert any(f.endswith(".png") for f in rep["files"])
        csvs = sorted(p.relative_to(base) for p in base.rglob("*.csv"))
        assert len(csvs) >= 3
        for rel in csvs:
            other = tmp_path / "b" / "counterexample" / "simulate" / rel
            assert (base / rel).read_bytes() == other.read_bytes()

    def test_batch(self, tmp_path):
        assert main(["batch", "counterexample", str(CONFIGS / "refuse_domination.yaml"), "--out-dir", str(tmp_path), "--no-plots"]) == 1
        summary = json.loads((tmp_path / "batch.json").read_text())
        assert summary["runs"]["counterexample"] == 0
        assert not summary["passed"]


class TestCatalog:
    def test_size(self):
        assert sorted(s.name for s in example_catalog()) == ["counterexample", "omni", "pendulum", "quadcopter", "unicycle"]

    def test_pendulum_input_set(self):
        U = get_example("pendulum").dynamics().input_set
        assert np.allclose(U.lower, -20.0) and np.allclose(U.upper, 20.0)

    def test_quadcopter_budget(self):
        assert get_example("quadcopter").cbf().Lambda == 100.0

    def test_omni_initial_shift(self):
        tr = get_example("omni").deadline_lambda(0.0, 5.0)
        assert tr.value(0.0) == pytest.approx(1.44)

    def test_quadcopter_boundary_and_target_starts(self):
        ex = get_example("quadcopter")
        on_level = ex.sample_x0(np.random.default_rng(0), 10)
        for x0 in on_level:
            (tv,) = ex.compose(x0=x0, certify=False)
            assert tv.traj.max_value() <= 100.0
        (tv,) = ex.compose(x0=ex.target(), certify=False)
        assert tv.traj.max_value() == 0.0
