"""
测试命令行接口
"""

import json

import pytest
from click.testing import CliRunner

from cat_qubit_sim import __version__
from cat_qubit_sim.cli import EXIT_CONFIG, EXIT_ERROR, EXIT_NUMERICAL, _exit_code, main
from cat_qubit_sim.config import config
from cat_qubit_sim.exceptions import ConfigurationError, FitError, TruncationError
from cat_qubit_sim.models import SystemParams, load_params_file


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    """屏蔽本机 CATQ_* 环境变量"""
    monkeypatch.setattr(config, "param_overrides", {})
    monkeypatch.setattr(config, "jobs", 1)


@pytest.fixture
def runner():
    return CliRunner()


class TestExitCodes:
    """测试异常到退出码的映射"""

    def test_mapping(self):
        assert _exit_code(FitError("x")) == EXIT_NUMERICAL
        assert _exit_code(ConfigurationError("x")) == EXIT_CONFIG
        assert _exit_code(TruncationError("x")) == EXIT_CONFIG
        assert _exit_code(RuntimeError("x")) == EXIT_ERROR


class TestRunCommand:
    """测试 run 命令"""

    def test_version(self, runner):
        result = runner.invoke(main, ["--version"])
        assert result.exit_code == 0
        assert __version__ in result.output

    def test_list(self, runner):
        result = runner.invoke(main, ["run", "--list"])
        assert result.exit_code == 0
        assert "pure_loss_evolve" in result.output.splitlines()

    def test_run_builtin(self, runner, tmp_path):
        output = tmp_path / "loss.csv"
        result = runner.invoke(main, ["run", "pure_loss_evolve", "-o", str(output), "--log-level", "WARNING"])
        assert result.exit_code == 0, result.output
        assert "运行完成！" in result.output
        assert output.exists()
        assert (tmp_path / "loss.manifest.json").exists()

    def test_set_reaches_manifest(self, runner, tmp_path):
        output = tmp_path / "chain.csv"
        result = runner.invoke(main, ["run", "kappa2_chain", "--set", "kappa_b=26", "-o", str(output)])
        assert result.exit_code == 0, result.output
        manifest = json.loads((tmp_path / "chain.manifest.json").read_text(encoding="utf-8"))
        assert manifest["derived"]["kappa2_mhz"] == pytest.approx(SystemParams().kappa2 / 2.0)

    def test_unknown_key(self, runner, tmp_path):
        result = runner.invoke(main, ["run", "pure_loss_evolve", "--set", "nope=1",
                                      "-o", str(tmp_path / "x.csv")])
        assert result.exit_code == EXIT_CONFIG
        assert "nope" in result.output
        assert not (tmp_path / "x.csv").exists()

    def test_missing_scenario(self, runner):
        result = runner.invoke(main, ["run"])
        assert result.exit_code == EXIT_CONFIG

    def test_bad_jobs(self, runner):
        result = runner.invoke(main, ["run", "pure_loss_evolve", "--jobs", "0"])
        assert result.exit_code == EXIT_CONFIG

    def test_unknown_scenario(self, runner):
        result = runner.invoke(main, ["run", "no_such_scenario"])
        assert result.exit_code == EXIT_CONFIG


class TestValidateCommand:
    """测试 validate 命令"""

    def test_builtin(self, runner):
        result = runner.invoke(main, ["validate", "bitflip_three_mode"])
        assert result.exit_code == 0
        assert "校验通过" in result.output

    def test_warning_printed(self, runner):
        result = runner.invoke(main, ["validate", "parity_conservation"])
        assert result.exit_code == 0
        assert "警告" in result.output

    def test_truncation_too_small(self, runner):
        result = runner.invoke(main, ["validate", "wigner_identities", "--set", "n_cat=10"])
        assert result.exit_code == EXIT_CONFIG


class TestParamsCommands:
    """测试 params 子命令"""

    def test_show_text(self, runner):
        result = runner.invoke(main, ["params", "show"])
        assert result.exit_code == 0
        assert "chi_qa = 0.72 MHz" in result.output
        assert "T1_a = 3 µs" in result.output
        assert "kappa2 = 0.0398769 MHz" in result.output

    def test_show_json_with_override(self, runner):
        result = runner.invoke(main, ["params", "show", "--format", "json", "--set", "kappa_b=26"])
        assert result.exit_code == 0
        payload = json.loads(result.output)
        assert payload["system"]["kappa_b"] == 26.0
        assert payload["derived"]["kappa2_mhz"] == pytest.approx(SystemParams().kappa2 / 2.0)

    def test_env_override(self, runner, monkeypatch):
        monkeypatch.setattr(config, "param_overrides", {"chi_qa": "0.072"})
        result = runner.invoke(main, ["params", "show", "--format", "json"])
        assert json.loads(result.output)["system"]["chi_qa"] == 0.072

    def test_show_rejects_unknown(self, runner):
        result = runner.invoke(main, ["params", "show", "--set", "nope=1"])
        assert result.exit_code == EXIT_CONFIG
        assert "nope" in result.output

    def test_dump(self, runner, tmp_path):
        path = tmp_path / "params.txt"
        result = runner.invoke(main, ["params", "dump", str(path), "--set", "g2=0.5"])
        assert result.exit_code == 0
        system, _ = load_params_file(path)
        assert system == SystemParams(g2=0.5)
