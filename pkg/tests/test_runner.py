"""
测试场景运行器（端到端，输出写到临时目录）
"""

import json
import math
from types import SimpleNamespace

import numpy as np
import pandas as pd
import pytest

from cat_qubit_sim.config_loader import load_scenario
from cat_qubit_sim.models import to_angular
from cat_qubit_sim.runner import ScenarioRunner, file_sha256, manifest_path_for

NO_ENV = SimpleNamespace(param_overrides={})


def _run(name, tmp_path, sets=None, filename=None):
    cfg = load_scenario(name, sets, output_override=str(tmp_path / (filename or f"{name}.csv")), env_cfg=NO_ENV)
    return ScenarioRunner(cfg, jobs=1).run()


class TestEvolveScenario:
    """测试时间演化场景"""

    def test_pure_loss_amplitude(self, tmp_path):
        report = _run("pure_loss_evolve", tmp_path)
        frame = pd.read_csv(report.output_path)
        assert list(frame.columns) == ["t", "a_re", "a_im", "a2_re", "a2_im",
                                       "n_re", "n_im", "parity_re", "parity_im"]
        assert len(frame) == 21
        expected = np.exp(-to_angular(0.053) * frame["t"] / 2.0)
        np.testing.assert_allclose(frame["a_re"], expected, rtol=1e-5)
        assert report.derived["final"]["n"] == pytest.approx(math.exp(-to_angular(0.053) * 10.0), rel=1e-5)
        assert report.derived["steps"]["accepted"] > 0

    def test_manifest(self, tmp_path):
        report = _run("pure_loss_evolve", tmp_path)
        assert report.manifest_path == manifest_path_for(report.output_path)
        manifest = json.loads(report.manifest_path.read_text(encoding="utf-8"))
        assert set(manifest) == {"tool", "version", "scenario", "inputs", "derived",
                                 "warnings", "outputs", "timing"}
        assert manifest["scenario"] == "pure_loss_evolve"
        assert manifest["inputs"]["scan"] == "evolve"
        assert manifest["inputs"]["truncations"] == [17]
        assert manifest["inputs"]["params"]["g2"] == 0.0
        assert manifest["warnings"] == []
        assert manifest["outputs"][0]["sha256"] == file_sha256(report.output_path)
        assert manifest["derived"]["kappa2_mhz"] == 0.0
        assert "alpha_inf_sq_semiclassical" not in manifest["derived"]

    def test_rerun_is_byte_identical(self, tmp_path):
        first = _run("pure_loss_evolve", tmp_path, filename="a.csv")
        second = _run("pure_loss_evolve", tmp_path, filename="b.csv")
        assert first.output_path.read_bytes() == second.output_path.read_bytes()

    def test_relative_output_goes_under_output_dir(self, tmp_path):
        cfg = load_scenario("pure_loss_evolve", {"n_samples": "5"}, env_cfg=NO_ENV)
        report = ScenarioRunner(cfg, jobs=1, output_dir=str(tmp_path / "results")).run()
        assert report.output_path == tmp_path / "results" / "pure_loss_evolve.csv"
        assert report.manifest_path.exists()

    def test_parity_conserved_under_two_photon_loss(self, tmp_path):
        report = _run("parity_conservation", tmp_path)
        frame = pd.read_csv(report.output_path)
        np.testing.assert_allclose(frame["parity_re"], 1.0, atol=1e-6)

    def test_rescaled_time_axis(self, tmp_path):
        report = _run("pure_loss_evolve", tmp_path, {"rescale": "10"})
        frame = pd.read_csv(report.output_path)
        assert frame["t"].iloc[-1] == pytest.approx(10.0)
        np.testing.assert_allclose(frame["a_re"], np.exp(-to_angular(0.053) * frame["t"] / 2.0), rtol=1e-5)


class TestSemiclassicalScenario:
    """测试半经典场景"""

    def test_kappa2_chain(self, tmp_path):
        report = _run("kappa2_chain", tmp_path)
        assert report.derived["kappa2_mhz"] == pytest.approx(0.0399, rel=2e-3)
        assert report.derived["field_units"] == "rad/us"
        points = sorted(report.derived["fixed_points"])
        assert points == [pytest.approx([-2.0, 0.0]), pytest.approx([0.0, 0.0]), pytest.approx([2.0, 0.0])]
        frame = pd.read_csv(report.output_path)
        assert len(frame) == 441
        assert list(frame.columns) == ["x", "y", "vx", "vy", "speed", "V"]

    def test_buffer_loss_override_halves_kappa2(self, tmp_path):
        base = _run("kappa2_chain", tmp_path, filename="base.csv")
        doubled = _run("kappa2_chain", tmp_path, {"kappa_b": "26"}, filename="doubled.csv")
        assert doubled.derived["kappa2_mhz"] == pytest.approx(base.derived["kappa2_mhz"] / 2.0)

    def test_detuning_beyond_threshold(self, tmp_path):
        report = _run("semiclassical_detuned", tmp_path)
        assert report.derived["fixed_points"] == [[0.0, 0.0]]
        assert report.derived["lambda"] is None
        assert "V" not in pd.read_csv(report.output_path).columns


class TestWignerScenario:
    """测试 Wigner 场景"""

    def test_even_cat_identities(self, tmp_path):
        report = _run("wigner_identities", tmp_path, {"resolution": "61"})
        assert report.derived["W_origin"] == pytest.approx(2.0 / math.pi, abs=1e-8)
        assert report.derived["normalization"] == pytest.approx(1.0, abs=2e-2)
        frame = pd.read_csv(report.output_path)
        assert list(frame.columns) == ["x", "y", "W"]
        assert len(frame) == 61 * 61


class TestBitflipScenario:
    """测试三模比特翻转场景"""

    @pytest.mark.slow
    def test_three_mode_saturation_and_chi_suppression(self, tmp_path):
        sets = {"alpha_sq_list": "6"}
        default = _run("bitflip_three_mode", tmp_path, sets)
        low_chi = _run("bitflip_three_mode_low_chi", tmp_path, sets)
        saturated = default.derived["saturation"]
        assert saturated["alpha_inf_sq"] == pytest.approx(6.0, rel=0.1)
        assert saturated["within_window"]
        assert 0.2 <= saturated["T_ms"] <= 1.0
        assert low_chi.derived["saturation"]["T_ms"] >= 3.0 * saturated["T_ms"]
