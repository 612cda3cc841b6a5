"""
场景运行核心模块

校验 → 构建模型 → 执行扫描 → 写出 CSV 与 manifest。
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np
import pandas as pd

from . import __version__
from .analysis import (
    ParityCurve,
    alpha_sq_for_target,
    bitflip_frame,
    bitflip_scan,
    default_relax_horizon,
    drive_calibration,
    drive_calibration_scan,
    drive_frame,
    exponential_scaling_slope,
    fit_kappa2,
    linear_trend,
    parity_vs_detuning,
    parity_window_halfwidth,
    phaseflip_frame,
    phaseflip_scan,
    saturation_summary,
    write_csv,
)
from .config_loader import ScenarioConfig
from .exceptions import ConfigurationError, FitError, NoMetastableDirectionError
from .fitting import fit_cat_size
from .hilbert import CatKind, DensityMatrix
from .lindblad import EvolutionSpec, Tolerances, evolve, relax_to_steady, sample_grid
from .logger import setup_logger
from .models import ModelSpec, Rung, build_model, cat_observables, initial_state, to_angular
from .semiclassical import (
    FieldParams,
    fixed_points,
    grid_export,
    lambda_direction,
    metastable_amplitude,
)
from .wigner import wigner

logger = setup_logger(__name__)

TOOL_NAME = "cat-qubit-sim"
STEADY_STATE = "steady"


class ScanKind(Enum):
    """扫描类型"""
    BITFLIP = "bitflip"
    PHASEFLIP = "phaseflip"
    KAPPA2_CAL = "kappa2_cal"
    DRIVE_CAL = "drive_cal"
    WIGNER = "wigner"
    SEMICLASSICAL = "semiclassical"
    EVOLVE = "evolve"


@dataclass(frozen=True)
class RunReport:
    """一次场景运行的产物"""
    scenario: str
    output_path: Path
    manifest_path: Path
    derived: Dict[str, Any]
    wall_time_s: float


def _jsonable(value: Any) -> Any:
    """numpy 标量转为 Python 数值，非有限浮点数写为 null"""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, Path):
        return str(value)
    return value


def file_sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def manifest_path_for(output_path: Path) -> Path:
    return output_path.with_suffix(".manifest.json")


class ScenarioRunner:
    """场景运行器"""

    def __init__(self,
                 scenario: ScenarioConfig,
                 jobs: Optional[int] = None,
                 output_dir: Optional[str] = None,
                 tolerances: Optional[Tolerances] = None):
        """
        初始化场景运行器

        Args:
            scenario: 已校验的场景
            jobs: 扫描并行进程数（缺省取配置）
            output_dir: 相对输出路径的根目录；None 表示相对当前目录
            tolerances: 积分容差（缺省取配置）
        """
        self.scenario = scenario
        self.kind = ScanKind(scenario.scan)
        self.jobs = jobs
        self.tolerances = tolerances or Tolerances()
        path = scenario.output_path
        if output_dir is not None and not path.is_absolute():
            path = Path(output_dir) / path
        self.output_path = path

    @property
    def spec(self) -> ModelSpec:
        return self.scenario.model

    @property
    def rescale(self) -> float:
        return self.scenario.rescale

    def run(self) -> RunReport:
        """运行场景并写出 CSV 与 manifest"""
        started = time.perf_counter()
        logger.info(f"开始运行场景: {self.scenario.name} ({self.kind.value}, {self.spec.rung.value}, "
                    f"截断 {self.spec.truncations})")
        warnings = self._consistency_warnings()

        handler = getattr(self, f"_run_{self.kind.value}")
        frame, derived = handler()

        write_csv(frame, self.output_path)
        logger.info(f"结果已写入: {self.output_path} ({len(frame)} 行)")

        derived = {**self._model_derived(), **derived}
        wall_time = time.perf_counter() - started
        manifest_path = self._write_manifest(derived, warnings, wall_time)
        logger.info(f"场景运行完成: {self.scenario.name}，耗时 {wall_time:.2f} s")
        return RunReport(scenario=self.scenario.name, output_path=self.output_path,
                         manifest_path=manifest_path, derived=derived, wall_time_s=wall_time)

    def _consistency_warnings(self) -> list:
        warnings = self.spec.params.consistency_warnings() + self.scenario.circuit.consistency_warnings()
        for message in warnings:
            logger.warning(f"参数一致性: {message}")
        return warnings

    def _model_derived(self) -> Dict[str, Any]:
        params = self.spec.params
        kappa2 = params.kappa2
        derived: Dict[str, Any] = {
            "kappa2_mhz": kappa2,
            "kappa_c_mhz": self.spec.kappa_c,
        }
        if kappa2 > 0 and self.spec.alpha_sq_target > 0:
            fp = FieldParams(kappa2=kappa2, alpha=self.spec.alpha, kappa_a=params.kappa_a)
            derived["alpha_inf_sq_semiclassical"] = metastable_amplitude(fp) ** 2
        return derived

    def _write_manifest(self, derived: Dict[str, Any], warnings: list, wall_time: float) -> Path:
        manifest = {
            "tool": TOOL_NAME,
            "version": __version__,
            "scenario": self.scenario.name,
            "inputs": {
                "config": self.scenario.inputs,
                "scan": self.kind.value,
                "scan_params": self.scenario.scan_params,
                "rung": self.spec.rung.value,
                "alpha_sq": self.spec.alpha_sq_target,
                "truncations": list(self.spec.truncations),
                "rescale": self.rescale,
                "params": self.spec.params.to_dict(),
                "circuit": self.scenario.circuit.to_dict(),
            },
            "derived": derived,
            "warnings": warnings,
            "outputs": [{"path": str(self.output_path), "sha256": file_sha256(self.output_path)}],
            "timing": {
                "created_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
                "wall_time_s": round(wall_time, 3),
            },
        }
        path = manifest_path_for(self.output_path)
        path.write_text(json.dumps(_jsonable(manifest), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
        return path

    # ------------------------------------------------------------------
    # 各扫描类型
    # ------------------------------------------------------------------

    def _run_bitflip(self) -> Tuple[pd.DataFrame, Dict[str, Any]]:
        p = self.scenario.scan_params
        alpha_sq_list = list(p["alpha_sq_list"])
        if p.get("alpha_sq_is_inf"):
            alpha_sq_list = [alpha_sq_for_target(self.spec, v) for v in alpha_sq_list]
        points = bitflip_scan(self.spec, alpha_sq_list, p["horizon"], n_samples=p.get("n_samples", 60),
                              rescale=self.rescale, jobs=self.jobs, tolerances=self.tolerances,
                              observable=p.get("observable", "a"))
        derived: Dict[str, Any] = {"converged": [pt.converged for pt in points]}
        try:
            derived["ln_T_slope"] = exponential_scaling_slope(points)
        except FitError as e:
            logger.warning(f"无法计算 ln T 斜率: {e}")
            derived["ln_T_slope"] = None
        if self.spec.rung is Rung.THREE_MODE:
            try:
                derived["saturation"] = saturation_summary(points)
            except FitError as e:
                logger.warning(f"无法判断比特翻转时间是否饱和: {e}")
                derived["saturation"] = None
            else:
                if not derived["saturation"]["within_window"]:
                    logger.warning(f"最大 |α_∞|² 处 T = {derived['saturation']['T_ms']:.3g} ms，不在饱和窗口内")
        return bitflip_frame(points), derived

    def _run_phaseflip(self) -> Tuple[pd.DataFrame, Dict[str, Any]]:
        p = self.scenario.scan_params
        points = phaseflip_scan(self.spec, p["alpha_sq_list"], horizon=p.get("horizon"),
                                n_samples=p.get("n_samples", 40), rescale=self.rescale,
                                jobs=self.jobs, tolerances=self.tolerances)
        derived: Dict[str, Any] = {"reference_slope_per_us": 2.0 * to_angular(self.spec.params.kappa_a)}
        if len(points) >= 2:
            slope, intercept = linear_trend(points)
            derived.update({"gamma_slope_per_us": slope, "gamma_intercept_per_us": intercept})
        return phaseflip_frame(points), derived

    def _run_kappa2_cal(self) -> Tuple[pd.DataFrame, Dict[str, Any]]:
        p = self.scenario.scan_params
        curve: ParityCurve = parity_vs_detuning(self.spec, p["delta_list"], horizon=p.get("horizon"),
                                                stall_tol=p.get("stall_tol"), jobs=self.jobs,
                                                tolerances=self.tolerances)
        derived: Dict[str, Any] = {"steady_converged": list(curve.converged)}
        try:
            derived["halfwidth_mhz"] = parity_window_halfwidth(curve)
        except FitError as e:
            logger.warning(f"无法确定宇称窗口半高宽: {e}")
        if p.get("fit", True):
            fit = fit_kappa2(curve, self.spec, horizon=p.get("horizon"), jobs=self.jobs,
                             tolerances=self.tolerances, kappa2_guess=p.get("kappa2_guess"))
            derived["kappa2_fit"] = fit.to_dict()
        return curve.to_frame(), derived

    def _run_drive_cal(self) -> Tuple[pd.DataFrame, Dict[str, Any]]:
        p = self.scenario.scan_params
        points = drive_calibration_scan(self.spec, p["eps_list"], horizon=p.get("horizon"),
                                        stall_tol=p.get("stall_tol"),
                                        jobs=self.jobs, tolerances=self.tolerances)
        params = self.spec.params
        derived: Dict[str, Any] = {"expected_offset": params.kappa_a / (2.0 * params.kappa2)}
        fit = drive_calibration([(pt.eps_d, pt.alpha_inf_sq) for pt in points],
                                min_alpha_inf_sq=p.get("min_alpha_inf_sq", 0.0))
        derived["calibration"] = fit.to_dict()
        return drive_frame(points), derived

    def _scaled_spec(self) -> ModelSpec:
        if self.rescale == 1.0:
            return self.spec
        return replace(self.spec, params=self.spec.params.rescaled(self.rescale))

    def _prepared_state(self, spec: ModelSpec, kind: str, alpha: Optional[float],
                        transmon_excited: bool = False) -> DensityMatrix:
        if kind == STEADY_STATE:
            hamiltonian, loss_ops = build_model(spec)
            evo = EvolutionSpec(hamiltonian, tuple(loss_ops), tolerances=self.tolerances)
            rates = [to_angular(spec.params.kappa_a), to_angular(spec.kappa_c)]
            steady = relax_to_steady(evo, initial_state(spec, CatKind.COHERENT, alpha=0.0),
                                     default_relax_horizon(spec), 1e-6 * max(rates))
            return steady.state
        try:
            cat_kind = CatKind(kind)
        except ValueError:
            raise ConfigurationError(f"未知初态 initial_state: {kind!r}") from None
        return initial_state(spec, cat_kind, alpha=alpha, transmon_excited=transmon_excited)

    def _run_wigner(self) -> Tuple[pd.DataFrame, Dict[str, Any]]:
        p = self.scenario.scan_params
        spec = self._scaled_spec()
        rho = self._prepared_state(spec, str(p.get("initial_state", "plus")).lower(), p.get("initial_alpha"))
        t_final = p.get("t_final", 0.0)
        if t_final > 0:
            hamiltonian, loss_ops = build_model(spec)
            grid = np.array([t_final / self.rescale])
            rho = evolve(EvolutionSpec(hamiltonian, tuple(loss_ops), grid, {}, self.tolerances), rho).final_state
        wmap = wigner(rho, extent=p.get("extent", 4.0), resolution=p.get("resolution", 81))
        derived: Dict[str, Any] = {
            "normalization": wmap.normalization(),
            "W_origin": wmap.value_at_origin(),
        }
        if p.get("fit_cat_size", False):
            derived["cat_size"] = fit_cat_size(wmap).to_dict()
        return wmap.to_frame(), derived

    def _run_semiclassical(self) -> Tuple[pd.DataFrame, Dict[str, Any]]:
        p = self.scenario.scan_params
        params = self.spec.params
        kappa_a = to_angular(params.kappa_a) if p.get("loss", True) else 0.0
        delta = to_angular(p.get("delta", 0.0))
        fp = FieldParams(kappa2=to_angular(params.kappa2), alpha=self.spec.alpha, kappa_a=kappa_a, delta=delta)
        grid = grid_export(fp, p.get("extent", 3.0), p.get("resolution", 61))
        derived: Dict[str, Any] = {"field_units": "rad/us"}
        if kappa_a and delta:
            logger.info("单光子损耗与失谐同时存在，不计算不动点")
        else:
            derived["fixed_points"] = [[pt.x, pt.y] for pt in fixed_points(fp)]
        if delta and not kappa_a:
            try:
                derived["lambda"] = lambda_direction(fp.kappa_c, abs(delta))
            except NoMetastableDirectionError as e:
                logger.warning(str(e))
                derived["lambda"] = None
        return grid.to_frame(), derived

    def _run_evolve(self) -> Tuple[pd.DataFrame, Dict[str, Any]]:
        p = self.scenario.scan_params
        spec = self._scaled_spec()
        kind = str(p.get("initial_state", "coherent")).lower()
        if kind == STEADY_STATE:
            raise ConfigurationError("evolve 扫描的初态不能是 steady")
        rho0 = self._prepared_state(spec, kind, p.get("initial_alpha"), p.get("transmon_excited", False))
        hamiltonian, loss_ops = build_model(spec)
        grid = sample_grid(p["t_final"] / self.rescale, p.get("n_samples", 101))
        series = evolve(EvolutionSpec(hamiltonian, tuple(loss_ops), grid, cat_observables(spec),
                                      self.tolerances), rho0)
        frame = series.to_frame()
        frame["t"] = frame["t"] * self.rescale
        derived = {
            "final": {name: float(np.real(column[-1])) for name, column in series.values.items()},
            "steps": series.stats,
        }
        return frame, derived
