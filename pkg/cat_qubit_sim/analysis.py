"""
实验流程模块

比特翻转扫描、相位翻转扫描、κ₂ 标定（稳态宇称随失谐）与驱动标定。
每个扫描点是一次独立演化，由进程池并行执行；rescale ≠ 1 时动力学在缩放后的速率下积分，
报告的时间统一换算回物理 µs。
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from multiprocessing import Pool
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from .config import config
from .exceptions import ConfigurationError, FitError
from .fitting import FitResult, fit_exp_decay, fit_linear_offset, levenberg_marquardt
from .hilbert import CatKind, DensityMatrix, Operator, expectation
from .lindblad import EvolutionSpec, Tolerances, evolve, relax_to_steady
from .logger import setup_logger
from .models import (
    ModelSpec,
    Rung,
    alpha_from_drive,
    build_model,
    cat_observables,
    initial_state,
    to_angular,
)
from .wigner import half_plane_operator

logger = setup_logger(__name__)

# 拟合窗口从 5/κ_c 之后开始
SETTLE_CONFINEMENT_TIMES = 5.0
MAX_HORIZON_EXTENSIONS = 3
MIN_DECAY_TIMES_IN_WINDOW = 2.0
# 三模模型中比特翻转时间应饱和到的窗口（ms）
SATURATION_WINDOW_MS = (0.2, 1.0)


# ---------------------------------------------------------------------------
# 结果类型
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BitflipPoint:
    alpha_sq: float
    alpha_inf_sq: float
    T_us: float
    T_stderr_us: float
    converged: bool = True


@dataclass(frozen=True)
class PhaseflipPoint:
    alpha_sq: float
    gamma_per_us: float
    stderr: float
    converged: bool = True


@dataclass(frozen=True)
class DrivePoint:
    eps_d: float
    alpha_sq: float
    alpha_inf_sq: float


@dataclass(frozen=True, eq=False)
class ParityCurve:
    """稳态宇称随失谐（MHz，ν约定）的变化"""
    delta: np.ndarray
    parity: np.ndarray
    alpha_sq: float
    converged: Tuple[bool, ...] = ()

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"delta_mhz": self.delta, "parity": self.parity})


def bitflip_frame(points: Sequence[BitflipPoint]) -> pd.DataFrame:
    return pd.DataFrame(
        [(p.alpha_sq, p.alpha_inf_sq, p.T_us, p.T_stderr_us) for p in points],
        columns=["alpha_sq", "alpha_inf_sq", "T_us", "T_stderr_us"],
    )


def phaseflip_frame(points: Sequence[PhaseflipPoint]) -> pd.DataFrame:
    return pd.DataFrame(
        [(p.alpha_sq, p.gamma_per_us, p.stderr) for p in points],
        columns=["alpha_sq", "gamma_per_us", "stderr"],
    )


def drive_frame(points: Sequence[DrivePoint]) -> pd.DataFrame:
    return pd.DataFrame(
        [(p.eps_d, p.alpha_sq, p.alpha_inf_sq) for p in points],
        columns=["eps_d", "alpha_sq", "alpha_inf_sq"],
    )


def write_csv(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format='%.17g')
    return path


# ---------------------------------------------------------------------------
# 并行扇出
# ---------------------------------------------------------------------------

def fan_out(worker: Callable, tasks: Sequence, jobs: Optional[int] = None, desc: str = "") -> List:
    """按输入顺序返回结果；jobs<=1 时串行执行"""
    jobs = config.jobs if jobs is None else jobs
    tasks = list(tasks)
    if jobs <= 1 or len(tasks) <= 1:
        return [worker(task) for task in tqdm(tasks, desc=desc, leave=False)]
    with Pool(min(jobs, len(tasks))) as pool:
        return list(tqdm(pool.imap(worker, tasks), total=len(tasks), desc=desc, leave=False))


# ---------------------------------------------------------------------------
# 公共工具
# ---------------------------------------------------------------------------

def _rescaled(spec: ModelSpec, rescale: float) -> ModelSpec:
    if rescale == 1.0:
        return spec
    return replace(spec, params=spec.params.rescaled(rescale))


def _at_alpha_sq(spec: ModelSpec, alpha_sq: float) -> ModelSpec:
    return ModelSpec(rung=spec.rung, params=spec.params, alpha_sq_target=alpha_sq,
                     truncations=spec.truncations)


def settle_time(spec: ModelSpec) -> float:
    """5/κ_c（µs，κ_c 取角频率）；κ₂ = 0 时为 0"""
    kappa_c = to_angular(spec.kappa_c)
    return SETTLE_CONFINEMENT_TIMES / kappa_c if kappa_c > 0 else 0.0


def _decay_run(spec: ModelSpec, rho0: DensityMatrix, observables: Dict[str, Operator],
               signal: Callable[[Dict[str, np.ndarray]], np.ndarray], horizon: float,
               n_samples: int, tolerances: Tolerances) -> Tuple[np.ndarray, Dict[str, np.ndarray], FitResult]:
    """
    演化并拟合 signal 的指数衰减（偏置固定为0）

    拟合窗口覆盖不足 2 个衰减时间时，从末态继续演化使总时长加倍，最多 3 次。
    """
    hamiltonian, loss_ops = build_model(spec)
    t_settle = min(settle_time(spec), 0.5 * horizon)
    times: List[np.ndarray] = []
    columns: Dict[str, List[np.ndarray]] = {name: [] for name in observables}
    state, t_offset, segment = rho0, 0.0, horizon
    fit: Optional[FitResult] = None

    for attempt in range(MAX_HORIZON_EXTENSIONS + 1):
        grid = np.linspace(0.0, segment, n_samples)
        if attempt:
            grid = np.linspace(0.0, segment, n_samples + 1)[1:]
        series = evolve(EvolutionSpec(hamiltonian, tuple(loss_ops), grid, observables, tolerances), state)
        times.append(grid + t_offset)
        for name in observables:
            columns[name].append(series.values[name])
        state, t_offset = series.final_state, t_offset + segment

        t_all = np.concatenate(times)
        values = {name: np.concatenate(parts) for name, parts in columns.items()}
        window = t_all >= t_settle
        fit = fit_exp_decay(t_all[window] - t_settle, signal(values)[window], fixed_offset=0.0)
        if t_offset - t_settle >= MIN_DECAY_TIMES_IN_WINDOW * fit.params["T"]:
            break
        if attempt < MAX_HORIZON_EXTENSIONS:
            logger.info(f"拟合窗口不足 {MIN_DECAY_TIMES_IN_WINDOW:g} 个衰减时间，演化时长延长至 {2 * t_offset:g} µs")
            segment = t_offset
    else:
        logger.warning(f"延长 {MAX_HORIZON_EXTENSIONS} 次后拟合窗口仍不足 {MIN_DECAY_TIMES_IN_WINDOW:g} 个衰减时间")
    return t_all, values, fit


def _scaled_time(value: float, rescale: float) -> float:
    return value * rescale if math.isfinite(value) else value


# ---------------------------------------------------------------------------
# 比特翻转
# ---------------------------------------------------------------------------

def _bitflip_worker(task) -> BitflipPoint:
    spec, alpha_sq, horizon, n_samples, tolerances, rescale, observable = task
    point_spec = _rescaled(_at_alpha_sq(spec, alpha_sq), rescale)
    observables = cat_observables(point_spec)
    if observable == "husimi":
        observables["husimi"] = half_plane_operator(point_spec.sig)
    rho0 = initial_state(point_spec, CatKind.COHERENT)
    key = "a" if observable == "a" else "husimi"
    _, values, fit = _decay_run(point_spec, rho0, observables, lambda v: np.real(v[key]),
                                horizon / rescale, n_samples, tolerances)
    alpha_inf_sq = float(abs(values["a2"][-1]))
    T = _scaled_time(fit.params["T"], rescale)
    stderr = _scaled_time(fit.stderr.get("T", math.nan), rescale)
    return BitflipPoint(alpha_sq=alpha_sq, alpha_inf_sq=alpha_inf_sq, T_us=T,
                        T_stderr_us=stderr, converged=fit.converged)


def alpha_sq_for_target(spec: ModelSpec, alpha_inf_sq: float) -> float:
    """由目标 |α_∞|² 反推 α² = |α_∞|² + κ_a/(2κ₂)"""
    if spec.kappa2 <= 0:
        raise ConfigurationError("κ₂ = 0（g₂ = 0）时无法由 |α_∞|² 反推 α²")
    return alpha_inf_sq + spec.params.kappa_a / (2.0 * spec.kappa2)


def bitflip_scan(spec: ModelSpec, alpha_sq_list: Sequence[float], horizon: float,
                 n_samples: int = 60, rescale: float = 1.0, jobs: Optional[int] = None,
                 tolerances: Optional[Tolerances] = None, observable: str = "a") -> List[BitflipPoint]:
    """
    比特翻转时间扫描

    对每个 α² 制备相干态 |α⟩、演化并拟合 Re⟨a⟩ 的衰减（observable="husimi" 时改用
    Husimi 半平面质量差），|α_∞|² 取末时刻的 |⟨a²⟩|。

    Args:
        spec: 模型描述（alpha_sq_target 被逐点替换）
        alpha_sq_list: α² 列表
        horizon: 初始演化时长（物理 µs）
        n_samples: 每段采样点数
        rescale: 速率缩放因子
        jobs: 并行进程数
        tolerances: 积分容差
        observable: "a" 或 "husimi"

    Returns:
        BitflipPoint 列表（与输入顺序一致）
    """
    if not alpha_sq_list:
        raise ConfigurationError("alpha_sq_list 不能为空")
    if not horizon > 0:
        raise ConfigurationError(f"horizon 必须为正: {horizon}")
    if observable not in ("a", "husimi"):
        raise ConfigurationError(f"不支持的比特翻转观测量: {observable}")
    tolerances = tolerances or Tolerances()
    logger.info(f"比特翻转扫描: {spec.rung.value}, {len(alpha_sq_list)} 个点, rescale={rescale:g}")
    tasks = [(spec, float(a2), horizon, n_samples, tolerances, rescale, observable) for a2 in alpha_sq_list]
    return fan_out(_bitflip_worker, tasks, jobs, desc="bitflip")


def bitflip_from_husimi(spec: ModelSpec, alpha_sq: float, horizon: float, n_samples: int = 60,
                        rescale: float = 1.0, tolerances: Optional[Tolerances] = None) -> Tuple[float, float]:
    """同一演化分别由 Re⟨a⟩ 与 Husimi 半平面质量差得到的比特翻转时间（交叉检验）"""
    tolerances = tolerances or Tolerances()
    from_a = _bitflip_worker((spec, alpha_sq, horizon, n_samples, tolerances, rescale, "a"))
    from_q = _bitflip_worker((spec, alpha_sq, horizon, n_samples, tolerances, rescale, "husimi"))
    return from_a.T_us, from_q.T_us


def exponential_scaling_slope(points: Sequence[BitflipPoint]) -> float:
    """ln T 对 |α_∞|² 的线性回归斜率"""
    finite = [(p.alpha_inf_sq, math.log(p.T_us)) for p in points if math.isfinite(p.T_us) and p.T_us > 0]
    if len(finite) < 2:
        raise FitError("有限的比特翻转时间少于 2 个，无法求斜率")
    x, y = zip(*finite)
    slope, _ = np.polyfit(x, y, 1)
    return float(slope)


def saturation_summary(points: Sequence[BitflipPoint]) -> Dict[str, Any]:
    """最大 |α_∞|² 处已收敛的比特翻转时间（ms），以及它是否落在饱和窗口内"""
    finite = [p for p in points if p.converged and math.isfinite(p.T_us) and p.T_us > 0]
    if not finite:
        raise FitError("没有已收敛的比特翻转时间，无法判断饱和")
    top = max(finite, key=lambda p: p.alpha_inf_sq)
    T_ms = top.T_us / 1000.0
    low, high = SATURATION_WINDOW_MS
    return {"alpha_sq": top.alpha_sq, "alpha_inf_sq": top.alpha_inf_sq, "T_ms": T_ms,
            "within_window": low <= T_ms <= high}


# ---------------------------------------------------------------------------
# 相位翻转
# ---------------------------------------------------------------------------

def _phaseflip_worker(task) -> PhaseflipPoint:
    spec, alpha_sq, horizon, n_samples, tolerances, rescale = task
    point_spec = _rescaled(_at_alpha_sq(spec, alpha_sq), rescale)
    hamiltonian, loss_ops = build_model(point_spec)
    parity = {"parity": cat_observables(point_spec)["parity"]}
    if horizon is None:
        rate = to_angular(point_spec.params.kappa_a) * 2.0 * alpha_sq
        if rate <= 0:
            raise ConfigurationError("kappa_a=0 时必须显式给出相位翻转的 horizon")
        sim_horizon = 2.0 / rate
    else:
        sim_horizon = horizon / rescale
    grid = np.linspace(0.0, sim_horizon, n_samples)
    evo = EvolutionSpec(hamiltonian, tuple(loss_ops), grid, parity, tolerances)
    plus = evolve(evo, initial_state(point_spec, CatKind.PLUS)).real("parity")
    minus = evolve(evo, initial_state(point_spec, CatKind.MINUS)).real("parity")
    fit = fit_exp_decay(grid, plus - minus, fixed_offset=0.0)
    decay_time = fit.params["T"]
    gamma = 1.0 / (decay_time * rescale)
    stderr = fit.stderr.get("T", math.nan) / (decay_time ** 2 * rescale)
    return PhaseflipPoint(alpha_sq=alpha_sq, gamma_per_us=gamma, stderr=stderr, converged=fit.converged)


def phaseflip_scan(spec: ModelSpec, alpha_sq_list: Sequence[float], horizon: Optional[float] = None,
                   n_samples: int = 40, rescale: float = 1.0, jobs: Optional[int] = None,
                   tolerances: Optional[Tolerances] = None) -> List[PhaseflipPoint]:
    """
    相位翻转速率扫描：分别演化 |+⟩_α 与 |−⟩_α，拟合 ⟨P⟩₊ − ⟨P⟩₋ 的衰减得到 Γ（1/µs）

    horizon 缺省时取两倍的理论衰减时间 1/(2α²κ_a)。
    """
    if not alpha_sq_list:
        raise ConfigurationError("alpha_sq_list 不能为空")
    if any(a2 <= 0 for a2 in alpha_sq_list):
        raise ConfigurationError("α=0 时奇猫态无定义，相位翻转扫描要求 α² > 0")
    tolerances = tolerances or Tolerances()
    logger.info(f"相位翻转扫描: {spec.rung.value}, {len(alpha_sq_list)} 个点")
    tasks = [(spec, float(a2), horizon, n_samples, tolerances, rescale) for a2 in alpha_sq_list]
    return fan_out(_phaseflip_worker, tasks, jobs, desc="phaseflip")


def phaseflip_reference_rate(t1_eff: float, alpha_sq: float) -> float:
    """Γ = 2α²/T1,eff"""
    if not t1_eff > 0:
        raise ValueError(f"T1_eff 必须为正: {t1_eff}")
    return 2.0 * alpha_sq / t1_eff


def linear_trend(points: Sequence[PhaseflipPoint]) -> Tuple[float, float]:
    """Γ 对 α² 的线性回归 (slope, intercept)"""
    if len(points) < 2:
        raise FitError("线性回归至少需要 2 个点")
    slope, intercept = np.polyfit([p.alpha_sq for p in points], [p.gamma_per_us for p in points], 1)
    return float(slope), float(intercept)


# ---------------------------------------------------------------------------
# κ₂ 标定
# ---------------------------------------------------------------------------

def default_relax_horizon(spec: ModelSpec) -> float:
    """20/min(κ_a, κ_c)（µs，角频率）"""
    rates = [r for r in (to_angular(spec.params.kappa_a), to_angular(spec.kappa_c)) if r > 0]
    if not rates:
        raise ConfigurationError("κ_a 与 κ_c 均为零，无法确定弛豫时长，请显式给出 horizon")
    return 20.0 / min(rates)


def _steady_worker(task) -> Tuple[DensityMatrix, bool]:
    spec, delta, horizon, stall_tol, tolerances = task
    hamiltonian, loss_ops = build_model(spec)
    if delta:
        hamiltonian = (hamiltonian + cat_observables(spec)["n"] * to_angular(delta)).hermitized()
    evo = EvolutionSpec(hamiltonian, tuple(loss_ops), tolerances=tolerances)
    vacuum = initial_state(spec, CatKind.COHERENT, alpha=0.0)
    steady = relax_to_steady(evo, vacuum, horizon, stall_tol)
    return steady.state, steady.converged


def _parity_worker(task) -> Tuple[float, bool]:
    spec = task[0]
    state, converged = _steady_worker(task)
    return float(expectation(state, cat_observables(spec)["parity"])), converged


def parity_vs_detuning(spec: ModelSpec, delta_list: Sequence[float], horizon: Optional[float] = None,
                       stall_tol: Optional[float] = None, jobs: Optional[int] = None,
                       tolerances: Optional[Tolerances] = None, check_span: bool = True) -> ParityCurve:
    """
    稳态宇称随失谐的曲线：H 中加入 Δ a†a（Δ 为 ν 约定 MHz），从真空弛豫到稳态

    Args:
        spec: 模型描述（一般为一模）
        delta_list: 失谐列表（MHz）
        horizon: 弛豫时长上限（µs），缺省为 20/min(κ_a, κ_c)
        stall_tol: ‖dρ/dt‖_∞ 收敛阈值（1/µs），缺省为 1e-6·κ_a
        check_span: 是否检查失谐范围超出 ±κ₂α²
    """
    deltas = np.asarray(delta_list, dtype=np.float64)
    if deltas.size == 0:
        raise ConfigurationError("delta_list 不能为空")
    half_width = spec.kappa2 * spec.alpha_sq_target
    if check_span and np.max(np.abs(deltas)) <= half_width:
        raise ConfigurationError(f"失谐范围 max|Δ|={np.max(np.abs(deltas)):g} MHz 未超出 κ₂α²={half_width:g} MHz")
    horizon = horizon or default_relax_horizon(spec)
    if stall_tol is None:
        stall_tol = 1e-6 * max(to_angular(spec.params.kappa_a), to_angular(spec.kappa_c))
    tolerances = tolerances or Tolerances()
    tasks = [(spec, float(d), horizon, stall_tol, tolerances) for d in deltas]
    results = fan_out(_parity_worker, tasks, jobs, desc="parity")
    return ParityCurve(delta=deltas, parity=np.array([r[0] for r in results]),
                       alpha_sq=spec.alpha_sq_target, converged=tuple(r[1] for r in results))


def parity_window_halfwidth(curve: ParityCurve) -> float:
    """宇称从谷底回升到 (最大+最小)/2 处的 |Δ|（线性插值）"""
    order = np.argsort(np.abs(curve.delta))
    distance = np.abs(curve.delta)[order]
    parity = curve.parity[order]
    level = 0.5 * (np.max(parity) + np.min(parity))
    start = int(np.argmin(parity))
    for i in range(start, len(parity) - 1):
        if parity[i] <= level < parity[i + 1]:
            fraction = (level - parity[i]) / (parity[i + 1] - parity[i])
            return float(distance[i] + fraction * (distance[i + 1] - distance[i]))
    raise FitError("宇称曲线中找不到半高点")


def _kappa2_params(spec: ModelSpec, kappa2: float):
    g2 = math.sqrt(max(kappa2, 0.0) * spec.params.kappa_b / 4.0)
    return spec.params.with_overrides(g2=g2)


def fit_kappa2(curve: ParityCurve, spec: ModelSpec, horizon: Optional[float] = None,
               jobs: Optional[int] = None, tolerances: Optional[Tolerances] = None,
               kappa2_guess: Optional[float] = None) -> FitResult:
    """
    以模拟模板拟合宇称曲线，自由参数为宇称衬度 contrast 与 κ₂（MHz）

    模型：P(Δ) = 1 − contrast·(1 − P_sim(Δ; κ₂))，κ₂ 通过 g₂ = √(κ₂κ_b/4) 进入模板。
    κ₂ 初值由半高宽/α² 估计；雅可比矩阵用前向差分，模板按 κ₂ 缓存。
    """
    alpha_sq = curve.alpha_sq
    if alpha_sq <= 0:
        raise ConfigurationError("κ₂ 标定要求 α² > 0")
    base = _at_alpha_sq(spec, alpha_sq)
    templates: Dict[float, np.ndarray] = {}

    def template(kappa2: float) -> np.ndarray:
        key = float(kappa2)
        if key not in templates:
            model_spec = replace(base, params=_kappa2_params(base, key))
            templates[key] = parity_vs_detuning(model_spec, curve.delta, horizon=horizon, jobs=jobs,
                                                tolerances=tolerances, check_span=False).parity
        return templates[key]

    def model(_, p):
        contrast, kappa2 = p
        if kappa2 <= 0:
            return np.full(curve.delta.shape, np.inf)
        return 1.0 - contrast * (1.0 - template(kappa2))

    if kappa2_guess is None:
        kappa2_guess = parity_window_halfwidth(curve) / alpha_sq
    logger.info(f"κ₂ 标定: 初值 κ₂={kappa2_guess:.4g} MHz")
    result = levenberg_marquardt(model, curve.delta, curve.parity, [1.0, kappa2_guess],
                                 ["contrast", "kappa2"], diff_step=1e-3)
    if not result.converged:
        raise FitError("κ₂ 拟合未收敛")
    return result


# ---------------------------------------------------------------------------
# 驱动标定
# ---------------------------------------------------------------------------

def _drive_worker(task) -> float:
    spec, horizon, stall_tol, tolerances = task
    state, _ = _steady_worker((spec, 0.0, horizon, stall_tol, tolerances))
    return float(abs(expectation(state, cat_observables(spec)["a2"])))


def drive_calibration_scan(spec: ModelSpec, eps_list: Sequence[float], horizon: Optional[float] = None,
                           stall_tol: Optional[float] = None, jobs: Optional[int] = None,
                           tolerances: Optional[Tolerances] = None) -> List[DrivePoint]:
    """对每个驱动幅度 ε_d（MHz）求 α² = |−ε_d/g₂*|，弛豫到稳态后以 |⟨a²⟩| 估计 |α_∞|²"""
    if spec.rung is not Rung.ONE_MODE:
        raise ConfigurationError("驱动标定使用一模模型")
    tolerances = tolerances or Tolerances()
    tasks = []
    alpha_sqs = []
    for eps in eps_list:
        alpha_sq = abs(alpha_from_drive(eps, spec.params.g2))
        point_spec = _at_alpha_sq(spec, alpha_sq)
        point_horizon = horizon or default_relax_horizon(point_spec)
        point_tol = stall_tol or 1e-6 * max(to_angular(spec.params.kappa_a), to_angular(point_spec.kappa_c))
        tasks.append((point_spec, point_horizon, point_tol, tolerances))
        alpha_sqs.append(alpha_sq)
    values = fan_out(_drive_worker, tasks, jobs, desc="drive")
    return [DrivePoint(eps_d=float(eps), alpha_sq=a2, alpha_inf_sq=float(v))
            for eps, a2, v in zip(eps_list, alpha_sqs, values)]


def drive_calibration(pairs: Sequence[Tuple[float, float]], min_alpha_inf_sq: float = 0.0) -> FitResult:
    """
    拟合 |α_∞|² = slope·|ε_d| − offset，只使用 |α_∞|² > min_alpha_inf_sq 的点

    offset 对应 κ_a/(2κ₂)，slope 对应 1/|g₂|。
    """
    kept = [(abs(eps), value) for eps, value in pairs if value > min_alpha_inf_sq]
    if len(kept) < 2:
        raise FitError(f"|α_∞|² > {min_alpha_inf_sq:g} 的点少于 2 个，无法标定")
    x, y = zip(*kept)
    return fit_linear_offset(x, y)
