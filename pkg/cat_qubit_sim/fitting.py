"""
曲线拟合模块

Levenberg–Marquardt 非线性最小二乘（阻尼初值 1e-3，放大/缩小因子 10，最多 200 次迭代）、
指数衰减拟合、双高斯猫态尺寸拟合与线性标定拟合，以及确定性的准高斯噪声序列。
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import ndtri

from .exceptions import FitError
from .logger import setup_logger
from .wigner import WignerMap

logger = setup_logger(__name__)

DEFAULT_DAMPING = 1e-3
DAMPING_FACTOR = 10.0
MAX_DAMPING = 1e10
MAX_ITERATIONS = 200
RELATIVE_CHISQ_TOL = 1e-10
# 初值处 chisq 低于 ‖y‖² 的该比例时视为已在最优点
START_CHISQ_FLOOR = 1e-20

# 猫态尺寸拟合：只在距原点不小于该值处寻找主峰
SINGLE_LOBE_RADIUS = 0.5
# 主峰低于 max|W| 的该比例时视为单峰
LOBE_MIN_FRACTION = 0.1
# 距原点小于主峰距离该比例的点不参与拟合
FRINGE_EXCLUSION = 0.6

ModelFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class FitResult:
    """拟合结果；stderr 只在 converged 时给出"""
    params: Dict[str, float]
    stderr: Dict[str, float] = field(default_factory=dict)
    residual_rms: float = 0.0
    converged: bool = False
    flags: Tuple[str, ...] = ()
    iterations: int = 0

    def __getitem__(self, name: str) -> float:
        return self.params[name]

    def to_dict(self) -> Dict[str, object]:
        return {
            "params": dict(self.params),
            "stderr": dict(self.stderr),
            "residual_rms": self.residual_rms,
            "converged": self.converged,
            "flags": list(self.flags),
            "iterations": self.iterations,
        }


def _forward_jacobian(model: ModelFn, x: np.ndarray, p: np.ndarray, f0: np.ndarray,
                      diff_step: float) -> np.ndarray:
    jac = np.empty((f0.size, p.size))
    for j in range(p.size):
        h = diff_step * max(abs(p[j]), 1e-8)
        shifted = p.copy()
        shifted[j] += h
        jac[:, j] = (model(x, shifted) - f0) / h
    return jac


def levenberg_marquardt(model: ModelFn, x: np.ndarray, y: np.ndarray, p0: Sequence[float],
                        names: Sequence[str], jacobian: Optional[ModelFn] = None,
                        max_iter: int = MAX_ITERATIONS, damping: float = DEFAULT_DAMPING,
                        diff_step: float = 1.5e-8) -> FitResult:
    """
    Levenberg–Marquardt 最小二乘

    阻尼乘在正规矩阵对角线上（JᵀJ·(1+λI)）；chisq 不增时接受一步并将 λ 缩小，
    否则放大 λ 重试。相对下降量低于阈值或 λ 溢出时视为收敛；
    始终未能降低初值处 chisq 的拟合记为未收敛并标记 no_improvement。

    Args:
        model: model(x, p) -> 预测值
        x, y: 数据
        p0: 初值
        names: 参数名
        jacobian: jacobian(x, p) -> (m, k) 矩阵；为 None 时使用前向差分
        max_iter: 最大迭代次数
        damping: 初始阻尼
        diff_step: 前向差分相对步长

    Returns:
        FitResult
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    p = np.array(p0, dtype=np.float64)
    if len(names) != p.size:
        raise ValueError(f"参数名数量 {len(names)} 与初值数量 {p.size} 不一致")

    f = np.asarray(model(x, p), dtype=np.float64).ravel()
    residual = y - f
    chisq = float(residual @ residual)
    if not math.isfinite(chisq):
        raise FitError("初值处模型输出非有限值")

    chisq_start = chisq
    lam = damping
    converged = chisq == 0.0
    iterations = 0
    while not converged and iterations < max_iter:
        iterations += 1
        jac = jacobian(x, p) if jacobian is not None else _forward_jacobian(model, x, p, f, diff_step)
        normal = jac.T @ jac
        gradient = jac.T @ residual
        accepted = False
        while lam <= MAX_DAMPING:
            damped = normal + lam * np.diag(np.diag(normal))
            try:
                delta = np.linalg.solve(damped, gradient)
            except np.linalg.LinAlgError:
                lam *= DAMPING_FACTOR
                continue
            trial = p + delta
            trial_f = np.asarray(model(x, trial), dtype=np.float64).ravel()
            trial_residual = y - trial_f
            trial_chisq = float(trial_residual @ trial_residual)
            if math.isfinite(trial_chisq) and trial_chisq <= chisq:
                accepted = True
                break
            lam *= DAMPING_FACTOR
        if not accepted:
            # 任何方向都无法继续下降：已在局部极小
            converged = True
            break
        decrease = chisq - trial_chisq
        p, f, residual, chisq = trial, trial_f, trial_residual, trial_chisq
        lam = max(lam / DAMPING_FACTOR, 1e-12)
        if chisq == 0.0 or decrease <= RELATIVE_CHISQ_TOL * chisq:
            converged = True

    stalled = chisq >= chisq_start > START_CHISQ_FLOOR * float(y @ y)
    if stalled:
        converged = False
    m, k = y.size, p.size
    residual_rms = math.sqrt(chisq / m)
    params = {name: float(value) for name, value in zip(names, p)}
    flags: Tuple[str, ...] = ()
    stderr: Dict[str, float] = {}
    if converged:
        jac = jacobian(x, p) if jacobian is not None else _forward_jacobian(model, x, p, f, diff_step)
        normal = jac.T @ jac
        scale = chisq / (m - k) if m > k else 0.0
        try:
            cov = np.linalg.inv(normal) * scale
        except np.linalg.LinAlgError:
            cov = np.linalg.pinv(normal) * scale
            flags += ("singular_covariance",)
        stderr = {name: float(math.sqrt(max(cov[i, i], 0.0))) for i, name in enumerate(names)}
    elif stalled:
        logger.warning(f"LM 拟合未能降低初值处的残差（RMS {residual_rms:.3e}），结果不可信")
        flags += ("no_improvement",)
    else:
        logger.warning(f"LM 拟合在 {iterations} 次迭代内未收敛，残差 RMS {residual_rms:.3e}")
        flags += ("max_iterations",)
    return FitResult(params=params, stderr=stderr, residual_rms=residual_rms,
                     converged=converged, flags=flags, iterations=iterations)


# ---------------------------------------------------------------------------
# 指数衰减
# ---------------------------------------------------------------------------

def _exp_model(fixed_offset: Optional[float]) -> Tuple[ModelFn, ModelFn]:
    def model(t, p):
        offset = p[2] if fixed_offset is None else fixed_offset
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            return p[0] * np.exp(-t / p[1]) + offset

    def jacobian(t, p):
        decay = np.exp(-t / p[1])
        columns = [decay, p[0] * t / p[1] ** 2 * decay]
        if fixed_offset is None:
            columns.append(np.ones_like(t))
        return np.column_stack(columns)

    return model, jacobian


def _initial_decay_guess(t: np.ndarray, y: np.ndarray, offset: float) -> Tuple[float, float]:
    shifted = y - offset
    keep = np.abs(shifted) > 0.1 * np.max(np.abs(shifted))
    span = float(t[-1] - t[0])
    if np.count_nonzero(keep) >= 2:
        slope, intercept = np.polyfit(t[keep], np.log(np.abs(shifted[keep])), 1)
        if slope < 0:
            sign = 1.0 if shifted[keep][0] >= 0 else -1.0
            return sign * math.exp(intercept), -1.0 / slope
    return float(shifted[0]), 0.5 * span if span > 0 else 1.0


def fit_exp_decay(t: Sequence[float], samples: Sequence[float],
                  fixed_offset: Optional[float] = None) -> FitResult:
    """
    拟合 A·e^{−t/T} + C

    初值由 (samples − 尾部均值) 的对数线性回归给出。fixed_offset 不为 None 时 C 固定。

    Returns:
        FitResult，参数 A、T、C；常数数据返回 T=inf 且 converged=False
    """
    t = np.asarray(t, dtype=np.float64)
    y = np.asarray(samples, dtype=np.float64)
    if t.size != y.size:
        raise FitError(f"时间点数 {t.size} 与样本数 {y.size} 不一致")
    if t.size < 5:
        raise FitError(f"样本数 {t.size} 少于 5，无法拟合指数衰减")

    spread = float(np.ptp(y))
    if spread <= 1e-12 * max(1.0, float(np.max(np.abs(y)))):
        logger.warning("拟合数据近似为常数，衰减时间记为无穷大")
        offset = float(np.mean(y)) if fixed_offset is None else fixed_offset
        return FitResult(params={"A": 0.0, "T": math.inf, "C": offset},
                         converged=False, flags=("constant",))

    tail = max(1, y.size // 10)
    offset0 = float(np.mean(y[-tail:])) if fixed_offset is None else fixed_offset
    amplitude0, time0 = _initial_decay_guess(t, y, offset0)
    model, jacobian = _exp_model(fixed_offset)
    p0 = [amplitude0, time0] if fixed_offset is not None else [amplitude0, time0, offset0]
    names = ["A", "T"] if fixed_offset is not None else ["A", "T", "C"]
    result = levenberg_marquardt(model, t, y, p0, names, jacobian=jacobian)

    decay_time = result.params["T"]
    if not math.isfinite(decay_time) or decay_time <= 0:
        raise FitError(f"拟合得到非物理衰减时间 T={decay_time:g}")
    if not result.converged:
        raise FitError(f"指数衰减拟合未收敛（残差 RMS {result.residual_rms:.3e}）")
    if fixed_offset is not None:
        params = dict(result.params, C=float(fixed_offset))
        stderr = dict(result.stderr, C=0.0)
        result = FitResult(params=params, stderr=stderr, residual_rms=result.residual_rms,
                           converged=result.converged, flags=result.flags + ("fixed_offset",),
                           iterations=result.iterations)
    return result


# ---------------------------------------------------------------------------
# 猫态尺寸与线性标定
# ---------------------------------------------------------------------------

def _two_lobe_model(grid, p):
    xx, yy = grid
    x0, y0, width, amp_plus, amp_minus, offset = p
    inv = 1.0 / (2.0 * width ** 2)
    plus = np.exp(-((xx - x0) ** 2 + (yy - y0) ** 2) * inv)
    minus = np.exp(-((xx + x0) ** 2 + (yy + y0) ** 2) * inv)
    return (amp_plus * plus + amp_minus * minus + offset).ravel()


def _lobe_peak(wmap: WignerMap) -> Optional[Tuple[int, int]]:
    """原点圆盘外最高的局部极大值；不存在或过弱时返回 None"""
    values = wmap.values
    xx, yy = np.meshgrid(wmap.x, wmap.y, indexing='ij')
    windows = sliding_window_view(np.pad(values, 1, mode='edge'), (3, 3))
    local = values >= windows.max(axis=(-2, -1))
    candidates = local & (np.hypot(xx, yy) >= SINGLE_LOBE_RADIUS)
    if not candidates.any():
        return None
    masked = np.where(candidates, values, -np.inf)
    ix, iy = np.unravel_index(int(np.argmax(masked)), values.shape)
    if values[ix, iy] <= LOBE_MIN_FRACTION * float(np.max(np.abs(values))):
        return None
    return int(ix), int(iy)


def fit_cat_size(wmap: WignerMap) -> FitResult:
    """
    以两个关于原点对称、等宽的各向同性高斯拟合 Wigner 图，|α_∞|² = x₀² + y₀²

    初值取原点圆盘外最高的局部极大值；原点附近的干涉条纹不参与拟合。
    圆盘外没有足够强的局部极大值时视为单峰，返回 alpha_inf_sq = 0 并标记 single_lobe。
    """
    peak = _lobe_peak(wmap)
    if peak is None:
        logger.info("Wigner 图为单峰结构，猫态尺寸记为 0")
        return FitResult(params={"alpha_inf_sq": 0.0}, converged=False, flags=("single_lobe",))

    ix, iy = peak
    values = wmap.values
    x_peak, y_peak = float(wmap.x[ix]), float(wmap.y[iy])
    xx, yy = np.meshgrid(wmap.x, wmap.y, indexing='ij')
    keep = np.hypot(xx, yy) >= FRINGE_EXCLUSION * math.hypot(x_peak, y_peak)
    mirror = values[int(np.argmin(np.abs(wmap.x + x_peak))), int(np.argmin(np.abs(wmap.y + y_peak)))]
    p0 = [x_peak, y_peak, 0.5, float(values[ix, iy]), float(mirror), 0.0]
    names = ["x0", "y0", "width", "amp_plus", "amp_minus", "offset"]
    result = levenberg_marquardt(_two_lobe_model, (xx[keep], yy[keep]), values[keep], p0, names)

    x0, y0 = result.params["x0"], result.params["y0"]
    params = dict(result.params, alpha_inf_sq=x0 * x0 + y0 * y0)
    stderr = dict(result.stderr)
    if result.converged:
        stderr["alpha_inf_sq"] = 2.0 * math.hypot(x0 * stderr["x0"], y0 * stderr["y0"])
    return FitResult(params=params, stderr=stderr, residual_rms=result.residual_rms,
                     converged=result.converged, flags=result.flags, iterations=result.iterations)


def fit_linear_offset(x: Sequence[float], y: Sequence[float]) -> FitResult:
    """线性最小二乘 y = slope·x − offset"""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size < 2 or x.size != y.size:
        raise FitError(f"线性拟合至少需要 2 个点（x: {x.size}, y: {y.size}）")
    design = np.column_stack([x, -np.ones_like(x)])
    coeffs, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
    if rank < 2:
        raise FitError("线性拟合的自变量取值全部相同")
    residual = y - design @ coeffs
    chisq = float(residual @ residual)
    stderr: Dict[str, float] = {}
    if x.size > 2:
        cov = np.linalg.inv(design.T @ design) * chisq / (x.size - 2)
        stderr = {"slope": float(math.sqrt(cov[0, 0])), "offset": float(math.sqrt(cov[1, 1]))}
    return FitResult(params={"slope": float(coeffs[0]), "offset": float(coeffs[1])}, stderr=stderr,
                     residual_rms=math.sqrt(chisq / x.size), converged=True)


def quasi_gaussian_noise(n: int, scale: float = 1.0, start: int = 1) -> np.ndarray:
    """确定性准高斯序列：黄金分割低差异序列经逆正态分布函数映射"""
    golden = (math.sqrt(5.0) - 1.0) / 2.0
    k = np.arange(start, start + n, dtype=np.float64)
    u = np.mod(0.5 + k * golden, 1.0)
    return scale * ndtri(u)
