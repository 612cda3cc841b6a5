"""
半经典相空间分析模块

把动力学限制在相干态 |β⟩ 上得到的速度场 dβ/dt、赝势、亚稳振幅与阈值，
以及失谐情形下的亚稳方向。所有速率使用同一种单位即可（函数不做单位换算）。
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .exceptions import NoMetastableDirectionError, UnsupportedPerturbationError
from .logger import setup_logger

logger = setup_logger(__name__)


@dataclass(frozen=True)
class FieldParams:
    """半经典场参数：κ₂、实振幅 α、单光子损耗 κ_a、失谐 Δ"""
    kappa2: float
    alpha: float
    kappa_a: float = 0.0
    delta: float = 0.0

    def __post_init__(self):
        if not self.kappa2 > 0:
            raise ValueError(f"kappa2 必须为正: {self.kappa2}")
        if self.kappa_a < 0:
            raise ValueError(f"kappa_a 不能为负: {self.kappa_a}")

    @property
    def alpha_sq(self) -> float:
        return self.alpha ** 2

    @property
    def kappa_c(self) -> float:
        return 2.0 * self.alpha ** 2 * self.kappa2


@dataclass(frozen=True)
class PhasePoint:
    """相空间点 x = Re β，y = Im β"""
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"相空间点必须有限: ({self.x}, {self.y})")

    @property
    def beta(self) -> complex:
        return complex(self.x, self.y)


def _velocity_arrays(x, y, fp: FieldParams):
    beta = np.asarray(x, dtype=np.float64) + 1j * np.asarray(y, dtype=np.float64)
    v = (-fp.kappa2 * np.conj(beta) * (beta ** 2 - fp.alpha ** 2)
         - 0.5 * fp.kappa_a * beta - 1j * fp.delta * beta)
    return np.real(v), np.imag(v)


def velocity(p: PhasePoint, fp: FieldParams) -> Tuple[float, float]:
    """dβ/dt = −κ₂β*(β²−α²) − ½κ_aβ − iΔβ，返回 (dx/dt, dy/dt)"""
    vx, vy = _velocity_arrays(p.x, p.y, fp)
    return float(vx), float(vy)


def jacobian(p: PhasePoint, fp: FieldParams) -> np.ndarray:
    """速度场的解析雅可比矩阵 ∂(vx, vy)/∂(x, y)"""
    x, y = p.x, p.y
    k2, a2 = fp.kappa2, fp.alpha ** 2
    half_loss = 0.5 * fp.kappa_a
    return np.array([
        [-k2 * (3 * x * x + y * y - a2) - half_loss, -2 * k2 * x * y + fp.delta],
        [-2 * k2 * x * y - fp.delta, -k2 * (x * x + 3 * y * y + a2) - half_loss],
    ])


def curl(p: PhasePoint, fp: FieldParams, h: float = 1e-4) -> float:
    """rot(v) = ∂_x v_y − ∂_y v_x（中心差分）"""
    _, vy_plus = velocity(PhasePoint(p.x + h, p.y), fp)
    _, vy_minus = velocity(PhasePoint(p.x - h, p.y), fp)
    vx_plus, _ = velocity(PhasePoint(p.x, p.y + h), fp)
    vx_minus, _ = velocity(PhasePoint(p.x, p.y - h), fp)
    return (vy_plus - vy_minus) / (2 * h) - (vx_plus - vx_minus) / (2 * h)


def _require_no_detuning(fp: FieldParams) -> None:
    if fp.delta != 0:
        raise UnsupportedPerturbationError("失谐场有旋（rot v = −2Δ），不存在赝势")


def _potential_arrays(x, y, fp: FieldParams):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    quartic = 0.25 * (x ** 4 + y ** 4) + 0.5 * x ** 2 * y ** 2
    quadratic = 0.5 * fp.alpha ** 2 * (x ** 2 - y ** 2)
    return fp.kappa2 * (quartic - quadratic) + 0.25 * fp.kappa_a * (x ** 2 + y ** 2)


def pseudo_potential(p: PhasePoint, fp: FieldParams) -> float:
    """
    赝势 V，满足 −∇V = 速度场，极小值位于 (±α_∞, 0)

    V = κ₂(¼(x⁴+y⁴) + ½x²y² − ½α²(x²−y²)) + ¼κ_a(x²+y²)
    """
    _require_no_detuning(fp)
    return float(_potential_arrays(p.x, p.y, fp))


def gradient_potential(p: PhasePoint, fp: FieldParams) -> Tuple[float, float]:
    """解析 ∇V"""
    _require_no_detuning(fp)
    x, y = p.x, p.y
    k2, a2 = fp.kappa2, fp.alpha ** 2
    gx = k2 * (x ** 3 + x * y * y - a2 * x) + 0.5 * fp.kappa_a * x
    gy = k2 * (y ** 3 + x * x * y + a2 * y) + 0.5 * fp.kappa_a * y
    return gx, gy


def lambda_direction(kappa_c: float, delta: float) -> float:
    """
    失谐下亚稳方向 β = β′(1 + iλ) 的斜率

    λ = −κ_c/(2Δ) + √((κ_c/2Δ)² − 1)，按 −1/(K + √(K²−1)) 计算以避免小 Δ 时的相消。
    """
    if delta < 0:
        raise ValueError(f"delta 必须 >= 0: {delta}")
    if delta == 0:
        return 0.0
    if delta > 0.5 * kappa_c:
        raise NoMetastableDirectionError(f"Δ={delta:g} 超过 κ_c/2={0.5 * kappa_c:g}，不存在亚稳方向")
    ratio = kappa_c / (2.0 * delta)
    return -1.0 / (ratio + math.sqrt(max(ratio * ratio - 1.0, 0.0)))


def detuned_cut_potential(beta_prime: float, fp: FieldParams) -> float:
    """沿亚稳方向的一维赝势 V(β′) = −½√((κ_c/2)²−Δ²)β′² + ¼κ₂β′⁴"""
    if fp.kappa_a != 0:
        raise UnsupportedPerturbationError("失谐方向赝势只适用于 κ_a = 0")
    half_kc = 0.5 * fp.kappa_c
    if abs(fp.delta) > half_kc:
        raise NoMetastableDirectionError(f"Δ={fp.delta:g} 超过 κ_c/2={half_kc:g}，不存在亚稳方向")
    depth = math.sqrt(half_kc ** 2 - fp.delta ** 2)
    return -0.5 * depth * beta_prime ** 2 + 0.25 * fp.kappa2 * beta_prime ** 4


def metastable_amplitude(fp: FieldParams) -> float:
    """
    亚稳态振幅 |α_∞|

    单光子损耗：√(α² − κ_a/(2κ₂))；失谐：(α⁴ − (Δ/κ₂)²)^{1/4}；低于阈值返回 0。
    两种扰动同时存在时没有闭式结果。
    """
    a2 = fp.alpha ** 2
    if fp.kappa_a != 0 and fp.delta != 0:
        raise UnsupportedPerturbationError("单光子损耗与失谐同时存在，没有闭式亚稳振幅")
    if fp.kappa_a != 0:
        shifted = a2 - fp.kappa_a / (2.0 * fp.kappa2)
        return math.sqrt(shifted) if shifted > 0 else 0.0
    if fp.delta != 0:
        ratio = abs(fp.delta) / fp.kappa2
        if ratio >= a2:
            return 0.0
        return (a2 * a2 - ratio * ratio) ** 0.25
    return abs(fp.alpha)


def fixed_points(fp: FieldParams) -> List[PhasePoint]:
    """原点加上两个亚稳点（失谐时绕原点旋转 θ = −½ atan2(Δ, κ₂|α_∞|²)）"""
    points = [PhasePoint(0.0, 0.0)]
    r = metastable_amplitude(fp)
    if r == 0:
        return points
    theta = -0.5 * math.atan2(fp.delta, fp.kappa2 * r * r) if fp.delta else 0.0
    x, y = r * math.cos(theta), r * math.sin(theta)
    points += [PhasePoint(x, y), PhasePoint(-x, -y)]
    return points


@dataclass(frozen=True, eq=False)
class FieldGrid:
    """相空间网格上的速度场与赝势，数组索引为 [ix, iy]"""
    x: np.ndarray
    y: np.ndarray
    vx: np.ndarray
    vy: np.ndarray
    speed: np.ndarray
    potential: Optional[np.ndarray] = None

    def to_frame(self) -> pd.DataFrame:
        xx, yy = np.meshgrid(self.x, self.y, indexing='ij')
        columns = {
            "x": xx.ravel(),
            "y": yy.ravel(),
            "vx": self.vx.ravel(),
            "vy": self.vy.ravel(),
            "speed": self.speed.ravel(),
        }
        if self.potential is not None:
            columns["V"] = self.potential.ravel()
        return pd.DataFrame(columns)

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format='%.17g')
        return path


def _normalize_extent(extent: Union[float, Sequence[float]]) -> Tuple[float, float, float, float]:
    if np.isscalar(extent):
        half = float(extent)
        return (-half, half, -half, half)
    values = tuple(float(v) for v in extent)
    if len(values) == 2:
        return (values[0], values[1], values[0], values[1])
    if len(values) == 4:
        return values  # type: ignore[return-value]
    raise ValueError(f"extent 需要 1、2 或 4 个数值: {extent}")


def grid_export(fp: FieldParams, extent: Union[float, Sequence[float]], resolution: int) -> FieldGrid:
    """
    在矩形网格上计算速度、速率与（Δ=0 时）赝势

    Args:
        fp: 场参数
        extent: L（即 [−L, L]²）、(min, max) 或 (xmin, xmax, ymin, ymax)
        resolution: 每个方向的采样点数

    Returns:
        FieldGrid，导出时按行优先、y 变化最快
    """
    if resolution < 2:
        raise ValueError(f"resolution 必须 >= 2: {resolution}")
    xmin, xmax, ymin, ymax = _normalize_extent(extent)
    x = np.linspace(xmin, xmax, resolution)
    y = np.linspace(ymin, ymax, resolution)
    xx, yy = np.meshgrid(x, y, indexing='ij')
    vx, vy = _velocity_arrays(xx, yy, fp)
    potential = _potential_arrays(xx, yy, fp) if fp.delta == 0 else None
    return FieldGrid(x=x, y=y, vx=vx, vy=vy, speed=np.hypot(vx, vy), potential=potential)
