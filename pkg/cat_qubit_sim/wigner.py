"""
相空间准概率分布模块

Wigner函数 W(β) = (2/π)Tr[D†(β)ρD(β)P]（相干态 |α⟩ 的峰位于 β=α）、
Husimi Q函数以及左右半平面的Q质量差。
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .exceptions import TruncationError
from .hilbert import (
    DensityMatrix,
    Operator,
    SpaceSig,
    displacement,
    embed_operator,
    expectation,
    partial_trace,
    truncation_rule,
)
from .logger import setup_logger

logger = setup_logger(__name__)

WIGNER_BOUND_SLACK = 5e-2

Extent = Union[float, Sequence[float]]


def _grid_axes(extent: Extent, resolution: int) -> Tuple[np.ndarray, np.ndarray]:
    if resolution < 2:
        raise ValueError(f"resolution 必须 >= 2: {resolution}")
    if np.isscalar(extent):
        half = float(extent)
        bounds = (-half, half, -half, half)
    else:
        values = tuple(float(v) for v in extent)
        if len(values) == 2:
            bounds = values + values
        elif len(values) == 4:
            bounds = values
        else:
            raise ValueError(f"extent 需要 1、2 或 4 个数值: {extent}")
    return np.linspace(bounds[0], bounds[1], resolution), np.linspace(bounds[2], bounds[3], resolution)


@dataclass(frozen=True, eq=False)
class WignerMap:
    """网格上的实值分布，values 索引为 [ix, iy]"""
    x: np.ndarray
    y: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (len(self.x), len(self.y)):
            raise ValueError(f"values 形状 {self.values.shape} 与网格 ({len(self.x)}, {len(self.y)}) 不一致")

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0])

    @property
    def dy(self) -> float:
        return float(self.y[1] - self.y[0])

    def normalization(self) -> float:
        """Riemann 求和 ΣW·Δx·Δy"""
        return float(np.sum(self.values) * self.dx * self.dy)

    def value_at_origin(self) -> float:
        ix = int(np.argmin(np.abs(self.x)))
        iy = int(np.argmin(np.abs(self.y)))
        return float(self.values[ix, iy])

    def to_frame(self) -> pd.DataFrame:
        xx, yy = np.meshgrid(self.x, self.y, indexing='ij')
        return pd.DataFrame({"x": xx.ravel(), "y": yy.ravel(), "W": self.values.ravel()})

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format='%.17g')
        return path


def _single_mode(rho: DensityMatrix, mode: int) -> np.ndarray:
    if rho.sig.n_modes > 1:
        rho = partial_trace(rho, mode)
    return np.array(rho.data)


def _padded(data: np.ndarray, dim: int) -> np.ndarray:
    n = data.shape[0]
    if dim <= n:
        return data
    out = np.zeros((dim, dim), dtype=np.complex128)
    out[:n, :n] = data
    return out


def _working_dim(n: int, reach: float, pad: bool) -> int:
    required = truncation_rule(reach)
    if n >= required:
        return n
    if not pad:
        raise TruncationError(
            f"截断维数 {n} 不足以覆盖网格范围 |β|<={reach:.3f}（需要 >= {required}），"
            "可设置 pad=True 以零填充"
        )
    return required


def wigner(rho: DensityMatrix, extent: Extent = 4.0, resolution: int = 81,
           mode: int = 0, pad: bool = True) -> WignerMap:
    """
    计算单模 Wigner 函数

    多模密度矩阵先对其它模求偏迹。D(x+iy) 与 D(iy)D(x) 只差一个全局相位，
    该相位在 D†ρD 中抵消，因此每个网格轴只需计算一次矩阵指数。

    Args:
        rho: 密度矩阵
        extent: L（即 [−L, L]²）、(min, max) 或 (xmin, xmax, ymin, ymax)
        resolution: 每个方向的采样点数
        mode: 保留的模
        pad: 截断维数不足时是否零填充

    Returns:
        WignerMap
    """
    xs, ys = _grid_axes(extent, resolution)
    data = _single_mode(rho, mode)
    reach = max(float(np.max(np.abs(xs))), float(np.max(np.abs(ys))))
    dim = _working_dim(data.shape[0], reach, pad)
    data = _padded(data, dim)
    sig = SpaceSig((dim,))
    parity = np.where(np.arange(dim) % 2 == 0, 1.0, -1.0)

    shifts_x = [displacement(sig, 0, complex(x, 0.0)).data for x in xs]
    shifts_y = [displacement(sig, 0, complex(0.0, y)).data for y in ys]
    values = np.empty((len(xs), len(ys)))
    for ix, dx_op in enumerate(shifts_x):
        for iy, dy_op in enumerate(shifts_y):
            d = dy_op @ dx_op
            diag = np.sum(d.conj() * (data @ d), axis=0)
            values[ix, iy] = (2.0 / math.pi) * float(np.real(diag @ parity))

    peak = float(np.max(np.abs(values)))
    if peak > 2.0 / math.pi + WIGNER_BOUND_SLACK:
        logger.warning(f"|W| 最大值 {peak:.4f} 超过 2/π，截断可能不足")
    return WignerMap(x=xs, y=ys, values=values)


def _coherent_rows(betas: np.ndarray, dim: int) -> np.ndarray:
    """每行为一个 β 的相干态 Fock 振幅（截断、不重新归一化）"""
    n = np.arange(1, dim)
    ratios = np.ones((betas.size, dim), dtype=np.complex128)
    ratios[:, 1:] = betas[:, None] / np.sqrt(n)[None, :]
    return np.exp(-0.5 * np.abs(betas) ** 2)[:, None] * np.cumprod(ratios, axis=1)


def husimi(rho: DensityMatrix, extent: Extent = 4.0, resolution: int = 81,
           mode: int = 0, pad: bool = True) -> WignerMap:
    """Husimi Q(β) = ⟨β|ρ|β⟩/π"""
    xs, ys = _grid_axes(extent, resolution)
    data = _single_mode(rho, mode)
    reach = max(float(np.max(np.abs(xs))), float(np.max(np.abs(ys))))
    dim = _working_dim(data.shape[0], reach, pad)
    data = _padded(data, dim)
    xx, yy = np.meshgrid(xs, ys, indexing='ij')
    rows = _coherent_rows((xx + 1j * yy).ravel(), dim)
    q = np.real(np.sum(rows.conj() * (rows @ data.T), axis=1)) / math.pi
    return WignerMap(x=xs, y=ys, values=q.reshape(xx.shape))


def half_plane_operator(sig: SpaceSig, mode: int = 0, extent: Extent = 6.0,
                        resolution: int = 121) -> Operator:
    """
    Π = (1/π)∫ sign(Re β)|β⟩⟨β| d²β 的网格求积（Re β = 0 的列不计入）

    Tr[ρΠ] 即 Husimi Q 在左右半平面的质量差；⟨β|ρ|β⟩ 只用到 |β⟩ 的前 N 个振幅，无需填充。
    """
    xs, ys = _grid_axes(extent, resolution)
    xx, yy = np.meshgrid(xs, ys, indexing='ij')
    rows = _coherent_rows((xx + 1j * yy).ravel(), sig.dims[mode])
    weights = np.sign(xx).ravel() * (xs[1] - xs[0]) * (ys[1] - ys[0]) / math.pi
    single = (rows.T * weights) @ rows.conj()
    return embed_operator(sig, mode, 0.5 * (single + single.conj().T), hermitian=True)


def half_plane_contrast(rho: DensityMatrix, extent: Extent = 6.0, resolution: int = 121,
                        mode: int = 0) -> float:
    """Q 函数在 Re β > 0 与 Re β < 0 半平面的质量差"""
    return float(expectation(rho, half_plane_operator(rho.sig, mode, extent, resolution)))
