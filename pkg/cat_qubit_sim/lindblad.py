"""
Lindblad主方程时间演化模块

密度矩阵形式的确定性积分：Cash–Karp 5(4) 嵌入式Runge–Kutta、PI步长控制、
采样点强制落步，并在积分过程中守护迹、厄米性与正定性。
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .config import config
from .exceptions import NumericalError, SignatureMismatchError, TraceDriftError
from .hilbert import DensityMatrix, Operator, SpaceSig
from .logger import setup_logger

logger = setup_logger(__name__)

# Cash–Karp 5(4) 系数表；传播五阶解，误差估计为五阶与四阶权重之差
_CK_A: Tuple[Tuple[float, ...], ...] = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (3 / 10, -9 / 10, 6 / 5),
    (-11 / 54, 5 / 2, -70 / 27, 35 / 27),
    (1631 / 55296, 175 / 512, 575 / 13824, 44275 / 110592, 253 / 4096),
)
_CK_B = (37 / 378, 0.0, 250 / 621, 125 / 594, 0.0, 512 / 1771)
_CK_E = (-277 / 64512, 0.0, 6925 / 370944, -6925 / 202752, -277 / 14336, 277 / 7084)

POSITIVITY_FAIL_TOL = 1e-6


@dataclass(frozen=True)
class Tolerances:
    """积分容差"""
    rel_step_tol: float = field(default_factory=lambda: config.rel_step_tol)
    trace_tol: float = field(default_factory=lambda: config.trace_tol)
    herm_resym_period: int = field(default_factory=lambda: config.herm_resym_period)
    max_steps: int = 5_000_000
    check_positivity: bool = True

    def __post_init__(self):
        if not self.rel_step_tol > 0:
            raise ValueError(f"rel_step_tol 必须为正: {self.rel_step_tol}")
        if not self.trace_tol > 0:
            raise ValueError(f"trace_tol 必须为正: {self.trace_tol}")
        if self.herm_resym_period < 1:
            raise ValueError(f"herm_resym_period 必须 >= 1: {self.herm_resym_period}")


@dataclass(frozen=True, eq=False)
class EvolutionSpec:
    """
    演化描述

    Args:
        hamiltonian: 哈密顿量（rad/µs）
        loss_ops: 已乘 √rate 的损耗算符
        t_grid: 严格递增的采样时间（µs），可为空（仅用于 relax_to_steady）
        observables: 名称 -> 算符
        tolerances: 积分容差
    """
    hamiltonian: Operator
    loss_ops: Tuple[Operator, ...] = ()
    t_grid: np.ndarray = field(default_factory=lambda: np.zeros(0))
    observables: Mapping[str, Operator] = field(default_factory=dict)
    tolerances: Tolerances = field(default_factory=Tolerances)

    def __post_init__(self):
        sig = self.hamiltonian.sig
        loss_ops = tuple(self.loss_ops)
        for op in loss_ops:
            if op.sig != sig:
                raise SignatureMismatchError(f"损耗算符空间签名 {op.sig.dims} 与哈密顿量 {sig.dims} 不一致")
        observables = dict(self.observables)
        for name, op in observables.items():
            if op.sig != sig:
                raise SignatureMismatchError(f"观测量 {name} 的空间签名 {op.sig.dims} 不一致")
        grid = np.array(self.t_grid, dtype=np.float64, copy=True).ravel()
        if grid.size:
            if grid[0] < 0:
                raise ValueError(f"t_grid 起点必须 >= 0: {grid[0]}")
            if np.any(np.diff(grid) <= 0):
                raise ValueError("t_grid 必须严格递增")
        grid.flags.writeable = False
        object.__setattr__(self, 'loss_ops', loss_ops)
        object.__setattr__(self, 'observables', observables)
        object.__setattr__(self, 't_grid', grid)

    @property
    def sig(self) -> SpaceSig:
        return self.hamiltonian.sig


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """采样观测量时间序列"""
    times: np.ndarray
    values: Dict[str, np.ndarray]
    final_state: DensityMatrix
    stats: Dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        for name, column in self.values.items():
            if len(column) != len(self.times):
                raise ValueError(f"观测量 {name} 的长度 {len(column)} 与时间点数 {len(self.times)} 不一致")

    def real(self, name: str) -> np.ndarray:
        return np.real(self.values[name])

    def to_frame(self) -> pd.DataFrame:
        columns: Dict[str, np.ndarray] = {"t": np.asarray(self.times, dtype=np.float64)}
        for name, column in self.values.items():
            columns[f"{name}_re"] = np.real(column)
            columns[f"{name}_im"] = np.imag(column)
        return pd.DataFrame(columns)

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format='%.17g')
        return path


@dataclass(frozen=True, eq=False)
class SteadyState:
    """稳态弛豫结果"""
    state: DensityMatrix
    converged: bool
    t_reached: float
    residual: float


class _Liouvillian:
    """dρ/dt = Aρ + ρA† + Σ LρL†，其中 A = −iH − ½ΣL†L"""

    def __init__(self, hamiltonian: Operator, loss_ops: Sequence[Operator]):
        self.sig = hamiltonian.sig
        for op in loss_ops:
            if op.sig != self.sig:
                raise SignatureMismatchError(f"损耗算符空间签名 {op.sig.dims} 与哈密顿量 {self.sig.dims} 不一致")
        # 全零损耗算符（速率为0）不参与计算
        self.jumps = [op.data for op in loss_ops if np.any(op.data)]
        self.jumps_dag = [jump.conj().T for jump in self.jumps]
        decay = np.zeros((self.sig.total, self.sig.total), dtype=np.complex128)
        for jump, jump_dag in zip(self.jumps, self.jumps_dag):
            decay += jump_dag @ jump
        self.effective = -1j * hamiltonian.data - 0.5 * decay
        self.effective_dag = self.effective.conj().T

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        out = self.effective @ rho
        out += rho @ self.effective_dag
        for jump, jump_dag in zip(self.jumps, self.jumps_dag):
            out += jump @ rho @ jump_dag
        return out

    def rate_scale(self) -> float:
        """生成元的谱范数上界，用于选取初始步长"""
        bound = float(np.linalg.norm(self.effective, 2))
        for jump in self.jumps:
            bound = max(bound, float(np.linalg.norm(jump, 2)) ** 2)
        return bound


def liouvillian_apply(hamiltonian: Operator, loss_ops: Sequence[Operator],
                      rho: DensityMatrix) -> np.ndarray:
    """计算 dρ/dt = −i[H,ρ] + Σ D[L_k]ρ"""
    if rho.sig != hamiltonian.sig:
        raise SignatureMismatchError(f"密度矩阵空间签名 {rho.sig.dims} 与哈密顿量 {hamiltonian.sig.dims} 不一致")
    return _Liouvillian(hamiltonian, loss_ops)(rho.data)


class _PIController:
    safety = 0.9
    alpha = 0.7 / 5
    beta = 0.4 / 5
    min_factor = 0.2
    max_factor = 5.0

    def __init__(self):
        self.prev_err = 1e-4

    def factor(self, err: float, accepted: bool) -> float:
        if err == 0.0:
            return self.max_factor
        if accepted:
            value = self.safety * err ** (-self.alpha) * self.prev_err ** self.beta
            self.prev_err = max(err, 1e-4)
        else:
            value = self.safety * err ** (-0.2)
        return min(self.max_factor, max(self.min_factor, value))


class _Propagator:
    """自适应积分器状态"""

    def __init__(self, rhs: _Liouvillian, rho0: np.ndarray, tolerances: Tolerances):
        self.rhs = rhs
        self.tol = tolerances
        self.rho = np.array(rho0, dtype=np.complex128, copy=True)
        self.t = 0.0
        scale = rhs.rate_scale()
        self.h = 1e-3 / scale if scale > 0 else 1.0
        self.controller = _PIController()
        self.accepted = 0
        self.rejected = 0

    def _try_step(self, h: float) -> Tuple[np.ndarray, float]:
        stages: List[np.ndarray] = []
        for row in _CK_A:
            if row:
                y = self.rho.copy()
                for coeff, k in zip(row, stages):
                    if coeff:
                        y += (h * coeff) * k
            else:
                y = self.rho
            stages.append(self.rhs(y))
        new = self.rho.copy()
        err = np.zeros_like(self.rho)
        for b, e, k in zip(_CK_B, _CK_E, stages):
            if b:
                new += (h * b) * k
            if e:
                err += (h * e) * k
        scale = self.tol.rel_step_tol * max(np.max(np.abs(self.rho)), np.max(np.abs(new)), 1e-3)
        return new, float(np.max(np.abs(err))) / scale

    def step_once(self, t_limit: float) -> None:
        """执行一个被接受的步，不越过 t_limit"""
        while True:
            remaining = t_limit - self.t
            landing = self.h >= remaining
            h = remaining if landing else self.h
            new, err = self._try_step(h)
            accepted = err <= 1.0
            factor = self.controller.factor(err, accepted)
            if accepted:
                self.rho = new
                self.t = t_limit if landing else self.t + h
                self.accepted += 1
                if self.accepted % self.tol.herm_resym_period == 0:
                    self.rho = 0.5 * (self.rho + self.rho.conj().T)
                    self.renormalize()
                self.h = max(self.h, h * factor) if landing else h * factor
                return
            self.rejected += 1
            self.h = h * factor
            if self.h < 1e-14 * max(1.0, abs(self.t)):
                raise NumericalError(f"步长下溢 (t={self.t:.6g} µs, h={self.h:.3e})")
            if self.accepted + self.rejected > self.tol.max_steps:
                raise NumericalError(f"积分步数超过上限 {self.tol.max_steps}")

    def advance_to(self, t_target: float) -> None:
        while self.t < t_target:
            self.step_once(t_target)
            if self.accepted + self.rejected > self.tol.max_steps:
                raise NumericalError(f"积分步数超过上限 {self.tol.max_steps}")

    def renormalize(self) -> None:
        trace = float(np.real(np.trace(self.rho)))
        drift = abs(trace - 1.0)
        if drift > self.tol.trace_tol:
            raise TraceDriftError(
                f"t={self.t:.6g} µs 时迹漂移 {drift:.3e} 超过容差 {self.tol.trace_tol:g}"
                "（截断维数过小或步长容差过松）"
            )
        if drift > 0.1 * self.tol.trace_tol:
            logger.warning(f"t={self.t:.6g} µs 迹漂移 {drift:.3e} 接近容差，已重新归一化")
        self.rho /= trace

    def snapshot(self, sig: SpaceSig) -> DensityMatrix:
        self.renormalize()
        positivity_tol = POSITIVITY_FAIL_TOL if self.tol.check_positivity else None
        return DensityMatrix.from_array(sig, self.rho, positivity_tol)


def evolve(spec: EvolutionSpec, rho0: DensityMatrix) -> TimeSeries:
    """
    从 t=0 的 ρ0 出发积分主方程，在 t_grid 的每个点上采样观测量

    Args:
        spec: 演化描述
        rho0: 初始密度矩阵

    Returns:
        TimeSeries
    """
    if rho0.sig != spec.sig:
        raise SignatureMismatchError(f"初态空间签名 {rho0.sig.dims} 与模型 {spec.sig.dims} 不一致")
    if spec.t_grid.size == 0:
        raise ValueError("evolve 需要非空的 t_grid")

    rhs = _Liouvillian(spec.hamiltonian, spec.loss_ops)
    propagator = _Propagator(rhs, rho0.data, spec.tolerances)
    names = list(spec.observables)
    values = {name: np.empty(spec.t_grid.size, dtype=np.complex128) for name in names}
    state = rho0

    for index, t_sample in enumerate(spec.t_grid):
        propagator.advance_to(float(t_sample))
        state = propagator.snapshot(spec.sig)
        for name in names:
            values[name][index] = np.einsum('ij,ji->', state.data, spec.observables[name].data)

    stats = {"accepted": propagator.accepted, "rejected": propagator.rejected}
    logger.debug(f"演化完成: 维数 {spec.sig.total}, 接受步 {stats['accepted']}, 拒绝步 {stats['rejected']}")
    return TimeSeries(times=spec.t_grid.copy(), values=values, final_state=state, stats=stats)


def relax_to_steady(spec: EvolutionSpec, rho0: DensityMatrix, horizon: float,
                    stall_tol: float, check_period: int = 20) -> SteadyState:
    """
    积分直到 ‖dρ/dt‖_∞ < stall_tol 或到达 horizon

    未收敛不抛异常，由返回值的 converged 标记说明。
    """
    if not horizon > 0:
        raise ValueError(f"horizon 必须为正: {horizon}")
    if rho0.sig != spec.sig:
        raise SignatureMismatchError(f"初态空间签名 {rho0.sig.dims} 与模型 {spec.sig.dims} 不一致")

    rhs = _Liouvillian(spec.hamiltonian, spec.loss_ops)
    residual = float(np.max(np.abs(rhs(rho0.data))))
    if residual < stall_tol:
        return SteadyState(state=rho0, converged=True, t_reached=0.0, residual=residual)

    propagator = _Propagator(rhs, rho0.data, spec.tolerances)
    while propagator.t < horizon:
        propagator.step_once(horizon)
        if propagator.accepted % check_period == 0 or propagator.t >= horizon:
            residual = float(np.max(np.abs(rhs(propagator.rho))))
            if residual < stall_tol:
                break

    converged = residual < stall_tol
    if not converged:
        logger.warning(f"在 horizon={horizon:g} µs 内未达到稳态，残差 {residual:.3e} >= {stall_tol:g}")
    state = propagator.snapshot(spec.sig)
    return SteadyState(state=state, converged=converged, t_reached=propagator.t, residual=residual)


def sample_grid(t_final: float, n_samples: int, t_start: float = 0.0) -> np.ndarray:
    """等间距采样网格 [t_start, t_final]"""
    if n_samples < 2:
        raise ValueError(f"采样点数必须 >= 2: {n_samples}")
    return np.linspace(t_start, t_final, n_samples)


def run_many(jobs: Iterable[Tuple[EvolutionSpec, DensityMatrix]]) -> List[TimeSeries]:
    """依次演化多个独立任务（并行扇出由 analysis 层负责）"""
    return [evolve(spec, rho0) for spec, rho0 in jobs]
