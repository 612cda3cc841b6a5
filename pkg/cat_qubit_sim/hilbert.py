"""
截断Fock空间算符代数模块

为若干玻色模（猫比特谐振腔、缓冲模）加一个二能级transmon提供稠密矩阵表示的
算符、态矢与密度矩阵，以及猫态基矢的构造。基矢排序约定：模0为最慢变化的指标。
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import expm

from .exceptions import PositivityError, SignatureMismatchError, TruncationError
from .logger import setup_logger

logger = setup_logger(__name__)

HERMITIAN_TOL = 1e-12
KET_NORM_TOL = 1e-12
TRACE_TOL = 1e-9
DENSITY_HERMITIAN_TOL = 1e-10
POSITIVITY_TOL = 1e-8

# 位移算符在 N+10 维空间中求指数后再截取到 N 维
DISPLACEMENT_PADDING = 10


class OperatorKind(Enum):
    """单模算符类型"""
    ANNIHILATION = "annihilation"
    CREATION = "creation"
    NUMBER = "number"
    PARITY = "parity"
    IDENTITY = "identity"


class CatKind(Enum):
    """猫态基矢类型"""
    COHERENT = "coherent"
    PLUS = "plus"
    MINUS = "minus"
    ZERO = "zero"
    ONE = "one"


def _readonly(array: Any, ndim: int) -> np.ndarray:
    data = np.array(array, dtype=np.complex128, copy=True)
    if data.ndim != ndim:
        raise ValueError(f"期望 {ndim} 维数组，实际为 {data.ndim} 维")
    data.flags.writeable = False
    return data


def _interleave(data: np.ndarray) -> list:
    return np.stack([data.real, data.imag], axis=-1).ravel().tolist()


def _deinterleave(values: Sequence[float], shape: Sequence[int]) -> np.ndarray:
    flat = np.asarray(values, dtype=np.float64)
    if flat.size != 2 * int(np.prod(shape)):
        raise ValueError(f"数据长度 {flat.size} 与形状 {tuple(shape)} 不匹配")
    pairs = flat.reshape(-1, 2)
    return (pairs[:, 0] + 1j * pairs[:, 1]).reshape(shape)


@dataclass(frozen=True)
class SpaceSig:
    """希尔伯特空间签名：各模的截断维数"""

    dims: Tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if not dims:
            raise ValueError("空间签名至少包含一个模")
        if any(d < 1 for d in dims):
            raise ValueError(f"截断维数必须 >= 1: {dims}")
        object.__setattr__(self, 'dims', dims)

    @property
    def total(self) -> int:
        return int(np.prod(self.dims))

    @property
    def n_modes(self) -> int:
        return len(self.dims)

    def to_json_dict(self) -> Dict[str, Any]:
        return {"kind": "space_sig", "dims": list(self.dims)}


def _check_sig(left: SpaceSig, right: SpaceSig) -> None:
    if left != right:
        raise SignatureMismatchError(f"空间签名不一致: {left.dims} vs {right.dims}")


@dataclass(frozen=True, eq=False)
class Operator:
    """稠密复矩阵算符"""

    sig: SpaceSig
    data: np.ndarray
    hermitian: bool = False

    def __post_init__(self):
        data = _readonly(self.data, 2)
        n = self.sig.total
        if data.shape != (n, n):
            raise SignatureMismatchError(
                f"矩阵形状 {data.shape} 与空间签名 {self.sig.dims} (总维数 {n}) 不匹配"
            )
        if self.hermitian:
            deviation = float(np.max(np.abs(data - data.conj().T)))
            scale = max(1.0, float(np.max(np.abs(data))))
            if deviation >= HERMITIAN_TOL * scale:
                raise ValueError(f"算符标记为厄米但 ‖O−O†‖_∞ = {deviation:.3e}")
        object.__setattr__(self, 'data', data)

    def dag(self) -> 'Operator':
        return Operator(self.sig, self.data.conj().T, hermitian=self.hermitian)

    def __matmul__(self, other: 'Operator') -> 'Operator':
        _check_sig(self.sig, other.sig)
        return Operator(self.sig, self.data @ other.data)

    def __add__(self, other: 'Operator') -> 'Operator':
        _check_sig(self.sig, other.sig)
        return Operator(self.sig, self.data + other.data,
                        hermitian=self.hermitian and other.hermitian)

    def __sub__(self, other: 'Operator') -> 'Operator':
        _check_sig(self.sig, other.sig)
        return Operator(self.sig, self.data - other.data,
                        hermitian=self.hermitian and other.hermitian)

    def __mul__(self, scalar: complex) -> 'Operator':
        keep = self.hermitian and complex(scalar).imag == 0.0
        return Operator(self.sig, self.data * scalar, hermitian=keep)

    __rmul__ = __mul__

    def __neg__(self) -> 'Operator':
        return self * -1.0

    def hermitized(self) -> 'Operator':
        """返回 (O+O†)/2 并标记为厄米"""
        return Operator(self.sig, 0.5 * (self.data + self.data.conj().T), hermitian=True)

    def to_json_dict(self) -> Dict[str, Any]:
        return {
            "kind": "operator",
            "dims": list(self.sig.dims),
            "shape": list(self.data.shape),
            "hermitian": self.hermitian,
            "data": _interleave(self.data),
        }


@dataclass(frozen=True, eq=False)
class Ket:
    """归一化态矢"""

    sig: SpaceSig
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = _readonly(self.amplitudes, 1)
        if amps.shape != (self.sig.total,):
            raise SignatureMismatchError(
                f"态矢长度 {amps.shape[0]} 与空间签名 {self.sig.dims} 不匹配"
            )
        norm = float(np.linalg.norm(amps))
        if abs(norm - 1.0) > KET_NORM_TOL:
            raise ValueError(f"态矢未归一化: ‖ψ‖ = {norm!r}，请使用 Ket.normalized")
        object.__setattr__(self, 'amplitudes', amps)

    @classmethod
    def normalized(cls, sig: SpaceSig, amplitudes: Any) -> 'Ket':
        amps = np.asarray(amplitudes, dtype=np.complex128)
        norm = float(np.linalg.norm(amps))
        if norm == 0.0:
            raise ValueError("零向量无法归一化")
        return cls(sig, amps / norm)

    def to_density(self) -> 'DensityMatrix':
        return DensityMatrix(self.sig, np.outer(self.amplitudes, self.amplitudes.conj()))

    def to_json_dict(self) -> Dict[str, Any]:
        return {
            "kind": "ket",
            "dims": list(self.sig.dims),
            "shape": [self.sig.total],
            "data": _interleave(self.amplitudes),
        }


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """密度矩阵：迹为1、厄米、最小本征值不低于 −positivity_tol（为 None 时不检查）"""

    sig: SpaceSig
    data: np.ndarray
    positivity_tol: Optional[float] = field(default=POSITIVITY_TOL, repr=False)

    def __post_init__(self):
        data = _readonly(self.data, 2)
        n = self.sig.total
        if data.shape != (n, n):
            raise SignatureMismatchError(
                f"密度矩阵形状 {data.shape} 与空间签名 {self.sig.dims} 不匹配"
            )
        trace = complex(np.trace(data))
        if abs(trace - 1.0) > TRACE_TOL:
            raise ValueError(f"密度矩阵迹偏离1: Tr ρ = {trace!r}")
        deviation = float(np.max(np.abs(data - data.conj().T)))
        if deviation > DENSITY_HERMITIAN_TOL:
            raise ValueError(f"密度矩阵非厄米: ‖ρ−ρ†‖_∞ = {deviation:.3e}")
        object.__setattr__(self, 'data', data)
        if self.positivity_tol is not None:
            self.check_positivity(self.positivity_tol)

    @classmethod
    def from_array(cls, sig: SpaceSig, data: Any,
                   positivity_tol: Optional[float] = POSITIVITY_TOL) -> 'DensityMatrix':
        """厄米化并按迹归一化后构造"""
        arr = np.asarray(data, dtype=np.complex128)
        arr = 0.5 * (arr + arr.conj().T)
        return cls(sig, arr / np.trace(arr).real, positivity_tol)

    @classmethod
    def maximally_mixed(cls, sig: SpaceSig) -> 'DensityMatrix':
        return cls(sig, np.eye(sig.total, dtype=np.complex128) / sig.total)

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.data)[0])

    def check_positivity(self, tol: float = POSITIVITY_TOL) -> None:
        lowest = self.min_eigenvalue()
        if lowest < -tol:
            raise PositivityError(f"密度矩阵最小本征值 {lowest:.3e} 低于 -{tol:g}")

    def purity(self) -> float:
        return float(np.real(np.einsum('ij,ji->', self.data, self.data)))

    def to_json_dict(self) -> Dict[str, Any]:
        return {
            "kind": "density_matrix",
            "dims": list(self.sig.dims),
            "shape": list(self.data.shape),
            "data": _interleave(self.data),
        }


QuantumObject = Union[SpaceSig, Operator, Ket, DensityMatrix]


def truncation_rule(beta_abs: float) -> int:
    """单模截断下限 ⌈|β|² + 6|β| + 10⌉"""
    b = abs(beta_abs)
    return int(math.ceil(b * b + 6.0 * b + 10.0 - 1e-12))


def _single_mode_matrix(dim: int, kind: OperatorKind) -> np.ndarray:
    levels = np.arange(dim)
    if kind is OperatorKind.ANNIHILATION:
        return np.diag(np.sqrt(levels[1:]), k=1).astype(np.complex128)
    if kind is OperatorKind.CREATION:
        return np.diag(np.sqrt(levels[1:]), k=-1).astype(np.complex128)
    if kind is OperatorKind.NUMBER:
        return np.diag(levels).astype(np.complex128)
    if kind is OperatorKind.PARITY:
        return np.diag(np.where(levels % 2 == 0, 1.0, -1.0)).astype(np.complex128)
    return np.eye(dim, dtype=np.complex128)


def _embed(sig: SpaceSig, mode: int, single: np.ndarray) -> np.ndarray:
    full = np.ones((1, 1), dtype=np.complex128)
    for index, dim in enumerate(sig.dims):
        factor = single if index == mode else np.eye(dim, dtype=np.complex128)
        full = np.kron(full, factor)
    return full


def _check_mode(sig: SpaceSig, mode: int) -> None:
    if not 0 <= mode < sig.n_modes:
        raise ValueError(f"模索引 {mode} 超出范围 [0, {sig.n_modes})")


def mode_operator(sig: SpaceSig, mode: int, kind: Union[OperatorKind, str]) -> Operator:
    """
    构造嵌入到整个空间的单模算符

    Args:
        sig: 空间签名
        mode: 模索引
        kind: annihilation/creation/number/parity/identity

    Returns:
        与其它模的单位算符做张量积后的算符
    """
    _check_mode(sig, mode)
    try:
        kind = OperatorKind(kind) if not isinstance(kind, OperatorKind) else kind
    except ValueError:
        raise ValueError(f"不支持的算符类型: {kind}")
    dim = sig.dims[mode]
    if kind is not OperatorKind.IDENTITY and dim < 2:
        raise ValueError(f"模 {mode} 的截断维数 {dim} 小于2，无法构造 {kind.value}")
    hermitian = kind in (OperatorKind.NUMBER, OperatorKind.PARITY, OperatorKind.IDENTITY)
    return Operator(sig, _embed(sig, mode, _single_mode_matrix(dim, kind)), hermitian=hermitian)


def embed_operator(sig: SpaceSig, mode: int, single: Any, hermitian: bool = False) -> Operator:
    """把单模矩阵嵌入整个空间"""
    _check_mode(sig, mode)
    single = np.asarray(single, dtype=np.complex128)
    dim = sig.dims[mode]
    if single.shape != (dim, dim):
        raise SignatureMismatchError(f"单模矩阵形状 {single.shape} 与模 {mode} 的截断维数 {dim} 不匹配")
    return Operator(sig, _embed(sig, mode, single), hermitian=hermitian)


def displacement(sig: SpaceSig, mode: int, beta: complex) -> Operator:
    """位移算符 D(β) = exp(βa† − β*a)，在 N+10 维计算后截取到 N 维"""
    _check_mode(sig, mode)
    dim = sig.dims[mode]
    required = truncation_rule(abs(beta))
    if dim < required:
        raise TruncationError(
            f"模 {mode} 截断维数 {dim} 不足以表示 |β|={abs(beta):.3f} 的位移（需要 >= {required}）"
        )
    if beta == 0:
        return Operator(sig, np.eye(sig.total, dtype=np.complex128), hermitian=True)

    padded = dim + DISPLACEMENT_PADDING
    a = _single_mode_matrix(padded, OperatorKind.ANNIHILATION)
    generator = beta * a.conj().T - np.conj(beta) * a
    single = expm(generator)[:dim, :dim]
    return Operator(sig, _embed(sig, mode, single))


def coherent_amplitudes(dim: int, alpha: complex) -> np.ndarray:
    """相干态在前 dim 个Fock能级上的解析振幅 e^{−|α|²/2} α^n/√n!（未重新归一化）"""
    amps = np.empty(dim, dtype=np.complex128)
    amps[0] = math.exp(-0.5 * abs(alpha) ** 2)
    for n in range(1, dim):
        amps[n] = amps[n - 1] * alpha / math.sqrt(n)
    return amps


def cat_basis_state(N: int, alpha: complex, kind: Union[CatKind, str]) -> Ket:
    """
    构造单模猫态基矢

    |±⟩_α = N±(|α⟩ ± |−α⟩)，|0/1⟩_α = (|+⟩_α ± |−⟩_α)/√2。

    Args:
        N: 截断维数
        alpha: 相干振幅
        kind: coherent/plus/minus/zero/one

    Returns:
        归一化态矢
    """
    kind = CatKind(kind) if not isinstance(kind, CatKind) else kind
    required = truncation_rule(abs(alpha))
    if N < required:
        raise TruncationError(f"截断维数 {N} 不满足 |α|={abs(alpha):.3f} 的截断规则 (>= {required})")
    sig = SpaceSig((N,))
    coherent = coherent_amplitudes(N, alpha)
    if kind is CatKind.COHERENT:
        return Ket.normalized(sig, coherent)

    signs = np.where(np.arange(N) % 2 == 0, 1.0, -1.0)
    mirrored = coherent * signs
    plus = coherent + mirrored
    if kind is CatKind.PLUS:
        return Ket.normalized(sig, plus)

    if alpha == 0:
        raise ValueError(f"α=0 时奇猫态无定义，无法构造 {kind.value}")
    minus = coherent - mirrored
    if kind is CatKind.MINUS:
        return Ket.normalized(sig, minus)

    plus_n = plus / np.linalg.norm(plus)
    minus_n = minus / np.linalg.norm(minus)
    sign = 1.0 if kind is CatKind.ZERO else -1.0
    return Ket.normalized(sig, (plus_n + sign * minus_n) / math.sqrt(2.0))


def fock_state(sig: SpaceSig, levels: Sequence[int]) -> Ket:
    """乘积Fock基矢 |n0⟩⊗|n1⟩⊗..."""
    if len(levels) != sig.n_modes:
        raise ValueError(f"能级数 {len(levels)} 与模数 {sig.n_modes} 不一致")
    amps = np.zeros(sig.total, dtype=np.complex128)
    amps[np.ravel_multi_index(tuple(levels), sig.dims)] = 1.0
    return Ket(sig, amps)


def tensor(*kets: Ket) -> Ket:
    """态矢张量积（模顺序同参数顺序）"""
    if not kets:
        raise ValueError("至少需要一个态矢")
    amps = np.ones(1, dtype=np.complex128)
    dims: Tuple[int, ...] = ()
    for ket in kets:
        amps = np.kron(amps, ket.amplitudes)
        dims += ket.sig.dims
    return Ket.normalized(SpaceSig(dims), amps)


def expectation(rho: DensityMatrix, obs: Operator) -> Union[complex, float]:
    """
    期望值 Tr[ρO]

    对标记为厄米的算符返回实部，虚部残差写入debug日志。
    """
    _check_sig(rho.sig, obs.sig)
    value = complex(np.einsum('ij,ji->', rho.data, obs.data))
    if obs.hermitian:
        if abs(value.imag) > 1e-10:
            logger.debug(f"厄米算符期望值虚部残差: {value.imag:.3e}")
        return value.real
    return value


def partial_trace(rho: DensityMatrix, keep: int) -> DensityMatrix:
    """对除 keep 以外的所有模求偏迹"""
    _check_mode(rho.sig, keep)
    dims = rho.sig.dims
    if len(dims) == 1:
        return rho
    n = len(dims)
    kept = dims[keep]
    rest = rho.sig.total // kept
    tensor_form = rho.data.reshape(dims + dims)
    tensor_form = np.moveaxis(tensor_form, [keep, n + keep], [0, 1])
    reduced = np.einsum('abjj->ab', tensor_form.reshape(kept, kept, rest, rest))
    return DensityMatrix.from_array(SpaceSig((kept,)), reduced, rho.positivity_tol)


def fidelity(rho: DensityMatrix, ket: Ket) -> float:
    """⟨ψ|ρ|ψ⟩"""
    _check_sig(rho.sig, ket.sig)
    psi = ket.amplitudes
    return float(np.real(psi.conj() @ rho.data @ psi))


def to_json(obj: QuantumObject) -> str:
    """序列化为JSON（实部/虚部交错、行优先）"""
    return json.dumps(obj.to_json_dict())


def from_json(text: Union[str, Dict[str, Any]]) -> QuantumObject:
    """从JSON还原 SpaceSig/Operator/Ket/DensityMatrix"""
    payload = json.loads(text) if isinstance(text, str) else text
    kind = payload.get("kind")
    sig = SpaceSig(tuple(payload["dims"]))
    if kind == "space_sig":
        return sig
    if kind == "operator":
        data = _deinterleave(payload["data"], payload["shape"])
        return Operator(sig, data, hermitian=bool(payload.get("hermitian", False)))
    if kind == "ket":
        return Ket(sig, _deinterleave(payload["data"], payload["shape"]))
    if kind == "density_matrix":
        return DensityMatrix(sig, _deinterleave(payload["data"], payload["shape"]))
    raise ValueError(f"未知的序列化类型: {kind}")
