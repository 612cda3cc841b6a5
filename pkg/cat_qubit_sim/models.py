"""
模型构建模块

一模（绝热消除缓冲模）、二模（猫模+缓冲模）、三模（再加transmon）三级Lindblad模型的
构造器，ATS电路的闭式计算，以及实测参数注册表。

单位约定：所有公开参数以 ν 约定（ω/2π，MHz）给出，寿命以 µs 给出；
构造器在内部一次性换算为角频率（rad/µs）。
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np

from .exceptions import ConfigurationError, TruncationError
from .hilbert import (
    CatKind,
    DensityMatrix,
    Ket,
    Operator,
    SpaceSig,
    cat_basis_state,
    fock_state,
    mode_operator,
    tensor,
    truncation_rule,
)
from .logger import setup_logger

logger = setup_logger(__name__)

TWO_PI = 2.0 * math.pi

# 缓冲模至少需要真空加两个光子
MIN_BUFFER_DIM = 3
TRANSMON_DIM = 2


def to_angular(nu: float) -> float:
    """ν（MHz）-> ω（rad/µs）"""
    return TWO_PI * nu


def to_frequency(omega: float) -> float:
    """ω（rad/µs）-> ν（MHz）"""
    return omega / TWO_PI


class Rung(Enum):
    """模型层级"""
    ONE_MODE = "one_mode"
    TWO_MODE = "two_mode"
    THREE_MODE = "three_mode"

    @property
    def n_modes(self) -> int:
        return {"one_mode": 1, "two_mode": 2, "three_mode": 3}[self.value]


def _coerce_float(name: str, value: Any) -> float:
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigurationError(f"参数 {name} 的取值无法解析为数值: {value!r}")


class _ParamsMixin:
    """SystemParams/CircuitParams 共用的字段查询与覆盖逻辑"""

    @classmethod
    def field_names(cls) -> List[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def resolve_key(cls, key: str) -> Optional[str]:
        """不区分大小写地匹配字段名"""
        lookup = {name.lower(): name for name in cls.field_names()}
        return lookup.get(key.strip().lower())

    def with_overrides(self, **overrides: Any):
        updates: Dict[str, float] = {}
        for key, value in overrides.items():
            name = self.resolve_key(key)
            if name is None:
                raise ConfigurationError(f"未知参数: {key}")
            updates[name] = _coerce_float(name, value)
        return replace(self, **updates)

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


@dataclass(frozen=True)
class SystemParams(_ParamsMixin):
    """ATS工作点实测系统参数（频率与速率：MHz，ν约定；寿命：µs）"""
    f_a: float = 8038.05
    f_a0: float = 8038.9
    f_b: float = 4833.6
    f_b0: float = 4886.0
    f_p: float = 11242.5
    f_q: float = 4415.6
    f_r: float = 6459.8
    f_d: float = 4833.6
    T1_a: float = 3.0
    T1_q: float = 5.0
    T2_q: float = 8.0
    kappa_a: float = 0.053
    kappa_b: float = 13.0
    kappa_r: float = 1.47
    chi_aa: float = -0.007
    chi_bb: float = -32.0
    chi_ba: float = 0.79
    chi_qa: float = 0.72
    chi_qq: float = 180.0
    g2: float = 0.36
    n_th: float = 0.01

    # rescaled() 中乘以 s 的字段；寿命字段除以 s
    RATE_FIELDS = ('kappa_a', 'kappa_b', 'kappa_r', 'chi_aa', 'chi_bb', 'chi_ba',
                   'chi_qa', 'chi_qq', 'g2')
    LIFETIME_FIELDS = ('T1_a', 'T1_q', 'T2_q')

    def __post_init__(self):
        for name in self.LIFETIME_FIELDS:
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"寿命 {name} 必须为正: {getattr(self, name)}")
        for name in ('kappa_a', 'kappa_r'):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"速率 {name} 不能为负: {getattr(self, name)}")
        if not self.kappa_b > 0:
            raise ConfigurationError(f"缓冲模耗散率 kappa_b 必须为正: {self.kappa_b}")
        if self.n_th < 0:
            raise ConfigurationError(f"热占据数 n_th 不能为负: {self.n_th}")

    def rescaled(self, s: float) -> 'SystemParams':
        """速率与耦合乘以 s，寿命除以 s"""
        if not s > 0:
            raise ConfigurationError(f"缩放因子必须为正: {s}")
        updates = {name: getattr(self, name) * s for name in self.RATE_FIELDS}
        updates.update({name: getattr(self, name) / s for name in self.LIFETIME_FIELDS})
        return replace(self, **updates)

    def consistency_warnings(self, tol: float = 0.05) -> List[str]:
        """kappa_a 与 1/(2π T1_a) 的一致性检查"""
        expected = 1.0 / (TWO_PI * self.T1_a)
        if self.kappa_a == 0:
            return [f"kappa_a=0（理想无损），与 T1_a={self.T1_a} µs 不一致"]
        deviation = abs(self.kappa_a - expected) / expected
        if deviation > tol:
            return [f"kappa_a={self.kappa_a} MHz 与 1/(2π·T1_a)={expected:.4g} MHz 相差 {deviation:.1%}"]
        return []

    @property
    def kappa2(self) -> float:
        """有效双光子耗散率（MHz）"""
        return kappa2_effective(self.g2, self.kappa_b)


@dataclass(frozen=True)
class CircuitParams(_ParamsMixin):
    """ATS电路参数（能量：GHz·h；相位：无量纲）"""
    E_J: float = 90.0
    dE_J: float = 0.0
    E_Lb: float = 45.0
    E_JL: float = 225.0
    E_Ca: float = 0.0927
    E_Cb: float = 0.0735
    E_Cc: float = 0.72
    E_La: float = 96.6
    phi_a: float = 0.06
    phi_b: float = 0.24
    eps0: float = 0.0

    def __post_init__(self):
        if not self.E_J > 0:
            raise ConfigurationError(f"E_J 必须为正: {self.E_J}")

    def consistency_warnings(self, tol: float = 1e-9) -> List[str]:
        if abs(self.E_JL - 5.0 * self.E_Lb) > tol * max(1.0, self.E_JL):
            return [f"E_JL={self.E_JL} 与 5·E_Lb={5.0 * self.E_Lb} 不一致"]
        return []


@dataclass(frozen=True)
class ModelSpec:
    """
    模型描述

    Args:
        rung: 模型层级
        params: 系统参数
        alpha_sq_target: 目标 α²（α 取实数且 >= 0）
        truncations: 各模截断维数（猫模、缓冲模、transmon）
    """
    rung: Rung
    params: SystemParams = field(default_factory=SystemParams)
    alpha_sq_target: float = 0.0
    truncations: Tuple[int, ...] = ()

    def __post_init__(self):
        rung = self.rung if isinstance(self.rung, Rung) else Rung(self.rung)
        object.__setattr__(self, 'rung', rung)
        if self.alpha_sq_target < 0:
            raise ConfigurationError(f"alpha_sq 必须 >= 0: {self.alpha_sq_target}")
        dims = tuple(int(d) for d in self.truncations)
        if len(dims) != rung.n_modes:
            raise ConfigurationError(f"{rung.value} 需要 {rung.n_modes} 个截断维数，实际为 {dims}")
        required = truncation_rule(self.alpha)
        if dims[0] < required:
            raise TruncationError(
                f"猫模截断维数 {dims[0]} 不满足 α²={self.alpha_sq_target:g} 的截断规则 (>= {required})"
            )
        if rung is not Rung.ONE_MODE and dims[1] < MIN_BUFFER_DIM:
            raise ConfigurationError(f"缓冲模截断维数 {dims[1]} 小于 {MIN_BUFFER_DIM}")
        if rung is Rung.THREE_MODE and dims[2] != TRANSMON_DIM:
            raise ConfigurationError(f"transmon 截断维数必须为 {TRANSMON_DIM}，实际为 {dims[2]}")
        object.__setattr__(self, 'truncations', dims)

    @classmethod
    def create(cls, rung: Union[Rung, str], alpha_sq: float,
               params: Optional[SystemParams] = None,
               n_cat: Optional[int] = None, n_buffer: int = 5) -> 'ModelSpec':
        """按截断规则自动补全维数"""
        rung = rung if isinstance(rung, Rung) else Rung(rung)
        cat_dim = n_cat if n_cat is not None else truncation_rule(math.sqrt(max(alpha_sq, 0.0)))
        dims: Tuple[int, ...] = (cat_dim,)
        if rung is not Rung.ONE_MODE:
            dims += (n_buffer,)
        if rung is Rung.THREE_MODE:
            dims += (TRANSMON_DIM,)
        return cls(rung=rung, params=params or SystemParams(), alpha_sq_target=alpha_sq, truncations=dims)

    @property
    def alpha(self) -> float:
        return math.sqrt(self.alpha_sq_target)

    @property
    def sig(self) -> SpaceSig:
        return SpaceSig(self.truncations)

    @property
    def kappa2(self) -> float:
        return self.params.kappa2

    @property
    def kappa_c(self) -> float:
        return confinement_rate(self.alpha_sq_target, self.kappa2)


# ---------------------------------------------------------------------------
# 闭式关系
# ---------------------------------------------------------------------------

def kappa2_effective(g2: complex, kappa_b: float) -> float:
    """κ₂ = 4|g₂|²/κ_b"""
    if not kappa_b > 0:
        raise ValueError(f"kappa_b 必须为正: {kappa_b}")
    return 4.0 * abs(g2) ** 2 / kappa_b


def alpha_from_drive(eps_d: complex, g2: complex) -> complex:
    """α² = −ε_d/g₂*"""
    if g2 == 0:
        raise ValueError("g2 为零时无法由驱动幅度求 α²")
    return -complex(eps_d) / np.conj(complex(g2))


def confinement_rate(alpha_sq: complex, kappa2: float) -> float:
    """κ_c = 2|α|²κ₂"""
    return 2.0 * abs(alpha_sq) * kappa2


def kappa_q(params: SystemParams) -> float:
    """transmon 弛豫率 1/(2π T1_q)（MHz）"""
    return 1.0 / (TWO_PI * params.T1_q)


def frequency_match(params: SystemParams) -> Tuple[float, float]:
    """频率匹配残差 (f_p − (2f_a − f_b), f_d − f_b)，均为零表示匹配"""
    return (params.f_p - (2.0 * params.f_a - params.f_b), params.f_d - params.f_b)


def ats_potential(phi: Union[float, np.ndarray], phiS: float, phiD: float,
                  circuit: CircuitParams, use_array: bool = False) -> Union[float, np.ndarray]:
    """
    ATS势能 U(φ)（GHz·h）

    use_array=True 时二次型电感项替换为约瑟夫森结阵列势 5E_JL(1−cos(φ/5))，
    减去常数使 U(0) 与二次型一致；当 E_JL=5E_Lb 时小 φ 极限与 ½E_Lb φ² 相同。
    """
    phi = np.asarray(phi, dtype=np.float64)
    if use_array:
        confining = 5.0 * circuit.E_JL * (1.0 - np.cos(phi / 5.0))
    else:
        confining = 0.5 * circuit.E_Lb * phi ** 2
    josephson = -2.0 * circuit.E_J * math.cos(phiS) * np.cos(phi + phiD)
    asymmetry = 2.0 * circuit.dE_J * math.sin(phiS) * np.sin(phi + phiD)
    result = confining + josephson + asymmetry
    return float(result) if result.ndim == 0 else result


def _mode_phase(mode: str, circuit: CircuitParams) -> float:
    if mode == 'a':
        return circuit.phi_a
    if mode == 'b':
        return circuit.phi_b
    raise ValueError(f"模式必须为 'a' 或 'b': {mode!r}")


def displaced_amplitude(mode: str, circuit: CircuitParams, f_mode0: float,
                        f_p: float, kappa_mode: float) -> complex:
    """
    泵浦引起的位移 ξ = i(E_J/ħ)ε₀φ / (κ/2 + i(ω₀−ω_p))

    E_J 由 GHz 换算为 MHz，频率与速率均取 ν 约定，比值无量纲。
    """
    if not kappa_mode > 0:
        raise ValueError(f"kappa_mode 必须为正: {kappa_mode}")
    drive = 1000.0 * circuit.E_J * circuit.eps0 * _mode_phase(mode, circuit)
    return 1j * drive / (0.5 * kappa_mode + 1j * (f_mode0 - f_p))


def g2_from_circuit(circuit: CircuitParams) -> float:
    """g₂ = E_J ε₀ φ_a² φ_b / 2（MHz）"""
    return 1000.0 * circuit.E_J * circuit.eps0 * circuit.phi_a ** 2 * circuit.phi_b / 2.0


def solve_pump_amplitude(circuit: CircuitParams, g2_target: float) -> float:
    """求使 g2_from_circuit 等于 g2_target 的 ε₀"""
    unit = 1000.0 * circuit.E_J * circuit.phi_a ** 2 * circuit.phi_b / 2.0
    if unit == 0:
        raise ValueError("φ_a 或 φ_b 为零，g₂ 与 ε₀ 无关")
    return g2_target / unit


def stark_shift(mode: str, circuit: CircuitParams, xi_a: complex, xi_b: complex) -> float:
    """交流Stark频移 ħΔ = (1/3)E_J φ²(Re ξ_b φ_b + Re ξ_a φ_a)（MHz）"""
    phi = _mode_phase(mode, circuit)
    mixed = complex(xi_b).real * circuit.phi_b + complex(xi_a).real * circuit.phi_a
    return 1000.0 * circuit.E_J * phi ** 2 * mixed / 3.0


def array_bound_margin(circuit: CircuitParams) -> float:
    """阵列势垒与泵浦幅度之比 5E_JL/(2E_J ε₀)"""
    if circuit.eps0 == 0:
        return math.inf
    return 5.0 * circuit.E_JL / (2.0 * circuit.E_J * abs(circuit.eps0))


# ---------------------------------------------------------------------------
# 模型构造
# ---------------------------------------------------------------------------

def _check_rung(spec: ModelSpec, rung: Rung) -> None:
    if spec.rung is not rung:
        raise ConfigurationError(f"模型层级为 {spec.rung.value}，无法用于 {rung.value} 构造器")


def _kerr(sig: SpaceSig, params: SystemParams) -> Operator:
    a = mode_operator(sig, 0, 'annihilation')
    adag = a.dag()
    return (adag @ adag @ a @ a) * (-0.5 * to_angular(params.chi_aa))


def _two_photon_exchange(spec: ModelSpec) -> Operator:
    sig = spec.sig
    a = mode_operator(sig, 0, 'annihilation')
    b = mode_operator(sig, 1, 'annihilation')
    identity = mode_operator(sig, 0, 'identity')
    pair = a @ a - identity * spec.alpha_sq_target
    exchange = (pair @ b.dag()) * to_angular(spec.params.g2)
    return exchange + exchange.dag()


def build_one_mode(spec: ModelSpec) -> Tuple[Operator, List[Operator]]:
    """一模模型：H = −(χ_aa/2)a†²a²，损耗 {√κ_a a, √κ₂(a²−α²)}"""
    _check_rung(spec, Rung.ONE_MODE)
    sig = spec.sig
    a = mode_operator(sig, 0, 'annihilation')
    identity = mode_operator(sig, 0, 'identity')
    hamiltonian = _kerr(sig, spec.params).hermitized()
    loss_ops = [
        a * math.sqrt(to_angular(spec.params.kappa_a)),
        (a @ a - identity * spec.alpha_sq_target) * math.sqrt(to_angular(spec.kappa2)),
    ]
    return hamiltonian, loss_ops


def build_two_mode(spec: ModelSpec) -> Tuple[Operator, List[Operator]]:
    """二模模型：H = g₂(a²−α²)b† + h.c. − (χ_aa/2)a†²a²，损耗 {√κ_a a, √κ_b b}"""
    _check_rung(spec, Rung.TWO_MODE)
    return _buffered_model(spec)


def _buffered_model(spec: ModelSpec) -> Tuple[Operator, List[Operator]]:
    sig = spec.sig
    a = mode_operator(sig, 0, 'annihilation')
    b = mode_operator(sig, 1, 'annihilation')
    hamiltonian = (_two_photon_exchange(spec) + _kerr(sig, spec.params)).hermitized()
    loss_ops = [
        a * math.sqrt(to_angular(spec.params.kappa_a)),
        b * math.sqrt(to_angular(spec.params.kappa_b)),
    ]
    return hamiltonian, loss_ops


def build_three_mode(spec: ModelSpec) -> Tuple[Operator, List[Operator]]:
    """三模模型：在二模基础上加 −χ_qa a†a q†q 与transmon热弛豫"""
    _check_rung(spec, Rung.THREE_MODE)
    sig = spec.sig
    params = spec.params
    hamiltonian, loss_ops = _buffered_model(spec)
    n_a = mode_operator(sig, 0, 'number')
    n_q = mode_operator(sig, 2, 'number')
    q = mode_operator(sig, 2, 'annihilation')
    hamiltonian = hamiltonian - (n_a @ n_q) * to_angular(params.chi_qa)
    rate_q = to_angular(kappa_q(params))
    loss_ops += [
        q * math.sqrt(rate_q * (1.0 + params.n_th)),
        q.dag() * math.sqrt(rate_q * params.n_th),
    ]
    return hamiltonian.hermitized(), loss_ops


_BUILDERS = {
    Rung.ONE_MODE: build_one_mode,
    Rung.TWO_MODE: build_two_mode,
    Rung.THREE_MODE: build_three_mode,
}


def build_model(spec: ModelSpec) -> Tuple[Operator, List[Operator]]:
    """按层级分派构造器；返回的哈密顿量均已厄米化"""
    hamiltonian, loss_ops = _BUILDERS[spec.rung](spec)
    if not hamiltonian.hermitian:
        hamiltonian = hamiltonian.hermitized()
    return hamiltonian, loss_ops


def cat_observables(spec: ModelSpec) -> Dict[str, Operator]:
    """猫模的 a、a²、n、宇称，以及缓冲模光子数与transmon激发概率（如存在）"""
    sig = spec.sig
    a = mode_operator(sig, 0, 'annihilation')
    observables = {
        "a": a,
        "a2": a @ a,
        "n": mode_operator(sig, 0, 'number'),
        "parity": mode_operator(sig, 0, 'parity'),
    }
    if spec.rung is not Rung.ONE_MODE:
        observables["n_b"] = mode_operator(sig, 1, 'number')
    if spec.rung is Rung.THREE_MODE:
        observables["q_exc"] = mode_operator(sig, 2, 'number')
    return observables


def initial_state(spec: ModelSpec, kind: Union[CatKind, str] = CatKind.COHERENT,
                  alpha: Optional[complex] = None, transmon_excited: bool = False) -> DensityMatrix:
    """猫模处于指定猫态基矢，缓冲模为真空，transmon为基态（或激发态）"""
    kind = kind if isinstance(kind, CatKind) else CatKind(kind)
    amplitude = spec.alpha if alpha is None else alpha
    dims = spec.truncations
    if kind is CatKind.COHERENT and amplitude == 0:
        cat: Ket = fock_state(SpaceSig((dims[0],)), [0])
    else:
        cat = cat_basis_state(dims[0], amplitude, kind)
    kets = [cat]
    if spec.rung is not Rung.ONE_MODE:
        kets.append(fock_state(SpaceSig((dims[1],)), [0]))
    if spec.rung is Rung.THREE_MODE:
        kets.append(fock_state(SpaceSig((TRANSMON_DIM,)), [1 if transmon_excited else 0]))
    elif transmon_excited:
        raise ConfigurationError("只有三模模型包含transmon")
    return tensor(*kets).to_density()


# ---------------------------------------------------------------------------
# 参数文件
# ---------------------------------------------------------------------------

def split_overrides(overrides: Mapping[str, Any]) -> Tuple[Dict[str, Any], Dict[str, Any]]:
    """将扁平覆盖项分配到 SystemParams / CircuitParams，未知键抛出 ConfigurationError"""
    system: Dict[str, Any] = {}
    circuit: Dict[str, Any] = {}
    for key, value in overrides.items():
        name = SystemParams.resolve_key(key)
        if name is not None:
            system[name] = value
            continue
        name = CircuitParams.resolve_key(key)
        if name is not None:
            circuit[name] = value
            continue
        raise ConfigurationError(f"未知参数: {key}")
    return system, circuit


def load_params_file(path: Union[str, Path]) -> Tuple[SystemParams, CircuitParams]:
    """读取扁平 key = value 参数文件（# 开头为注释），未给出的字段取默认值"""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"参数文件不存在: {path}")
    values: Dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text(encoding='utf-8').splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigurationError(f"{path}:{lineno} 缺少 '=': {raw.strip()}")
        key, value = (part.strip() for part in line.split('=', 1))
        values[key] = value
    system, circuit = split_overrides(values)
    return SystemParams().with_overrides(**system), CircuitParams().with_overrides(**circuit)


def dump_params_file(path: Union[str, Path], params: SystemParams,
                     circuit: Optional[CircuitParams] = None) -> Path:
    path = Path(path)
    lines = ["# SystemParams（MHz / µs）"]
    lines += [f"{key} = {value!r}" for key, value in params.to_dict().items()]
    if circuit is not None:
        lines += ["", "# CircuitParams（GHz / rad）"]
        lines += [f"{key} = {value!r}" for key, value in circuit.to_dict().items()]
    path.write_text("\n".join(lines) + "\n", encoding='utf-8')
    return path
