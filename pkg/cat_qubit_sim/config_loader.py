"""
场景文件加载与规范化工具

支持 INI（[model]/[scan]/[output] 分组）与同样分组的 JSON 场景文件；提供分组键扁平化、
环境变量占位符展开、类型规整，以及与 CLI --set / 环境变量覆盖的合并。
"""

from __future__ import annotations

import configparser
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

from .exceptions import ConfigurationError, TruncationError
from .hilbert import CatKind, truncation_rule
from .models import CircuitParams, ModelSpec, Rung, SystemParams, load_params_file, split_overrides

SCENARIO_DIR = Path(__file__).parent / 'scenarios'
SCENARIO_SUFFIXES = ('.cfg', '.ini', '.json')

SCAN_KINDS = ('bitflip', 'phaseflip', 'kappa2_cal', 'drive_cal', 'wigner', 'semiclassical', 'evolve')

# [model] 中除物理参数覆盖以外的键
MODEL_KEYS = ('rung', 'alpha_sq', 'n_cat', 'n_buffer', 'rescale', 'params_file')

# 各扫描类型接受的 [scan] 键
SCAN_KEYS: Dict[str, Tuple[str, ...]] = {
    'bitflip': ('alpha_sq_list', 'alpha_sq_is_inf', 'horizon', 'n_samples', 'observable'),
    'phaseflip': ('alpha_sq_list', 'horizon', 'n_samples'),
    'kappa2_cal': ('delta_list', 'horizon', 'stall_tol', 'fit', 'kappa2_guess'),
    'drive_cal': ('eps_list', 'horizon', 'stall_tol', 'min_alpha_inf_sq'),
    'wigner': ('initial_state', 'initial_alpha', 't_final', 'extent', 'resolution', 'fit_cat_size'),
    'semiclassical': ('extent', 'resolution', 'loss', 'delta'),
    'evolve': ('initial_state', 'initial_alpha', 'transmon_excited', 't_final', 'n_samples'),
}

OUTPUT_KEYS = ('output_path',)

CAT_STATES = tuple(kind.value for kind in CatKind)

LIST_KEYS = ('alpha_sq_list', 'delta_list', 'eps_list')
BOOL_KEYS = ('alpha_sq_is_inf', 'fit', 'fit_cat_size', 'loss', 'transmon_excited')
INT_KEYS = ('n_cat', 'n_buffer', 'n_samples', 'resolution')
FLOAT_KEYS = ('alpha_sq', 'rescale', 'horizon', 'stall_tol', 'kappa2_guess', 'min_alpha_inf_sq',
              'initial_alpha', 't_final', 'extent', 'delta')


def _expand_env(value: Any) -> Any:
    """
    对字符串执行环境变量占位符展开（支持 $VAR 与 ${VAR}），递归处理 dict/list。
    其他类型原样返回。
    """
    if isinstance(value, str):
        return os.path.expandvars(value)
    if isinstance(value, list):
        return [_expand_env(v) for v in value]
    if isinstance(value, dict):
        return {k: _expand_env(v) for k, v in value.items()}
    return value


def _to_bool(val: Any) -> bool | None:
    if val is None:
        return None
    if isinstance(val, bool):
        return val
    s = str(val).strip().lower()
    if s in {"1", "true", "yes", "y", "on"}:
        return True
    if s in {"0", "false", "no", "n", "off"}:
        return False
    return None


def _to_int(val: Any) -> int | None:
    if val is None or val == "":
        return None
    try:
        return int(str(val).strip())
    except ValueError:
        return None


def _to_float(val: Any) -> float | None:
    if val is None or val == "":
        return None
    try:
        return float(str(val).strip())
    except ValueError:
        return None


def _to_float_list(val: Any) -> List[float] | None:
    if val is None:
        return None
    if isinstance(val, (list, tuple)):
        items = list(val)
    elif isinstance(val, str):
        # 逗号或空白分隔
        items = [p for p in val.replace(",", " ").split() if p]
    else:
        items = [val]
    out = []
    for item in items:
        number = _to_float(item)
        if number is None:
            return None
        out.append(number)
    return out


def resolve_scenario_path(name_or_path: str) -> Path:
    """路径存在则直接使用，否则在内置场景目录中按名称查找"""
    path = Path(name_or_path)
    if path.exists():
        return path
    for suffix in ('',) + SCENARIO_SUFFIXES:
        candidate = SCENARIO_DIR / f"{name_or_path}{suffix}"
        if candidate.is_file():
            return candidate
    raise ConfigurationError(f"场景文件不存在，也不是内置场景: {name_or_path}")


def builtin_scenarios() -> List[str]:
    """内置场景名称（按字母顺序）"""
    if not SCENARIO_DIR.is_dir():
        return []
    return sorted(p.stem for p in SCENARIO_DIR.iterdir() if p.suffix in SCENARIO_SUFFIXES)


def load_config_file(path: str | Path) -> Dict[str, Any]:
    """
    加载场景文件（INI 或 JSON）并展开环境变量占位符，返回分组字典。
    """
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"场景文件不存在: {path}")
    if path.suffix == '.json':
        try:
            with open(path, "r", encoding="utf-8") as f:
                raw = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"场景文件 JSON 解析失败 {path}: {e}") from e
        if not isinstance(raw, dict):
            raise ConfigurationError(f"场景文件顶层必须是对象: {path}")
        return _expand_env(raw)

    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=('#', ';'))
    # 保留键的大小写，参数名如 T1_a 区分大小写
    parser.optionxform = str  # type: ignore[assignment,method-assign]
    try:
        with open(path, "r", encoding="utf-8") as f:
            parser.read_file(f)
    except configparser.Error as e:
        raise ConfigurationError(f"场景文件解析失败 {path}: {e}") from e
    raw = {section: dict(parser.items(section)) for section in parser.sections()}
    return _expand_env(raw)


def normalize_config(cfg: Dict[str, Any]) -> Dict[str, Any]:
    """
    将 model/scan/output 分组规范化为扁平键；保留已是扁平键的字段。
    scan.kind 映射为 scan，output.path 映射为 output_path。
    """
    out: Dict[str, Any] = {}

    # 已扁平键优先直接放入
    out.update({k: v for k, v in cfg.items() if not isinstance(v, dict)})

    unknown_groups = [k for k, v in cfg.items() if isinstance(v, dict) and k not in ("model", "scan", "output")]
    if unknown_groups:
        raise ConfigurationError(f"未知配置分组: {', '.join(unknown_groups)}")

    model = cfg.get("model") or {}
    for key, value in model.items():
        out.setdefault(key, value)

    scan = cfg.get("scan") or {}
    for key, value in scan.items():
        out.setdefault("scan" if key == "kind" else key, value)

    output = cfg.get("output") or {}
    for key, value in output.items():
        out.setdefault("output_path" if key == "path" else key, value)

    return out


def merge_with_cli_and_env(cli_sets: Mapping[str, Any], file_cfg: Dict[str, Any], env_cfg) -> Dict[str, Any]:
    """
    合并参数：CLI --set > 文件 > 环境（config.py 的 config.param_overrides）。
    """
    merged: Dict[str, Any] = {}

    def put(key: str, value: Any) -> None:
        # 参数名不区分大小写，后来者覆盖先前的同名键
        for existing in [k for k in merged if k.lower() == key.lower()]:
            del merged[existing]
        merged[key] = value

    for source in (env_cfg.param_overrides, file_cfg, cli_sets):
        for key, value in source.items():
            if value is not None:
                put(key, value)
    return merged


def parse_set_options(items: List[str] | Tuple[str, ...]) -> Dict[str, str]:
    """解析 --set key=value 列表"""
    out: Dict[str, str] = {}
    for item in items:
        if "=" not in item:
            raise ConfigurationError(f"--set 需要 key=value 形式: {item}")
        key, value = (part.strip() for part in item.split("=", 1))
        if not key:
            raise ConfigurationError(f"--set 缺少键名: {item}")
        out[key] = value
    return out


@dataclass(frozen=True)
class ScenarioConfig:
    """
    校验后的场景

    Args:
        name: 场景名（文件名去后缀）
        model: 模型描述（截断维数按扫描中最大的 α² 确定）
        circuit: 电路参数
        scan: 扫描类型
        scan_params: 扫描参数（已完成类型规整）
        output_path: 输出 CSV 路径
        rescale: 速率缩放因子
        inputs: 合并后的原始输入（写入 manifest）
    """
    name: str
    model: ModelSpec
    circuit: CircuitParams
    scan: str
    scan_params: Dict[str, Any]
    output_path: Path
    rescale: float = 1.0
    inputs: Dict[str, Any] = field(default_factory=dict)


def _coerce(key: str, value: Any) -> Any:
    if key in LIST_KEYS:
        result: Any = _to_float_list(value)
        kind = "数值列表"
    elif key in BOOL_KEYS:
        result = _to_bool(value)
        kind = "布尔值"
    elif key in INT_KEYS:
        result = _to_int(value)
        kind = "整数"
    elif key in FLOAT_KEYS:
        result = _to_float(value)
        kind = "数值"
    else:
        return value.strip() if isinstance(value, str) else value
    if result is None:
        raise ConfigurationError(f"配置项 {key} 需要{kind}: {value!r}")
    return result


def _require(params: Dict[str, Any], key: str, scan: str) -> None:
    if params.get(key) in (None, []):
        raise ConfigurationError(f"{scan} 扫描缺少必填项: {key}")


def _check_scan_values(scan: str, params: Dict[str, Any]) -> None:
    choices = {
        "observable": ("a", "husimi"),
        "initial_state": CAT_STATES + (("steady",) if scan == "wigner" else ()),
    }
    for key, allowed in choices.items():
        if key in params:
            params[key] = str(params[key]).lower()
            if params[key] not in allowed:
                raise ConfigurationError(f"{key} 必须是 {'/'.join(allowed)} 之一: {params[key]!r}")
    for key in ("horizon", "stall_tol", "extent"):
        if key in params and not params[key] > 0:
            raise ConfigurationError(f"{key} 必须为正: {params[key]}")
    if "t_final" in params and (params["t_final"] < 0 or (scan == "evolve" and params["t_final"] == 0)):
        raise ConfigurationError(f"t_final 取值非法: {params['t_final']}")
    if "resolution" in params and params["resolution"] < 2:
        raise ConfigurationError(f"resolution 必须 >= 2: {params['resolution']}")
    min_samples = 5 if scan in ("bitflip", "phaseflip") else 2
    if "n_samples" in params and params["n_samples"] < min_samples:
        raise ConfigurationError(f"n_samples 必须 >= {min_samples}: {params['n_samples']}")
    if scan == "phaseflip" and any(v <= 0 for v in params["alpha_sq_list"]):
        raise ConfigurationError("相位翻转扫描要求所有 α² > 0")
    if scan == "bitflip" and any(v < 0 for v in params["alpha_sq_list"]):
        raise ConfigurationError("alpha_sq_list 不能包含负数")


def _max_alpha_sq(scan: str, params: Dict[str, Any], system: SystemParams, alpha_sq: float) -> float:
    """扫描中出现的最大 α²，用于确定猫模截断"""
    if scan in ("bitflip", "phaseflip"):
        values = list(params["alpha_sq_list"])
        if scan == "bitflip" and params.get("alpha_sq_is_inf"):
            offset = system.kappa_a / (2.0 * system.kappa2) if system.kappa2 > 0 else 0.0
            values = [v + offset for v in values]
        return max(values)
    if scan == "drive_cal":
        return max(abs(eps) / abs(system.g2) for eps in params["eps_list"]) if system.g2 else alpha_sq
    if scan in ("wigner", "evolve") and params.get("initial_alpha") is not None:
        return max(alpha_sq, params["initial_alpha"] ** 2)
    return alpha_sq


def build_scenario(merged: Dict[str, Any], name: str = "scenario", base_dir: Optional[Path] = None,
                   output_override: Optional[str] = None) -> ScenarioConfig:
    """
    校验扁平配置并构造 ScenarioConfig；任何未知键或非法取值抛出 ConfigurationError

    Args:
        merged: 合并后的扁平配置
        name: 场景名
        base_dir: 解析相对 params_file 的目录
        output_override: CLI --output
    """
    scan = str(merged.get("scan") or "").strip().lower()
    if scan not in SCAN_KINDS:
        raise ConfigurationError(f"scan 必须是 {'/'.join(SCAN_KINDS)} 之一: {merged.get('scan')!r}")

    allowed = set(MODEL_KEYS) | set(SCAN_KEYS[scan]) | set(OUTPUT_KEYS) | {"scan"}
    values: Dict[str, Any] = {}
    overrides: Dict[str, Any] = {}
    for key, value in merged.items():
        if key in allowed:
            values[key] = _coerce(key, value)
        else:
            overrides[key] = value
    # 剩余键必须是物理参数，否则按未知键报错
    system_overrides, circuit_overrides = split_overrides(overrides)

    system, circuit = SystemParams(), CircuitParams()
    if values.get("params_file"):
        params_path = Path(values["params_file"])
        if not params_path.is_absolute() and base_dir is not None:
            params_path = base_dir / params_path
        system, circuit = load_params_file(params_path)
    system = system.with_overrides(**system_overrides)
    circuit = circuit.with_overrides(**circuit_overrides)

    rescale = values.get("rescale", 1.0)
    if not rescale > 0:
        raise ConfigurationError(f"rescale 必须为正: {rescale}")

    try:
        rung = Rung(str(values.get("rung", "one_mode")).strip().lower())
    except ValueError:
        raise ConfigurationError(f"未知模型层级 rung: {values.get('rung')!r}") from None
    alpha_sq = values.get("alpha_sq", 0.0)
    if alpha_sq < 0:
        raise ConfigurationError(f"alpha_sq 必须 >= 0: {alpha_sq}")

    params = {k: v for k, v in values.items() if k in SCAN_KEYS[scan]}
    if scan in ("bitflip", "phaseflip"):
        _require(params, "alpha_sq_list", scan)
    if scan == "bitflip":
        _require(params, "horizon", scan)
    if scan == "kappa2_cal":
        _require(params, "delta_list", scan)
    if scan == "drive_cal":
        _require(params, "eps_list", scan)
    if scan == "evolve":
        _require(params, "t_final", scan)
    if scan in ("kappa2_cal", "drive_cal") and rung is not Rung.ONE_MODE:
        raise ConfigurationError(f"{scan} 扫描只支持 one_mode 模型")
    if scan == "semiclassical" and not system.kappa2 > 0:
        raise ConfigurationError("semiclassical 扫描要求 κ₂ > 0（g2 不能为零）")
    if rescale != 1.0 and scan in ("kappa2_cal", "drive_cal", "semiclassical"):
        raise ConfigurationError(f"rescale 不适用于 {scan} 扫描")
    _check_scan_values(scan, params)

    cat_alpha_sq = _max_alpha_sq(scan, params, system, alpha_sq)
    required = truncation_rule(math.sqrt(max(cat_alpha_sq, 0.0)))
    n_cat = values.get("n_cat")
    if n_cat is None:
        n_cat = required
    elif n_cat < required:
        raise TruncationError(f"n_cat={n_cat} 不足以覆盖扫描中最大的 α²={cat_alpha_sq:g}（需要 >= {required}）")
    model = ModelSpec.create(rung, alpha_sq, system, n_cat=n_cat, n_buffer=values.get("n_buffer", 5))

    output = output_override or values.get("output_path") or f"{name}.csv"
    return ScenarioConfig(
        name=name,
        model=model,
        circuit=circuit,
        scan=scan,
        scan_params=params,
        output_path=Path(output),
        rescale=rescale,
        inputs={k: merged[k] for k in sorted(merged)},
    )


def load_scenario(name_or_path: str, cli_sets: Optional[Mapping[str, Any]] = None,
                  output_override: Optional[str] = None, env_cfg=None) -> ScenarioConfig:
    """文件/内置场景 → 规范化 → 合并覆盖 → 校验"""
    if env_cfg is None:
        from .config import config as env_cfg
    path = resolve_scenario_path(name_or_path)
    file_cfg = normalize_config(load_config_file(path))
    merged = merge_with_cli_and_env(cli_sets or {}, file_cfg, env_cfg)
    return build_scenario(merged, name=path.stem, base_dir=path.parent, output_override=output_override)
