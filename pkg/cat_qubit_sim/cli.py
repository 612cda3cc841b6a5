"""
命令行接口模块
"""

import json
import sys
from typing import Optional, Tuple

import click

from . import __version__
from .config import config
from .config_loader import builtin_scenarios, load_scenario, parse_set_options
from .exceptions import CatQubitSimError, ConfigurationError, NumericalError
from .logger import set_package_level, setup_logger
from .models import CircuitParams, SystemParams, dump_params_file, split_overrides
from .runner import ScenarioRunner

logger = setup_logger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

LOG_LEVELS = click.Choice(['DEBUG', 'INFO', 'WARNING', 'ERROR'], case_sensitive=False)


def _exit_code(error: Exception) -> int:
    if isinstance(error, NumericalError):
        return EXIT_NUMERICAL
    if isinstance(error, CatQubitSimError):
        return EXIT_CONFIG
    return EXIT_ERROR


def _fail(error: Exception) -> None:
    """打印一行诊断信息并以对应退出码结束"""
    code = _exit_code(error)
    if code == EXIT_ERROR:
        logger.error(f"未知错误: {error}")
        click.echo(f"未知错误: {error}", err=True)
    else:
        logger.error(str(error))
        click.echo(f"错误: {error}", err=True)
    sys.exit(code)


def _unit(name: str) -> str:
    if name.startswith('T'):
        return 'µs'
    if name == 'n_th':
        return ''
    if name.startswith('E_') or name == 'dE_J':
        return 'GHz'
    if name.startswith('phi'):
        return 'rad'
    if name == 'eps0':
        return ''
    return 'MHz'


def _overridden_params(sets: Tuple[str, ...]) -> Tuple[SystemParams, CircuitParams]:
    """环境变量 CATQ_<FIELD> 与 --set 叠加到默认参数上（--set 优先）"""
    overrides = dict(config.param_overrides)
    overrides.update(parse_set_options(sets))
    system, circuit = split_overrides(overrides)
    return SystemParams().with_overrides(**system), CircuitParams().with_overrides(**circuit)


@click.group()
@click.version_option(__version__, prog_name='cat-qubit-sim')
def main():
    """
    耗散稳定猫比特仿真工具

    运行场景文件中描述的扫描，输出可直接绘图的 CSV 以及 manifest JSON。
    """


@main.command()
@click.argument('scenario', required=False)
@click.option('--set', 'sets', multiple=True, metavar='KEY=VALUE',
              help='覆盖场景或物理参数，可重复（优先级：--set > 场景文件 > 环境变量）')
@click.option('--jobs', type=int, default=None,
              help='扫描并行进程数（可通过环境变量CATQ_JOBS设置）')
@click.option('-o', '--output', default=None,
              help='输出 CSV 路径（覆盖场景文件中的 output.path）')
@click.option('--log-level', type=LOG_LEVELS, default=None,
              help='日志级别（可通过环境变量LOG_LEVEL设置）')
@click.option('--list', 'list_only', is_flag=True,
              help='列出内置场景名称后退出')
def run(scenario: Optional[str],
        sets: Tuple[str, ...],
        jobs: Optional[int],
        output: Optional[str],
        log_level: Optional[str],
        list_only: bool):
    """
    运行场景：SCENARIO 为场景文件路径或内置场景名
    """
    if list_only:
        for name in builtin_scenarios():
            click.echo(name)
        return

    set_package_level(log_level or config.log_level)

    try:
        if not scenario:
            raise ConfigurationError("缺少 SCENARIO 参数（可用 --list 查看内置场景）")
        if jobs is not None and jobs < 1:
            raise ConfigurationError(f"--jobs 必须 >= 1: {jobs}")
        cfg = load_scenario(scenario, parse_set_options(sets), output_override=output)

        click.echo("=" * 60)
        click.echo("猫比特仿真")
        click.echo("=" * 60)
        click.echo(f"场景: {cfg.name}")
        click.echo(f"扫描类型: {cfg.scan}")
        click.echo(f"模型层级: {cfg.model.rung.value}")
        click.echo(f"截断维数: {cfg.model.truncations}")
        click.echo(f"速率缩放: {cfg.rescale:g}")
        click.echo(f"并行进程: {jobs or config.jobs}")
        click.echo("=" * 60)

        runner = ScenarioRunner(cfg, jobs=jobs or config.jobs,
                                output_dir=None if output else config.output_dir)
        report = runner.run()

        click.echo(f"结果: {report.output_path}")
        click.echo(f"manifest: {report.manifest_path}")
        click.echo("运行完成！")
    except Exception as e:
        _fail(e)


@main.command()
@click.argument('scenario')
@click.option('--set', 'sets', multiple=True, metavar='KEY=VALUE',
              help='覆盖场景或物理参数，可重复')
def validate(scenario: str, sets: Tuple[str, ...]):
    """
    只校验场景文件，不做任何计算
    """
    try:
        cfg = load_scenario(scenario, parse_set_options(sets))
        warnings = cfg.model.params.consistency_warnings() + cfg.circuit.consistency_warnings()
        for message in warnings:
            click.echo(f"警告: {message}")
        click.echo(f"✓ 场景 {cfg.name} 校验通过（{cfg.scan}，{cfg.model.rung.value}，截断 {cfg.model.truncations}）")
    except Exception as e:
        _fail(e)


@main.group()
def params():
    """查看或导出物理参数"""


@params.command('show')
@click.option('--set', 'sets', multiple=True, metavar='KEY=VALUE',
              help='覆盖参数，可重复')
@click.option('--format', 'fmt', type=click.Choice(['text', 'json']), default='text',
              help='输出格式')
def params_show(sets: Tuple[str, ...], fmt: str):
    """
    打印参数表（默认值叠加环境变量与 --set 覆盖）
    """
    try:
        system, circuit = _overridden_params(sets)
    except Exception as e:
        _fail(e)
        return

    if fmt == 'json':
        payload = {
            "system": system.to_dict(),
            "circuit": circuit.to_dict(),
            "derived": {"kappa2_mhz": system.kappa2},
        }
        click.echo(json.dumps(payload, indent=2, ensure_ascii=False))
        return

    click.echo("# 系统参数（ν 约定）")
    for name, value in system.to_dict().items():
        click.echo(f"{name} = {value:g} {_unit(name)}".rstrip())
    click.echo("# 电路参数")
    for name, value in circuit.to_dict().items():
        click.echo(f"{name} = {value:g} {_unit(name)}".rstrip())
    click.echo("# 导出量")
    click.echo(f"kappa2 = {system.kappa2:.6g} MHz")
    for message in system.consistency_warnings() + circuit.consistency_warnings():
        click.echo(f"# 警告: {message}")


@params.command('dump')
@click.argument('path')
@click.option('--set', 'sets', multiple=True, metavar='KEY=VALUE',
              help='覆盖参数，可重复')
def params_dump(path: str, sets: Tuple[str, ...]):
    """
    把参数写成 key = value 参数文件（可在场景中以 params_file 引用）
    """
    try:
        system, circuit = _overridden_params(sets)
        written = dump_params_file(path, system, circuit)
        click.echo(f"参数文件已写入: {written}")
    except Exception as e:
        _fail(e)


if __name__ == '__main__':
    main()
