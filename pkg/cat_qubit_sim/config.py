"""
配置管理模块
"""

import os
from pathlib import Path
from typing import Dict

try:
    from dotenv import load_dotenv
    # 查找并加载 .env 文件
    env_path = Path(__file__).parent.parent / '.env'
    if env_path.exists():
        load_dotenv(env_path)
    else:
        # 尝试在当前工作目录查找
        current_env = Path.cwd() / '.env'
        if current_env.exists():
            load_dotenv(current_env)
except ImportError:
    print("警告: python-dotenv 未安装，无法自动加载 .env 文件")


ENV_PREFIX = 'CATQ_'

# 以下 CATQ_* 变量是运行参数，不属于物理参数覆盖
_RESERVED_KEYS = {'jobs', 'output_dir', 'rel_step_tol', 'trace_tol', 'herm_resym_period'}


class Config:
    """配置类"""

    def __init__(self):
        # 日志配置
        self.log_level = os.getenv('LOG_LEVEL', 'INFO')

        # 运行配置
        self.jobs = int(os.getenv('CATQ_JOBS', '1'))
        self.output_dir = os.getenv('CATQ_OUTPUT_DIR', 'results')

        # 积分器默认容差
        self.rel_step_tol = float(os.getenv('CATQ_REL_STEP_TOL', '1e-8'))
        self.trace_tol = float(os.getenv('CATQ_TRACE_TOL', '1e-6'))
        self.herm_resym_period = int(os.getenv('CATQ_HERM_RESYM_PERIOD', '100'))

        # 物理参数覆盖：CATQ_<FIELD>=value，与 --set <field>=value 等价
        self.param_overrides = self._collect_param_overrides()

    @staticmethod
    def _collect_param_overrides() -> Dict[str, str]:
        overrides: Dict[str, str] = {}
        for name, value in os.environ.items():
            if not name.startswith(ENV_PREFIX):
                continue
            key = name[len(ENV_PREFIX):].lower()
            if key and key not in _RESERVED_KEYS:
                overrides[key] = value
        return overrides

    def reload(self) -> None:
        """重新读取环境变量（测试中修改环境后使用）"""
        self.__init__()


# 全局配置实例
config = Config()
