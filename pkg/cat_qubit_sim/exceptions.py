"""
自定义异常类
"""


class CatQubitSimError(Exception):
    """猫比特仿真基础异常"""
    pass


class ConfigurationError(CatQubitSimError):
    """配置错误异常（未知键、非法取值、前置条件不满足）"""
    pass


class SignatureMismatchError(CatQubitSimError):
    """算符/态的希尔伯特空间签名不一致"""
    pass


class TruncationError(CatQubitSimError):
    """Fock截断维数不足"""
    pass


class NumericalError(CatQubitSimError):
    """数值计算失败"""
    pass


class TraceDriftError(NumericalError):
    """密度矩阵迹漂移超出容差"""
    pass


class PositivityError(NumericalError):
    """密度矩阵出现超出容差的负本征值"""
    pass


class FitError(NumericalError):
    """拟合失败或拟合结果被拒绝"""
    pass


class UnsupportedPerturbationError(CatQubitSimError):
    """单光子损耗与失谐同时存在，半经典公式不适用"""
    pass


class NoMetastableDirectionError(CatQubitSimError):
    """失谐超过 κ_c/2，不存在亚稳方向"""
    pass
