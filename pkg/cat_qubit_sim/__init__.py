"""
耗散稳定猫比特仿真与分析工具

在截断Fock空间中构建一/二/三模Lindblad模型并积分，计算半经典赝势与亚稳阈值，
并按实验流程提取比特翻转/相位翻转时间与标定常数。
"""

__version__ = "0.1.0"
