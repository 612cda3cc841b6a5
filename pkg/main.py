"""
猫比特仿真工具入口文件
"""

from cat_qubit_sim.cli import main

if __name__ == "__main__":
    main()
