"""DexWeaver - Dalvik字节码的设备端插桩工具

在不修改系统的前提下改写APK：中和广告库的执行，
在受权限保护的API调用周围织入策略检查，然后重新打包并签名。
"""

__version__ = "0.1.0"
