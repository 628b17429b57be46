"""DexWeaver异常定义"""

from typing import Optional


class DexWeaverError(Exception):
    """所有DexWeaver错误的基类"""

    def __init__(self, message: str = "", *, path: Optional[str] = None):
        super().__init__(message)
        self.message = message
        self.path = path

    def to_dict(self) -> dict:
        """转换为CLI诊断输出"""
        data = {"error": type(self).__name__, "message": self.message}
        if self.path is not None:
            data["path"] = self.path
        return data


class ConfigError(DexWeaverError):
    """配置文件或参数无效"""


# DEX格式
class DexFormatError(DexWeaverError):
    """DEX容器格式错误"""


class TruncatedFile(DexFormatError):
    """文件被截断"""


class BadMagic(DexFormatError):
    """魔数不是dex"""


class DigestMismatch(DexFormatError):
    """校验和或签名与内容不一致"""


class MalformedIndex(DexFormatError):
    """池索引越界"""


class MalformedDex(DexFormatError):
    """结构性错误（未知操作码、跳转目标不在指令边界等）"""


class LayoutOverflow(DexFormatError):
    """超出格式限制"""


# 重写
class RegisterPressure(DexWeaverError):
    """寄存器超出指令编码宽度"""


class UnsupportedRegion(DexWeaverError):
    """方法体中存在无法安全插桩的区域"""


class BudgetExceeded(DexWeaverError):
    """超出内存预算"""


# 汇编
class AsmError(DexWeaverError):
    """汇编错误"""

    def __init__(self, message: str, line: int = 0, column: int = 0):
        super().__init__(f"{line}:{column}: {message}" if line else message)
        self.line = line
        self.column = column


class AsmSyntaxError(AsmError):
    """语法错误"""


class UnknownOpcode(AsmError):
    """不在支持子集中的操作码"""


class UndefinedLabel(AsmError):
    """引用了未定义的标签"""


class DuplicateLabel(AsmError):
    """标签重复定义"""


class OpaqueRegion(DexWeaverError):
    """方法体包含不透明指令，无法反汇编"""


# 解释器
class InterpError(DexWeaverError):
    """解释器错误"""


class UnknownEntry(InterpError):
    """入口方法不存在"""


class ArityMismatch(InterpError):
    """参数个数与ins_size不符"""


class UnsupportedOpcode(InterpError):
    """解释器不支持的指令"""


# 打包与签名
class PackageError(DexWeaverError):
    """APK打包错误"""


class BadZip(PackageError):
    """无效的zip容器"""


class MissingClassesDex(PackageError):
    """APK中没有classes.dex"""


class EntryTooLarge(PackageError):
    """条目超过zip格式上限"""


class CryptoFailure(PackageError):
    """密钥生成或签名失败"""


# 基准测试
class DegenerateSamples(DexWeaverError):
    """样本不足以拟合"""
