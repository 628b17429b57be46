"""内存预算

用近似的模型节点大小累计工作集，模拟受限设备的堆上限。
"""

from typing import Optional

from pydantic import BaseModel, Field

from .errors import BudgetExceeded

MIB = 1024 * 1024

# 各类模型节点的近似开销（字节）
STRING_OVERHEAD = 40
INSTRUCTION_SIZE = 16
TRY_SIZE = 48
METHOD_SIZE = 96
CLASS_SIZE = 192
REF_SIZE = 40


class MemoryBudget(BaseModel):
    """内存预算"""

    ceiling_mib: float = Field(gt=0)

    @property
    def ceiling_bytes(self) -> int:
        return int(self.ceiling_mib * MIB)


class MemoryMeter:
    """工作集计量器，超出上限时抛出BudgetExceeded"""

    def __init__(self, budget: Optional[MemoryBudget] = None, stage: str = ""):
        self.budget = budget
        self.stage = stage
        self.used = 0
        self.peak = 0

    def charge(self, nbytes: int):
        self.used += nbytes
        if self.used > self.peak:
            self.peak = self.used
        if self.budget is not None and self.used > self.budget.ceiling_bytes:
            raise BudgetExceeded(
                f"{self.stage or '工作集'}超出内存预算: "
                f"{self.used / MIB:.2f} MiB > {self.budget.ceiling_mib} MiB"
            )

    def release(self, nbytes: int):
        self.used = max(0, self.used - nbytes)


def estimate_dex_bytes(dex) -> int:
    """估算DexFile模型的内存占用"""
    total = sum(len(s) * 2 + STRING_OVERHEAD for s in dex.strings)
    total += (len(dex.types) + len(dex.protos) + len(dex.fields) + len(dex.methods)) * REF_SIZE
    for cls in dex.class_defs:
        total += CLASS_SIZE
        for method in cls.methods:
            total += METHOD_SIZE
            if method.code is not None:
                total += len(method.code.instructions) * INSTRUCTION_SIZE
                total += len(method.code.tries) * TRY_SIZE
    return total
