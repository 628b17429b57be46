"""解释器的值表示

寄存器中的值只有四种：整数、字符串、None（null或未初始化）、对象句柄。
"""

from dataclasses import dataclass
from typing import Union

RUNTIME_EXCEPTION = "Ljava/lang/RuntimeException;"
NULL_POINTER = "Ljava/lang/NullPointerException;"

_PRIMITIVES = frozenset("ZBSCIJFD")


@dataclass
class ObjectRef:
    """对象句柄；只记录类型和分配序号"""

    type: str
    id: int = 0

    def to_json(self) -> dict:
        return {"object": self.type}


Value = Union[int, str, None, ObjectRef]


def fake_default(return_type: str) -> Value:
    """被拒绝调用的返回值：整型与布尔为0，引用为null，void为None"""
    if return_type in _PRIMITIVES:
        return 0
    return None


def is_zero(value: Value) -> bool:
    return value is None or (isinstance(value, int) and value == 0)


def to_int32(value: int) -> int:
    value &= 0xFFFFFFFF
    return value - 0x100000000 if value & 0x80000000 else value


def value_to_json(value: Value):
    if isinstance(value, ObjectRef):
        return value.to_json()
    return value
