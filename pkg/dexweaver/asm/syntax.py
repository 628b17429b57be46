"""汇编文本的公共语法定义"""

from typing import Dict, List

from ..dex.opcodes import FORMAT_ROLES, REGISTER_ORDER

# 访问标志关键字，顺序即为反汇编输出顺序
ACCESS_FLAGS: Dict[str, int] = {
    "public": 0x1,
    "private": 0x2,
    "protected": 0x4,
    "static": 0x8,
    "final": 0x10,
    "synchronized": 0x20,
    "volatile": 0x40,
    "bridge": 0x40,
    "transient": 0x80,
    "varargs": 0x80,
    "native": 0x100,
    "interface": 0x200,
    "abstract": 0x400,
    "strict": 0x800,
    "synthetic": 0x1000,
    "annotation": 0x2000,
    "enum": 0x4000,
    "constructor": 0x10000,
    "declared-synchronized": 0x20000,
}

# 同一位在不同上下文中的名字
_CLASS_NAMES = ["public", "private", "protected", "static", "final", "interface", "abstract",
                "synthetic", "annotation", "enum"]
_FIELD_NAMES = ["public", "private", "protected", "static", "final", "volatile", "transient",
                "synthetic", "enum"]
_METHOD_NAMES = ["public", "private", "protected", "static", "final", "synchronized", "bridge",
                 "varargs", "native", "abstract", "strict", "synthetic", "constructor",
                 "declared-synchronized"]
FLAG_NAMES = {"class": _CLASS_NAMES, "field": _FIELD_NAMES, "method": _METHOD_NAMES}


def flags_to_text(flags: int, context: str) -> List[str]:
    """访问标志转关键字列表；无法表示的位以十六进制输出"""
    words = []
    rest = flags
    for name in FLAG_NAMES[context]:
        bit = ACCESS_FLAGS[name]
        if flags & bit and rest & bit:
            words.append(name)
            rest &= ~bit
    if rest:
        words.append(f"0x{rest:x}")
    return words


def operand_kinds(fmt: str) -> List[str]:
    """某格式在汇编文本中的操作数序列

    取值为 reg、reglist、lit、ref、label。
    """
    if fmt == "35c":
        return ["reglist", "ref"]
    if fmt == "3rc":
        return ["reglist", "ref"]
    roles = FORMAT_ROLES[fmt]
    kinds = ["reg" for letter in REGISTER_ORDER if roles.get(letter) == "reg"]
    for letter in REGISTER_ORDER:
        role = roles.get(letter)
        if role == "lit":
            kinds.append("lit")
        elif role == "idx":
            kinds.append("ref")
        elif role == "off":
            kinds.append("label")
    return kinds
