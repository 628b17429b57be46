"""Dalvik操作码表

每种指令格式用布局字符串描述，例如 ``"B|A|op"``、``"AA|op BBBB"``、
``"A|G|op BBBB F|E|D|C"``：空格分隔代码单元，``|`` 从高位到低位划分字段。
``lo``/``hi`` 后缀及连续出现的同名字段按小端顺序拼接。
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

# 格式 -> 布局
FORMAT_LAYOUTS: Dict[str, str] = {
    "10x": "ØØ|op",
    "12x": "B|A|op",
    "11n": "B|A|op",
    "11x": "AA|op",
    "10t": "AA|op",
    "20t": "ØØ|op AAAA",
    "22x": "AA|op BBBB",
    "21t": "AA|op BBBB",
    "21s": "AA|op BBBB",
    "21h": "AA|op BBBB",
    "21c": "AA|op BBBB",
    "23x": "AA|op CC|BB",
    "22b": "AA|op CC|BB",
    "22t": "B|A|op CCCC",
    "22s": "B|A|op CCCC",
    "22c": "B|A|op CCCC",
    "30t": "ØØ|op AAAAlo AAAAhi",
    "32x": "ØØ|op AAAA BBBB",
    "31i": "AA|op BBBBlo BBBBhi",
    "31t": "AA|op BBBBlo BBBBhi",
    "31c": "AA|op BBBBlo BBBBhi",
    "35c": "A|G|op BBBB F|E|D|C",
    "3rc": "AA|op BBBB CCCC",
    "51l": "AA|op BBBBlo BBBB BBBB BBBBhi",
}

# 格式 -> 字段角色: reg 寄存器, lit 有符号立即数, idx 池索引, off 相对跳转, count 参数个数, first 首寄存器
FORMAT_ROLES: Dict[str, Dict[str, str]] = {
    "10x": {},
    "12x": {"A": "reg", "B": "reg"},
    "11n": {"A": "reg", "B": "lit"},
    "11x": {"A": "reg"},
    "10t": {"A": "off"},
    "20t": {"A": "off"},
    "22x": {"A": "reg", "B": "reg"},
    "21t": {"A": "reg", "B": "off"},
    "21s": {"A": "reg", "B": "lit"},
    "21h": {"A": "reg", "B": "lit"},
    "21c": {"A": "reg", "B": "idx"},
    "23x": {"A": "reg", "B": "reg", "C": "reg"},
    "22b": {"A": "reg", "B": "reg", "C": "lit"},
    "22t": {"A": "reg", "B": "reg", "C": "off"},
    "22s": {"A": "reg", "B": "reg", "C": "lit"},
    "22c": {"A": "reg", "B": "reg", "C": "idx"},
    "30t": {"A": "off"},
    "32x": {"A": "reg", "B": "reg"},
    "31i": {"A": "reg", "B": "lit"},
    "31t": {"A": "reg", "B": "off"},
    "31c": {"A": "reg", "B": "idx"},
    "35c": {"A": "count", "B": "idx", "C": "reg", "D": "reg", "E": "reg", "F": "reg", "G": "reg"},
    "3rc": {"A": "count", "B": "idx", "C": "first"},
    "51l": {"A": "reg", "B": "lit"},
}

# 寄存器字段的排列顺序
REGISTER_ORDER = "ABCDEFG"


@dataclass(frozen=True)
class Field:
    """布局中的一个字段: unit_shift 为在代码单元内的位置，value_shift 为在字段值内的位置"""

    letter: str
    bits: int
    unit_shift: int
    value_shift: int


@dataclass(frozen=True)
class FormatInfo:
    name: str
    units: Tuple[Tuple[Field, ...], ...]
    widths: Dict[str, int]

    @property
    def size(self) -> int:
        return len(self.units)


def _compile_layout(name: str, layout: str) -> FormatInfo:
    units: List[Tuple[Field, ...]] = []
    widths: Dict[str, int] = {}
    for unit in layout.split():
        fields = []
        unit_shift = 16
        for part in unit.split("|"):
            letters = part.replace("lo", "").replace("hi", "")
            bits = 8 if letters in ("op", "ØØ") else len(letters) * 4
            unit_shift -= bits
            if letters in ("op", "ØØ"):
                fields.append(Field(letters, bits, unit_shift, 0))
                continue
            letter = letters[0]
            fields.append(Field(letter, bits, unit_shift, widths.get(letter, 0)))
            widths[letter] = widths.get(letter, 0) + bits
        units.append(tuple(fields))
    return FormatInfo(name, tuple(units), widths)


FORMATS: Dict[str, FormatInfo] = {
    name: _compile_layout(name, layout) for name, layout in FORMAT_LAYOUTS.items()
}


@dataclass(frozen=True)
class OpInfo:
    """操作码信息"""

    opcode: int
    name: str
    fmt: str
    kind: Optional[str] = None  # string / type / field / method

    @property
    def format(self) -> FormatInfo:
        return FORMATS[self.fmt]

    @property
    def size(self) -> int:
        return FORMATS[self.fmt].size

    @property
    def is_branch(self) -> bool:
        return self.fmt.endswith("t")

    @property
    def is_invoke(self) -> bool:
        return self.name.startswith("invoke-")


def _build_table() -> Dict[int, OpInfo]:
    table: Dict[int, OpInfo] = {}

    def add(op, name, fmt, kind=None):
        table[op] = OpInfo(op, name, fmt, kind)

    plain = [
        (0x00, "nop", "10x"), (0x01, "move", "12x"), (0x02, "move/from16", "22x"),
        (0x03, "move/16", "32x"), (0x04, "move-wide", "12x"), (0x05, "move-wide/from16", "22x"),
        (0x06, "move-wide/16", "32x"), (0x07, "move-object", "12x"),
        (0x08, "move-object/from16", "22x"), (0x09, "move-object/16", "32x"),
        (0x0A, "move-result", "11x"), (0x0B, "move-result-wide", "11x"),
        (0x0C, "move-result-object", "11x"), (0x0D, "move-exception", "11x"),
        (0x0E, "return-void", "10x"), (0x0F, "return", "11x"), (0x10, "return-wide", "11x"),
        (0x11, "return-object", "11x"), (0x12, "const/4", "11n"), (0x13, "const/16", "21s"),
        (0x14, "const", "31i"), (0x15, "const/high16", "21h"), (0x16, "const-wide/16", "21s"),
        (0x17, "const-wide/32", "31i"), (0x18, "const-wide", "51l"),
        (0x19, "const-wide/high16", "21h"), (0x1D, "monitor-enter", "11x"),
        (0x1E, "monitor-exit", "11x"), (0x21, "array-length", "12x"),
        (0x26, "fill-array-data", "31t"), (0x27, "throw", "11x"), (0x28, "goto", "10t"),
        (0x29, "goto/16", "20t"), (0x2A, "goto/32", "30t"), (0x2B, "packed-switch", "31t"),
        (0x2C, "sparse-switch", "31t"),
    ]
    for op, name, fmt in plain:
        add(op, name, fmt)
    add(0x1A, "const-string", "21c", "string")
    add(0x1B, "const-string/jumbo", "31c", "string")
    add(0x1C, "const-class", "21c", "type")
    add(0x1F, "check-cast", "21c", "type")
    add(0x20, "instance-of", "22c", "type")
    add(0x22, "new-instance", "21c", "type")
    add(0x23, "new-array", "22c", "type")
    add(0x24, "filled-new-array", "35c", "type")
    add(0x25, "filled-new-array/range", "3rc", "type")

    for i, name in enumerate(["cmpl-float", "cmpg-float", "cmpl-double", "cmpg-double", "cmp-long"]):
        add(0x2D + i, name, "23x")
    for i, cond in enumerate(["eq", "ne", "lt", "ge", "gt", "le"]):
        add(0x32 + i, f"if-{cond}", "22t")
        add(0x38 + i, f"if-{cond}z", "21t")

    suffixes = ["", "-wide", "-object", "-boolean", "-byte", "-char", "-short"]
    for i, suffix in enumerate(suffixes):
        add(0x44 + i, f"aget{suffix}", "23x")
        add(0x4B + i, f"aput{suffix}", "23x")
        add(0x52 + i, f"iget{suffix}", "22c", "field")
        add(0x59 + i, f"iput{suffix}", "22c", "field")
        add(0x60 + i, f"sget{suffix}", "21c", "field")
        add(0x67 + i, f"sput{suffix}", "21c", "field")

    for i, kind in enumerate(["virtual", "super", "direct", "static", "interface"]):
        add(0x6E + i, f"invoke-{kind}", "35c", "method")
        add(0x74 + i, f"invoke-{kind}/range", "3rc", "method")

    unops = [
        "neg-int", "not-int", "neg-long", "not-long", "neg-float", "neg-double",
        "int-to-long", "int-to-float", "int-to-double", "long-to-int", "long-to-float",
        "long-to-double", "float-to-int", "float-to-long", "float-to-double",
        "double-to-int", "double-to-long", "double-to-float", "int-to-byte",
        "int-to-char", "int-to-short",
    ]
    for i, name in enumerate(unops):
        add(0x7B + i, name, "12x")

    binops = []
    for ty in ("int", "long"):
        binops += [f"{op}-{ty}" for op in ("add", "sub", "mul", "div", "rem", "and", "or", "xor", "shl", "shr", "ushr")]
    for ty in ("float", "double"):
        binops += [f"{op}-{ty}" for op in ("add", "sub", "mul", "div", "rem")]
    for i, name in enumerate(binops):
        add(0x90 + i, name, "23x")
        add(0xB0 + i, f"{name}/2addr", "12x")

    lit16 = ["add-int", "rsub-int", "mul-int", "div-int", "rem-int", "and-int", "or-int", "xor-int"]
    for i, name in enumerate(lit16):
        add(0xD0 + i, name if name == "rsub-int" else f"{name}/lit16", "22s")
    lit8 = lit16 + ["shl-int", "shr-int", "ushr-int"]
    for i, name in enumerate(lit8):
        add(0xD8 + i, f"{name}/lit8", "22b")
    return table


OPCODES: Dict[int, OpInfo] = _build_table()
BY_NAME: Dict[str, OpInfo] = {info.name: info for info in OPCODES.values()}

# 重写与解释器支持的指令子集
SUBSET = frozenset([
    "nop", "const/4", "const/16", "const-string", "move", "move-object",
    "move-result", "move-result-object", "move-exception", "new-instance",
    "invoke-static", "invoke-virtual", "invoke-direct", "throw", "goto", "goto/16",
    "if-eqz", "if-nez", "return", "return-void", "return-object", "add-int/lit8",
])

# 数据载荷伪指令标识
PACKED_SWITCH_PAYLOAD = 0x0100
SPARSE_SWITCH_PAYLOAD = 0x0200
FILL_ARRAY_DATA_PAYLOAD = 0x0300
PAYLOAD_NAMES = {
    PACKED_SWITCH_PAYLOAD: "packed-switch-payload",
    SPARSE_SWITCH_PAYLOAD: "sparse-switch-payload",
    FILL_ARRAY_DATA_PAYLOAD: "fill-array-data-payload",
}

MOVE_RESULTS = frozenset(["move-result", "move-result-wide", "move-result-object"])


def payload_size(units, pos: int) -> int:
    """计算载荷伪指令占用的代码单元数"""
    ident = units[pos]
    if ident == PACKED_SWITCH_PAYLOAD:
        return 4 + units[pos + 1] * 2
    if ident == SPARSE_SWITCH_PAYLOAD:
        return 2 + units[pos + 1] * 4
    width = units[pos + 1]
    count = units[pos + 2] | (units[pos + 3] << 16)
    return 4 + (count * width + 1) // 2
