"""指令编解码

按 opcodes 中的布局表通用地解码/编码所有格式，子集之外的指令同样
被完整解码，作为不透明单元原样携带。
"""

from typing import Callable, Dict, List, Optional, Sequence, Tuple

from ..core.errors import LayoutOverflow, MalformedDex, MalformedIndex, RegisterPressure
from .model import CodeItem, Instruction, Ref
from .opcodes import BY_NAME, FORMAT_ROLES, FORMATS, OPCODES, PAYLOAD_NAMES, payload_size

Resolver = Callable[[str, int], Ref]
Indexer = Callable[[str, Ref], int]

# 各跳转格式允许的偏移范围 (最小, 最大, 是否允许0)
_BRANCH_RANGE = {
    "10t": (-0x80, 0x7F, False),
    "20t": (-0x8000, 0x7FFF, False),
    "30t": (-0x80000000, 0x7FFFFFFF, True),
    "21t": (-0x8000, 0x7FFF, False),
    "22t": (-0x8000, 0x7FFF, False),
    "31t": (-0x80000000, 0x7FFFFFFF, True),
}

_GOTO_LADDER = {"goto": "goto/16", "goto/16": "goto/32"}


def _signed(value: int, bits: int) -> int:
    if value & (1 << (bits - 1)):
        return value - (1 << bits)
    return value


def _fields_of(units: Sequence[int], pos: int, fmt) -> Dict[str, int]:
    values: Dict[str, int] = {}
    for i, unit_fields in enumerate(fmt.units):
        unit = units[pos + i]
        for f in unit_fields:
            if f.letter in ("op", "ØØ"):
                continue
            raw = (unit >> f.unit_shift) & ((1 << f.bits) - 1)
            values[f.letter] = values.get(f.letter, 0) | (raw << f.value_shift)
    return values


def decode_instructions(units: Sequence[int], resolve: Resolver) -> Tuple[List[Instruction], Dict[int, int]]:
    """解码代码单元序列

    Args:
        units: 16位代码单元
        resolve: 把 (kind, index) 解析为符号引用

    Returns:
        (指令列表, 地址 -> 指令下标)
    """
    instructions: List[Instruction] = []
    addr_to_index: Dict[int, int] = {}
    branch_addrs: List[Tuple[int, int]] = []
    pos = 0
    n = len(units)
    while pos < n:
        unit = units[pos]
        addr_to_index[pos] = len(instructions)
        if unit in PAYLOAD_NAMES:
            header = 4 if unit == 0x0300 else 2
            if pos + header > n:
                raise MalformedDex(f"载荷伪指令被截断 @{pos}")
            size = payload_size(units, pos)
            if pos + size > n:
                raise MalformedDex(f"载荷伪指令被截断 @{pos}")
            instructions.append(Instruction(opcode=unit, payload=tuple(units[pos:pos + size])))
            pos += size
            continue

        info = OPCODES.get(unit & 0xFF)
        if info is None:
            raise MalformedDex(f"未知操作码 0x{unit & 0xFF:02x} @{pos}")
        fmt = FORMATS[info.fmt]
        if pos + fmt.size > n:
            raise MalformedDex(f"指令被截断 @{pos}")
        values = _fields_of(units, pos, fmt)
        roles = FORMAT_ROLES[info.fmt]
        insn = Instruction(opcode=info.opcode)

        if info.fmt == "35c":
            count = values["A"]
            if count > 5:
                raise MalformedDex(f"35c参数个数 {count} 超过5 @{pos}")
            insn.registers = tuple(values[letter] for letter in "CDEFG"[:count])
        elif info.fmt == "3rc":
            insn.registers = tuple(range(values["C"], values["C"] + values["A"]))
        else:
            insn.registers = tuple(values[l] for l in "ABC" if roles.get(l) == "reg")
        for letter, role in roles.items():
            if role == "lit":
                insn.literal = _signed(values[letter], fmt.widths[letter])
            elif role == "idx":
                insn.ref = resolve(info.kind, values[letter])
            elif role == "off":
                branch_addrs.append((len(instructions), pos + _signed(values[letter], fmt.widths[letter])))
        instructions.append(insn)
        pos += fmt.size

    for index, target_addr in branch_addrs:
        if target_addr not in addr_to_index:
            raise MalformedDex(f"跳转目标 {target_addr} 不在指令边界上")
        instructions[index].target = addr_to_index[target_addr]
    return instructions, addr_to_index


def _check_range(value: int, lo: int, hi: int, what: str, name: str):
    if not lo <= value <= hi:
        raise LayoutOverflow(f"{name}: {what} {value} 超出范围 [{lo}, {hi}]")


def encode_instruction(insn: Instruction, addr: int, target_addr: Optional[int], index_of: Indexer) -> List[int]:
    """编码一条指令为代码单元列表"""
    if insn.payload is not None:
        return list(insn.payload)
    info = OPCODES[insn.opcode]
    fmt = FORMATS[info.fmt]
    roles = FORMAT_ROLES[info.fmt]
    values: Dict[str, int] = {}

    if info.fmt == "35c":
        if len(insn.registers) > 5:
            raise LayoutOverflow(f"{info.name}: 参数寄存器超过5个")
        values["A"] = len(insn.registers)
        for letter in "CDEFG":
            values[letter] = 0
        for letter, reg in zip("CDEFG", insn.registers):
            if reg > 0xF:
                raise RegisterPressure(f"{info.name}: 寄存器 v{reg} 超出4位编码宽度")
            values[letter] = reg
    elif info.fmt == "3rc":
        regs = insn.registers
        if any(b != a + 1 for a, b in zip(regs, regs[1:])):
            raise MalformedDex(f"{info.name}: 寄存器区间不连续")
        _check_range(len(regs), 0, 0xFF, "参数个数", info.name)
        values["A"] = len(regs)
        values["C"] = regs[0] if regs else 0
        if values["C"] + len(regs) - 1 > 0xFFFF:
            raise RegisterPressure(f"{info.name}: 寄存器超出16位编码宽度")
    else:
        letters = [l for l in "ABC" if roles.get(l) == "reg"]
        if len(letters) != len(insn.registers):
            raise MalformedDex(f"{info.name}: 需要 {len(letters)} 个寄存器，实际 {len(insn.registers)}")
        for letter, reg in zip(letters, insn.registers):
            width = fmt.widths[letter]
            if not 0 <= reg < (1 << width):
                raise RegisterPressure(f"{info.name}: 寄存器 v{reg} 超出{width}位编码宽度")
            values[letter] = reg

    for letter, role in roles.items():
        width = fmt.widths[letter]
        if role == "lit":
            literal = insn.literal or 0
            _check_range(literal, -(1 << (width - 1)), (1 << width) - 1, "立即数", info.name)
            values[letter] = literal & ((1 << width) - 1)
        elif role == "idx":
            index = index_of(info.kind, insn.ref)
            _check_range(index, 0, (1 << width) - 1, "池索引", info.name)
            values[letter] = index
        elif role == "off":
            if target_addr is None:
                raise MalformedDex(f"{info.name}: 缺少跳转目标")
            offset = target_addr - addr
            lo, hi, zero_ok = _BRANCH_RANGE[info.fmt]
            _check_range(offset, lo, hi, "跳转偏移", info.name)
            if offset == 0 and not zero_ok:
                raise LayoutOverflow(f"{info.name}: 跳转偏移不能为0")
            values[letter] = offset & ((1 << width) - 1)

    out = []
    for unit_fields in fmt.units:
        unit = 0
        for f in unit_fields:
            if f.letter == "op":
                part = info.opcode
            elif f.letter == "ØØ":
                part = 0
            else:
                part = (values.get(f.letter, 0) >> f.value_shift) & ((1 << f.bits) - 1)
            unit |= part << f.unit_shift
        out.append(unit)
    return out


def encode_code(code: CodeItem, index_of: Indexer) -> List[int]:
    """编码整个方法体"""
    addrs = code.addresses()
    units: List[int] = []
    for insn, addr in zip(code.instructions, addrs):
        target = addrs[insn.target] if insn.target is not None else None
        units.extend(encode_instruction(insn, addr, target, index_of))
    return units


def branch_fits(fmt: str, offset: int) -> bool:
    lo, hi, zero_ok = _BRANCH_RANGE[fmt]
    return lo <= offset <= hi and (offset != 0 or zero_ok)


def relax_branches(code: CodeItem) -> bool:
    """把放不下偏移的 goto 逐级放宽为 goto/16、goto/32

    Returns:
        是否改动了指令

    Raises:
        LayoutOverflow: 条件跳转的偏移超出格式范围
    """
    changed = False
    while True:
        addrs = code.addresses()
        grown = False
        for i, insn in enumerate(code.instructions):
            if insn.target is None or insn.payload is not None:
                continue
            info = OPCODES[insn.opcode]
            if branch_fits(info.fmt, addrs[insn.target] - addrs[i]):
                continue
            wider = _GOTO_LADDER.get(info.name)
            if wider is None:
                raise LayoutOverflow(f"{info.name} @{i}: 跳转偏移超出格式范围")
            insn.opcode = BY_NAME[wider].opcode
            grown = True
        if not grown:
            return changed
        changed = True


def check_registers(code: CodeItem):
    """检查所有寄存器操作数是否放得进各自的编码宽度"""
    for insn in code.instructions:
        if insn.payload is not None:
            continue
        info = OPCODES[insn.opcode]
        fmt = FORMATS[info.fmt]
        if info.fmt == "35c":
            limit = 0xF
            regs = insn.registers
        elif info.fmt == "3rc":
            limit = 0xFFFF
            regs = insn.registers[-1:]
        else:
            letters = [l for l in "ABC" if FORMAT_ROLES[info.fmt].get(l) == "reg"]
            for letter, reg in zip(letters, insn.registers):
                if reg >= (1 << fmt.widths[letter]):
                    raise RegisterPressure(f"{info.name}: 寄存器 v{reg} 超出{fmt.widths[letter]}位编码宽度")
            continue
        for reg in regs:
            if reg > limit:
                raise RegisterPressure(f"{info.name}: 寄存器 v{reg} 超出编码宽度")


def resolver_for(strings, types, protos, fields, methods) -> Resolver:
    """基于已解析的池构造索引解析函数"""
    pools = {"string": strings, "type": types, "field": fields, "method": methods, "proto": protos}

    def resolve(kind: str, index: int) -> Ref:
        pool = pools[kind]
        if not 0 <= index < len(pool):
            raise MalformedIndex(f"{kind}索引 {index} 越界 (池大小 {len(pool)})")
        return pool[index]

    return resolve
