"""指令重定位

在方法体中插入指令并相应地移动跳转目标、try区间和处理地址。
参数寄存器位于寄存器帧的最高端，扩大帧时它们整体上移。
"""

import copy
from typing import List, Sequence

from ..core.errors import LayoutOverflow, RegisterPressure, UnsupportedRegion
from ..dex.code import check_registers, relax_branches
from ..dex.model import CodeItem, Instruction
from ..dex.opcodes import MOVE_RESULTS, OPCODES

_WIDE_MARKERS = ("wide", "long", "double")
_PAYLOAD_USERS = frozenset(["packed-switch", "sparse-switch", "fill-array-data"])

ANCHORS = ("after", "before")


def remap_register(reg: int, locals_size: int, extra: int) -> int:
    """参数寄存器 (reg >= locals_size) 上移 extra 个位置"""
    return reg + extra if reg >= locals_size else reg


def _check_boundary(code: CodeItem):
    # 跨越局部/参数边界的寄存器对在上移后会被拆开
    boundary = code.locals_size - 1
    for index, insn in enumerate(code.instructions):
        if boundary < 0 or boundary not in insn.registers:
            continue
        if insn.is_invoke:
            if _wide_argument_at(insn, boundary):
                raise UnsupportedRegion(f"@{index}: 宽参数跨越参数寄存器边界")
        elif any(marker in insn.name for marker in _WIDE_MARKERS):
            raise UnsupportedRegion(f"@{index}: 宽寄存器对跨越参数寄存器边界")


def _wide_argument_at(insn: Instruction, reg: int) -> bool:
    ref = insn.ref
    words = [] if insn.name.startswith("invoke-static") else [False]
    for param in ref.proto.parameters:
        words.extend([True, False] if param in ("J", "D") else [False])
    return any(wide and r == reg for r, wide in zip(insn.registers, words))


class Relocator:
    """在方法体的一份副本上连续插入指令

    每次插入都立即移动跳转目标、try区间和处理地址；分支放宽和寄存器宽度检查
    推迟到 ``finish``，整个方法只做一次。
    """

    def __init__(self, code: CodeItem):
        self.code = copy.deepcopy(code)
        self.changed = False
        for index, insn in enumerate(self.code.instructions):
            if insn.payload is not None or OPCODES[insn.opcode].name in _PAYLOAD_USERS:
                raise UnsupportedRegion(f"@{index}: 方法含有数据载荷，无法重定位")

    def grow(self, extra_regs: int) -> "Relocator":
        """新增 extra_regs 个局部寄存器，参数寄存器整体上移"""
        if not extra_regs:
            return self
        code = self.code
        _check_boundary(code)
        locals_size = code.locals_size
        for insn in code.instructions:
            insn.registers = tuple(remap_register(r, locals_size, extra_regs) for r in insn.registers)
        code.registers_size += extra_regs
        if code.registers_size > 0xFFFF:
            raise RegisterPressure(f"寄存器数 {code.registers_size} 超过65535")
        check_registers(code)
        self.changed = True
        return self

    def insert(self, insert_at: int, injected: Sequence[Instruction], anchor: str = "after") -> "Relocator":
        """在 insert_at 处插入指令，injected 的寄存器和跳转目标按插入后的坐标给出"""
        if anchor not in ANCHORS:
            raise ValueError(f"未知的anchor: {anchor}")
        code = self.code
        if not 0 <= insert_at <= len(code.instructions):
            raise UnsupportedRegion(f"插入位置 {insert_at} 越界")
        count = len(injected)
        if not count:
            return self
        if insert_at < len(code.instructions):
            following = code.instructions[insert_at]
            if following.name in MOVE_RESULTS or following.name == "move-exception":
                raise UnsupportedRegion(f"@{insert_at}: 不能在 {following.name} 之前插入指令")

        def shift(index: int) -> int:
            if index > insert_at or (index == insert_at and anchor == "after"):
                return index + count
            return index

        for insn in code.instructions:
            if insn.target is not None:
                insn.target = shift(insn.target)
        for item in code.tries:
            item.start = shift(item.start)
            if item.end > insert_at:
                item.end += count
            for handler in item.handlers:
                handler.target = shift(handler.target)

        new_code: List[Instruction] = [copy.deepcopy(insn) for insn in injected]
        code.instructions[insert_at:insert_at] = new_code
        code.outs_size = max([code.outs_size] + [len(insn.registers) for insn in new_code if insn.is_invoke])
        self.changed = True
        return self

    def finish(self) -> CodeItem:
        """放宽分支并检查寄存器宽度，返回新的方法体"""
        code = self.code
        if not self.changed:
            return code
        # 调试信息中的地址和寄存器都已失效
        code.debug_info = None
        try:
            relax_branches(code)
        except LayoutOverflow as exc:
            raise UnsupportedRegion(str(exc)) from exc
        check_registers(code)
        return code


def relocate(code: CodeItem, insert_at: int, injected: Sequence[Instruction], extra_regs: int = 0,
             *, anchor: str = "after") -> CodeItem:
    """在 insert_at 处插入指令并扩大寄存器帧

    Args:
        code: 原方法体，不会被修改
        insert_at: 插入位置（指令下标，可以等于指令数）
        injected: 要插入的指令，寄存器和跳转目标都已按结果坐标给出
        extra_regs: 新增的局部寄存器数
        anchor: 指向 insert_at 的跳转、try起点和处理地址的去向；
            ``"after"`` 继续指向原指令，``"before"`` 改为指向插入的代码

    Returns:
        新的CodeItem

    Raises:
        RegisterPressure: 上移后的寄存器放不进指令的编码宽度
        UnsupportedRegion: 方法体无法安全重定位
    """
    if anchor not in ANCHORS:
        raise ValueError(f"未知的anchor: {anchor}")
    if not 0 <= insert_at <= len(code.instructions):
        raise UnsupportedRegion(f"插入位置 {insert_at} 越界")
    if not injected and not extra_regs:
        return copy.deepcopy(code)
    return Relocator(code).grow(extra_regs).insert(insert_at, injected, anchor).finish()
