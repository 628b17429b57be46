"""mdsm反汇编器"""

import json
from typing import Dict, List

from ..core.errors import OpaqueRegion
from ..dex.model import ACC_CONSTRUCTOR, ClassDef, CodeItem, DexFile, EncodedMethod, Instruction
from ..dex.opcodes import OPCODES
from .syntax import flags_to_text, operand_kinds

INDENT = "    "


def _label_names(code: CodeItem) -> Dict[int, str]:
    """按地址顺序为所有被引用的指令下标命名 L0, L1, ..."""
    targets = set()
    for insn in code.instructions:
        if insn.target is not None:
            targets.add(insn.target)
    for item in code.tries:
        targets.update((item.start, item.end))
        targets.update(h.target for h in item.handlers)
    return {index: f"L{n}" for n, index in enumerate(sorted(targets))}


def _operand(kind: str, insn: Instruction, labels: Dict[int, str], reg_iter) -> str:
    if kind == "reg":
        return f"v{next(reg_iter)}"
    if kind == "reglist":
        return "{" + ", ".join(f"v{r}" for r in insn.registers) + "}"
    if kind == "lit":
        return str(insn.literal)
    if kind == "label":
        return f":{labels[insn.target]}"
    if OPCODES[insn.opcode].kind == "string":
        return json.dumps(insn.ref, ensure_ascii=False)
    return str(insn.ref)


def format_instruction(insn: Instruction, labels: Dict[int, str]) -> str:
    """格式化一条子集指令"""
    info = OPCODES[insn.opcode]
    reg_iter = iter(insn.registers)
    operands = [_operand(kind, insn, labels, reg_iter) for kind in operand_kinds(info.fmt)]
    return info.name + (" " + ", ".join(operands) if operands else "")


def _flags_prefix(flags: int, context: str, drop: int = 0) -> str:
    words = flags_to_text(flags & ~drop, context)
    return " ".join(words) + " " if words else ""


def disassemble_method(method: EncodedMethod) -> List[str]:
    name_part = f"{method.ref.name}{method.ref.proto.descriptor}"
    # <init>/<clinit> 的 constructor 标志由汇编器自动补上
    drop = ACC_CONSTRUCTOR if method.ref.name in ("<init>", "<clinit>") else 0
    lines = [f".method {_flags_prefix(method.access_flags, 'method', drop)}{name_part}"]
    code = method.code
    if code is not None:
        for index, insn in enumerate(code.instructions):
            if insn.opaque:
                raise OpaqueRegion(f"{method.ref} @{index}: 不透明指令 {insn.name}")
        labels = _label_names(code)
        lines.append(f"{INDENT}.registers {code.registers_size}")
        for item in code.tries:
            start, end = labels[item.start], labels[item.end]
            for handler in item.handlers:
                if handler.exc_type is None:
                    lines.append(f"{INDENT}.catchall :{start} :{end} :{labels[handler.target]}")
                else:
                    lines.append(
                        f"{INDENT}.try :{start} :{end} catch {handler.exc_type} :{labels[handler.target]}"
                    )
        for index, insn in enumerate(code.instructions):
            if index in labels:
                lines.append(f"{INDENT}:{labels[index]}")
            lines.append(INDENT + format_instruction(insn, labels))
        end = len(code.instructions)
        if end in labels:
            lines.append(f"{INDENT}:{labels[end]}")
    lines.append(".end method")
    return lines


def disassemble_class(cls: ClassDef) -> List[str]:
    lines = [f".class {_flags_prefix(cls.access_flags, 'class')}{cls.type}"]
    if cls.superclass is not None:
        lines.append(f".super {cls.superclass}")
    if cls.source_file is not None:
        lines.append(f".source {json.dumps(cls.source_file)}")
    for iface in cls.interfaces:
        lines.append(f".implements {iface}")
    if cls.fields:
        lines.append("")
    for fld in cls.fields:
        lines.append(f".field {_flags_prefix(fld.access_flags, 'field')}{fld.ref.name}:{fld.ref.type}")
    for method in cls.methods:
        lines.append("")
        lines.extend(disassemble_method(method))
    return lines


def disassemble(dex: DexFile) -> str:
    """把只含子集指令的DexFile转为mdsm源文本

    Raises:
        OpaqueRegion: 方法体中含有子集之外的指令
    """
    blocks = ["\n".join(disassemble_class(cls)) for cls in dex.class_defs]
    return "\n\n".join(blocks) + ("\n" if blocks else "")
