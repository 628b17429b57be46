"""mdsm汇编器

语法是smali的一个严格子集::

    .class public Lapp/Main;
    .super Ljava/lang/Object;
    .source "Main.java"

    .method public static main()V
        .registers 1
        .try :L0 :L1 catch Ljava/io/IOException; :L2
        :L0
        return-void
        :L1
        :L2
        ...
    .end method

寄存器只能写作 ``v0`` 到 ``v255``；字符串常量使用JSON字符串语法；
``#`` 到行尾为注释。
"""

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from loguru import logger

from ..core.config import get_config
from ..core.errors import AsmSyntaxError, DuplicateLabel, UndefinedLabel, UnknownOpcode
from ..dex.code import relax_branches
from ..dex.model import (
    ACC_ABSTRACT,
    ACC_CONSTRUCTOR,
    ACC_NATIVE,
    ACC_STATIC,
    ClassDef,
    CodeItem,
    DexFile,
    DexHeader,
    EncodedField,
    EncodedMethod,
    FieldRef,
    Handler,
    Instruction,
    MethodRef,
    TryItem,
    sort_members,
)
from ..dex.opcodes import BY_NAME, FORMAT_ROLES, FORMATS, REGISTER_ORDER, SUBSET
from ..dex.writer import sync_pools
from .syntax import ACCESS_FLAGS, operand_kinds

MAX_REGISTER = 255

_REG_RE = re.compile(r"^v(\d+)$")
_LABEL_RE = re.compile(r"^:([A-Za-z_][\w$]*)$")
_DESC_RE = re.compile(r"^\[*(?:[ZBSCIJFD]|L[^;\s]+;)$")
_INT_RE = re.compile(r"^[+-]?(?:0[xX][0-9a-fA-F]+|\d+)$")
_FLAG_RE = re.compile(r"^0x[0-9a-fA-F]+$")

Token = Tuple[str, int]


def _strip_comment(line: str) -> str:
    in_string = False
    escaped = False
    for i, ch in enumerate(line):
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
        elif ch == '"':
            in_string = True
        elif ch == "#":
            return line[:i]
    return line


def _split(text: str, column: int, separator: str = ",") -> List[Token]:
    """按顶层分隔符切分，返回 (片段, 1起始列号)；引号和花括号内部不切分"""
    parts: List[Token] = []
    start = 0
    depth = 0
    in_string = False
    escaped = False

    def push(end: int):
        raw = text[start:end]
        stripped = raw.strip()
        if stripped:
            parts.append((stripped, column + start + (len(raw) - len(raw.lstrip()))))
        elif separator == ",":
            raise AsmSyntaxError("缺少操作数", 0, column + start)

    for i, ch in enumerate(text):
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            in_string = True
        elif ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
        elif depth == 0 and (ch == separator or (separator == " " and ch.isspace())):
            push(i)
            start = i + 1
    if in_string:
        raise AsmSyntaxError("字符串没有结束", 0, column + start)
    if text[start:].strip() or (separator == "," and parts):
        push(len(text))
    return parts


@dataclass
class _Fixup:
    index: int
    label: str
    line: int
    column: int


@dataclass
class _TryDirective:
    start: str
    end: str
    exc_type: Optional[str]
    handler: str
    line: int
    column: int


@dataclass
class _MethodBuilder:
    ref: MethodRef
    access_flags: int
    line: int
    registers: Optional[int] = None
    instructions: List[Instruction] = field(default_factory=list)
    labels: Dict[str, int] = field(default_factory=dict)
    fixups: List[_Fixup] = field(default_factory=list)
    tries: List[_TryDirective] = field(default_factory=list)

    @property
    def ins_size(self) -> int:
        return self.ref.arg_words + (0 if self.access_flags & ACC_STATIC else 1)


class Assembler:
    """把mdsm源文本汇编为DexFile"""

    def __init__(self, text: str, version: Optional[str] = None):
        self.lines = text.splitlines()
        self.version = version or get_config().dex_version
        self.classes: List[ClassDef] = []
        self.cls: Optional[ClassDef] = None
        self.method: Optional[_MethodBuilder] = None
        self.lineno = 0

    def error(self, message: str, column: int = 1, kind=AsmSyntaxError):
        return kind(message, self.lineno, column)

    def assemble(self) -> DexFile:
        for self.lineno, raw in enumerate(self.lines, start=1):
            line = _strip_comment(raw)
            body = line.strip()
            if not body:
                continue
            column = len(line) - len(line.lstrip()) + 1
            try:
                self.statement(body, column)
            except AsmSyntaxError as exc:
                if exc.line == 0:
                    raise AsmSyntaxError(str(exc), self.lineno, exc.column) from None
                raise
        if self.method is not None:
            raise AsmSyntaxError("方法没有以 .end method 结束", self.method.line, 1)
        dex = DexFile(header=DexHeader(version=self.version), class_defs=self.classes)
        for cls in dex.class_defs:
            sort_members(cls)
        sync_pools(dex)
        logger.debug("汇编完成: {} 个类", len(dex.class_defs))
        return dex

    def statement(self, body: str, column: int):
        if body.startswith("."):
            head, _, rest = body.partition(" ")
            handler = getattr(self, "directive_" + head[1:].replace("-", "_"), None)
            if handler is None:
                raise self.error(f"未知的指令 {head}", column)
            handler(rest.strip(), column + len(head) + 1)
        elif body.startswith(":"):
            self.label(body, column)
        else:
            self.instruction(body, column)

    # 类与成员

    def _flags(self, words: List[Token]) -> int:
        flags = 0
        for word, col in words:
            if word in ACCESS_FLAGS:
                flags |= ACCESS_FLAGS[word]
            elif _FLAG_RE.match(word):
                flags |= int(word, 16)
            else:
                raise self.error(f"未知的访问标志 {word!r}", col)
        return flags

    def _descriptor(self, token: Token) -> str:
        text, col = token
        if not _DESC_RE.match(text):
            raise self.error(f"无效的类型描述符 {text!r}", col)
        return text

    def _need_class(self, column: int) -> ClassDef:
        if self.cls is None:
            raise self.error("指令出现在 .class 之前", column)
        if self.method is not None:
            raise self.error("上一个方法没有结束", column)
        return self.cls

    def directive_class(self, rest: str, column: int):
        if self.method is not None:
            raise self.error("上一个方法没有结束", column)
        words = _split(rest, column, " ")
        if not words:
            raise self.error("缺少类名", column)
        descriptor = self._descriptor(words[-1])
        if not descriptor.startswith("L"):
            raise self.error(f"类名必须是对象类型: {descriptor}", words[-1][1])
        if any(cls.type == descriptor for cls in self.classes):
            raise self.error(f"重复定义的类 {descriptor}", words[-1][1])
        superclass = None if descriptor == "Ljava/lang/Object;" else "Ljava/lang/Object;"
        self.cls = ClassDef(type=descriptor, access_flags=self._flags(words[:-1]), superclass=superclass)
        self.classes.append(self.cls)

    def directive_super(self, rest: str, column: int):
        cls = self._need_class(column)
        cls.superclass = self._descriptor((rest, column))

    def directive_implements(self, rest: str, column: int):
        cls = self._need_class(column)
        cls.interfaces.append(self._descriptor((rest, column)))

    def directive_source(self, rest: str, column: int):
        cls = self._need_class(column)
        cls.source_file = self._string((rest, column))

    def directive_field(self, rest: str, column: int):
        cls = self._need_class(column)
        words = _split(rest, column, " ")
        if not words:
            raise self.error("缺少字段声明", column)
        text, col = words[-1]
        try:
            ref = FieldRef.parse(f"{cls.type}->{text}")
        except ValueError:
            raise self.error(f"无效的字段声明 {text!r}", col) from None
        if any(f.ref == ref for f in cls.fields):
            raise self.error(f"重复定义的字段 {ref}", col)
        cls.fields.append(EncodedField(ref, self._flags(words[:-1])))

    def directive_method(self, rest: str, column: int):
        cls = self._need_class(column)
        words = _split(rest, column, " ")
        if not words:
            raise self.error("缺少方法声明", column)
        text, col = words[-1]
        try:
            ref = MethodRef.parse(f"{cls.type}->{text}")
        except ValueError:
            raise self.error(f"无效的方法声明 {text!r}", col) from None
        if any(m.ref == ref for m in cls.methods):
            raise self.error(f"重复定义的方法 {ref}", col)
        flags = self._flags(words[:-1])
        if ref.name in ("<init>", "<clinit>"):
            flags |= ACC_CONSTRUCTOR
        self.method = _MethodBuilder(ref, flags, self.lineno)

    def directive_registers(self, rest: str, column: int):
        method = self._need_method(column)
        if method.registers is not None:
            raise self.error("重复的 .registers", column)
        if method.instructions or method.labels:
            raise self.error(".registers 必须出现在方法体之前", column)
        if not rest.isdigit():
            raise self.error(f"无效的寄存器数 {rest!r}", column)
        count = int(rest)
        if count > MAX_REGISTER + 1:
            raise self.error(f"寄存器数 {count} 超过 {MAX_REGISTER + 1}", column)
        if count < method.ins_size:
            raise self.error(f"寄存器数 {count} 小于参数所需的 {method.ins_size}", column)
        method.registers = count

    def directive_try(self, rest: str, column: int):
        method = self._need_method(column)
        words = _split(rest, column, " ")
        if len(words) != 5 or words[2][0] != "catch":
            raise self.error("格式应为 .try :start :end catch Ltype; :handler", column)
        start, end, _, exc, handler = words
        exc_type = self._descriptor(exc)
        method.tries.append(_TryDirective(
            self._label_name(start), self._label_name(end), exc_type,
            self._label_name(handler), self.lineno, column,
        ))

    def directive_catchall(self, rest: str, column: int):
        method = self._need_method(column)
        words = _split(rest, column, " ")
        if len(words) != 3:
            raise self.error("格式应为 .catchall :start :end :handler", column)
        start, end, handler = (self._label_name(w) for w in words)
        method.tries.append(_TryDirective(start, end, None, handler, self.lineno, column))

    def directive_end(self, rest: str, column: int):
        if rest != "method":
            raise self.error(f"未知的 .end {rest}", column)
        method = self._need_method(column)
        self.cls.methods.append(self.finish(method))
        self.method = None

    # 方法体

    def _need_method(self, column: int) -> _MethodBuilder:
        if self.method is None:
            raise self.error("指令出现在方法之外", column)
        return self.method

    def _label_name(self, token: Token) -> str:
        match = _LABEL_RE.match(token[0])
        if match is None:
            raise self.error(f"无效的标签 {token[0]!r}", token[1])
        return match.group(1)

    def label(self, body: str, column: int):
        method = self._need_method(column)
        name = self._label_name((body, column))
        if name in method.labels:
            raise self.error(f"标签 :{name} 重复定义", column, DuplicateLabel)
        method.labels[name] = len(method.instructions)

    def _string(self, token: Token) -> str:
        text, col = token
        if not text.startswith('"'):
            raise self.error(f"需要字符串常量: {text!r}", col)
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            raise self.error(f"无效的字符串常量 {text}", col) from None
        if not isinstance(value, str):
            raise self.error(f"需要字符串常量: {text!r}", col)
        return value

    def _register(self, token: Token, width: int) -> int:
        text, col = token
        match = _REG_RE.match(text)
        if match is None:
            raise self.error(f"无效的寄存器 {text!r}", col)
        reg = int(match.group(1))
        if reg > MAX_REGISTER or reg >= (1 << width):
            raise self.error(f"寄存器 {text} 超出该指令的{width}位编码宽度", col)
        if reg >= self.method.registers:
            raise self.error(f"寄存器 {text} 超出 .registers {self.method.registers}", col)
        return reg

    def _literal(self, token: Token, width: int) -> int:
        text, col = token
        if not _INT_RE.match(text):
            raise self.error(f"无效的立即数 {text!r}", col)
        value = int(text, 16) if "x" in text.lower() else int(text, 10)
        lo, hi = -(1 << (width - 1)), (1 << (width - 1)) - 1
        if not lo <= value <= hi:
            raise self.error(f"立即数 {value} 超出范围 [{lo}, {hi}]", col)
        return value

    def _ref(self, kind: str, token: Token):
        text, col = token
        if kind == "string":
            return self._string(token)
        if kind == "type":
            return self._descriptor(token)
        try:
            return MethodRef.parse(text) if kind == "method" else FieldRef.parse(text)
        except ValueError:
            raise self.error(f"无效的{kind}引用 {text!r}", col) from None

    def instruction(self, body: str, column: int):
        method = self._need_method(column)
        mnemonic, _, rest = body.partition(" ")
        if mnemonic not in SUBSET:
            raise self.error(f"不支持的操作码 {mnemonic}", column, UnknownOpcode)
        if method.registers is None:
            raise self.error("方法体之前缺少 .registers", column)
        info = BY_NAME[mnemonic]
        fmt = FORMATS[info.fmt]
        kinds = operand_kinds(info.fmt)
        operands = _split(rest, column + len(mnemonic) + 1) if rest.strip() else []
        if len(operands) != len(kinds):
            raise self.error(f"{mnemonic} 需要 {len(kinds)} 个操作数，实际 {len(operands)} 个", column)

        reg_letters = [l for l in REGISTER_ORDER if FORMAT_ROLES[info.fmt].get(l) == "reg"]
        lit_letter = next((l for l, r in FORMAT_ROLES[info.fmt].items() if r == "lit"), None)
        insn = Instruction(info.opcode)
        registers = []
        for kind, token in zip(kinds, operands):
            if kind == "reg":
                registers.append(self._register(token, fmt.widths[reg_letters[len(registers)]]))
            elif kind == "reglist":
                text, col = token
                if not (text.startswith("{") and text.endswith("}")):
                    raise self.error(f"需要寄存器列表: {text!r}", col)
                items = _split(text[1:-1], col + 1) if text[1:-1].strip() else []
                if len(items) > 5:
                    raise self.error("寄存器列表最多5个寄存器", col)
                registers.extend(self._register(item, 4) for item in items)
            elif kind == "lit":
                insn.literal = self._literal(token, fmt.widths[lit_letter])
            elif kind == "ref":
                insn.ref = self._ref(info.kind, token)
            elif kind == "label":
                method.fixups.append(_Fixup(len(method.instructions), self._label_name(token), self.lineno, token[1]))
        insn.registers = tuple(registers)

        if info.is_invoke:
            expected = insn.ref.arg_words + (0 if mnemonic == "invoke-static" else 1)
            if len(registers) != expected:
                raise self.error(f"{insn.ref} 需要 {expected} 个参数寄存器，实际 {len(registers)} 个", column)
        method.instructions.append(insn)

    def _resolve(self, method: _MethodBuilder, name: str, line: int, column: int) -> int:
        if name not in method.labels:
            raise UndefinedLabel(f"未定义的标签 :{name}", line, column)
        return method.labels[name]

    def finish(self, method: _MethodBuilder) -> EncodedMethod:
        """解析标签、组装try表并生成方法"""
        self.lineno = method.line
        bodiless = method.access_flags & (ACC_ABSTRACT | ACC_NATIVE)
        if bodiless:
            if method.registers is not None or method.instructions:
                raise self.error(f"{method.ref} 是abstract/native方法，不能有方法体")
            return EncodedMethod(method.ref, method.access_flags)
        if not method.instructions:
            raise self.error(f"{method.ref} 没有指令")

        n = len(method.instructions)
        for fixup in method.fixups:
            target = self._resolve(method, fixup.label, fixup.line, fixup.column)
            if target >= n:
                raise AsmSyntaxError(f"跳转目标 :{fixup.label} 位于方法末尾", fixup.line, fixup.column)
            method.instructions[fixup.index].target = target

        tries: Dict[Tuple[int, int], TryItem] = {}
        for directive in method.tries:
            start = self._resolve(method, directive.start, directive.line, directive.column)
            end = self._resolve(method, directive.end, directive.line, directive.column)
            handler = self._resolve(method, directive.handler, directive.line, directive.column)
            if start >= end:
                raise AsmSyntaxError("try区间为空", directive.line, directive.column)
            if handler >= n:
                raise AsmSyntaxError(f"处理标签 :{directive.handler} 位于方法末尾", directive.line, directive.column)
            item = tries.setdefault((start, end), TryItem(start, end))
            if item.catch_all is not None:
                raise AsmSyntaxError("catch-all之后不能再有处理项", directive.line, directive.column)
            if any(h.exc_type == directive.exc_type for h in item.handlers):
                raise AsmSyntaxError(f"重复的异常类型 {directive.exc_type}", directive.line, directive.column)
            item.handlers.append(Handler(directive.exc_type, handler))
        ordered = sorted(tries.values(), key=lambda t: t.start)
        for before, after in zip(ordered, ordered[1:]):
            if after.start < before.end:
                raise self.error(f"try区间重叠: [{before.start}, {before.end}) 与 [{after.start}, {after.end})")

        outs = max((len(insn.registers) for insn in method.instructions if insn.is_invoke), default=0)
        code = CodeItem(method.registers, method.ins_size, outs, method.instructions, ordered)
        relax_branches(code)
        return EncodedMethod(method.ref, method.access_flags, code)


def assemble(text: str, *, version: Optional[str] = None) -> DexFile:
    """汇编mdsm源文本

    Args:
        text: 源文本
        version: DEX版本，默认取配置中的 dex_version

    Returns:
        DexFile模型，各池已排序

    Raises:
        AsmSyntaxError, UnknownOpcode, UndefinedLabel, DuplicateLabel
    """
    return Assembler(text, version).assemble()


def assemble_file(path: Union[str, Path], *, version: Optional[str] = None) -> DexFile:
    path = Path(path)
    return assemble(path.read_text(encoding="utf-8"), version=version)
