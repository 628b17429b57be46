"""DEX内存模型

模型中的引用都是符号化的（字符串、类型描述符、FieldRef/MethodRef），
跳转目标和异常处理地址是指令下标；池的排序和地址在写出时重新计算。
"""

import re
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple, Union

from ..core.errors import MalformedDex
from .opcodes import FORMATS, OPCODES, PAYLOAD_NAMES, SUBSET, OpInfo

ACC_PUBLIC = 0x1
ACC_PRIVATE = 0x2
ACC_STATIC = 0x8
ACC_FINAL = 0x10
ACC_NATIVE = 0x100
ACC_INTERFACE = 0x200
ACC_ABSTRACT = 0x400
ACC_CONSTRUCTOR = 0x10000

NO_INDEX = 0xFFFFFFFF

_SHORTY = {"V": "V", "Z": "Z", "B": "B", "S": "S", "C": "C", "I": "I", "J": "J", "F": "F", "D": "D"}
_METHOD_RE = re.compile(r"^(\[*L[^;]+;|\[+[ZBSCIJFD])->([^(]+)\(([^)]*)\)(\S+)$")
_FIELD_RE = re.compile(r"^(L[^;]+;)->([^:]+):(\S+)$")
_TYPE_RE = re.compile(r"\[*(?:[ZBSCIJFDV]|L[^;]+;)")


def string_key(value: str) -> bytes:
    """字符串池排序键：UTF-16代码单元顺序"""
    return value.encode("utf-16-be", "surrogatepass")


def split_descriptors(text: str) -> Tuple[str, ...]:
    """把连续的类型描述符拆成元组，例如 ``"ILjava/lang/String;"``"""
    result = []
    pos = 0
    while pos < len(text):
        match = _TYPE_RE.match(text, pos)
        if match is None:
            raise ValueError(f"无效的类型描述符: {text!r}")
        result.append(match.group(0))
        pos = match.end()
    return tuple(result)


def shorty_char(descriptor: str) -> str:
    return _SHORTY.get(descriptor, "L")


def is_wide(descriptor: str) -> bool:
    return descriptor in ("J", "D")


def package_of(descriptor: str) -> str:
    """由类型描述符得到点分包名，``Lcom/ads/x/Foo;`` -> ``com.ads.x``"""
    name = descriptor.lstrip("[")
    if name.startswith("L") and name.endswith(";"):
        name = name[1:-1]
    head, _, _ = name.rpartition("/")
    return head.replace("/", ".")


@dataclass(frozen=True, order=False)
class ProtoRef:
    """方法原型"""

    return_type: str
    parameters: Tuple[str, ...] = ()

    @property
    def shorty(self) -> str:
        return shorty_char(self.return_type) + "".join(shorty_char(p) for p in self.parameters)

    @property
    def descriptor(self) -> str:
        return f"({''.join(self.parameters)}){self.return_type}"

    def sort_key(self):
        return (string_key(self.return_type), tuple(string_key(p) for p in self.parameters))

    def __str__(self):
        return self.descriptor


@dataclass(frozen=True)
class FieldRef:
    """字段引用"""

    class_type: str
    name: str
    type: str

    @classmethod
    def parse(cls, text: str) -> "FieldRef":
        match = _FIELD_RE.match(text.strip())
        if match is None:
            raise ValueError(f"无效的字段签名: {text!r}")
        return cls(match.group(1), match.group(2), match.group(3))

    def sort_key(self):
        return (string_key(self.class_type), string_key(self.name), string_key(self.type))

    def __str__(self):
        return f"{self.class_type}->{self.name}:{self.type}"


@dataclass(frozen=True)
class MethodRef:
    """方法引用，字符串形式为 ``Lapi/Gps;->getLocation()I``"""

    class_type: str
    name: str
    proto: ProtoRef

    @classmethod
    def parse(cls, text: str) -> "MethodRef":
        match = _METHOD_RE.match(text.strip())
        if match is None:
            raise ValueError(f"无效的方法签名: {text!r}")
        class_type, name, params, ret = match.groups()
        if len(split_descriptors(ret)) != 1:
            raise ValueError(f"无效的返回类型: {text!r}")
        return cls(class_type, name, ProtoRef(ret, split_descriptors(params)))

    @property
    def arg_words(self) -> int:
        """不含接收者的参数寄存器数"""
        return sum(2 if is_wide(p) else 1 for p in self.proto.parameters)

    def sort_key(self):
        return (string_key(self.class_type), string_key(self.name), self.proto.sort_key())

    def __str__(self):
        return f"{self.class_type}->{self.name}{self.proto.descriptor}"


Ref = Union[str, FieldRef, MethodRef]


@dataclass
class Instruction:
    """一条解码后的指令

    registers 按格式的寄存器字段顺序排列；/range 指令展开为完整的寄存器列表。
    target 是目标指令在方法体中的下标。载荷伪指令的 opcode 为其标识值，
    payload 保存完整的原始代码单元。
    """

    opcode: int
    registers: Tuple[int, ...] = ()
    literal: Optional[int] = None
    ref: Optional[Ref] = None
    target: Optional[int] = None
    payload: Optional[Tuple[int, ...]] = None

    @property
    def info(self) -> Optional[OpInfo]:
        return OPCODES.get(self.opcode)

    @property
    def name(self) -> str:
        if self.payload is not None:
            return PAYLOAD_NAMES[self.opcode]
        return OPCODES[self.opcode].name

    @property
    def size(self) -> int:
        if self.payload is not None:
            return len(self.payload)
        return FORMATS[OPCODES[self.opcode].fmt].size

    @property
    def opaque(self) -> bool:
        return self.payload is not None or self.name not in SUBSET

    @property
    def is_invoke(self) -> bool:
        return self.payload is None and OPCODES[self.opcode].is_invoke


@dataclass
class Handler:
    """异常处理项，exc_type 为 None 表示 catch-all"""

    exc_type: Optional[str]
    target: int


@dataclass
class TryItem:
    """try区间 [start, end)，以指令下标表示"""

    start: int
    end: int
    handlers: List[Handler] = field(default_factory=list)

    @property
    def catch_all(self) -> Optional[Handler]:
        if self.handlers and self.handlers[-1].exc_type is None:
            return self.handlers[-1]
        return None


@dataclass
class DebugInfo:
    """符号化的调试信息流

    ops 元素形如 ``("advance_pc", 3)``、``("start_local", reg, name, type)``、
    ``("set_file", name)``、``("special", opcode)``。
    """

    line_start: int
    parameter_names: List[Optional[str]] = field(default_factory=list)
    ops: List[Tuple] = field(default_factory=list)


@dataclass
class CodeItem:
    """方法体"""

    registers_size: int
    ins_size: int
    outs_size: int
    instructions: List[Instruction] = field(default_factory=list)
    tries: List[TryItem] = field(default_factory=list)
    debug_info: Optional[DebugInfo] = None

    @property
    def locals_size(self) -> int:
        return self.registers_size - self.ins_size

    def addresses(self) -> List[int]:
        """每条指令的代码单元地址，末尾附加总长度"""
        result = []
        addr = 0
        for insn in self.instructions:
            result.append(addr)
            addr += insn.size
        result.append(addr)
        return result

    def insns_size(self) -> int:
        return sum(insn.size for insn in self.instructions)

    def try_address_range(self, item: TryItem) -> Tuple[int, int]:
        """返回 (start_addr, insn_count)"""
        addrs = self.addresses()
        return addrs[item.start], addrs[item.end] - addrs[item.start]


@dataclass(frozen=True)
class EncodedAnnotation:
    type: str
    elements: Tuple[Tuple[str, "EncodedValue"], ...] = ()


@dataclass(frozen=True)
class EncodedValue:
    """编码值，kind 为 DEX 的 value_type"""

    kind: int
    value: Any


@dataclass(frozen=True)
class Annotation:
    visibility: int
    annotation: EncodedAnnotation


@dataclass
class EncodedField:
    ref: FieldRef
    access_flags: int
    annotations: Optional[List[Annotation]] = None

    @property
    def is_static(self) -> bool:
        return bool(self.access_flags & ACC_STATIC)


@dataclass
class EncodedMethod:
    ref: MethodRef
    access_flags: int
    code: Optional[CodeItem] = None
    annotations: Optional[List[Annotation]] = None
    parameter_annotations: Optional[List[Optional[List[Annotation]]]] = None

    @property
    def is_direct(self) -> bool:
        return bool(self.access_flags & (ACC_STATIC | ACC_PRIVATE | ACC_CONSTRUCTOR))

    @property
    def is_static(self) -> bool:
        return bool(self.access_flags & ACC_STATIC)

    @property
    def signature(self) -> str:
        return str(self.ref)


@dataclass
class ClassDef:
    """类定义"""

    type: str
    access_flags: int = ACC_PUBLIC
    superclass: Optional[str] = "Ljava/lang/Object;"
    interfaces: List[str] = field(default_factory=list)
    source_file: Optional[str] = None
    annotations: Optional[List[Annotation]] = None
    fields: List[EncodedField] = field(default_factory=list)
    methods: List[EncodedMethod] = field(default_factory=list)
    static_values: Optional[List[EncodedValue]] = None

    @property
    def package_name(self) -> str:
        return package_of(self.type)

    @property
    def direct_methods(self) -> List[EncodedMethod]:
        return [m for m in self.methods if m.is_direct]

    @property
    def virtual_methods(self) -> List[EncodedMethod]:
        return [m for m in self.methods if not m.is_direct]

    def find_method(self, ref: MethodRef) -> Optional[EncodedMethod]:
        for method in self.methods:
            if method.ref == ref:
                return method
        return None


@dataclass
class DexHeader:
    """文件头；只有版本参与结构比较，其余字段在写出时重新计算"""

    version: str = "035"
    checksum: int = field(default=0, compare=False)
    signature: bytes = field(default=b"", compare=False)
    file_size: int = field(default=0, compare=False)
    sections: Dict[str, Tuple[int, int]] = field(default_factory=dict, compare=False)

    @property
    def magic(self) -> bytes:
        return b"dex\n" + self.version.encode("ascii") + b"\x00"


@dataclass
class DexFile:
    """DEX容器模型，各个池按DEX排序规则保持有序"""

    header: DexHeader = field(default_factory=DexHeader)
    strings: List[str] = field(default_factory=list)
    types: List[str] = field(default_factory=list)
    protos: List[ProtoRef] = field(default_factory=list)
    fields: List[FieldRef] = field(default_factory=list)
    methods: List[MethodRef] = field(default_factory=list)
    class_defs: List[ClassDef] = field(default_factory=list)

    def find_class(self, descriptor: str) -> Optional[ClassDef]:
        for cls in self.class_defs:
            if cls.type == descriptor:
                return cls
        return None

    def find_method(self, ref: MethodRef) -> Optional[EncodedMethod]:
        cls = self.find_class(ref.class_type)
        return cls.find_method(ref) if cls is not None else None

    def iter_methods(self):
        """按类定义顺序遍历 (ClassDef, EncodedMethod)"""
        for cls in self.class_defs:
            for method in cls.methods:
                yield cls, method


def check_code(code: CodeItem):
    """检查方法体的基本不变量"""
    n = len(code.instructions)
    if code.ins_size > code.registers_size:
        raise MalformedDex(f"ins_size {code.ins_size} 大于 registers_size {code.registers_size}")
    for item in code.tries:
        if not 0 <= item.start < item.end <= n:
            raise MalformedDex(f"try区间越界: [{item.start}, {item.end})")
        if not item.handlers:
            raise MalformedDex("try没有异常处理项")
        for handler in item.handlers[:-1]:
            if handler.exc_type is None:
                raise MalformedDex("catch-all必须是最后一个处理项")
        for handler in item.handlers:
            if not 0 <= handler.target < n:
                raise MalformedDex(f"处理地址越界: {handler.target}")
    for insn in code.instructions:
        if insn.target is not None and not 0 <= insn.target < n:
            raise MalformedDex(f"跳转目标越界: {insn.target}")


def sort_members(cls: ClassDef) -> ClassDef:
    """按class_data的顺序排列成员：静态字段、实例字段、直接方法、虚方法，组内按引用排序"""
    cls.fields.sort(key=lambda f: (not f.is_static, f.ref.sort_key()))
    cls.methods.sort(key=lambda m: (not m.is_direct, m.ref.sort_key()))
    return cls
