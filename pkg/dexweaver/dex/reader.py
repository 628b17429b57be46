"""DEX解析"""

import hashlib
import re
import struct
import zlib
from typing import Dict, List, Optional

from loguru import logger

from ..core.budget import (
    CLASS_SIZE,
    INSTRUCTION_SIZE,
    METHOD_SIZE,
    REF_SIZE,
    STRING_OVERHEAD,
    TRY_SIZE,
    MemoryMeter,
)
from ..core.errors import BadMagic, DigestMismatch, MalformedDex, MalformedIndex, TruncatedFile
from .code import decode_instructions, resolver_for
from .encoding import Cursor
from .model import (
    NO_INDEX,
    Annotation,
    ClassDef,
    CodeItem,
    DebugInfo,
    DexFile,
    DexHeader,
    EncodedAnnotation,
    EncodedField,
    EncodedMethod,
    EncodedValue,
    FieldRef,
    Handler,
    MethodRef,
    ProtoRef,
    TryItem,
)

HEADER_SIZE = 0x70
ENDIAN_CONSTANT = 0x12345678
# magic, checksum, signature, 之后20个uint32
HEADER_FMT = "<8sI20s20I"
HEADER_FIELDS = [
    "file_size", "header_size", "endian_tag", "link_size", "link_off", "map_off",
    "string_ids_size", "string_ids_off", "type_ids_size", "type_ids_off",
    "proto_ids_size", "proto_ids_off", "field_ids_size", "field_ids_off",
    "method_ids_size", "method_ids_off", "class_defs_size", "class_defs_off",
    "data_size", "data_off",
]
MAGIC_RE = re.compile(rb"^dex\n(\d{3})\x00$")

# encoded_value 类型
VALUE_BYTE = 0x00
VALUE_SHORT = 0x02
VALUE_CHAR = 0x03
VALUE_INT = 0x04
VALUE_LONG = 0x06
VALUE_FLOAT = 0x10
VALUE_DOUBLE = 0x11
VALUE_METHOD_TYPE = 0x15
VALUE_METHOD_HANDLE = 0x16
VALUE_STRING = 0x17
VALUE_TYPE = 0x18
VALUE_FIELD = 0x19
VALUE_METHOD = 0x1A
VALUE_ENUM = 0x1B
VALUE_ARRAY = 0x1C
VALUE_ANNOTATION = 0x1D
VALUE_NULL = 0x1E
VALUE_BOOLEAN = 0x1F

SIGNED_VALUES = (VALUE_BYTE, VALUE_SHORT, VALUE_INT, VALUE_LONG)
FLOAT_WIDTHS = {VALUE_FLOAT: 4, VALUE_DOUBLE: 8}


def read_header(data: bytes, verify: bool = True) -> Dict[str, int]:
    """解析并校验文件头

    Args:
        data: 完整的DEX字节
        verify: 是否校验Adler-32与SHA-1

    Returns:
        头部字段字典（另含 version/checksum/signature）
    """
    if len(data) >= 3 and not data.startswith(b"dex"):
        raise BadMagic(f"魔数不是dex: {bytes(data[:8])!r}")
    if len(data) < HEADER_SIZE:
        raise TruncatedFile(f"文件头被截断: {len(data)} < {HEADER_SIZE}")
    match = MAGIC_RE.match(bytes(data[:8]))
    if match is None:
        raise BadMagic(f"无效的魔数: {bytes(data[:8])!r}")
    magic, checksum, signature, *rest = struct.unpack_from(HEADER_FMT, data, 0)
    header = dict(zip(HEADER_FIELDS, rest))
    header.update(version=match.group(1).decode("ascii"), checksum=checksum, signature=signature)
    if header["endian_tag"] != ENDIAN_CONSTANT:
        raise MalformedDex(f"不支持的字节序标记 0x{header['endian_tag']:08x}")
    if header["file_size"] > len(data):
        raise TruncatedFile(f"file_size {header['file_size']} 大于实际长度 {len(data)}")
    if verify:
        body = memoryview(data)[:header["file_size"]]
        actual_checksum = zlib.adler32(body[12:])
        if actual_checksum != checksum:
            raise DigestMismatch(f"校验和不一致: 头部 0x{checksum:08x}, 实际 0x{actual_checksum:08x}")
        actual_signature = hashlib.sha1(body[32:]).digest()
        if actual_signature != signature:
            raise DigestMismatch("SHA-1签名与内容不一致")
    return header


class _DexParser:
    """DEX解析器"""

    def __init__(self, data: bytes, meter: MemoryMeter):
        self.data = data
        self.meter = meter
        self.strings: List[str] = []
        self.types: List[str] = []
        self.protos: List[ProtoRef] = []
        self.fields: List[FieldRef] = []
        self.methods: List[MethodRef] = []
        self.resolve = resolver_for(self.strings, self.types, self.protos, self.fields, self.methods)

    def cursor(self, offset: int) -> Cursor:
        return Cursor(self.data, offset)

    def string(self, index: int) -> str:
        return self.resolve("string", index)

    def optional_string(self, index: int) -> Optional[str]:
        return None if index in (NO_INDEX, -1) else self.string(index)

    def type(self, index: int) -> str:
        return self.resolve("type", index)

    def optional_type(self, index: int) -> Optional[str]:
        return None if index in (NO_INDEX, -1) else self.type(index)

    def type_list(self, offset: int) -> List[str]:
        if offset == 0:
            return []
        cur = self.cursor(offset)
        size = cur.u4()
        return [self.type(i) for i in cur.u2_array(size)]

    def parse(self, header: Dict[str, int]) -> DexFile:
        h = header
        cur = self.cursor(h["string_ids_off"])
        for _ in range(h["string_ids_size"]):
            text = self.cursor(cur.u4())
            text.uleb128()
            value = text.mutf8()
            self.strings.append(value)
            self.meter.charge(len(value) * 2 + STRING_OVERHEAD)

        cur = self.cursor(h["type_ids_off"])
        for _ in range(h["type_ids_size"]):
            self.types.append(self.string(cur.u4()))

        cur = self.cursor(h["proto_ids_off"])
        for _ in range(h["proto_ids_size"]):
            cur.u4()  # shorty由返回值和参数推出
            return_type = self.type(cur.u4())
            self.protos.append(ProtoRef(return_type, tuple(self.type_list(cur.u4()))))

        cur = self.cursor(h["field_ids_off"])
        for _ in range(h["field_ids_size"]):
            class_idx, type_idx, name_idx = cur.u2(), cur.u2(), cur.u4()
            self.fields.append(FieldRef(self.type(class_idx), self.string(name_idx), self.type(type_idx)))

        cur = self.cursor(h["method_ids_off"])
        for _ in range(h["method_ids_size"]):
            class_idx, proto_idx, name_idx = cur.u2(), cur.u2(), cur.u4()
            self.methods.append(MethodRef(self.type(class_idx), self.string(name_idx), self.resolve("proto", proto_idx)))
        self.meter.charge((len(self.types) + len(self.protos) + len(self.fields) + len(self.methods)) * REF_SIZE)

        class_defs = []
        cur = self.cursor(h["class_defs_off"])
        for _ in range(h["class_defs_size"]):
            class_defs.append(self.class_def(cur))

        dex_header = DexHeader(
            version=h["version"],
            checksum=h["checksum"],
            signature=h["signature"],
            file_size=h["file_size"],
            sections={
                name[:-5]: (h[name], h[name[:-5] + "_off"])
                for name in HEADER_FIELDS
                if name.endswith("_size") and name[:-5] + "_off" in h
            },
        )
        return DexFile(
            header=dex_header,
            strings=self.strings,
            types=self.types,
            protos=self.protos,
            fields=self.fields,
            methods=self.methods,
            class_defs=class_defs,
        )

    def class_def(self, cur: Cursor) -> ClassDef:
        class_idx, access, super_idx, interfaces_off = cur.u4(), cur.u4(), cur.u4(), cur.u4()
        source_idx, annotations_off, class_data_off, static_values_off = cur.u4(), cur.u4(), cur.u4(), cur.u4()
        self.meter.charge(CLASS_SIZE)
        cls = ClassDef(
            type=self.type(class_idx),
            access_flags=access,
            superclass=self.optional_type(super_idx),
            interfaces=self.type_list(interfaces_off),
            source_file=self.optional_string(source_idx),
        )
        if class_data_off:
            self.class_data(cls, class_data_off)
        if static_values_off:
            cls.static_values = list(self.encoded_array(self.cursor(static_values_off)))
        if annotations_off:
            self.annotations_directory(cls, annotations_off)
        return cls

    def class_data(self, cls: ClassDef, offset: int):
        cur = self.cursor(offset)
        sizes = [cur.uleb128() for _ in range(4)]
        for count in sizes[:2]:
            index = 0
            for _ in range(count):
                index += cur.uleb128()
                cls.fields.append(EncodedField(self.resolve("field", index), cur.uleb128()))
        for count in sizes[2:]:
            index = 0
            for _ in range(count):
                index += cur.uleb128()
                access, code_off = cur.uleb128(), cur.uleb128()
                ref = self.resolve("method", index)
                code = self.code_item(code_off, ref) if code_off else None
                cls.methods.append(EncodedMethod(ref, access, code))
                self.meter.charge(METHOD_SIZE)

    def code_item(self, offset: int, ref: MethodRef) -> CodeItem:
        cur = self.cursor(offset)
        registers_size, ins_size, outs_size, tries_size = cur.u2(), cur.u2(), cur.u2(), cur.u2()
        debug_off, insns_size = cur.u4(), cur.u4()
        units = cur.u2_array(insns_size)
        try:
            instructions, addr_to_index = decode_instructions(units, self.resolve)
        except MalformedDex as exc:
            raise type(exc)(f"{ref}: {exc.message}") from exc
        self.meter.charge(len(instructions) * INSTRUCTION_SIZE + tries_size * TRY_SIZE)

        def index_at(addr: int, what: str) -> int:
            if addr == insns_size:
                return len(instructions)
            if addr not in addr_to_index:
                raise MalformedDex(f"{ref}: {what}地址 {addr} 不在指令边界上")
            return addr_to_index[addr]

        tries = []
        if tries_size:
            if insns_size % 2:
                cur.u2()
            raw_tries = [(cur.u4(), cur.u2(), cur.u2()) for _ in range(tries_size)]
            handlers_base = cur.pos
            for start_addr, insn_count, handler_off in raw_tries:
                hcur = self.cursor(handlers_base + handler_off)
                size = hcur.sleb128()
                handlers = []
                for _ in range(abs(size)):
                    exc_type = self.type(hcur.uleb128())
                    handlers.append(Handler(exc_type, index_at(hcur.uleb128(), "处理")))
                if size <= 0:
                    handlers.append(Handler(None, index_at(hcur.uleb128(), "处理")))
                tries.append(TryItem(
                    index_at(start_addr, "try起始"),
                    index_at(start_addr + insn_count, "try结束"),
                    handlers,
                ))

        debug_info = self.debug_info(debug_off) if debug_off else None
        return CodeItem(registers_size, ins_size, outs_size, instructions, tries, debug_info)

    def debug_info(self, offset: int) -> DebugInfo:
        cur = self.cursor(offset)
        info = DebugInfo(line_start=cur.uleb128())
        info.parameter_names = [self.optional_string(cur.uleb128p1()) for _ in range(cur.uleb128())]
        while True:
            op = cur.u1()
            if op == 0x00:
                return info
            if op == 0x01:
                info.ops.append(("advance_pc", cur.uleb128()))
            elif op == 0x02:
                info.ops.append(("advance_line", cur.sleb128()))
            elif op == 0x03:
                reg = cur.uleb128()
                info.ops.append(("start_local", reg, self.optional_string(cur.uleb128p1()),
                                 self.optional_type(cur.uleb128p1())))
            elif op == 0x04:
                reg = cur.uleb128()
                info.ops.append(("start_local_extended", reg, self.optional_string(cur.uleb128p1()),
                                 self.optional_type(cur.uleb128p1()), self.optional_string(cur.uleb128p1())))
            elif op == 0x05:
                info.ops.append(("end_local", cur.uleb128()))
            elif op == 0x06:
                info.ops.append(("restart_local", cur.uleb128()))
            elif op == 0x07:
                info.ops.append(("prologue_end",))
            elif op == 0x08:
                info.ops.append(("epilogue_begin",))
            elif op == 0x09:
                info.ops.append(("set_file", self.optional_string(cur.uleb128p1())))
            else:
                info.ops.append(("special", op))

    def encoded_array(self, cur: Cursor):
        return tuple(self.encoded_value(cur) for _ in range(cur.uleb128()))

    def encoded_annotation(self, cur: Cursor) -> EncodedAnnotation:
        type_ = self.type(cur.uleb128())
        elements = []
        for _ in range(cur.uleb128()):
            name = self.string(cur.uleb128())
            elements.append((name, self.encoded_value(cur)))
        return EncodedAnnotation(type_, tuple(elements))

    def encoded_value(self, cur: Cursor) -> EncodedValue:
        head = cur.u1()
        kind, arg = head & 0x1F, head >> 5
        if kind == VALUE_NULL:
            return EncodedValue(kind, None)
        if kind == VALUE_BOOLEAN:
            return EncodedValue(kind, bool(arg))
        if kind == VALUE_ARRAY:
            return EncodedValue(kind, self.encoded_array(cur))
        if kind == VALUE_ANNOTATION:
            return EncodedValue(kind, self.encoded_annotation(cur))
        raw = cur.raw(arg + 1)
        number = int.from_bytes(raw, "little")
        if kind in SIGNED_VALUES:
            bits = len(raw) * 8
            if number & (1 << (bits - 1)):
                number -= 1 << bits
            return EncodedValue(kind, number)
        if kind in FLOAT_WIDTHS:
            return EncodedValue(kind, number << (8 * (FLOAT_WIDTHS[kind] - len(raw))))
        if kind == VALUE_CHAR:
            return EncodedValue(kind, number)
        if kind == VALUE_STRING:
            return EncodedValue(kind, self.string(number))
        if kind == VALUE_TYPE:
            return EncodedValue(kind, self.type(number))
        if kind in (VALUE_FIELD, VALUE_ENUM):
            return EncodedValue(kind, self.resolve("field", number))
        if kind == VALUE_METHOD:
            return EncodedValue(kind, self.resolve("method", number))
        if kind == VALUE_METHOD_TYPE:
            return EncodedValue(kind, self.resolve("proto", number))
        raise MalformedDex(f"不支持的encoded_value类型 0x{kind:02x}")

    def annotation_set(self, offset: int) -> Optional[List[Annotation]]:
        if offset == 0:
            return None
        cur = self.cursor(offset)
        result = []
        for item_off in [cur.u4() for _ in range(cur.u4())]:
            item = self.cursor(item_off)
            visibility = item.u1()
            result.append(Annotation(visibility, self.encoded_annotation(item)))
        return result

    def annotations_directory(self, cls: ClassDef, offset: int):
        cur = self.cursor(offset)
        class_off, fields_size, methods_size, params_size = cur.u4(), cur.u4(), cur.u4(), cur.u4()
        cls.annotations = self.annotation_set(class_off)
        fields = {f.ref: f for f in cls.fields}
        methods = {m.ref: m for m in cls.methods}
        for _ in range(fields_size):
            ref, off = self.resolve("field", cur.u4()), cur.u4()
            if ref in fields:
                fields[ref].annotations = self.annotation_set(off)
        for _ in range(methods_size):
            ref, off = self.resolve("method", cur.u4()), cur.u4()
            if ref in methods:
                methods[ref].annotations = self.annotation_set(off)
        for _ in range(params_size):
            ref, off = self.resolve("method", cur.u4()), cur.u4()
            ref_list = self.cursor(off)
            sets = [self.annotation_set(ref_list.u4()) for _ in range(ref_list.u4())]
            if ref in methods:
                methods[ref].parameter_annotations = sets


def parse_dex(data: bytes, *, verify: bool = True, meter: Optional[MemoryMeter] = None) -> DexFile:
    """解析DEX文件

    Args:
        data: DEX字节
        verify: 是否校验头部摘要
        meter: 内存计量器，超出预算时抛出BudgetExceeded

    Returns:
        DexFile模型
    """
    meter = meter or MemoryMeter()
    meter.charge(len(data))
    header = read_header(data, verify=verify)
    try:
        dex = _DexParser(data, meter).parse(header)
    except struct.error as exc:
        raise TruncatedFile(str(exc)) from exc
    except (IndexError, KeyError) as exc:
        raise MalformedIndex(str(exc)) from exc
    logger.debug(
        "解析DEX: {} 个类, {} 个方法引用, {} 字节",
        len(dex.class_defs), len(dex.methods), len(data),
    )
    return dex
