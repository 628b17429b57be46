"""DEX序列化

布局固定：文件头、各id区、数据区（string_data、type_list、debug_info、
encoded_array、annotation、annotation_set、annotation_set_ref_list、
annotations_directory、code_item、class_data），最后是map_list。
对齐只做格式要求的4字节对齐。
"""

import hashlib
import struct
import zlib
from typing import Dict, List, Optional, Set, Tuple

from loguru import logger

from ..core.budget import MemoryMeter
from ..core.errors import LayoutOverflow, MalformedDex, MalformedIndex
from .code import encode_code
from .encoding import encode_mutf8, sleb128, uleb128, uleb128p1, utf16_length
from .model import (
    NO_INDEX,
    Annotation,
    ClassDef,
    CodeItem,
    DebugInfo,
    DexFile,
    EncodedAnnotation,
    EncodedValue,
    FieldRef,
    MethodRef,
    ProtoRef,
    string_key,
)
from .reader import (
    ENDIAN_CONSTANT,
    FLOAT_WIDTHS,
    HEADER_SIZE,
    SIGNED_VALUES,
    VALUE_ANNOTATION,
    VALUE_ARRAY,
    VALUE_BOOLEAN,
    VALUE_ENUM,
    VALUE_FIELD,
    VALUE_METHOD,
    VALUE_METHOD_TYPE,
    VALUE_NULL,
    VALUE_STRING,
    VALUE_TYPE,
)

# map_list 类型码
TYPE_HEADER_ITEM = 0x0000
TYPE_STRING_ID_ITEM = 0x0001
TYPE_TYPE_ID_ITEM = 0x0002
TYPE_PROTO_ID_ITEM = 0x0003
TYPE_FIELD_ID_ITEM = 0x0004
TYPE_METHOD_ID_ITEM = 0x0005
TYPE_CLASS_DEF_ITEM = 0x0006
TYPE_MAP_LIST = 0x1000
TYPE_TYPE_LIST = 0x1001
TYPE_ANNOTATION_SET_REF_LIST = 0x1002
TYPE_ANNOTATION_SET_ITEM = 0x1003
TYPE_CLASS_DATA_ITEM = 0x2000
TYPE_CODE_ITEM = 0x2001
TYPE_STRING_DATA_ITEM = 0x2002
TYPE_DEBUG_INFO_ITEM = 0x2003
TYPE_ANNOTATION_ITEM = 0x2004
TYPE_ENCODED_ARRAY_ITEM = 0x2005
TYPE_ANNOTATIONS_DIRECTORY_ITEM = 0x2006

_DEBUG_OPCODES = {
    "advance_pc": 0x01, "advance_line": 0x02, "start_local": 0x03,
    "start_local_extended": 0x04, "end_local": 0x05, "restart_local": 0x06,
    "prologue_end": 0x07, "epilogue_begin": 0x08, "set_file": 0x09,
}


class References:
    """模型中引用到的全部符号"""

    def __init__(self):
        self.strings: Set[str] = set()
        self.types: Set[str] = set()
        self.protos: Set[ProtoRef] = set()
        self.fields: Set[FieldRef] = set()
        self.methods: Set[MethodRef] = set()

    def string(self, value: Optional[str]):
        if value is not None:
            self.strings.add(value)

    def type(self, descriptor: Optional[str]):
        if descriptor is not None and descriptor not in self.types:
            self.types.add(descriptor)
            self.strings.add(descriptor)

    def proto(self, proto: ProtoRef):
        if proto not in self.protos:
            self.protos.add(proto)
            self.strings.add(proto.shorty)
            self.type(proto.return_type)
            for param in proto.parameters:
                self.type(param)

    def field(self, ref: FieldRef):
        if ref not in self.fields:
            self.fields.add(ref)
            self.type(ref.class_type)
            self.type(ref.type)
            self.strings.add(ref.name)

    def method(self, ref: MethodRef):
        if ref not in self.methods:
            self.methods.add(ref)
            self.type(ref.class_type)
            self.strings.add(ref.name)
            self.proto(ref.proto)

    def ref(self, kind: str, value):
        getattr(self, kind)(value)

    def value(self, item: EncodedValue):
        kind = item.kind
        if kind == VALUE_STRING:
            self.string(item.value)
        elif kind == VALUE_TYPE:
            self.type(item.value)
        elif kind in (VALUE_FIELD, VALUE_ENUM):
            self.field(item.value)
        elif kind == VALUE_METHOD:
            self.method(item.value)
        elif kind == VALUE_METHOD_TYPE:
            self.proto(item.value)
        elif kind == VALUE_ARRAY:
            for element in item.value:
                self.value(element)
        elif kind == VALUE_ANNOTATION:
            self.annotation(item.value)

    def annotation(self, annotation: EncodedAnnotation):
        self.type(annotation.type)
        for name, element in annotation.elements:
            self.string(name)
            self.value(element)

    def annotation_set(self, items: Optional[List[Annotation]]):
        for item in items or ():
            self.annotation(item.annotation)


def collect_references(dex: DexFile) -> References:
    """收集模型中的所有符号引用"""
    refs = References()
    for cls in dex.class_defs:
        refs.type(cls.type)
        refs.type(cls.superclass)
        for iface in cls.interfaces:
            refs.type(iface)
        refs.string(cls.source_file)
        refs.annotation_set(cls.annotations)
        for value in cls.static_values or ():
            refs.value(value)
        for fld in cls.fields:
            refs.field(fld.ref)
            refs.annotation_set(fld.annotations)
        for method in cls.methods:
            refs.method(method.ref)
            refs.annotation_set(method.annotations)
            for param_set in method.parameter_annotations or ():
                refs.annotation_set(param_set)
            if method.code is not None:
                _collect_code(refs, method.code)
    return refs


def _pool_references(dex: DexFile) -> References:
    refs = collect_references(dex)
    # 模型池中未被引用的条目同样保留
    for value in dex.strings:
        refs.string(value)
    for descriptor in dex.types:
        refs.type(descriptor)
    for proto in dex.protos:
        refs.proto(proto)
    for ref in dex.fields:
        refs.field(ref)
    for ref in dex.methods:
        refs.method(ref)
    return refs


def sync_pools(dex: DexFile) -> DexFile:
    """把新引用并入模型的各个池并恢复排序，在变换之后调用"""
    refs = _pool_references(dex)
    dex.strings = sorted(refs.strings, key=string_key)
    dex.types = sorted(refs.types, key=string_key)
    dex.protos = sorted(refs.protos, key=ProtoRef.sort_key)
    dex.fields = sorted(refs.fields, key=FieldRef.sort_key)
    dex.methods = sorted(refs.methods, key=MethodRef.sort_key)
    return dex


def _collect_code(refs: References, code: CodeItem):
    for insn in code.instructions:
        if insn.ref is not None:
            refs.ref(insn.info.kind, insn.ref)
    for item in code.tries:
        for handler in item.handlers:
            refs.type(handler.exc_type)
    if code.debug_info is not None:
        for name in code.debug_info.parameter_names:
            refs.string(name)
        for op in code.debug_info.ops:
            if op[0] in ("start_local", "start_local_extended"):
                refs.string(op[2])
                refs.type(op[3])
                if op[0] == "start_local_extended":
                    refs.string(op[4])
            elif op[0] == "set_file":
                refs.string(op[1])


def _align(buf: bytearray, base: int, alignment: int = 4):
    while (base + len(buf)) % alignment:
        buf.append(0)


def _signed_size(value: int) -> int:
    for size in range(1, 9):
        if -(1 << (8 * size - 1)) <= value < (1 << (8 * size - 1)):
            return size
    raise LayoutOverflow(f"整数 {value} 超出64位")


def _unsigned_size(value: int) -> int:
    return max(1, (value.bit_length() + 7) // 8)


class _DexWriter:
    """DEX写出器"""

    def __init__(self, dex: DexFile, version: str):
        self.dex = dex
        self.version = version
        refs = _pool_references(dex)
        self.strings = sorted(refs.strings, key=string_key)
        self.types = sorted(refs.types, key=string_key)
        self.protos = sorted(refs.protos, key=ProtoRef.sort_key)
        self.fields = sorted(refs.fields, key=FieldRef.sort_key)
        self.methods = sorted(refs.methods, key=MethodRef.sort_key)
        self.string_index = {s: i for i, s in enumerate(self.strings)}
        self.type_index = {t: i for i, t in enumerate(self.types)}
        self.proto_index = {p: i for i, p in enumerate(self.protos)}
        self.field_index = {f: i for i, f in enumerate(self.fields)}
        self.method_index = {m: i for i, m in enumerate(self.methods)}
        self._indexes = {
            "string": self.string_index, "type": self.type_index, "proto": self.proto_index,
            "field": self.field_index, "method": self.method_index,
        }
        if len(self.types) > 0xFFFF or len(self.protos) > 0xFFFF:
            raise LayoutOverflow("类型或原型数量超过65535")

    def index_of(self, kind: str, ref) -> int:
        try:
            return self._indexes[kind][ref]
        except KeyError as exc:
            raise MalformedIndex(f"{kind}不在池中: {ref}") from exc

    def opt_string(self, value: Optional[str]) -> int:
        return NO_INDEX if value is None else self.string_index[value]

    def opt_type(self, value: Optional[str]) -> int:
        return NO_INDEX if value is None else self.type_index[value]

    # 编码值

    def encode_value(self, item: EncodedValue) -> bytes:
        kind = item.kind
        if kind == VALUE_NULL:
            return bytes([kind])
        if kind == VALUE_BOOLEAN:
            return bytes([(int(bool(item.value)) << 5) | kind])
        if kind == VALUE_ARRAY:
            return bytes([kind]) + self.encode_array(item.value)
        if kind == VALUE_ANNOTATION:
            return bytes([kind]) + self.encode_annotation(item.value)
        if kind in SIGNED_VALUES:
            size = _signed_size(item.value)
            payload = item.value.to_bytes(size, "little", signed=True)
        elif kind in FLOAT_WIDTHS:
            raw, size = item.value, FLOAT_WIDTHS[kind]
            while size > 1 and raw & 0xFF == 0:
                raw >>= 8
                size -= 1
            payload = raw.to_bytes(size, "little")
        else:
            if kind == VALUE_STRING:
                number = self.index_of("string", item.value)
            elif kind == VALUE_TYPE:
                number = self.index_of("type", item.value)
            elif kind in (VALUE_FIELD, VALUE_ENUM):
                number = self.index_of("field", item.value)
            elif kind == VALUE_METHOD:
                number = self.index_of("method", item.value)
            elif kind == VALUE_METHOD_TYPE:
                number = self.index_of("proto", item.value)
            else:
                number = item.value
            payload = number.to_bytes(_unsigned_size(number), "little")
        return bytes([((len(payload) - 1) << 5) | kind]) + payload

    def encode_array(self, values) -> bytes:
        return uleb128(len(values)) + b"".join(self.encode_value(v) for v in values)

    def encode_annotation(self, annotation: EncodedAnnotation) -> bytes:
        elements = sorted(annotation.elements, key=lambda e: self.string_index[e[0]])
        out = bytearray(uleb128(self.type_index[annotation.type]) + uleb128(len(elements)))
        for name, value in elements:
            out += uleb128(self.string_index[name]) + self.encode_value(value)
        return bytes(out)

    def encode_debug(self, info: DebugInfo) -> bytes:
        out = bytearray(uleb128(info.line_start) + uleb128(len(info.parameter_names)))
        for name in info.parameter_names:
            out += uleb128p1(-1 if name is None else self.string_index[name])
        for op in info.ops:
            name = op[0]
            if name == "special":
                out.append(op[1])
                continue
            out.append(_DEBUG_OPCODES[name])
            if name == "advance_pc":
                out += uleb128(op[1])
            elif name == "advance_line":
                out += sleb128(op[1])
            elif name in ("start_local", "start_local_extended"):
                out += uleb128(op[1])
                out += uleb128p1(-1 if op[2] is None else self.string_index[op[2]])
                out += uleb128p1(-1 if op[3] is None else self.type_index[op[3]])
                if name == "start_local_extended":
                    out += uleb128p1(-1 if op[4] is None else self.string_index[op[4]])
            elif name in ("end_local", "restart_local"):
                out += uleb128(op[1])
            elif name == "set_file":
                out += uleb128p1(-1 if op[1] is None else self.string_index[op[1]])
        out.append(0x00)
        return bytes(out)

    def encode_code_item(self, code: CodeItem, debug_off: int) -> bytes:
        units = encode_code(code, self.index_of)
        if len(units) > 0xFFFFFFFF or len(code.tries) > 0xFFFF:
            raise LayoutOverflow("方法体超出格式限制")
        for value, what in ((code.registers_size, "registers_size"), (code.ins_size, "ins_size"),
                            (code.outs_size, "outs_size")):
            if not 0 <= value <= 0xFFFF:
                raise LayoutOverflow(f"{what} {value} 超出16位")
        out = bytearray(struct.pack(
            "<4H2I", code.registers_size, code.ins_size, code.outs_size, len(code.tries),
            debug_off, len(units),
        ))
        out += struct.pack(f"<{len(units)}H", *units)
        if code.tries:
            if len(units) % 2:
                out += b"\x00\x00"
            addrs = code.addresses()
            handler_lists: Dict[Tuple, int] = {}
            encoded = bytearray()
            entries = []
            for item in code.tries:
                key = tuple((h.exc_type, addrs[h.target]) for h in item.handlers)
                if key not in handler_lists:
                    handler_lists[key] = len(encoded)
                    encoded += self.encode_handler(key)
                entries.append((addrs[item.start], addrs[item.end] - addrs[item.start], key))
            prefix = uleb128(len(handler_lists))
            for start, count, key in entries:
                if count > 0xFFFF:
                    raise LayoutOverflow(f"try区间 {count} 个代码单元超出16位")
                offset = len(prefix) + handler_lists[key]
                if offset > 0xFFFF:
                    raise LayoutOverflow("异常处理表超出16位偏移")
                out += struct.pack("<IHH", start, count, offset)
            out += prefix + encoded
        return bytes(out)

    def encode_handler(self, key) -> bytes:
        typed = [(t, a) for t, a in key if t is not None]
        catch_all = [a for t, a in key if t is None]
        out = bytearray(sleb128(-len(typed) if catch_all else len(typed)))
        for exc_type, addr in typed:
            out += uleb128(self.type_index[exc_type]) + uleb128(addr)
        if catch_all:
            out += uleb128(catch_all[0])
        return bytes(out)

    def encode_class_data(self, cls: ClassDef, code_offsets: Dict[int, int]) -> bytes:
        statics = sorted((self.field_index[f.ref], f.access_flags) for f in cls.fields if f.is_static)
        instances = sorted((self.field_index[f.ref], f.access_flags) for f in cls.fields if not f.is_static)
        direct = sorted(
            (self.method_index[m.ref], m.access_flags, code_offsets.get(id(m), 0)) for m in cls.methods if m.is_direct
        )
        virtual = sorted(
            (self.method_index[m.ref], m.access_flags, code_offsets.get(id(m), 0)) for m in cls.methods if not m.is_direct
        )
        out = bytearray()
        for group in (statics, instances, direct, virtual):
            out += uleb128(len(group))
        for group in (statics, instances, direct, virtual):
            previous = -1
            for entry in group:
                if entry[0] == previous:
                    raise MalformedDex(f"{cls.type}: 重复的成员定义")
                out += uleb128(entry[0] - previous if previous >= 0 else entry[0])
                previous = entry[0]
                for extra in entry[1:]:
                    out += uleb128(extra)
        return bytes(out)

    def write(self) -> bytes:
        dex = self.dex
        section_sizes = [
            (TYPE_STRING_ID_ITEM, len(self.strings), 4),
            (TYPE_TYPE_ID_ITEM, len(self.types), 4),
            (TYPE_PROTO_ID_ITEM, len(self.protos), 12),
            (TYPE_FIELD_ID_ITEM, len(self.fields), 8),
            (TYPE_METHOD_ID_ITEM, len(self.methods), 8),
            (TYPE_CLASS_DEF_ITEM, len(dex.class_defs), 32),
        ]
        offsets = {TYPE_HEADER_ITEM: 0}
        pos = HEADER_SIZE
        for type_code, count, item_size in section_sizes:
            offsets[type_code] = pos if count else 0
            pos += count * item_size
        data_off = pos
        buf = bytearray()
        map_items: List[Tuple[int, int, int]] = [(TYPE_HEADER_ITEM, 1, 0)]
        for type_code, count, _ in section_sizes:
            if count:
                map_items.append((type_code, count, offsets[type_code]))

        def here() -> int:
            return data_off + len(buf)

        def section(type_code: int, count: int, start: int):
            if count:
                map_items.append((type_code, count, start))

        # string_data
        string_data_offs = []
        start = here()
        for value in self.strings:
            string_data_offs.append(here())
            buf += uleb128(utf16_length(value)) + encode_mutf8(value) + b"\x00"
        section(TYPE_STRING_DATA_ITEM, len(self.strings), start)

        # type_list
        type_lists = set(p.parameters for p in self.protos if p.parameters)
        type_lists |= set(tuple(c.interfaces) for c in dex.class_defs if c.interfaces)
        type_list_offs: Dict[Tuple[str, ...], int] = {}
        _align(buf, data_off)
        start = here()
        for items in sorted(type_lists, key=lambda t: [self.type_index[x] for x in t]):
            _align(buf, data_off)
            type_list_offs[items] = here()
            buf += struct.pack(f"<I{len(items)}H", len(items), *(self.type_index[x] for x in items))
        section(TYPE_TYPE_LIST, len(type_lists), start)

        # debug_info
        debug_offs: Dict[int, int] = {}
        start = here()
        for _, method in dex.iter_methods():
            if method.code is not None and method.code.debug_info is not None:
                debug_offs[id(method.code)] = here()
                buf += self.encode_debug(method.code.debug_info)
        section(TYPE_DEBUG_INFO_ITEM, len(debug_offs), start)

        # encoded_array
        static_offs: Dict[int, int] = {}
        start = here()
        for cls in dex.class_defs:
            if cls.static_values is not None:
                static_offs[id(cls)] = here()
                buf += self.encode_array(cls.static_values)
        section(TYPE_ENCODED_ARRAY_ITEM, len(static_offs), start)

        # annotation / annotation_set / annotation_set_ref_list / annotations_directory
        directory_offs = self.write_annotations(buf, data_off, section)

        # code_item
        code_offs: Dict[int, int] = {}
        _align(buf, data_off)
        start = here()
        for _, method in dex.iter_methods():
            if method.code is not None:
                _align(buf, data_off)
                code_offs[id(method)] = here()
                try:
                    buf += self.encode_code_item(method.code, debug_offs.get(id(method.code), 0))
                except (LayoutOverflow, MalformedDex, MalformedIndex) as exc:
                    raise type(exc)(f"{method.ref}: {exc.message}") from exc
        section(TYPE_CODE_ITEM, len(code_offs), start)

        # class_data
        class_data_offs: Dict[int, int] = {}
        start = here()
        for cls in dex.class_defs:
            if cls.fields or cls.methods:
                class_data_offs[id(cls)] = here()
                buf += self.encode_class_data(cls, code_offs)
        section(TYPE_CLASS_DATA_ITEM, len(class_data_offs), start)

        # map_list
        _align(buf, data_off)
        map_off = here()
        map_items.append((TYPE_MAP_LIST, 1, map_off))
        map_items.sort(key=lambda item: item[2])
        buf += struct.pack("<I", len(map_items))
        for type_code, count, offset in map_items:
            buf += struct.pack("<HHII", type_code, 0, count, offset)

        file_size = data_off + len(buf)
        out = bytearray(data_off)
        struct.pack_into(
            "<8sI20s20I", out, 0,
            b"dex\n" + self.version.encode("ascii") + b"\x00", 0, b"\x00" * 20,
            file_size, HEADER_SIZE, ENDIAN_CONSTANT, 0, 0, map_off,
            len(self.strings), offsets[TYPE_STRING_ID_ITEM],
            len(self.types), offsets[TYPE_TYPE_ID_ITEM],
            len(self.protos), offsets[TYPE_PROTO_ID_ITEM],
            len(self.fields), offsets[TYPE_FIELD_ID_ITEM],
            len(self.methods), offsets[TYPE_METHOD_ID_ITEM],
            len(dex.class_defs), offsets[TYPE_CLASS_DEF_ITEM],
            len(buf), data_off,
        )
        pos = offsets[TYPE_STRING_ID_ITEM]
        for off in string_data_offs:
            struct.pack_into("<I", out, pos, off)
            pos += 4
        pos = offsets[TYPE_TYPE_ID_ITEM]
        for descriptor in self.types:
            struct.pack_into("<I", out, pos, self.string_index[descriptor])
            pos += 4
        pos = offsets[TYPE_PROTO_ID_ITEM]
        for proto in self.protos:
            struct.pack_into(
                "<III", out, pos, self.string_index[proto.shorty], self.type_index[proto.return_type],
                type_list_offs.get(proto.parameters, 0),
            )
            pos += 12
        pos = offsets[TYPE_FIELD_ID_ITEM]
        for ref in self.fields:
            struct.pack_into("<HHI", out, pos, self.type_index[ref.class_type], self.type_index[ref.type],
                             self.string_index[ref.name])
            pos += 8
        pos = offsets[TYPE_METHOD_ID_ITEM]
        for ref in self.methods:
            struct.pack_into("<HHI", out, pos, self.type_index[ref.class_type], self.proto_index[ref.proto],
                             self.string_index[ref.name])
            pos += 8
        pos = offsets[TYPE_CLASS_DEF_ITEM]
        for cls in dex.class_defs:
            struct.pack_into(
                "<8I", out, pos,
                self.type_index[cls.type], cls.access_flags, self.opt_type(cls.superclass),
                type_list_offs.get(tuple(cls.interfaces), 0), self.opt_string(cls.source_file),
                directory_offs.get(id(cls), 0), class_data_offs.get(id(cls), 0), static_offs.get(id(cls), 0),
            )
            pos += 32

        out += buf
        signature = hashlib.sha1(memoryview(out)[32:]).digest()
        out[12:32] = signature
        checksum = zlib.adler32(memoryview(out)[12:])
        struct.pack_into("<I", out, 8, checksum)
        return bytes(out)

    def write_annotations(self, buf: bytearray, data_off: int, section) -> Dict[int, int]:
        """写出注解相关的四个区，返回 类 -> annotations_directory 偏移"""
        dex = self.dex

        def here() -> int:
            return data_off + len(buf)

        def sets_of(cls: ClassDef):
            yield cls.annotations
            for fld in cls.fields:
                yield fld.annotations
            for method in cls.methods:
                yield method.annotations
                for param_set in method.parameter_annotations or ():
                    yield param_set

        item_offs: Dict[bytes, int] = {}
        start = here()
        for cls in dex.class_defs:
            for items in sets_of(cls):
                for item in items or ():
                    encoded = bytes([item.visibility]) + self.encode_annotation(item.annotation)
                    if encoded not in item_offs:
                        item_offs[encoded] = here()
                        buf += encoded
        section(TYPE_ANNOTATION_ITEM, len(item_offs), start)

        def set_entries(items: List[Annotation]) -> Tuple[int, ...]:
            ordered = sorted(items, key=lambda a: self.type_index[a.annotation.type])
            return tuple(
                item_offs[bytes([a.visibility]) + self.encode_annotation(a.annotation)] for a in ordered
            )

        set_offs: Dict[Tuple[int, ...], int] = {}
        _align(buf, data_off)
        start = here()
        for cls in dex.class_defs:
            for items in sets_of(cls):
                if items is None:
                    continue
                entries = set_entries(items)
                if entries not in set_offs:
                    _align(buf, data_off)
                    set_offs[entries] = here()
                    buf += struct.pack(f"<I{len(entries)}I", len(entries), *entries)
        section(TYPE_ANNOTATION_SET_ITEM, len(set_offs), start)

        def set_off(items) -> int:
            return 0 if items is None else set_offs[set_entries(items)]

        ref_list_offs: Dict[int, int] = {}
        _align(buf, data_off)
        start = here()
        for _, method in dex.iter_methods():
            if method.parameter_annotations is not None:
                _align(buf, data_off)
                ref_list_offs[id(method)] = here()
                sets = [set_off(s) for s in method.parameter_annotations]
                buf += struct.pack(f"<I{len(sets)}I", len(sets), *sets)
        section(TYPE_ANNOTATION_SET_REF_LIST, len(ref_list_offs), start)

        directory_offs: Dict[int, int] = {}
        _align(buf, data_off)
        start = here()
        for cls in dex.class_defs:
            fields = sorted(
                (self.field_index[f.ref], set_off(f.annotations)) for f in cls.fields if f.annotations is not None
            )
            methods = sorted(
                (self.method_index[m.ref], set_off(m.annotations)) for m in cls.methods if m.annotations is not None
            )
            params = sorted(
                (self.method_index[m.ref], ref_list_offs[id(m)]) for m in cls.methods if id(m) in ref_list_offs
            )
            if cls.annotations is None and not fields and not methods and not params:
                continue
            _align(buf, data_off)
            directory_offs[id(cls)] = here()
            buf += struct.pack("<4I", set_off(cls.annotations), len(fields), len(methods), len(params))
            for index, off in fields + methods + params:
                buf += struct.pack("<II", index, off)
        section(TYPE_ANNOTATIONS_DIRECTORY_ITEM, len(directory_offs), start)
        return directory_offs


def write_dex(dex: DexFile, *, version: Optional[str] = None, meter: Optional[MemoryMeter] = None) -> bytes:
    """序列化DexFile

    Args:
        dex: 模型
        version: 魔数中的版本号，默认沿用模型头部
        meter: 内存计量器

    Returns:
        DEX字节，头部的file_size、校验和与签名均重新计算
    """
    data = _DexWriter(dex, version or dex.header.version).write()
    if meter is not None:
        meter.charge(len(data))
    logger.debug("写出DEX: {} 字节, {} 个类", len(data), len(dex.class_defs))
    return data
