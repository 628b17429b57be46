"""LEB128、MUTF-8编码与带边界检查的读取游标"""

import struct

from ..core.errors import MalformedDex, TruncatedFile


class Cursor:
    """在字节串上顺序读取，越界时抛出TruncatedFile"""

    def __init__(self, data: bytes, pos: int = 0):
        self.data = data
        self.pos = pos

    def _need(self, n: int):
        if self.pos < 0 or self.pos + n > len(self.data):
            raise TruncatedFile(f"读取 {n} 字节越界 @0x{self.pos:x}")

    def u1(self) -> int:
        self._need(1)
        value = self.data[self.pos]
        self.pos += 1
        return value

    def u2(self) -> int:
        self._need(2)
        (value,) = struct.unpack_from("<H", self.data, self.pos)
        self.pos += 2
        return value

    def u4(self) -> int:
        self._need(4)
        (value,) = struct.unpack_from("<I", self.data, self.pos)
        self.pos += 4
        return value

    def raw(self, n: int) -> bytes:
        self._need(n)
        value = self.data[self.pos:self.pos + n]
        self.pos += n
        return value

    def u2_array(self, count: int):
        self._need(count * 2)
        values = struct.unpack_from(f"<{count}H", self.data, self.pos)
        self.pos += count * 2
        return values

    def uleb128(self) -> int:
        result = 0
        shift = 0
        while True:
            byte = self.u1()
            result |= (byte & 0x7F) << shift
            if byte < 0x80:
                return result
            shift += 7
            if shift > 28:
                raise MalformedDex(f"uleb128过长 @0x{self.pos:x}")

    def sleb128(self) -> int:
        result = 0
        shift = 0
        while True:
            byte = self.u1()
            result |= (byte & 0x7F) << shift
            shift += 7
            if byte < 0x80:
                break
            if shift > 35:
                raise MalformedDex(f"sleb128过长 @0x{self.pos:x}")
        if result & (1 << (shift - 1)):
            result -= 1 << shift
        return result

    def uleb128p1(self) -> int:
        return self.uleb128() - 1

    def mutf8(self) -> str:
        end = self.data.find(b"\x00", self.pos)
        if end < 0:
            raise TruncatedFile(f"字符串没有结束符 @0x{self.pos:x}")
        chunk = self.data[self.pos:end]
        self.pos = end + 1
        if chunk.isascii():
            return chunk.decode("ascii")
        return decode_mutf8(chunk)


def decode_mutf8(chunk: bytes) -> str:
    units = []
    i = 0
    n = len(chunk)
    while i < n:
        b = chunk[i]
        if b < 0x80:
            units.append(b)
            i += 1
        elif (b & 0xE0) == 0xC0 and i + 1 < n:
            units.append(((b & 0x1F) << 6) | (chunk[i + 1] & 0x3F))
            i += 2
        elif (b & 0xF0) == 0xE0 and i + 2 < n:
            units.append(((b & 0x0F) << 12) | ((chunk[i + 1] & 0x3F) << 6) | (chunk[i + 2] & 0x3F))
            i += 3
        else:
            raise MalformedDex(f"无效的MUTF-8字节 0x{b:02x}")
    return struct.pack(f">{len(units)}H", *units).decode("utf-16-be", "surrogatepass")


def encode_mutf8(value: str) -> bytes:
    if value.isascii() and "\x00" not in value:
        return value.encode("ascii")
    out = bytearray()
    data = value.encode("utf-16-be", "surrogatepass")
    for (unit,) in struct.iter_unpack(">H", data):
        if 0 < unit < 0x80:
            out.append(unit)
        elif unit < 0x800:
            out += bytes([0xC0 | (unit >> 6), 0x80 | (unit & 0x3F)])
        else:
            out += bytes([0xE0 | (unit >> 12), 0x80 | ((unit >> 6) & 0x3F), 0x80 | (unit & 0x3F)])
    return bytes(out)


def utf16_length(value: str) -> int:
    return len(value.encode("utf-16-be", "surrogatepass")) // 2


def uleb128(value: int) -> bytes:
    out = bytearray()
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return bytes(out)


def sleb128(value: int) -> bytes:
    out = bytearray()
    while True:
        byte = value & 0x7F
        value >>= 7
        done = (value == 0 and not byte & 0x40) or (value == -1 and byte & 0x40)
        out.append(byte if done else byte | 0x80)
        if done:
            return bytes(out)


def uleb128p1(value: int) -> bytes:
    return uleb128(value + 1)
