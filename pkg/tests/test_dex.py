"""DEX容器的解析、序列化与查询"""

import hashlib
import struct
import zlib

import pytest

from dexweaver.asm import disassemble
from dexweaver.core.budget import MemoryBudget, MemoryMeter
from dexweaver.core.errors import BadMagic, BudgetExceeded, DigestMismatch, RegisterPressure, TruncatedFile
from dexweaver.dex import MethodRef, dex_stats, find_protected_invocations, find_try_blocks, parse_dex, write_dex
from dexweaver.dex.model import FieldRef, ProtoRef, package_of, string_key
from dexweaver.passes import WeaveConfig, weave_permissions
from dexweaver.policy import PermissionMap
from tests.conftest import FIXTURE_PATHS, GET_LOCATION, load_fixture


def _dex_bytes(name: str) -> bytes:
    return write_dex(load_fixture(name))


@pytest.mark.parametrize("path", FIXTURE_PATHS, ids=lambda p: p.stem)
def test_round_trip(path):
    data = _dex_bytes(path.stem)
    model = parse_dex(data)
    assert write_dex(model) == data
    assert parse_dex(write_dex(model)) == model


def test_fixture_corpus_size():
    assert len(FIXTURE_PATHS) >= 15


def test_empty_fixture():
    dex = parse_dex(_dex_bytes("empty"))
    assert len(dex.class_defs) == 1
    assert dex.class_defs[0].type == "Lapp/Empty;"
    assert [m for _, m in dex.iter_methods() if m.code is not None] == []


def test_header_digests():
    data = _dex_bytes("empty")
    assert data[:8] == b"dex\n035\x00"
    checksum, = struct.unpack_from("<I", data, 8)
    assert checksum == zlib.adler32(data[12:])
    assert data[12:32] == hashlib.sha1(data[32:]).digest()
    file_size, = struct.unpack_from("<I", data, 32)
    assert file_size == len(data)


def test_zeroed_checksum():
    data = bytearray(_dex_bytes("hello"))
    data[8:12] = b"\x00\x00\x00\x00"
    with pytest.raises(DigestMismatch):
        parse_dex(bytes(data))
    # 不校验时仍可解析
    assert parse_dex(bytes(data), verify=False).find_class("Lapp/Hello;") is not None


def test_tampered_signature():
    data = bytearray(_dex_bytes("hello"))
    data[-1] ^= 0xFF
    with pytest.raises(DigestMismatch):
        parse_dex(bytes(data))


def test_bad_magic():
    data = _dex_bytes("hello")
    with pytest.raises(BadMagic):
        parse_dex(b"zip" + data[3:])
    with pytest.raises(BadMagic):
        parse_dex(b"dex\nabc\x00" + data[8:])


@pytest.mark.parametrize("length", [0, 2, 40, 111])
def test_truncated_header(length):
    data = _dex_bytes("hello")
    with pytest.raises((TruncatedFile, BadMagic)):
        parse_dex(data[:length])


def test_truncated_body():
    data = _dex_bytes("hello")
    with pytest.raises(TruncatedFile):
        parse_dex(data[:-16])


def test_deterministic_write():
    dex = load_fixture("gps")
    assert write_dex(dex) == write_dex(dex)
    assert write_dex(load_fixture("gps")) == write_dex(dex)


def test_version_override():
    dex = load_fixture("hello")
    data = write_dex(dex, version="037")
    assert data[:8] == b"dex\n037\x00"
    assert parse_dex(data).header.version == "037"


def test_register_pressure_on_write():
    dex = load_fixture("gps")
    code = dex.find_method(MethodRef.parse("Lapp/Main;->main()I")).code
    invoke = next(insn for insn in code.instructions if insn.name == "invoke-virtual")
    code.registers_size = 17
    invoke.registers = (16,)
    with pytest.raises(RegisterPressure):
        write_dex(dex)


def test_parse_charges_budget():
    data = _dex_bytes("gps")
    meter = MemoryMeter(MemoryBudget(ceiling_mib=len(data) / 2 / (1024 * 1024)), stage="parse")
    with pytest.raises(BudgetExceeded):
        parse_dex(data, meter=meter)

    unlimited = MemoryMeter()
    parse_dex(data, meter=unlimited)
    assert unlimited.peak > len(data)


def test_strings_survive():
    dex = parse_dex(_dex_bytes("strings"))
    assert {"Zebra", "apple", "中文字符串", 'emoji 😀 and "quotes"', ""} <= set(dex.strings)
    assert dex.strings == sorted(dex.strings, key=string_key)


def test_fields_and_flags():
    dex = parse_dex(_dex_bytes("fields"))
    cls = dex.find_class("Lapp/Config;")
    assert cls.interfaces == ["Ljava/io/Serializable;"]
    assert {str(f.ref) for f in cls.fields} == {
        "Lapp/Config;->VERSION:I",
        "Lapp/Config;->name:Ljava/lang/String;",
        "Lapp/Config;->count:J",
        "Lapp/Config;->DEBUG:Z",
    }
    assert [f.is_static for f in cls.fields] == [True, True, False, False]
    refresh = cls.find_method(MethodRef.parse("Lapp/Config;->refresh()V"))
    assert refresh.code is None
    native = cls.find_method(MethodRef.parse("Lapp/Config;->nativeHash(Ljava/lang/String;)I"))
    assert native.code is None and native.is_static


def test_refs_parse():
    ref = MethodRef.parse("Lapi/Sms;->send(Ljava/lang/String;J)V")
    assert ref.proto == ProtoRef("V", ("Ljava/lang/String;", "J"))
    assert ref.arg_words == 3
    assert str(ref) == "Lapi/Sms;->send(Ljava/lang/String;J)V"
    assert str(FieldRef.parse("Lapp/Config;->count:J")) == "Lapp/Config;->count:J"
    with pytest.raises(ValueError):
        MethodRef.parse("Lapi/Sms;.send()V")


@pytest.mark.parametrize("descriptor, package", [
    ("Lcom/ads/x/Banner;", "com.ads.x"),
    ("Lcom/google/ads/Heavy;", "com.google.ads"),
    ("LTopLevel;", ""),
    ("[Lapp/Main;", "app"),
])
def test_package_of(descriptor, package):
    assert package_of(descriptor) == package


class TestFindTryBlocks:
    def test_ad_package(self):
        sites = find_try_blocks(load_fixture("ads"), ["com.ads"])
        assert len(sites) == 2
        assert {site.class_def.type for site in sites} == {"Lcom/ads/x/Banner;"}
        assert [site.try_item.start for site in sites] == [1, 4]

    def test_no_prefixes(self):
        assert find_try_blocks(load_fixture("ads"), []) == []

    def test_no_match(self):
        assert find_try_blocks(load_fixture("ads"), ["org.none"]) == []

    def test_dotted_boundary(self):
        sites = find_try_blocks(load_fixture("ads_nested_pkg"), ["com.ads"])
        assert [site.class_def.type for site in sites] == ["Lcom/ads/sub/Inner;"]


def _text_scan(dex, permission_map: PermissionMap) -> int:
    """独立于模型遍历的计数：在反汇编文本中逐行查找"""
    count = 0
    for line in disassemble(dex).splitlines():
        words = line.strip()
        if words.startswith("invoke-") and words.rsplit(", ", 1)[-1] in permission_map.entries:
            count += 1
    return count


class TestFindProtectedInvocations:
    def test_gps(self):
        dex = load_fixture("gps")
        permission_map = PermissionMap(entries={GET_LOCATION: ["ACCESS_FINE_LOCATION"]})
        sites = find_protected_invocations(dex, permission_map)
        assert len(sites) == 3
        assert all(str(site.target) == GET_LOCATION for site in sites)
        assert [(site.method.ref.name, site.index) for site in sites] == [("main", 3), ("track", 0), ("track", 2)]

    def test_empty_map(self):
        assert find_protected_invocations(load_fixture("gps"), PermissionMap()) == []

    def test_no_invokes(self, permission_map):
        assert find_protected_invocations(load_fixture("hello"), permission_map) == []

    @pytest.mark.parametrize("path", FIXTURE_PATHS, ids=lambda p: p.stem)
    def test_matches_text_scan(self, path, permission_map):
        dex = load_fixture(path.stem)
        assert len(find_protected_invocations(dex, permission_map)) == _text_scan(dex, permission_map)


def test_pools_sorted_after_weave(permission_map):
    woven, _ = weave_permissions(load_fixture("gps"), WeaveConfig(permission_map=permission_map))
    assert woven.strings == sorted(woven.strings, key=string_key)
    assert woven.types == sorted(woven.types, key=string_key)
    assert woven.methods == sorted(woven.methods, key=MethodRef.sort_key)
    assert "policyAccepts" in woven.strings
    data = write_dex(woven)
    assert write_dex(parse_dex(data)) == data


def test_dex_stats(permission_map):
    data = _dex_bytes("gps")
    stats = dex_stats(parse_dex(data), permission_map, size_bytes=len(data))
    assert stats.classes == 1
    assert stats.methods == 2
    assert stats.code_items == 2
    assert stats.instructions == 11
    assert stats.tries == 0
    assert stats.protected_calls == 3
    assert stats.size_kib == round(len(data) / 1024, 2)
