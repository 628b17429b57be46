"""广告移除、权限包装与指令重定位"""

import pytest
from pydantic import ValidationError

from dexweaver.asm import disassemble
from dexweaver.core.errors import ConfigError, RegisterPressure, UnsupportedRegion
from dexweaver.dex import Instruction, MethodRef, find_protected_invocations, parse_dex, write_dex
from dexweaver.dex.opcodes import BY_NAME
from dexweaver.interp import execute
from dexweaver.passes import (
    AdConfig,
    InstrumentationReport,
    WeaveConfig,
    load_ad_config,
    neutralize_ads,
    Relocator,
    relocate,
    remap_register,
    weave_permissions,
)
from dexweaver.policy import PermissionMap
from tests.conftest import FIXTURE_PATHS, GET_LOCATION, load_fixture

BANNER_LOAD = "Lcom/ads/x/Banner;->load()I"
MONITOR = "Ldexweaver/Monitor;"
STUB = "Ldexweaver/Stub;"


def _code(dex, signature):
    return dex.find_method(MethodRef.parse(signature)).code


def _nops(n):
    return [Instruction(BY_NAME["nop"].opcode) for _ in range(n)]


class TestRelocate:
    def test_identity(self):
        code = _code(load_fixture("branch_reloc"), "Lapp/Branch;->pick(Ljava/lang/Object;)I")
        result = relocate(code, 1, [], 0)
        assert result == code
        assert result is not code

    def test_branch_and_parameter_shift(self):
        code = _code(load_fixture("branch_reloc"), "Lapp/Branch;->pick(Ljava/lang/Object;)I")
        assert code.instructions[1].name == "if-eqz" and code.instructions[1].target == 3
        old_offset = code.addresses()[3] - code.addresses()[1]

        result = relocate(code, 3, _nops(3), extra_regs=1)
        assert result.registers_size == 5
        assert result.ins_size == 1
        branch = result.instructions[1]
        assert branch.registers == (4,)
        assert result.instructions[branch.target].name == "return"
        addrs = result.addresses()
        assert addrs[branch.target] - addrs[1] == old_offset + 3
        # 局部寄存器不动
        assert result.instructions[0].registers == (0,)
        assert result.instructions[-1].registers == (0,)

    def test_disassembly_after_relocation(self):
        code = _code(load_fixture("branch_reloc"), "Lapp/Branch;->pick(Ljava/lang/Object;)I")
        dex = load_fixture("branch_reloc")
        dex.find_method(MethodRef.parse("Lapp/Branch;->pick(Ljava/lang/Object;)I")).code = relocate(
            code, 3, _nops(3), extra_regs=1
        )
        text = disassemble(dex)
        assert "if-eqz v4, :L0" in text
        assert ".registers 5" in text

    def test_anchor_before(self):
        code = _code(load_fixture("branch_reloc"), "Lapp/Branch;->pick(Ljava/lang/Object;)I")
        result = relocate(code, 3, _nops(2), anchor="before")
        assert result.instructions[1].target == 3
        assert result.instructions[3].name == "nop"

    def test_try_widening(self):
        code = _code(load_fixture("ads"), BANNER_LOAD)
        assert (code.tries[0].start, code.tries[0].end) == (1, 3)

        before = relocate(code, 1, _nops(1), anchor="before")
        assert (before.tries[0].start, before.tries[0].end) == (1, 4)
        assert (before.tries[1].start, before.tries[1].end) == (5, 7)

        after = relocate(code, 1, _nops(1), anchor="after")
        assert (after.tries[0].start, after.tries[0].end) == (2, 4)
        assert all(h.target == code.tries[0].handlers[0].target + 1 for h in after.tries[0].handlers)

    def test_register_pressure(self):
        code = _code(load_fixture("pressure"), "Lcom/google/ads/Heavy;->load(Lapi/Gps;)I")
        with pytest.raises(RegisterPressure):
            relocate(code, 0, [], extra_regs=1)

    def test_no_insert_before_move_result(self):
        code = _code(load_fixture("gps"), "Lapp/Main;->main()I")
        with pytest.raises(UnsupportedRegion):
            relocate(code, 4, _nops(1))

    def test_out_of_range(self):
        code = _code(load_fixture("hello"), "Lapp/Hello;->main()I")
        with pytest.raises(UnsupportedRegion):
            relocate(code, 5, _nops(1))
        with pytest.raises(ValueError):
            relocate(code, 0, _nops(1), anchor="middle")

    def test_input_untouched(self):
        dex = load_fixture("branch_reloc")
        code = _code(dex, "Lapp/Branch;->pick(Ljava/lang/Object;)I")
        relocate(code, 3, _nops(3), extra_regs=1)
        assert code == _code(load_fixture("branch_reloc"), "Lapp/Branch;->pick(Ljava/lang/Object;)I")

    def test_relocator_matches_chained_relocate(self):
        code = _code(load_fixture("ads"), BANNER_LOAD)
        chained = relocate(relocate(code, 4, _nops(2), anchor="before"), 1, _nops(1), extra_regs=1, anchor="before")
        reloc = Relocator(code).grow(1)
        body = reloc.code
        reloc.insert(4, _nops(2), anchor="before").insert(1, _nops(1), anchor="before")
        result = reloc.finish()
        assert result is body
        assert result == chained
        assert [(t.start, t.end) for t in result.tries] == [(1, 4), (5, 9)]
        assert code == _code(load_fixture("ads"), BANNER_LOAD)

    def test_relocator_untouched_body(self):
        code = _code(load_fixture("hello"), "Lapp/Hello;->main()I")
        result = Relocator(code).finish()
        assert result == code and result is not code

    @pytest.mark.parametrize("reg, expected", [(0, 0), (2, 2), (3, 5), (4, 6)])
    def test_remap_register(self, reg, expected):
        assert remap_register(reg, 3, 2) == expected


class TestNeutralizeAds:
    def test_ads_fixture(self):
        dex = load_fixture("ads")
        result, report = neutralize_ads(dex, AdConfig(ad_packages=["com.ads"]))
        assert report.n_try_neutralized == 2
        assert report.n_skipped == 0
        assert report.registers_grown == {BANNER_LOAD: 1}

        code = _code(result, BANNER_LOAD)
        assert code.registers_size == _code(dex, BANNER_LOAD).registers_size + 1
        for item in code.tries:
            injected = code.instructions[item.start:item.start + 3]
            assert [insn.name for insn in injected] == ["new-instance", "invoke-direct", "throw"]
            assert injected[0].ref == "Ljava/io/IOException;"
            assert str(injected[1].ref) == "Ljava/io/IOException;-><init>()V"
            assert all(insn.registers == (2,) for insn in injected)

    def test_ads_enter_handler(self):
        result, _ = neutralize_ads(load_fixture("ads"), AdConfig(ad_packages=["com.ads"]))
        code = _code(result, BANNER_LOAD)
        first = code.tries[0]
        body = set(range(first.start + 3, first.end))

        outcome = execute(result, BANNER_LOAD, trace=True)
        assert outcome.value == 7
        executed = [pc for method, pc in outcome.insn_trace if method == BANNER_LOAD]
        handler = first.handlers[0].target
        assert handler in executed
        assert not body & set(executed[:executed.index(handler)])
        assert outcome.call_trace == []

        assert execute(load_fixture("ads"), BANNER_LOAD).value == 1

    def test_other_classes_untouched(self):
        dex = load_fixture("ads")
        result, _ = neutralize_ads(dex, AdConfig(ad_packages=["com.ads"]))
        assert result.find_class("Lcom/app/Main;") == dex.find_class("Lcom/app/Main;")

    def test_empty_prefixes(self):
        dex = load_fixture("ads")
        result, report = neutralize_ads(dex, AdConfig(ad_packages=[]))
        assert result == dex
        assert report.n_try_neutralized == 0
        assert write_dex(result) == write_dex(dex)

    def test_catch_all(self):
        result, report = neutralize_ads(load_fixture("catchall"), AdConfig(ad_packages=["com.ads"]))
        assert report.n_try_neutralized == 1
        code = _code(result, "Lcom/ads/Tracker;->ping()I")
        assert code.instructions[0].ref == "Ljava/lang/RuntimeException;"
        assert execute(result, "Lcom/ads/Tracker;->ping()I").value == 3

    def test_first_handler_type(self):
        result, _ = neutralize_ads(load_fixture("multi_handler"), AdConfig())
        code = _code(result, "Lcom/admob/android/ads/Loader;->load()I")
        assert code.instructions[0].ref == "Ljava/io/IOException;"
        assert execute(result, "Lcom/admob/android/ads/Loader;->load()I").value == 1

    def test_io_only(self):
        _, report = neutralize_ads(load_fixture("ads"), AdConfig(ad_packages=["com.ads"], io_only=True))
        assert report.n_try_neutralized == 2
        result, report = neutralize_ads(load_fixture("catchall"), AdConfig(ad_packages=["com.ads"], io_only=True))
        assert report.n_try_neutralized == 0
        assert result == load_fixture("catchall")

    def test_nested_packages(self):
        result, report = neutralize_ads(load_fixture("ads_nested_pkg"), AdConfig(ad_packages=["com.ads"]))
        assert report.n_try_neutralized == 1
        assert execute(result, "Lcom/ads/sub/Inner;->go()I").value == 5
        assert execute(result, "Lcom/adsense/Other;->go()I").value == 0

    def test_register_pressure_skips_method(self):
        dex = load_fixture("pressure")
        result, report = neutralize_ads(dex, AdConfig(ad_packages=["com.google.ads"]))
        assert report.n_try_neutralized == 0
        assert [(s.method, s.error, s.sites) for s in report.skipped] == [
            ("Lcom/google/ads/Heavy;->load(Lapi/Gps;)I", "RegisterPressure", 1)
        ]
        assert result == dex

    def test_strict(self):
        with pytest.raises(RegisterPressure):
            neutralize_ads(load_fixture("pressure"), AdConfig(ad_packages=["com.google.ads"], strict=True))

    def test_output_round_trips(self):
        result, _ = neutralize_ads(load_fixture("ads"), AdConfig(ad_packages=["com.ads"]))
        data = write_dex(result)
        assert parse_dex(data) == parse_dex(write_dex(parse_dex(data)))

    @pytest.mark.parametrize("packages", [["com..ads"], [""], ["com.ads."]])
    def test_invalid_prefix(self, packages):
        with pytest.raises(ValidationError):
            AdConfig(ad_packages=packages)

    def test_load_config(self, tmp_path):
        path = tmp_path / "ads.json"
        path.write_text('{"ad_packages": ["com.ads"], "io_only": true}', encoding="utf-8")
        cfg = load_ad_config(path)
        assert cfg.ad_packages == ["com.ads"] and cfg.io_only
        with pytest.raises(ConfigError):
            load_ad_config(tmp_path / "missing.json")
        path.write_text('{"ad_packages": "com.ads"}', encoding="utf-8")
        with pytest.raises(ConfigError):
            load_ad_config(path)


class TestWeavePermissions:
    def test_gps(self, permission_map):
        dex = load_fixture("gps")
        result, report = weave_permissions(dex, WeaveConfig(permission_map=permission_map))
        assert report.n_sites == 3
        assert report.n_wrapped == 3
        assert report.n_skipped == 0
        assert report.registers_grown == {"Lapp/Main;->main()I": 2, "Lapp/Main;->track(Lapi/Gps;)I": 2}

        lines = [line.strip() for line in disassemble(result).splitlines()]
        calls = [line for line in lines if line.startswith("invoke-static") and "->policyAccepts(" in line]
        assert len(calls) == 3
        assert result.find_class(MONITOR) is not None
        assert result.find_class(STUB) is not None
        stub = result.find_class(STUB).methods
        assert [str(m.ref) for m in stub] == ["Ldexweaver/Stub;->getLocation(Lapi/Gps;)I"]
        assert all(m.code is None for m in stub)

    def test_wrapper_layout(self, permission_map):
        result, _ = weave_permissions(load_fixture("gps"), WeaveConfig(permission_map=permission_map))
        code = _code(result, "Lapp/Main;->main()I")
        assert code.registers_size == 4
        assert [insn.name for insn in code.instructions] == [
            "const/4", "new-instance", "invoke-direct",
            "const-string", "invoke-static", "move-result", "if-eqz",
            "invoke-virtual", "move-result", "goto",
            "invoke-static", "move-result",
            "return",
        ]
        assert code.instructions[3].ref == GET_LOCATION
        assert code.instructions[3].registers == (2,)
        assert code.instructions[5].registers == (3,)
        assert code.instructions[6].target == 10
        assert code.instructions[9].target == 12
        # 两个分支都保留原来的 move-result v1
        assert code.instructions[8].registers == (1,)
        assert code.instructions[11].registers == (1,)
        assert code.instructions[10].registers == code.instructions[7].registers == (0,)

    def test_static_call_without_result(self, permission_map):
        result, report = weave_permissions(load_fixture("static_api"), WeaveConfig(permission_map=permission_map))
        assert report.n_wrapped == 1
        code = _code(result, "Lapp/Messenger;->send()I")
        stub_call = next(i for i in code.instructions if i.name == "invoke-static" and i.ref.class_type == STUB)
        assert str(stub_call.ref) == "Ldexweaver/Stub;->send(Ljava/lang/String;)V"

    def test_empty_map(self):
        dex = load_fixture("gps")
        result, report = weave_permissions(dex, WeaveConfig(permission_map=PermissionMap()))
        assert result == dex
        assert report.n_wrapped == 0
        assert result.find_class(MONITOR) is None

    def test_constructor_site_skipped(self, permission_map):
        result, report = weave_permissions(load_fixture("ctor_site"), WeaveConfig(permission_map=permission_map))
        assert report.n_sites == 2
        assert report.n_wrapped == 1
        assert [(s.method, s.error) for s in report.skipped] == [
            ("Lapp/Camera;->open()Ljava/lang/Object;", "UnsupportedRegion")
        ]
        assert _code(result, "Lapp/Camera;->open()Ljava/lang/Object;") == _code(
            load_fixture("ctor_site"), "Lapp/Camera;->open()Ljava/lang/Object;"
        )

    def test_register_pressure_skips_method(self, permission_map):
        _, report = weave_permissions(load_fixture("pressure"), WeaveConfig(permission_map=permission_map))
        assert report.n_wrapped == 0
        assert [s.error for s in report.skipped] == ["RegisterPressure"]

    def test_strict(self, permission_map):
        with pytest.raises(RegisterPressure):
            weave_permissions(load_fixture("pressure"), WeaveConfig(permission_map=permission_map, strict=True))

    def test_weave_twice(self, permission_map):
        cfg = WeaveConfig(permission_map=permission_map)
        once, _ = weave_permissions(load_fixture("gps"), cfg)
        twice, report = weave_permissions(once, cfg)
        assert report.n_wrapped == 3
        assert len(twice.find_class(MONITOR).methods) == 1
        assert len(twice.find_class(STUB).methods) == 1
        assert len([c for c in twice.class_defs if c.type == MONITOR]) == 1

    def test_custom_classes(self, permission_map):
        cfg = WeaveConfig(permission_map=permission_map, monitor_class="Lsec/Guard;", stub_class="Lsec/Fake;")
        result, _ = weave_permissions(load_fixture("gps"), cfg)
        assert result.find_class("Lsec/Guard;") is not None
        assert result.find_class(MONITOR) is None

    @pytest.mark.parametrize("monitor, stub", [
        ("dexweaver.Monitor", STUB),
        (MONITOR, MONITOR),
    ])
    def test_invalid_classes(self, permission_map, monitor, stub):
        with pytest.raises(ValidationError):
            WeaveConfig(permission_map=permission_map, monitor_class=monitor, stub_class=stub)

    @pytest.mark.parametrize("path", FIXTURE_PATHS, ids=lambda p: p.stem)
    def test_count_law(self, path, permission_map):
        dex = load_fixture(path.stem)
        expected = len(find_protected_invocations(dex, permission_map))
        _, report = weave_permissions(dex, WeaveConfig(permission_map=permission_map))
        assert report.n_sites == expected
        assert report.n_wrapped + sum(s.sites for s in report.skipped) == expected


def test_report_merge():
    first = InstrumentationReport(n_try_neutralized=2, registers_grown={"a": 1})
    first.skip("b", RegisterPressure("x"), 1)
    second = InstrumentationReport(n_sites=3, n_wrapped=3, registers_grown={"a": 2})
    merged = first.merge(second)
    assert (merged.n_sites, merged.n_wrapped, merged.n_try_neutralized) == (3, 3, 2)
    assert merged.registers_grown == {"a": 3}
    assert merged.n_skipped == 1
    assert first.n_wrapped == 0
    assert merged.model_dump()["n_skipped"] == 1
