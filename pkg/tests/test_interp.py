"""解释器与插桩前后的行为比较"""

import json

import pytest

from dexweaver.core.errors import ArityMismatch, ConfigError, UnknownEntry, UnsupportedOpcode
from dexweaver.dex import Instruction, MethodRef
from dexweaver.dex.opcodes import BY_NAME
from dexweaver.interp import BUDGET_EXCEEDED, RETURNED, UNCAUGHT, ApiEnvironment, ObjectRef, execute
from dexweaver.passes import WeaveConfig, weave_permissions
from dexweaver.policy import Policy, PolicyService
from tests.conftest import GET_LOCATION, GPS_APP, load_fixture


def _env(service=None, **bindings):
    return ApiEnvironment(bindings=bindings or None, policy_service=service, app=GPS_APP)


def _woven(name, permission_map):
    woven, _ = weave_permissions(load_fixture(name), WeaveConfig(permission_map=permission_map))
    return woven


class TestOutcomes:
    def test_hello(self):
        dex = load_fixture("hello")
        result = execute(dex, "Lapp/Hello;->main()I")
        assert result.outcome == RETURNED and result.value == 1234
        assert execute(dex, "Lapp/Hello;->greet()Ljava/lang/String;").value == "hello, world"

    def test_nested_calls(self):
        assert execute(load_fixture("nested_calls"), "Lapp/Calc;->main()I").value == 7

    def test_loop(self):
        assert execute(load_fixture("loop"), "Lapp/Loop;->sum()I").value == 10

    def test_budget(self):
        result = execute(load_fixture("loop"), "Lapp/Loop;->spin()V", step_budget=500)
        assert result.outcome == BUDGET_EXCEEDED
        assert result.steps == 500

    def test_uncaught(self):
        result = execute(load_fixture("uncaught"), "Lapp/Crash;->main()V")
        assert result.outcome == UNCAUGHT
        assert result.exception == "Ljava/lang/IllegalStateException;"

    def test_null_receiver(self):
        result = execute(load_fixture("uncaught"), "Lapp/Crash;->nullCall()I")
        assert result.outcome == UNCAUGHT
        assert result.exception == "Ljava/lang/NullPointerException;"
        assert result.call_trace == []

    def test_virtual_dispatch(self):
        assert execute(load_fixture("virtual_dispatch"), "Lapp/Main;->main()I").value == 2

    def test_direct_call_ignores_runtime_type(self):
        assert execute(load_fixture("virtual_dispatch"), "Lapp/Main;->direct()I").value == 1

    def test_binding(self):
        result = execute(load_fixture("gps"), "Lapp/Main;->main()I", env=_env(**{GET_LOCATION: 42}))
        assert result.value == 42
        assert [record.signature for record in result.call_trace] == [GET_LOCATION]

    def test_unbound_api_returns_default(self):
        result = execute(load_fixture("gps"), "Lapp/Main;->main()I")
        assert result.value == 0
        assert len(result.call_trace) == 1

    def test_thrown_binding(self):
        env = _env(**{"Lapi/Net;->read()I": {"throw": "Ljava/io/IOException;"}})
        result = execute(load_fixture("weave_in_try"), "Lapp/Reader;->read(Lapi/Net;)I",
                         args=(ObjectRef("Lapi/Net;"),), env=env)
        assert result.value == -1

    def test_deterministic(self):
        dex = load_fixture("nested_calls")
        first = execute(dex, "Lapp/Calc;->main()I", trace=True)
        second = execute(dex, "Lapp/Calc;->main()I", trace=True)
        assert first.to_dict() == second.to_dict()
        assert first.insn_trace[0] == ("Lapp/Calc;->main()I", 0)
        assert len(first.insn_trace) == first.steps


class TestErrors:
    def test_unknown_entry(self):
        with pytest.raises(UnknownEntry):
            execute(load_fixture("hello"), "Lapp/Hello;->missing()I")
        with pytest.raises(UnknownEntry):
            execute(load_fixture("hello"), "not a signature")

    def test_arity(self):
        with pytest.raises(ArityMismatch):
            execute(load_fixture("gps"), "Lapp/Main;->track(Lapi/Gps;)I")

    def test_unsupported_opcode(self):
        dex = load_fixture("hello")
        code = dex.find_method(MethodRef.parse("Lapp/Hello;->main()I")).code
        code.instructions.insert(0, Instruction(BY_NAME["mul-int"].opcode, (0, 0, 0)))
        with pytest.raises(UnsupportedOpcode):
            execute(dex, "Lapp/Hello;->main()I")


class TestWovenBehavior:
    def test_gps_allowed(self, permission_map, grant_all):
        woven = _woven("gps", permission_map)
        env = _env(grant_all, **{GET_LOCATION: 42})
        result = execute(woven, "Lapp/Main;->main()I", env=env)
        assert result.value == 42
        assert [record.signature for record in result.call_trace] == [GET_LOCATION]
        assert result.stub_trace == []
        assert [(method, decision.allowed) for method, decision in env.decisions] == [(GET_LOCATION, True)]

    def test_gps_denied(self, permission_map, grant_none):
        woven = _woven("gps", permission_map)
        env = _env(grant_none, **{GET_LOCATION: 42})
        result = execute(woven, "Lapp/Main;->main()I", env=env)
        assert result.value == 0
        assert result.call_trace == []
        assert [record.name for record in result.stub_trace] == ["getLocation"]
        assert [decision.reason for _, decision in env.decisions] == ["no-grant"]

    def test_stub_receives_receiver(self, permission_map, grant_none):
        woven = _woven("gps", permission_map)
        gps = ObjectRef("Lapi/Gps;", 99)
        result = execute(woven, "Lapp/Main;->track(Lapi/Gps;)I", args=(gps,), env=_env(grant_none))
        assert [record.args for record in result.stub_trace] == [(gps,), (gps,)]

    def test_static_api(self, permission_map, grant_all, grant_none):
        woven = _woven("static_api", permission_map)
        allowed = execute(woven, "Lapp/Messenger;->send()I", env=_env(grant_all))
        assert allowed.value == 1
        assert [record.args for record in allowed.call_trace] == [("hi",)]
        denied = execute(woven, "Lapp/Messenger;->send()I", env=_env(grant_none))
        assert denied.value == 1
        assert denied.call_trace == []
        assert [record.signature for record in denied.stub_trace] == ["Ldexweaver/Stub;->send(Ljava/lang/String;)V"]

    def test_weave_in_try(self, permission_map, grant_all, grant_none):
        woven = _woven("weave_in_try", permission_map)
        bindings = {"Lapi/Net;->read()I": {"throw": "Ljava/io/IOException;"}}
        args = (ObjectRef("Lapi/Net;"),)
        entry = "Lapp/Reader;->read(Lapi/Net;)I"
        assert execute(woven, entry, args=args, env=_env(grant_all, **bindings)).value == -1
        assert execute(woven, entry, args=args, env=_env(grant_none, **bindings)).value == 0

    def test_ctor_site(self, permission_map, grant_none):
        woven = _woven("ctor_site", permission_map)
        opened = execute(woven, "Lapp/Camera;->open()Ljava/lang/Object;", env=_env(grant_none))
        assert opened.value.type == "Lapi/Cam;"
        snap = execute(woven, "Lapp/Camera;->snap(Lapi/Cam;)I", args=(ObjectRef("Lapi/Cam;"),),
                       env=_env(grant_none, **{"Lapi/Cam;->snap()I": 5}))
        assert snap.value == 0 and snap.call_trace == []


# (fixture, 入口, 参数, 绑定)
RUNS = [
    ("gps", "Lapp/Main;->main()I", (), {GET_LOCATION: 42}),
    ("gps", "Lapp/Main;->track(Lapi/Gps;)I", (ObjectRef("Lapi/Gps;"),), {GET_LOCATION: 7}),
    ("static_api", "Lapp/Messenger;->send()I", (), {}),
    ("weave_in_try", "Lapp/Reader;->read(Lapi/Net;)I", (ObjectRef("Lapi/Net;"),), {"Lapi/Net;->read()I": 3}),
    ("weave_in_try", "Lapp/Reader;->read(Lapi/Net;)I", (ObjectRef("Lapi/Net;"),),
     {"Lapi/Net;->read()I": {"throw": "Ljava/io/IOException;"}}),
    ("ctor_site", "Lapp/Camera;->snap(Lapi/Cam;)I", (ObjectRef("Lapi/Cam;"),), {"Lapi/Cam;->snap()I": 5}),
    ("hello", "Lapp/Hello;->main()I", (), {}),
]


@pytest.mark.parametrize("name, entry, args, bindings", RUNS, ids=lambda v: v if isinstance(v, str) else None)
def test_allow_all_preserves_behavior(name, entry, args, bindings, permission_map, grant_all):
    original = execute(load_fixture(name), entry, args=args, env=_env(None, **bindings))
    woven = execute(_woven(name, permission_map), entry, args=args, env=_env(grant_all, **bindings))
    assert woven.outcome == original.outcome
    assert woven.value == original.value
    assert woven.exception == original.exception
    assert woven.call_trace == original.call_trace
    assert woven.stub_trace == []


@pytest.mark.parametrize("name, entry, args, bindings", RUNS, ids=lambda v: v if isinstance(v, str) else None)
def test_deny_makes_no_protected_calls(name, entry, args, bindings, permission_map, grant_none):
    result = execute(_woven(name, permission_map), entry, args=args, env=_env(grant_none, **bindings))
    assert result.protected_calls(permission_map) == []


def test_partial_grant(permission_map):
    """只授予位置权限：位置调用照常，短信调用被替换"""
    service = PolicyService(Policy(apps={GPS_APP: ["ACCESS_FINE_LOCATION"]}), permission_map)
    gps = execute(_woven("gps", permission_map), "Lapp/Main;->main()I", env=_env(service, **{GET_LOCATION: 42}))
    assert gps.value == 42
    sms = execute(_woven("static_api", permission_map), "Lapp/Messenger;->send()I", env=_env(service))
    assert sms.call_trace == [] and len(sms.stub_trace) == 1


class TestEnvironment:
    def test_from_file(self, tmp_path):
        path = tmp_path / "env.json"
        path.write_text(json.dumps({
            "app": GPS_APP,
            "bindings": {GET_LOCATION: 5, "Lapi/Net;->open()Ljava/lang/Object;": {"object": "Lapi/Conn;"}},
        }), encoding="utf-8")
        env = ApiEnvironment.from_file(path)
        assert env.app == GPS_APP
        assert env.bindings[GET_LOCATION] == 5
        assert env.bindings["Lapi/Net;->open()Ljava/lang/Object;"] == ObjectRef("Lapi/Conn;")
        assert execute(load_fixture("gps"), "Lapp/Main;->main()I", env=env).value == 5

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            ApiEnvironment.from_file(tmp_path / "none.json")

    def test_invalid_binding(self, tmp_path):
        path = tmp_path / "env.json"
        path.write_text(json.dumps({"bindings": {GET_LOCATION: [1, 2]}}), encoding="utf-8")
        with pytest.raises(ConfigError):
            ApiEnvironment.from_file(path)

    def test_unknown_exception_type(self):
        env = ApiEnvironment()
        assert env.construct_type("Lcom/ads/AdException;", defined=False) == "Ljava/lang/RuntimeException;"
        assert env.construct_type("Ljava/io/IOException;", defined=False) == "Ljava/io/IOException;"
        assert env.construct_type("Lapi/Gps;", defined=False) == "Lapi/Gps;"

    def test_reset_between_runs(self):
        env = _env(**{GET_LOCATION: 1})
        dex = load_fixture("gps")
        execute(dex, "Lapp/Main;->main()I", env=env)
        result = execute(dex, "Lapp/Main;->main()I", env=env)
        assert len(result.call_trace) == 1


def test_to_dict():
    data = execute(load_fixture("gps"), "Lapp/Main;->main()I", env=_env(**{GET_LOCATION: 3})).to_dict()
    assert data["outcome"] == "returned"
    assert data["value"] == 3
    assert data["call_trace"] == [{"method": GET_LOCATION, "args": [{"object": "Lapi/Gps;"}]}]
    assert "insn_trace" not in data
    json.dumps(data)
