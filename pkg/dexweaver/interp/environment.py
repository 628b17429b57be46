"""API环境

DEX中未定义的方法都由环境应答：绑定表给出脚本化的返回值，
监控类的 policyAccepts 交给策略服务判定，stub类返回假默认值。
"""

from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional, Set, Tuple, Union

from loguru import logger
from pydantic import BaseModel, ValidationError, field_validator

from ..core.config import get_config
from ..core.errors import ConfigError
from ..dex.model import MethodRef
from ..policy.engine import PolicyService
from ..policy.models import Decision
from .values import RUNTIME_EXCEPTION, ObjectRef, Value, fake_default

# 环境中默认存在无参构造函数的异常类型
DEFAULT_EXCEPTIONS = frozenset([
    "Ljava/lang/Throwable;",
    "Ljava/lang/Exception;",
    "Ljava/lang/Error;",
    "Ljava/lang/RuntimeException;",
    "Ljava/lang/NullPointerException;",
    "Ljava/lang/IllegalStateException;",
    "Ljava/lang/IllegalArgumentException;",
    "Ljava/lang/SecurityException;",
    "Ljava/io/IOException;",
    "Ljava/io/FileNotFoundException;",
    "Ljava/net/SocketException;",
    "Ljava/net/UnknownHostException;",
])

_THROWABLE_SUFFIXES = ("Exception;", "Error;", "Throwable;")


class Thrown(BaseModel):
    """绑定为抛出异常，``{"throw": "Ljava/io/IOException;"}``"""

    throw: str


Binding = Union[int, str, None, ObjectRef, Thrown]


def parse_binding(value: Any) -> Binding:
    if value is None or isinstance(value, (str, ObjectRef, Thrown)):
        return value
    if isinstance(value, bool):
        return int(value)
    if isinstance(value, int):
        return value
    if isinstance(value, dict) and set(value) == {"object"}:
        return ObjectRef(value["object"])
    if isinstance(value, dict) and set(value) == {"throw"}:
        return Thrown(throw=value["throw"])
    raise ValueError(f"无法识别的绑定值: {value!r}")


class EnvFile(BaseModel):
    """env.json 的内容"""

    app: str = ""
    bindings: Dict[str, Any] = {}

    @field_validator("bindings")
    @classmethod
    def _check_bindings(cls, bindings):
        checked = {}
        for signature, value in bindings.items():
            checked[str(MethodRef.parse(signature))] = parse_binding(value)
        return checked


class CallRecord(NamedTuple):
    signature: str
    args: Tuple[Value, ...]

    @property
    def name(self) -> str:
        return self.signature.split("->", 1)[1].split("(", 1)[0]


class ApiEnvironment:
    """解释器外部世界的脚本化替身"""

    def __init__(
        self,
        bindings: Optional[Dict[str, Any]] = None,
        policy_service: Optional[PolicyService] = None,
        app: str = "",
        monitor_class: Optional[str] = None,
        stub_class: Optional[str] = None,
        exception_types: Optional[Set[str]] = None,
    ):
        config = get_config()
        self.bindings: Dict[str, Binding] = {
            str(MethodRef.parse(sig)): parse_binding(value) for sig, value in (bindings or {}).items()
        }
        self.policy_service = policy_service
        self.app = app
        self.monitor_class = monitor_class or config.monitor_class
        self.stub_class = stub_class or config.stub_class
        self.exception_types = set(exception_types if exception_types is not None else DEFAULT_EXCEPTIONS)
        self.call_trace: List[CallRecord] = []
        self.stub_trace: List[CallRecord] = []
        self.decisions: List[Tuple[str, Decision]] = []

    @classmethod
    def from_file(cls, path: Union[str, Path], policy_service: Optional[PolicyService] = None) -> "ApiEnvironment":
        """从 env.json 创建环境"""
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"环境文件不存在: {path}", path=str(path))
        try:
            env_file = EnvFile.model_validate_json(path.read_text(encoding="utf-8"))
        except ValidationError as exc:
            raise ConfigError(f"环境文件无效: {exc}", path=str(path)) from exc
        return cls(bindings=env_file.bindings, policy_service=policy_service, app=env_file.app)

    def reset(self):
        self.call_trace.clear()
        self.stub_trace.clear()
        self.decisions.clear()

    def is_internal(self, ref: MethodRef) -> bool:
        return ref.class_type in (self.monitor_class, self.stub_class)

    def policy_accepts(self, method: Value) -> bool:
        """监控类的判定入口；没有策略服务时全部放行"""
        if self.policy_service is None:
            return True
        decision = self.policy_service.policy_accepts(self.app, str(method))
        self.decisions.append((str(method), decision))
        return decision.allowed

    def call_stub(self, ref: MethodRef, args: Tuple[Value, ...]) -> Value:
        self.stub_trace.append(CallRecord(str(ref), args))
        logger.debug("stub调用 {}", ref)
        return fake_default(ref.proto.return_type)

    def call_api(self, ref: MethodRef, args: Tuple[Value, ...]) -> Binding:
        """调用外部API：记录到call_trace并返回绑定值或假默认值"""
        signature = str(ref)
        self.call_trace.append(CallRecord(signature, args))
        if signature in self.bindings:
            return self.bindings[signature]
        return fake_default(ref.proto.return_type)

    def construct_type(self, type_: str, defined: bool) -> str:
        """外部类型的构造：环境中没有构造函数的异常类型退化为RuntimeException"""
        if defined or type_ in self.exception_types or not type_.endswith(_THROWABLE_SUFFIXES):
            return type_
        logger.debug("环境中没有 {} 的构造函数，改为 {}", type_, RUNTIME_EXCEPTION)
        return RUNTIME_EXCEPTION
