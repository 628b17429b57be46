"""子集指令解释器，作为插桩前后行为比较的基准"""

from .environment import ApiEnvironment, CallRecord, EnvFile
from .machine import BUDGET_EXCEEDED, RETURNED, UNCAUGHT, ExecResult, Interpreter, execute
from .values import ObjectRef, fake_default

__all__ = [
    "ApiEnvironment",
    "BUDGET_EXCEEDED",
    "CallRecord",
    "EnvFile",
    "ExecResult",
    "Interpreter",
    "ObjectRef",
    "RETURNED",
    "UNCAUGHT",
    "execute",
    "fake_default",
]
