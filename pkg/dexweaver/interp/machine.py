"""子集指令解释器

显式的帧栈，小步执行；异常按精确类型或catch-all匹配处理项。
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from loguru import logger

from ..core.config import get_config
from ..core.errors import ArityMismatch, InterpError, UnknownEntry, UnsupportedOpcode
from ..dex.model import CodeItem, DexFile, EncodedMethod, Instruction, MethodRef
from ..policy.models import PermissionMap
from .environment import ApiEnvironment, CallRecord, Thrown
from .values import NULL_POINTER, ObjectRef, Value, is_zero, to_int32, value_to_json

RETURNED = "returned"
UNCAUGHT = "uncaught"
BUDGET_EXCEEDED = "budget_exceeded"


@dataclass
class Frame:
    method: EncodedMethod
    code: CodeItem
    regs: List[Value]
    pc: int = 0
    result: Value = None
    exception: Optional[ObjectRef] = None


@dataclass
class ExecResult:
    """一次执行的结果"""

    outcome: str
    value: Value = None
    exception: Optional[str] = None
    steps: int = 0
    call_trace: List[CallRecord] = field(default_factory=list)
    stub_trace: List[CallRecord] = field(default_factory=list)
    insn_trace: List[Tuple[str, int]] = field(default_factory=list)

    @property
    def returned(self) -> bool:
        return self.outcome == RETURNED

    def protected_calls(self, permission_map: PermissionMap) -> List[CallRecord]:
        """call_trace中受权限保护的调用"""
        return [record for record in self.call_trace if record.signature in permission_map]

    def to_dict(self) -> dict:
        data = {
            "outcome": self.outcome,
            "value": value_to_json(self.value),
            "exception": self.exception,
            "steps": self.steps,
            "call_trace": [{"method": r.signature, "args": [value_to_json(a) for a in r.args]} for r in self.call_trace],
            "stub_trace": [{"method": r.signature, "args": [value_to_json(a) for a in r.args]} for r in self.stub_trace],
        }
        if self.insn_trace:
            data["insn_trace"] = [list(item) for item in self.insn_trace]
        return data


class _Uncaught(Exception):
    def __init__(self, exc: ObjectRef):
        super().__init__(exc.type)
        self.exc = exc


class Interpreter:
    """在给定环境中解释执行DEX方法"""

    def __init__(self, dex: DexFile, env: ApiEnvironment, step_budget: Optional[int] = None, trace: bool = False):
        self.dex = dex
        self.env = env
        self.step_budget = step_budget if step_budget is not None else get_config().step_budget
        self.trace = trace
        self.frames: List[Frame] = []
        self.steps = 0
        self.next_id = 0
        self.insn_trace: List[Tuple[str, int]] = []
        self._ops: Dict[str, Callable[[Frame, Instruction], None]] = {
            "nop": self.op_nop,
            "const/4": self.op_const,
            "const/16": self.op_const,
            "const-string": self.op_const_string,
            "move": self.op_move,
            "move-object": self.op_move,
            "move-result": self.op_move_result,
            "move-result-object": self.op_move_result,
            "move-exception": self.op_move_exception,
            "new-instance": self.op_new_instance,
            "invoke-static": self.op_invoke,
            "invoke-virtual": self.op_invoke,
            "invoke-direct": self.op_invoke,
            "throw": self.op_throw,
            "goto": self.op_goto,
            "goto/16": self.op_goto,
            "if-eqz": self.op_if,
            "if-nez": self.op_if,
            "return": self.op_return,
            "return-object": self.op_return,
            "return-void": self.op_return,
            "add-int/lit8": self.op_add_lit,
        }
        self._value: Value = None

    def lookup(self, ref: MethodRef, receiver: Value = None) -> Optional[EncodedMethod]:
        """查找DEX中定义且有方法体的方法；给出接收者时先按它的运行时类型查找"""
        candidates = []
        if isinstance(receiver, ObjectRef) and receiver.type != ref.class_type:
            candidates.append(MethodRef(receiver.type, ref.name, ref.proto))
        candidates.append(ref)
        for candidate in candidates:
            method = self.dex.find_method(candidate)
            if method is not None and method.code is not None:
                return method
        return None

    def push(self, method: EncodedMethod, args: Sequence[Value]):
        code = method.code
        if len(args) != code.ins_size:
            raise ArityMismatch(f"{method.signature} 需要 {code.ins_size} 个参数，实际 {len(args)} 个")
        regs: List[Value] = [None] * code.registers_size
        regs[code.locals_size:] = list(args)
        self.frames.append(Frame(method, code, regs))

    def allocate(self, type_: str) -> ObjectRef:
        self.next_id += 1
        return ObjectRef(type_, self.next_id)

    def run(self, entry: str, args: Sequence[Value]) -> ExecResult:
        try:
            ref = MethodRef.parse(entry)
        except ValueError as exc:
            raise UnknownEntry(f"无效的入口签名: {entry}") from exc
        method = self.dex.find_method(ref)
        if method is None or method.code is None:
            raise UnknownEntry(f"入口方法不存在或没有方法体: {entry}")
        self.push(method, args)

        try:
            while self.frames:
                if self.steps >= self.step_budget:
                    logger.debug("超出步数预算 {}", self.step_budget)
                    return self._result(BUDGET_EXCEEDED)
                frame = self.frames[-1]
                if not 0 <= frame.pc < len(frame.code.instructions):
                    raise InterpError(f"{frame.method.signature}: 执行越过方法末尾")
                insn = frame.code.instructions[frame.pc]
                if insn.opaque or insn.name not in self._ops:
                    raise UnsupportedOpcode(f"{frame.method.signature} @{frame.pc}: {insn.name}")
                self.steps += 1
                if self.trace:
                    self.insn_trace.append((frame.method.signature, frame.pc))
                self._ops[insn.name](frame, insn)
        except _Uncaught as uncaught:
            return self._result(UNCAUGHT, exception=uncaught.exc.type)
        return self._result(RETURNED, value=self._value)

    def _result(self, outcome: str, value: Value = None, exception: Optional[str] = None) -> ExecResult:
        return ExecResult(
            outcome=outcome,
            value=value,
            exception=exception,
            steps=self.steps,
            call_trace=list(self.env.call_trace),
            stub_trace=list(self.env.stub_trace),
            insn_trace=list(self.insn_trace),
        )

    # 异常

    def throw(self, exc: ObjectRef):
        """把异常交给最内层匹配的处理项，没有则逐帧展开"""
        while self.frames:
            frame = self.frames[-1]
            target = self._find_handler(frame, exc)
            if target is not None:
                frame.pc = target
                frame.exception = exc
                return
            self.frames.pop()
        raise _Uncaught(exc)

    @staticmethod
    def _find_handler(frame: Frame, exc: ObjectRef) -> Optional[int]:
        for item in frame.code.tries:
            if item.start <= frame.pc < item.end:
                for handler in item.handlers:
                    if handler.exc_type is None or handler.exc_type == exc.type:
                        return handler.target
                return None
        return None

    # 指令

    def op_nop(self, frame: Frame, insn: Instruction):
        frame.pc += 1

    def op_const(self, frame: Frame, insn: Instruction):
        frame.regs[insn.registers[0]] = insn.literal
        frame.pc += 1

    def op_const_string(self, frame: Frame, insn: Instruction):
        frame.regs[insn.registers[0]] = insn.ref
        frame.pc += 1

    def op_move(self, frame: Frame, insn: Instruction):
        frame.regs[insn.registers[0]] = frame.regs[insn.registers[1]]
        frame.pc += 1

    def op_move_result(self, frame: Frame, insn: Instruction):
        frame.regs[insn.registers[0]] = frame.result
        frame.pc += 1

    def op_move_exception(self, frame: Frame, insn: Instruction):
        frame.regs[insn.registers[0]] = frame.exception
        frame.exception = None
        frame.pc += 1

    def op_new_instance(self, frame: Frame, insn: Instruction):
        frame.regs[insn.registers[0]] = self.allocate(insn.ref)
        frame.pc += 1

    def op_invoke(self, frame: Frame, insn: Instruction):
        ref: MethodRef = insn.ref
        args = tuple(frame.regs[r] for r in insn.registers)
        receiver = args[0] if insn.name != "invoke-static" and args else None
        if insn.name != "invoke-static" and is_zero(receiver):
            self.throw(self.allocate(NULL_POINTER))
            return

        if ref.class_type == self.env.monitor_class:
            frame.result = 1 if self.env.policy_accepts(args[0] if args else None) else 0
            frame.pc += 1
            return
        if ref.class_type == self.env.stub_class:
            frame.result = self.env.call_stub(ref, args)
            frame.pc += 1
            return

        method = self.lookup(ref, receiver if insn.name == "invoke-virtual" else None)
        if method is not None:
            self.push(method, args)
            return

        if ref.name == "<init>":
            if isinstance(receiver, ObjectRef):
                receiver.type = self.env.construct_type(receiver.type, self.dex.find_class(receiver.type) is not None)
            frame.result = None
            frame.pc += 1
            return

        value = self.env.call_api(ref, args)
        if isinstance(value, Thrown):
            self.throw(self.allocate(value.throw))
            return
        frame.result = value
        frame.pc += 1

    def op_throw(self, frame: Frame, insn: Instruction):
        exc = frame.regs[insn.registers[0]]
        if not isinstance(exc, ObjectRef):
            exc = self.allocate(NULL_POINTER)
        self.throw(exc)

    def op_goto(self, frame: Frame, insn: Instruction):
        frame.pc = insn.target

    def op_if(self, frame: Frame, insn: Instruction):
        zero = is_zero(frame.regs[insn.registers[0]])
        taken = zero if insn.name == "if-eqz" else not zero
        frame.pc = insn.target if taken else frame.pc + 1

    def op_return(self, frame: Frame, insn: Instruction):
        value = None if insn.name == "return-void" else frame.regs[insn.registers[0]]
        self.frames.pop()
        if self.frames:
            caller = self.frames[-1]
            caller.result = value
            caller.pc += 1
        else:
            self._value = value

    def op_add_lit(self, frame: Frame, insn: Instruction):
        source = frame.regs[insn.registers[1]]
        if not isinstance(source, int):
            raise InterpError(f"{frame.method.signature} @{frame.pc}: add-int/lit8 的操作数不是整数")
        frame.regs[insn.registers[0]] = to_int32(source + insn.literal)
        frame.pc += 1


def execute(dex: DexFile, entry: str, args: Sequence[Value] = (), env: Optional[ApiEnvironment] = None,
            step_budget: Optional[int] = None, trace: bool = False) -> ExecResult:
    """解释执行入口方法

    Args:
        dex: DEX模型
        entry: 入口方法签名，例如 ``Lapp/Main;->main()I``
        args: 参数值，个数必须等于 ins_size
        env: API环境，默认为空环境（无绑定、全部放行）
        step_budget: 步数上限，默认取配置中的 step_budget
        trace: 是否记录逐条指令轨迹

    Returns:
        ExecResult

    Raises:
        UnknownEntry, ArityMismatch, UnsupportedOpcode
    """
    env = env if env is not None else ApiEnvironment()
    env.reset()
    return Interpreter(dex, env, step_budget, trace).run(entry, args)
