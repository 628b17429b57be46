"""权限调用包装

把每个受保护的API调用点改写为::

    const-string vK, "<方法签名>"
    invoke-static {vK}, Monitor->policyAccepts(Ljava/lang/String;)Z
    move-result vB
    if-eqz vB, :stub
    <原调用>
    [move-result vR]
    goto :end
    :stub
    invoke-static {<原参数>}, Stub-><同名方法，非静态调用时首参数为接收者>
    [move-result vR]
    :end

vK、vB 是每个方法新增的两个局部寄存器。
"""

import copy
from typing import Dict, List, Set, Tuple

from loguru import logger

from ..core.errors import RegisterPressure, UnsupportedRegion
from ..dex.model import (
    ACC_NATIVE,
    ACC_PUBLIC,
    ACC_STATIC,
    ClassDef,
    CodeItem,
    DexFile,
    EncodedMethod,
    Instruction,
    MethodRef,
    ProtoRef,
    sort_members,
)
from ..dex.opcodes import BY_NAME, MOVE_RESULTS
from ..dex.query import CallSite, find_protected_invocations
from ..dex.writer import sync_pools
from .relocate import Relocator
from .report import InstrumentationReport, WeaveConfig

POLICY_ACCEPTS = "policyAccepts"
STRING = "Ljava/lang/String;"
PREFIX_LENGTH = 4


def monitor_method(monitor_class: str) -> MethodRef:
    return MethodRef(monitor_class, POLICY_ACCEPTS, ProtoRef("Z", (STRING,)))


def stub_method(stub_class: str, target: MethodRef, static: bool) -> MethodRef:
    """假实现方法：同名，非静态调用时把接收者类型作为第一个参数"""
    params = target.proto.parameters if static else (target.class_type,) + target.proto.parameters
    return MethodRef(stub_class, target.name, ProtoRef(target.proto.return_type, params))


def _is_static_call(insn: Instruction) -> bool:
    return insn.name.startswith("invoke-static")


def _wrap_site(reloc: Relocator, index: int, key_reg: int, cfg: WeaveConfig) -> MethodRef:
    """包装一个调用点，返回用到的stub方法；寄存器帧已经扩大"""
    code = reloc.code
    insn = code.instructions[index]
    if insn.ref.name == "<init>":
        raise UnsupportedRegion(f"@{index}: 不能包装构造函数调用 {insn.ref}")
    bool_reg = key_reg + 1

    end = index + 1
    result_insn = None
    if end < len(code.instructions) and code.instructions[end].name in MOVE_RESULTS:
        result_insn = copy.deepcopy(code.instructions[end])
        end += 1
    if end >= len(code.instructions):
        raise UnsupportedRegion(f"@{index}: 调用点之后没有指令")

    # 第一步：在调用组之后插入 goto :end、stub调用和结果传送
    stub_ref = stub_method(cfg.stub_class, insn.ref, _is_static_call(insn))
    stub_name = "invoke-static/range" if insn.name.endswith("/range") else "invoke-static"
    suffix = [Instruction(BY_NAME["goto"].opcode), Instruction(BY_NAME[stub_name].opcode, insn.registers, ref=stub_ref)]
    if result_insn is not None:
        suffix.append(result_insn)
    suffix[0].target = end + len(suffix)
    reloc.insert(end, suffix, anchor="after")

    # 第二步：在调用点之前插入策略判定
    stub_index = end + PREFIX_LENGTH + 1
    prefix = [
        Instruction(BY_NAME["const-string"].opcode, (key_reg,), ref=str(insn.ref)),
        Instruction(BY_NAME["invoke-static"].opcode, (key_reg,), ref=monitor_method(cfg.monitor_class)),
        Instruction(BY_NAME["move-result"].opcode, (bool_reg,)),
        Instruction(BY_NAME["if-eqz"].opcode, (bool_reg,), target=stub_index),
    ]
    reloc.insert(index, prefix, anchor="before")
    return stub_ref


def weave_method(code: CodeItem, indices: List[int], cfg: WeaveConfig) -> Tuple[CodeItem, Set[MethodRef]]:
    """包装方法中的全部调用点，从后往前处理使前面的下标保持不变"""
    key_reg = code.locals_size
    reloc = Relocator(code).grow(2)
    stubs = {_wrap_site(reloc, index, key_reg, cfg) for index in sorted(indices, reverse=True)}
    return reloc.finish(), stubs


def _ensure_class(dex: DexFile, descriptor: str, methods: Set[MethodRef]):
    """追加或补全监控/stub类，方法都是 public static native"""
    cls = dex.find_class(descriptor)
    if cls is None:
        cls = ClassDef(type=descriptor, access_flags=ACC_PUBLIC)
        dex.class_defs.append(cls)
    existing = {m.ref for m in cls.methods}
    for ref in methods - existing:
        cls.methods.append(EncodedMethod(ref, ACC_PUBLIC | ACC_STATIC | ACC_NATIVE))
    sort_members(cls)


def weave_permissions(dex: DexFile, cfg: WeaveConfig) -> Tuple[DexFile, InstrumentationReport]:
    """包装所有受权限保护的API调用

    Args:
        dex: 输入模型，不会被修改
        cfg: 权限映射与监控/stub类名

    Returns:
        (新模型, 报告)；没有包装任何调用点时不追加监控/stub类
    """
    result = copy.deepcopy(dex)
    report = InstrumentationReport()
    sites = find_protected_invocations(result, cfg.permission_map, skip_classes=(cfg.monitor_class, cfg.stub_class))
    report.n_sites = len(sites)
    by_method: Dict[int, Tuple[EncodedMethod, List[CallSite]]] = {}
    for site in sites:
        by_method.setdefault(id(site.method), (site.method, []))[1].append(site)

    stubs: Set[MethodRef] = set()
    for method, method_sites in by_method.values():
        try:
            method.code, used = weave_method(method.code, [s.index for s in method_sites], cfg)
        except (RegisterPressure, UnsupportedRegion) as exc:
            if cfg.strict:
                raise
            logger.warning("跳过方法 {}: {}", method.signature, exc)
            report.skip(method.signature, exc, len(method_sites))
            continue
        stubs |= used
        report.n_wrapped += len(method_sites)
        report.grow(method.signature, 2)
        logger.debug("{}: 包装 {} 个调用点", method.signature, len(method_sites))

    if report.n_wrapped:
        _ensure_class(result, cfg.monitor_class, {monitor_method(cfg.monitor_class)})
        _ensure_class(result, cfg.stub_class, stubs)
    sync_pools(result)
    logger.info("权限包装: {}/{} 个调用点, 跳过 {} 个方法", report.n_wrapped, report.n_sites, report.n_skipped)
    return result, report
