"""广告库移除

在广告包中每个try块的起点插入一段抛出异常的代码，使try体永远不被执行，
控制流直接进入异常处理分支。
"""

import copy
from typing import Dict, List, Tuple

from loguru import logger

from ..core.errors import RegisterPressure, UnsupportedRegion
from ..dex.model import CodeItem, DexFile, EncodedMethod, Instruction, MethodRef, ProtoRef, TryItem, package_of
from ..dex.opcodes import BY_NAME
from ..dex.query import find_try_blocks
from ..dex.writer import sync_pools
from .relocate import Relocator
from .report import AdConfig, InstrumentationReport

RUNTIME_EXCEPTION = "Ljava/lang/RuntimeException;"
IO_PACKAGES = ("java.io", "java.net")


def exception_type(item: TryItem) -> str:
    """被注入的异常类型：第一个处理项的类型，catch-all时使用RuntimeException"""
    return item.handlers[0].exc_type or RUNTIME_EXCEPTION


def throw_sequence(reg: int, exc_type: str) -> List[Instruction]:
    """``new-instance vF, T; invoke-direct {vF}, T-><init>()V; throw vF``"""
    return [
        Instruction(BY_NAME["new-instance"].opcode, (reg,), ref=exc_type),
        Instruction(BY_NAME["invoke-direct"].opcode, (reg,), ref=MethodRef(exc_type, "<init>", ProtoRef("V"))),
        Instruction(BY_NAME["throw"].opcode, (reg,)),
    ]


def handles_io(item: TryItem) -> bool:
    return any(h.exc_type is not None and package_of(h.exc_type) in IO_PACKAGES for h in item.handlers)


def neutralize_method(code: CodeItem, items: List[TryItem]) -> Tuple[CodeItem, int]:
    """对方法中选中的try块逐个注入抛出序列

    Returns:
        (新方法体, 注入的序列数)
    """
    fresh = code.locals_size
    chosen = sorted((code.tries.index(item) for item in items), key=lambda i: code.tries[i].start, reverse=True)
    reloc = Relocator(code).grow(1)
    for position in chosen:
        item = reloc.code.tries[position]
        reloc.insert(item.start, throw_sequence(fresh, exception_type(item)), anchor="before")
    return reloc.finish(), len(chosen)


def neutralize_ads(dex: DexFile, cfg: AdConfig) -> Tuple[DexFile, InstrumentationReport]:
    """移除广告包中try块的执行

    Args:
        dex: 输入模型，不会被修改
        cfg: 广告包配置

    Returns:
        (新模型, 报告)
    """
    result = copy.deepcopy(dex)
    report = InstrumentationReport()
    by_method: Dict[int, Tuple[EncodedMethod, List[TryItem]]] = {}
    for site in find_try_blocks(result, cfg.ad_packages):
        if cfg.io_only and not handles_io(site.try_item):
            continue
        by_method.setdefault(id(site.method), (site.method, []))[1].append(site.try_item)

    for method, items in by_method.values():
        try:
            method.code, count = neutralize_method(method.code, items)
        except (RegisterPressure, UnsupportedRegion) as exc:
            if cfg.strict:
                raise
            logger.warning("跳过方法 {}: {}", method.signature, exc)
            report.skip(method.signature, exc, len(items))
            continue
        report.n_try_neutralized += count
        report.grow(method.signature, 1)
        logger.debug("{}: 注入 {} 处抛出序列", method.signature, count)

    sync_pools(result)
    logger.info("广告移除: {} 个try块, 跳过 {} 个方法", report.n_try_neutralized, report.n_skipped)
    return result, report
