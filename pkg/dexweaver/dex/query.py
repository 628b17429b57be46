"""DEX查询：广告包的try块、受权限保护的调用点、统计信息"""

from typing import TYPE_CHECKING, Iterable, List, NamedTuple, Optional

from pydantic import BaseModel

from .model import ClassDef, DexFile, EncodedMethod, MethodRef, TryItem

if TYPE_CHECKING:
    from ..policy.models import PermissionMap


class TryBlockSite(NamedTuple):
    class_def: ClassDef
    method: EncodedMethod
    try_item: TryItem


class CallSite(NamedTuple):
    class_def: ClassDef
    method: EncodedMethod
    index: int
    target: MethodRef


def package_matches(package_name: str, prefixes: Iterable[str]) -> bool:
    """按点分边界匹配包名前缀: ``com.ads`` 匹配 ``com.ads.x`` 但不匹配 ``com.adsense``"""
    for prefix in prefixes:
        if package_name == prefix or package_name.startswith(prefix + "."):
            return True
    return False


def find_try_blocks(dex: DexFile, packages: List[str]) -> List[TryBlockSite]:
    """列出指定包中所有方法的try块

    Args:
        dex: DEX模型
        packages: 包名前缀列表，为空时结果为空

    Returns:
        (类, 方法, TryItem) 列表
    """
    result = []
    if not packages:
        return result
    for cls in dex.class_defs:
        if not package_matches(cls.package_name, packages):
            continue
        for method in cls.methods:
            if method.code is None:
                continue
            for item in method.code.tries:
                result.append(TryBlockSite(cls, method, item))
    return result


def find_protected_invocations(dex: DexFile, permission_map: "PermissionMap",
                               skip_classes: Iterable[str] = ()) -> List[CallSite]:
    """列出目标方法出现在权限映射中的全部调用指令，按指令顺序排列"""
    skipped = set(skip_classes)
    result = []
    if not len(permission_map):
        return result
    for cls in dex.class_defs:
        if cls.type in skipped:
            continue
        for method in cls.methods:
            if method.code is None:
                continue
            for index, insn in enumerate(method.code.instructions):
                if insn.is_invoke and str(insn.ref) in permission_map:
                    result.append(CallSite(cls, method, index, insn.ref))
    return result


class DexStats(BaseModel):
    """单个DEX的统计信息"""

    size_kib: float
    classes: int
    methods: int
    code_items: int
    instructions: int
    tries: int
    protected_calls: int


def dex_stats(dex: DexFile, permission_map: Optional["PermissionMap"] = None, size_bytes: int = 0) -> DexStats:
    code_items = [m.code for _, m in dex.iter_methods() if m.code is not None]
    protected = len(find_protected_invocations(dex, permission_map)) if permission_map is not None else 0
    return DexStats(
        size_kib=round(size_bytes / 1024, 2),
        classes=len(dex.class_defs),
        methods=sum(len(c.methods) for c in dex.class_defs),
        code_items=len(code_items),
        instructions=sum(len(c.instructions) for c in code_items),
        tries=sum(len(c.tries) for c in code_items),
        protected_calls=protected,
    )
