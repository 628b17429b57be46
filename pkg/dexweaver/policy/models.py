"""权限映射、用户策略与决策"""

import re
from typing import Dict, FrozenSet, List, Set

from pydantic import BaseModel, field_validator

from ..dex.model import MethodRef

PERMISSION_RE = re.compile(r"^[A-Z][A-Z0-9_]*$")
NO_GRANT = "no-grant"
UNMAPPED = "unmapped"


def _check_permissions(perms) -> FrozenSet[str]:
    perms = frozenset(perms)
    if not perms:
        raise ValueError("权限集合不能为空")
    for name in perms:
        if not PERMISSION_RE.match(name):
            raise ValueError(f"无效的权限名: {name!r}")
    return perms


class PermissionMap(BaseModel):
    """API方法签名 -> 所需权限集合"""

    entries: Dict[str, FrozenSet[str]] = {}

    @field_validator("entries")
    @classmethod
    def _validate(cls, entries):
        checked = {}
        for signature, perms in entries.items():
            try:
                canonical = str(MethodRef.parse(signature))
            except ValueError as exc:
                raise ValueError(str(exc)) from exc
            if canonical in checked:
                raise ValueError(f"重复的方法签名: {signature}")
            checked[canonical] = _check_permissions(perms)
        return checked

    def __contains__(self, signature: str) -> bool:
        return signature in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def signatures(self) -> List[str]:
        return sorted(self.entries)

    def required(self, signature: str) -> FrozenSet[str]:
        return self.entries.get(signature, frozenset())

    @property
    def permissions(self) -> Set[str]:
        result: Set[str] = set()
        for perms in self.entries.values():
            result |= perms
        return result

    def by_permission(self) -> Dict[str, Set[str]]:
        """反向映射: 权限 -> 方法签名集合"""
        inverted: Dict[str, Set[str]] = {}
        for signature, perms in self.entries.items():
            for perm in perms:
                inverted.setdefault(perm, set()).add(signature)
        return inverted


class Policy(BaseModel):
    """用户策略: 应用ID -> 授予的权限集合"""

    apps: Dict[str, FrozenSet[str]] = {}

    @field_validator("apps")
    @classmethod
    def _validate(cls, apps):
        for app_id, perms in apps.items():
            for name in perms:
                if not PERMISSION_RE.match(name):
                    raise ValueError(f"应用 {app_id} 的权限名无效: {name!r}")
        return apps

    def grants(self, app_id: str) -> FrozenSet[str]:
        """未知应用默认没有任何授权"""
        return self.apps.get(app_id, frozenset())


class Decision(BaseModel):
    """策略决策

    reason 为逗号分隔的已授予权限、``"no-grant"`` 或 ``"unmapped"``。
    allowed 为真当且仅当 reason 列出已授予的权限，唯一的例外是映射中没有的方法：
    它们从不被包装，以 ``"unmapped"`` 原样放行。
    """

    allowed: bool
    reason: str

    @property
    def unmapped(self) -> bool:
        return self.reason == UNMAPPED

    @property
    def permissions(self) -> FrozenSet[str]:
        """reason 中列出的权限；拒绝和未映射时为空"""
        if self.reason in (NO_GRANT, UNMAPPED):
            return frozenset()
        return frozenset(self.reason.split(","))

    def __bool__(self) -> bool:
        return self.allowed
