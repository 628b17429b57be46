"""策略判定

决策协议分两步：``policy_accepts`` 查出方法所需的权限，再逐个调用
``policy_has`` 询问应用是否持有该权限。
"""

from typing import Iterable, Set

from loguru import logger

from .models import NO_GRANT, UNMAPPED, Decision, PermissionMap, Policy


def methods_for_permissions(permission_map: PermissionMap, grants: Iterable[str]) -> Set[str]:
    """返回所需权限与授权集合有交集的全部方法签名"""
    granted = frozenset(grants)
    return {sig for sig, perms in permission_map.entries.items() if perms & granted}


def policy_accepts(policy: Policy, permission_map: PermissionMap, app: str, method: str) -> Decision:
    """判定应用能否调用某个方法

    Args:
        policy: 用户策略
        permission_map: 权限映射
        app: 应用ID
        method: 方法签名

    Returns:
        Decision，需要多个权限的方法必须全部授予
    """
    return PolicyService(policy, permission_map).policy_accepts(app, method)


class PolicyService:
    """进程内的策略服务"""

    def __init__(self, policy: Policy, permission_map: PermissionMap):
        self.policy = policy
        self.permission_map = permission_map

    def policy_has(self, app: str, permission: str) -> bool:
        return permission in self.policy.grants(app)

    def policy_accepts(self, app: str, method: str) -> Decision:
        required = self.permission_map.required(method)
        if not required:
            return Decision(allowed=True, reason=UNMAPPED)
        for permission in sorted(required):
            if not self.policy_has(app, permission):
                logger.debug("拒绝 {} 调用 {}: 缺少 {}", app, method, permission)
                return Decision(allowed=False, reason=NO_GRANT)
        return Decision(allowed=True, reason=",".join(sorted(required)))
