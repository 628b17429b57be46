"""用户策略、权限映射与判定协议"""

from .engine import PolicyService, methods_for_permissions, policy_accepts
from .loaders import default_permission_map, load_permission_map, load_policy, permission_map_from_dict
from .models import NO_GRANT, UNMAPPED, Decision, PermissionMap, Policy

__all__ = [
    "NO_GRANT",
    "UNMAPPED",
    "Decision",
    "PermissionMap",
    "Policy",
    "PolicyService",
    "default_permission_map",
    "load_permission_map",
    "load_policy",
    "methods_for_permissions",
    "permission_map_from_dict",
    "policy_accepts",
]
