"""策略与权限映射的加载"""

import json
import re
from importlib import resources
from pathlib import Path
from typing import Dict, List, Set, Union

from loguru import logger
from pydantic import ValidationError

from ..core.errors import ConfigError
from .models import PermissionMap, Policy

_JAVA_PRIMITIVES = {
    "void": "V", "boolean": "Z", "byte": "B", "short": "S", "char": "C",
    "int": "I", "long": "J", "float": "F", "double": "D",
}
_PSCOUT_RE = re.compile(r"^<([\w.$]+):\s+([\w.$\[\]]+)\s+([\w$<>]+)\(([^)]*)\)>")


def java_to_descriptor(name: str) -> str:
    """``java.lang.String[]`` -> ``[Ljava/lang/String;``"""
    name = name.strip()
    dims = 0
    while name.endswith("[]"):
        dims += 1
        name = name[:-2]
    base = _JAVA_PRIMITIVES.get(name) or f"L{name.replace('.', '/')};"
    return "[" * dims + base


def pscout_to_signature(line: str) -> str:
    """``<android.location.LocationManager: android.location.Location getLastKnownLocation(java.lang.String)>``
    转换为DEX方法签名"""
    match = _PSCOUT_RE.match(line.strip())
    if match is None:
        raise ValueError(f"无法识别的方法行: {line!r}")
    class_name, ret, name, params = match.groups()
    params_desc = "".join(java_to_descriptor(p) for p in params.split(",") if p.strip())
    return f"{java_to_descriptor(class_name)}->{name}({params_desc}){java_to_descriptor(ret)}"


def _permission_name(text: str) -> str:
    return text.strip().rsplit(".", 1)[-1]


def read_pscout(text: str) -> Dict[str, List[str]]:
    """读取PScout格式的文本映射

    ``Permission:<name>`` 开始一个分组，紧随其后的 ``N Callers:`` 行给出方法数，
    之后每行一个方法签名。
    """
    mapping: Dict[str, Set[str]] = {}
    permission = None
    expected = None
    seen = 0

    def finish():
        if permission is not None and expected is not None and seen != expected:
            raise ConfigError(f"权限 {permission} 声明 {expected} 个方法，实际 {seen} 个")

    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("Permission:"):
            finish()
            permission = _permission_name(line[len("Permission:"):])
            expected, seen = None, 0
            continue
        if permission is None:
            raise ConfigError(f"方法行出现在任何Permission之前: {line!r}")
        if expected is None and line.split()[0].isdigit():
            expected = int(line.split()[0])
            continue
        try:
            signature = pscout_to_signature(line)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        mapping.setdefault(signature, set()).add(permission)
        seen += 1
    finish()
    return {sig: sorted(perms) for sig, perms in mapping.items()}


def _looks_like_signature(key: str) -> bool:
    return "->" in key


def permission_map_from_dict(data: dict) -> PermissionMap:
    """从字典构造权限映射，支持 方法->权限 与 权限->方法 两种方向"""
    if not isinstance(data, dict):
        raise ConfigError("权限映射必须是JSON对象")
    if data and not all(_looks_like_signature(k) for k in data):
        inverted: Dict[str, Set[str]] = {}
        for permission, methods in data.items():
            for method in methods:
                inverted.setdefault(method, set()).add(permission)
        data = inverted
    try:
        return PermissionMap(entries=data)
    except ValidationError as exc:
        raise ConfigError(f"权限映射无效: {exc}") from exc


def load_permission_map(path: Union[str, Path]) -> PermissionMap:
    """加载权限映射文件（JSON或PScout文本）"""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"权限映射文件不存在: {path}", path=str(path))
    text = path.read_text(encoding="utf-8")
    if text.lstrip().startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"权限映射JSON无效: {exc}", path=str(path)) from exc
    else:
        data = read_pscout(text)
    permission_map = permission_map_from_dict(data)
    logger.debug("加载权限映射 {}: {} 个方法", path, len(permission_map))
    return permission_map


def default_permission_map() -> PermissionMap:
    """随包附带的权限映射"""
    text = resources.files("dexweaver.policy").joinpath("data/permission_map.json").read_text(encoding="utf-8")
    return permission_map_from_dict(json.loads(text))


def load_policy(path: Union[str, Path]) -> Policy:
    """加载用户策略 ``{"apps": {"<app-id>": ["GPS"]}}``"""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"策略文件不存在: {path}", path=str(path))
    try:
        return Policy.model_validate_json(path.read_text(encoding="utf-8"))
    except ValidationError as exc:
        raise ConfigError(f"策略文件无效: {exc}", path=str(path)) from exc
