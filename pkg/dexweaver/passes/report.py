"""插桩配置与报告"""

import re
from pathlib import Path
from typing import Dict, List, Union

from pydantic import BaseModel, Field, ValidationError, computed_field, field_validator, model_validator

from ..core.config import get_config
from ..core.errors import ConfigError
from ..policy.models import PermissionMap

_PACKAGE_RE = re.compile(r"^[A-Za-z_$][\w$]*(\.[A-Za-z_$][\w$]*)*$")
_CLASS_RE = re.compile(r"^L[^;\s]+;$")


class AdConfig(BaseModel):
    """广告移除配置"""

    ad_packages: List[str] = Field(default_factory=lambda: list(get_config().ad_packages))
    # 只处理带有java.io/java.net异常处理项的try块
    io_only: bool = False
    strict: bool = False

    @field_validator("ad_packages")
    @classmethod
    def _check_packages(cls, packages):
        for name in packages:
            if not _PACKAGE_RE.match(name):
                raise ValueError(f"无效的包名前缀: {name!r}")
        return packages


class WeaveConfig(BaseModel):
    """权限包装配置"""

    permission_map: PermissionMap
    monitor_class: str = Field(default_factory=lambda: get_config().monitor_class)
    stub_class: str = Field(default_factory=lambda: get_config().stub_class)
    strict: bool = False

    @model_validator(mode="after")
    def _check_classes(self):
        for name in (self.monitor_class, self.stub_class):
            if not _CLASS_RE.match(name):
                raise ValueError(f"无效的类描述符: {name!r}")
        if self.monitor_class == self.stub_class:
            raise ValueError("monitor_class 与 stub_class 不能相同")
        return self


class SkippedMethod(BaseModel):
    method: str
    reason: str
    error: str
    sites: int = 0


class InstrumentationReport(BaseModel):
    """插桩报告"""

    n_sites: int = 0
    n_wrapped: int = 0
    n_try_neutralized: int = 0
    skipped: List[SkippedMethod] = []
    registers_grown: Dict[str, int] = {}

    @computed_field
    @property
    def n_skipped(self) -> int:
        return len(self.skipped)

    def skip(self, method: str, exc: Exception, sites: int = 0):
        self.skipped.append(SkippedMethod(method=method, reason=str(exc), error=type(exc).__name__, sites=sites))

    def grow(self, method: str, count: int):
        if count:
            self.registers_grown[method] = self.registers_grown.get(method, 0) + count

    def merge(self, other: "InstrumentationReport") -> "InstrumentationReport":
        """合并两个报告，用于依次运行多个pass"""
        merged = self.model_copy(deep=True)
        merged.n_sites += other.n_sites
        merged.n_wrapped += other.n_wrapped
        merged.n_try_neutralized += other.n_try_neutralized
        merged.skipped.extend(item.model_copy() for item in other.skipped)
        for method, count in other.registers_grown.items():
            merged.grow(method, count)
        return merged


def load_ad_config(path: Union[str, Path]) -> AdConfig:
    """读取广告移除配置 ``{"ad_packages": [...], "io_only": false}``"""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"广告配置文件不存在: {path}", path=str(path))
    try:
        return AdConfig.model_validate_json(path.read_text(encoding="utf-8"))
    except ValidationError as exc:
        raise ConfigError(f"广告配置无效: {exc}", path=str(path)) from exc
