"""DexWeaver配置管理"""

import os
import sys
from pathlib import Path
from typing import Optional

from loguru import logger

DEFAULT_AD_PACKAGES = [
    "com.google.ads",
    "com.google.android.gms.ads",
    "com.google.android.ads",
    "com.admob.android.ads",
]


class DexWeaverConfig:
    """DexWeaver配置类"""

    def __init__(self, base_dir: str = None, **kwargs):
        # 基础配置
        self.base_dir = base_dir or str(Path.home() / ".dexweaver")

        # 日志配置
        self.log_level = kwargs.get("log_level", os.environ.get("DEXWEAVER_LOG", "WARNING"))

        # DEX配置
        self.dex_version = kwargs.get("dex_version", "035")

        # 插桩配置
        self.monitor_class = kwargs.get("monitor_class", "Ldexweaver/Monitor;")
        self.stub_class = kwargs.get("stub_class", "Ldexweaver/Stub;")
        self.ad_packages = kwargs.get("ad_packages", list(DEFAULT_AD_PACKAGES))

        # 解释器配置
        self.step_budget = kwargs.get("step_budget", 100000)

        # 打包配置
        self.deflate_threshold = kwargs.get("deflate_threshold", 1024)  # 字节
        self.zip_date_time = kwargs.get("zip_date_time", (1980, 1, 1, 0, 0, 0))

        # 签名配置
        self.key_size = kwargs.get("key_size", 2048)
        self.created_by = kwargs.get("created_by", "dexweaver")

        # 基准测试配置
        self.warmup_runs = kwargs.get("warmup_runs", 1)
        self.repetitions = kwargs.get("repetitions", 1)

    @property
    def db_path(self) -> Path:
        return Path(self.base_dir) / "dexweaver.db"


def setup_logging(level: Optional[str] = None):
    """配置loguru输出到stderr

    Args:
        level: 日志级别，为None时使用配置中的级别
    """
    logger.remove()
    logger.add(
        sys.stderr,
        level=(level or get_config().log_level).upper(),
        format="<green>{time:HH:mm:ss}</green> | <level>{level: <8}</level> | {name}:{function} - {message}",
    )


# 全局配置实例
_config: Optional[DexWeaverConfig] = None


def get_config() -> DexWeaverConfig:
    """获取配置实例"""
    global _config
    if _config is None:
        _config = DexWeaverConfig()
    return _config


def init_config(base_dir: str = None, **kwargs) -> DexWeaverConfig:
    """初始化配置

    Args:
        base_dir: 工作目录
        **kwargs: 其他配置参数

    Returns:
        配置实例
    """
    global _config
    _config = DexWeaverConfig(base_dir=base_dir, **kwargs)
    return _config
