"""DexWeaver核心模块"""

from .config import DexWeaverConfig, get_config, init_config, setup_logging
from .errors import DexWeaverError

__all__ = ["DexWeaverConfig", "DexWeaverError", "get_config", "init_config", "setup_logging"]
