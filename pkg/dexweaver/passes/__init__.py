"""字节码变换：广告移除、权限包装以及两者共用的指令重定位"""

from .adremove import neutralize_ads
from .relocate import Relocator, relocate, remap_register
from .report import AdConfig, InstrumentationReport, WeaveConfig, load_ad_config
from .weave import weave_permissions

__all__ = [
    "AdConfig",
    "InstrumentationReport",
    "WeaveConfig",
    "load_ad_config",
    "neutralize_ads",
    "Relocator",
    "relocate",
    "remap_register",
    "weave_permissions",
]
