"""命令行参数对应的配置模型"""

from pathlib import Path
from typing import Optional

from pydantic import BaseModel

from ..core.errors import ConfigError


class PipelineConfig(BaseModel):
    """pipeline子命令的配置"""

    ad_config: Optional[Path] = None
    permission_map: Optional[Path] = None
    policy: Optional[Path] = None
    keystore: Optional[Path] = None
    output_dir: Path
    adremove: bool = True
    weave: bool = True

    def check_paths(self):
        """输入文件必须在调用时存在"""
        for name in ("ad_config", "permission_map", "policy", "keystore"):
            path = getattr(self, name)
            if path is not None and not path.exists():
                raise ConfigError(f"{name} 文件不存在: {path}", path=str(path))
