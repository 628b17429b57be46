"""设备堆上限与堆大小扫描"""

from pathlib import Path
from typing import Dict, List, Optional

from loguru import logger

from ..core.budget import MemoryBudget
from ..core.errors import ConfigError
from ..package.signing import generate_identity
from ..passes.report import AdConfig, WeaveConfig
from .pipeline import Pipeline

DEVICE_PROFILES: Dict[str, float] = {
    "smartphone1": 24,
    "smartphone2": 32,
    "tablet1": 48,
}

SWEEP_BUDGETS = tuple(range(5, 55, 5))


def device_budget(name: str) -> MemoryBudget:
    if name not in DEVICE_PROFILES:
        raise ConfigError(f"未知的设备: {name}，可选 {', '.join(sorted(DEVICE_PROFILES))}")
    return MemoryBudget(ceiling_mib=DEVICE_PROFILES[name])


def heap_sweep(
    paths: List[Path],
    ad: Optional[AdConfig] = None,
    weave: Optional[WeaveConfig] = None,
    budgets=SWEEP_BUDGETS,
) -> Dict[float, int]:
    """对每个堆上限统计能通过全部阶段的应用数

    Returns:
        堆上限(MiB) -> 成功的应用数
    """
    identity = generate_identity(seed=0)
    apks = [(Path(p).stem, Path(p).read_bytes()) for p in paths]
    result = {}
    for ceiling in budgets:
        pipeline = Pipeline(ad=ad, weave=weave, identity=identity, budget=MemoryBudget(ceiling_mib=ceiling))
        result[ceiling] = sum(1 for app, apk in apks if pipeline.run(apk, app=app).ok)
        logger.info("堆上限 {} MiB: {}/{} 个应用成功", ceiling, result[ceiling], len(apks))
    return result
