"""耗时与DEX大小的线性模型 t = a·x + b"""

import math
from typing import List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel

from ..core.errors import DegenerateSamples
from .pipeline import BenchRecord


class LinearFit(BaseModel):
    """最小二乘拟合结果"""

    slope: float  # 秒/KiB
    intercept: float  # 秒
    residual_std_error: float
    n: int

    def predict(self, x: float) -> float:
        return self.slope * x + self.intercept


def fit_linear(samples: Sequence[Tuple[float, float]]) -> LinearFit:
    """普通最小二乘拟合

    Args:
        samples: (DEX大小KiB, 秒) 列表

    Returns:
        LinearFit；恰好两个点时残差标准误为0

    Raises:
        DegenerateSamples: 少于两个不同的x
    """
    if len({x for x, _ in samples}) < 2:
        raise DegenerateSamples(f"至少需要两个不同大小的样本，实际 {len(samples)} 个")
    x = np.array([float(s[0]) for s in samples])
    y = np.array([float(s[1]) for s in samples])
    design = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), _, _, _ = np.linalg.lstsq(design, y, rcond=None)
    n = len(samples)
    residuals = y - (slope * x + intercept)
    rse = math.sqrt(float(residuals @ residuals) / (n - 2)) if n > 2 else 0.0
    return LinearFit(slope=float(slope), intercept=float(intercept), residual_std_error=rse, n=n)


def timing_samples(records: List[BenchRecord]) -> List[Tuple[float, float]]:
    """成功完成全部阶段的运行的 (大小, 端到端耗时)"""
    return [(r.dex_size_kib, r.total_seconds) for r in records if r.ok]
