"""流水线基准：逐阶段计时与成功率统计

阶段依次为 parse（解包与解析）、instrument（广告移除与权限包装）、
write、repack、sign。任一阶段失败都记录在结果中，后续阶段不再执行。
"""

import os
import time
from pathlib import Path
from typing import Callable, Iterable, List, Optional, Tuple

import psutil
from loguru import logger
from pydantic import BaseModel, Field

from ..core.budget import MIB, MemoryBudget, MemoryMeter, estimate_dex_bytes
from ..core.config import get_config
from ..core.errors import DexWeaverError
from ..dex.model import DexFile
from ..dex.reader import parse_dex
from ..dex.writer import write_dex
from ..package.archive import repack, unpack
from ..package.signing import SigningIdentity, generate_identity, sign
from ..passes.adremove import neutralize_ads
from ..passes.report import AdConfig, InstrumentationReport, WeaveConfig
from ..passes.weave import weave_permissions

STAGES = ("parse", "instrument", "write", "repack", "sign")
OK = "ok"


class StageResult(BaseModel):
    stage: str
    seconds: float = Field(ge=0)
    outcome: str = OK
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.outcome == OK


class BenchRecord(BaseModel):
    """一个应用的一次流水线运行"""

    app: str
    dex_size_kib: float = Field(ge=0)
    stages: List[StageResult] = []
    peak_rss_mib: Optional[float] = None

    @property
    def ok(self) -> bool:
        return len(self.stages) == len(STAGES) and all(s.ok for s in self.stages)

    @property
    def failed_outcome(self) -> Optional[str]:
        for stage in self.stages:
            if not stage.ok:
                return stage.outcome
        return None

    def stage(self, name: str) -> Optional[StageResult]:
        for stage in self.stages:
            if stage.stage == name:
                return stage
        return None

    @property
    def total_seconds(self) -> float:
        return sum(s.seconds for s in self.stages)


class Pipeline:
    """unpack→parse→passes→write→repack→sign

    Args:
        ad: 广告移除配置，为None时跳过
        weave: 权限包装配置，为None时跳过
        identity: 签名身份，默认生成一个由种子0导出的身份
        budget: 内存预算
        strict: 为True时方法级的失败会使instrument阶段失败
        extra_entries: 重新打包时追加的条目
    """

    def __init__(
        self,
        ad: Optional[AdConfig] = None,
        weave: Optional[WeaveConfig] = None,
        identity: Optional[SigningIdentity] = None,
        budget: Optional[MemoryBudget] = None,
        strict: bool = True,
        extra_entries: Iterable[Tuple[str, bytes]] = (),
    ):
        self.ad = ad.model_copy(update={"strict": strict}) if ad is not None else None
        self.weave = weave.model_copy(update={"strict": strict}) if weave is not None else None
        self.identity = identity or generate_identity(seed=0)
        self.budget = budget
        self.extra_entries = list(extra_entries)
        self.report = InstrumentationReport()
        self.output: Optional[bytes] = None
        self._process = psutil.Process(os.getpid())

    def _rss_mib(self) -> float:
        return self._process.memory_info().rss / MIB

    def instrument(self, dex: DexFile, meter: MemoryMeter) -> DexFile:
        """依次运行启用的变换；每个变换生成新模型后释放被替换模型的计量"""
        report = InstrumentationReport()
        held = estimate_dex_bytes(dex)
        passes = [(neutralize_ads, self.ad), (weave_permissions, self.weave)]
        for transform, cfg in passes:
            if cfg is None:
                continue
            dex, pass_report = transform(dex, cfg)
            current = estimate_dex_bytes(dex)
            meter.charge(current)
            meter.release(held)
            held = current
            report = report.merge(pass_report)
        self.report = report
        return dex

    def run(self, apk: bytes, app: str = "") -> BenchRecord:
        """运行流水线，阶段错误记录在结果中而不抛出"""
        meter = MemoryMeter(self.budget)
        record = BenchRecord(app=app, dex_size_kib=0.0)
        peak = self._rss_mib()
        state = {}

        def parse():
            archive = unpack(apk)
            record.dex_size_kib = round(len(archive.classes_dex) / 1024, 2)
            state["archive"] = archive
            state["dex"] = parse_dex(archive.classes_dex, meter=meter)

        def instrument():
            state["dex"] = self.instrument(state["dex"], meter)

        def write():
            state["dex_bytes"] = write_dex(state["dex"], meter=meter)

        def repack_stage():
            state["unsigned"] = repack(state["archive"], state["dex_bytes"], self.extra_entries)

        def sign_stage():
            self.output = sign(state["unsigned"], self.identity)

        steps: List[Tuple[str, Callable[[], None]]] = [
            ("parse", parse), ("instrument", instrument), ("write", write),
            ("repack", repack_stage), ("sign", sign_stage),
        ]
        self.output = None
        for name, step in steps:
            meter.stage = name
            outcome, message = OK, ""
            start = time.perf_counter()
            try:
                step()
            except DexWeaverError as exc:
                outcome, message = type(exc).__name__, str(exc)
                logger.warning("{} 的 {} 阶段失败: {}", app or "apk", name, exc)
            except (MemoryError, RecursionError) as exc:
                outcome = type(exc).__name__
                logger.warning("{} 的 {} 阶段失败: {}", app or "apk", name, outcome)
            seconds = time.perf_counter() - start
            record.stages.append(StageResult(stage=name, seconds=seconds, outcome=outcome, message=message))
            peak = max(peak, self._rss_mib())
            logger.info("{} {}: {} ({:.3f}s)", app or "apk", name, outcome, seconds)
            if outcome != OK:
                break
        record.peak_rss_mib = round(peak, 2)
        return record


def run_pipeline(
    apk: bytes,
    ad: Optional[AdConfig] = None,
    weave: Optional[WeaveConfig] = None,
    budget: Optional[MemoryBudget] = None,
    app: str = "",
    identity: Optional[SigningIdentity] = None,
) -> BenchRecord:
    """对一个APK运行完整流水线并计时

    Args:
        apk: APK字节
        ad: 广告移除配置
        weave: 权限包装配置
        budget: 内存预算，超出时对应阶段以BudgetExceeded失败
        app: 应用标识
        identity: 签名身份

    Returns:
        BenchRecord
    """
    return Pipeline(ad=ad, weave=weave, identity=identity, budget=budget).run(apk, app=app)


def bench_corpus(
    paths: List[Path],
    ad: Optional[AdConfig] = None,
    weave: Optional[WeaveConfig] = None,
    budget: Optional[MemoryBudget] = None,
    repetitions: Optional[int] = None,
    warmup_runs: Optional[int] = None,
) -> List[BenchRecord]:
    """逐个应用运行流水线，每个应用先做预热运行（结果丢弃）"""
    config = get_config()
    repetitions = repetitions if repetitions is not None else config.repetitions
    warmup_runs = warmup_runs if warmup_runs is not None else config.warmup_runs
    identity = generate_identity(seed=0)
    pipeline = Pipeline(ad=ad, weave=weave, identity=identity, budget=budget)
    records = []
    for path in paths:
        apk = Path(path).read_bytes()
        app = Path(path).stem
        for _ in range(warmup_runs):
            pipeline.run(apk, app=app)
        for _ in range(repetitions):
            records.append(pipeline.run(apk, app=app))
    return records
