"""基准结果汇总：逐阶段的耗时统计与成功率"""

import csv
import io
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
from pydantic import BaseModel
from rich.console import Console
from rich.table import Table

from .pipeline import STAGES, BenchRecord, StageResult
from .regression import LinearFit

CSV_COLUMNS = ["app", "dex_size_kib", "stage", "seconds", "outcome"]
TOTAL = "total"
EXTRAPOLATE_KIB = 10 * 1024


class StageSummary(BaseModel):
    stage: str
    n: int
    ok: int
    min: Optional[float] = None
    avg: Optional[float] = None
    median: Optional[float] = None
    max: Optional[float] = None
    p95: Optional[float] = None

    @property
    def success(self) -> str:
        percent = 100 * self.ok / self.n if self.n else 0
        return f"{self.ok}/{self.n} ({percent:.0f}%)"


def _summary(stage: str, n: int, times: List[float]) -> StageSummary:
    if not times:
        return StageSummary(stage=stage, n=n, ok=0)
    values = np.array(times)
    return StageSummary(
        stage=stage,
        n=n,
        ok=len(times),
        min=float(values.min()),
        avg=float(values.mean()),
        median=float(np.median(values)),
        max=float(values.max()),
        p95=float(np.percentile(values, 95)),
    )


def summarize(records: List[BenchRecord]) -> List[StageSummary]:
    """逐阶段与端到端的统计，没有记录时返回空列表"""
    if not records:
        return []
    n = len(records)
    rows = []
    for stage in STAGES:
        times = [r.stage(stage).seconds for r in records if r.stage(stage) is not None and r.stage(stage).ok]
        rows.append(_summary(stage, n, times))
    rows.append(_summary(TOTAL, n, [r.total_seconds for r in records if r.ok]))
    return rows


def write_csv(records: List[BenchRecord], path: Union[str, Path, None] = None) -> str:
    """每个(运行, 阶段)一行；给定path时同时写入文件"""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for record in records:
        for stage in record.stages:
            writer.writerow([record.app, record.dex_size_kib, stage.stage, f"{stage.seconds:.6f}", stage.outcome])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def read_csv(path: Union[str, Path]) -> List[BenchRecord]:
    """读回 write_csv 的输出；每遇到parse行开始一条新记录"""
    records: List[BenchRecord] = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            if row["stage"] == STAGES[0] or not records:
                records.append(BenchRecord(app=row["app"], dex_size_kib=float(row["dex_size_kib"])))
            records[-1].stages.append(
                StageResult(stage=row["stage"], seconds=float(row["seconds"]), outcome=row["outcome"])
            )
    return records


def summary_csv(rows: List[StageSummary]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["stage", "min", "avg", "median", "max", "p95", "success"])
    for row in rows:
        writer.writerow([row.stage, row.min, row.avg, row.median, row.max, row.p95, row.success])
    return buf.getvalue()


def _fmt(value: Optional[float]) -> str:
    return "-" if value is None else f"{value:.3f}"


def render_summary(rows: List[StageSummary], fit: Optional[LinearFit] = None,
                   sweep: Optional[Dict[float, int]] = None, console: Optional[Console] = None):
    """用rich表格输出汇总"""
    console = console or Console()
    table = Table(title="流水线各阶段耗时 (秒)")
    for column in ("阶段", "最小", "平均", "中位数", "最大", "p95", "成功"):
        table.add_column(column, justify="left" if column in ("阶段", "成功") else "right")
    for row in rows:
        table.add_row(row.stage, _fmt(row.min), _fmt(row.avg), _fmt(row.median), _fmt(row.max), _fmt(row.p95),
                      row.success)
    console.print(table)

    if fit is not None:
        console.print(
            f"t = {fit.slope:.6f}·x + {fit.intercept:.4f}  (n={fit.n}, 残差标准误 {fit.residual_std_error:.4f})"
        )
        console.print(f"外推 {EXTRAPOLATE_KIB} KiB: {fit.predict(EXTRAPOLATE_KIB):.2f} 秒")

    if sweep:
        sweep_table = Table(title="堆上限扫描")
        sweep_table.add_column("堆上限 (MiB)", justify="right")
        sweep_table.add_column("成功的应用", justify="right")
        for ceiling, count in sorted(sweep.items()):
            sweep_table.add_row(f"{ceiling:g}", str(count))
        console.print(sweep_table)
