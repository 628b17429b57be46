"""桌面规模的插桩流水线基准"""

from .pipeline import STAGES, BenchRecord, Pipeline, StageResult, bench_corpus, run_pipeline
from .profiles import DEVICE_PROFILES, device_budget, heap_sweep
from .regression import LinearFit, fit_linear, timing_samples
from .report import StageSummary, read_csv, render_summary, summarize, summary_csv, write_csv
from .synth import synthesize_apk, synthesize_dex, write_corpus

__all__ = [
    "BenchRecord",
    "DEVICE_PROFILES",
    "LinearFit",
    "Pipeline",
    "STAGES",
    "StageResult",
    "StageSummary",
    "bench_corpus",
    "device_budget",
    "fit_linear",
    "heap_sweep",
    "read_csv",
    "render_summary",
    "run_pipeline",
    "summarize",
    "summary_csv",
    "synthesize_apk",
    "synthesize_dex",
    "timing_samples",
    "write_corpus",
    "write_csv",
]
