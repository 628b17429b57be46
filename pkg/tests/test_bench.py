"""流水线基准、回归与汇总"""

import statistics

import numpy as np
import pytest
from rich.console import Console

from dexweaver.bench import (
    STAGES,
    BenchRecord,
    Pipeline,
    StageResult,
    bench_corpus,
    device_budget,
    fit_linear,
    heap_sweep,
    read_csv,
    render_summary,
    run_pipeline,
    summarize,
    summary_csv,
    synthesize_apk,
    synthesize_dex,
    timing_samples,
    write_corpus,
    write_csv,
)
from dexweaver.bench.synth import synth_source
from dexweaver.core.budget import MemoryBudget, MemoryMeter, estimate_dex_bytes
from dexweaver.core.database import DatabaseManager
from dexweaver.core.errors import ConfigError, DegenerateSamples
from dexweaver.dex import find_protected_invocations, find_try_blocks, parse_dex, write_dex
from dexweaver.package import unpack, verify, write_zip
from dexweaver.passes import AdConfig, WeaveConfig
from dexweaver.policy import default_permission_map
from tests.conftest import load_fixture


@pytest.fixture
def configs():
    return AdConfig(), WeaveConfig(permission_map=default_permission_map())


def _record(app, size, seconds, failed_at=None):
    stages = []
    for stage in STAGES:
        outcome = "BudgetExceeded" if stage == failed_at else "ok"
        stages.append(StageResult(stage=stage, seconds=seconds, outcome=outcome))
        if outcome != "ok":
            break
    return BenchRecord(app=app, dex_size_kib=size, stages=stages)


class TestFitLinear:
    def test_two_points(self):
        fit = fit_linear([(0, 0.3), (100, 7.2)])
        assert fit.slope == pytest.approx(0.069)
        assert fit.intercept == pytest.approx(0.3)
        assert fit.residual_std_error == 0.0
        assert fit.predict(200) == pytest.approx(14.1)

    def test_constant(self):
        fit = fit_linear([(10, 2.0), (20, 2.0), (30, 2.0)])
        assert fit.slope == pytest.approx(0.0, abs=1e-12)
        assert fit.intercept == pytest.approx(2.0)

    def test_noisy(self):
        rng = np.random.default_rng(1)
        x = np.linspace(50, 2000, 200)
        y = 0.049 * x - 0.4 + rng.normal(0, 0.5, size=x.size)
        fit = fit_linear(list(zip(x, y)))
        assert fit.slope == pytest.approx(0.049, rel=0.05)
        assert fit.residual_std_error == pytest.approx(0.5, rel=0.2)

    @pytest.mark.parametrize("samples", [[], [(1, 1.0)], [(5, 1.0), (5, 2.0)]])
    def test_degenerate(self, samples):
        with pytest.raises(DegenerateSamples):
            fit_linear(samples)

    def test_timing_samples_only_successful(self):
        records = [_record("a", 10, 1.0), _record("b", 20, 1.0, failed_at="sign")]
        assert timing_samples(records) == [(10, 5.0)]


class TestSummary:
    def test_stats(self):
        records = [_record(f"a{i}", 10, seconds) for i, seconds in enumerate([1.0, 2.0, 3.0])]
        rows = {row.stage: row for row in summarize(records)}
        parse = rows["parse"]
        assert (parse.min, parse.avg, parse.median, parse.max) == (1.0, 2.0, 2.0, 3.0)
        assert parse.p95 == pytest.approx(2.9)
        assert rows["total"].avg == pytest.approx(10.0)
        assert parse.success == "3/3 (100%)"

    def test_success_rate(self):
        records = [_record("ok", 10, 1.0)] + [_record(f"f{i}", 10, 1.0, failed_at="parse") for i in range(3)]
        rows = {row.stage: row for row in summarize(records)}
        assert rows["parse"].success == "1/4 (25%)"
        assert rows["sign"].success == "1/4 (25%)"
        assert rows["total"].ok == 1

    def test_all_failed(self):
        rows = summarize([_record("f", 10, 1.0, failed_at="parse")])
        assert all(row.min is None for row in rows)
        assert rows[0].success == "0/1 (0%)"

    def test_empty(self):
        assert summarize([]) == []

    def test_csv_round_trip(self, tmp_path):
        records = [_record("a", 12.5, 0.25), _record("b", 30, 0.5, failed_at="write")]
        path = tmp_path / "results.csv"
        text = write_csv(records, path)
        assert path.read_text(encoding="utf-8") == text
        assert text.splitlines()[0] == "app,dex_size_kib,stage,seconds,outcome"
        assert len(text.splitlines()) == 1 + 5 + 3
        loaded = read_csv(path)
        assert [(r.app, r.dex_size_kib, r.ok, r.failed_outcome) for r in loaded] == [
            ("a", 12.5, True, None), ("b", 30.0, False, "BudgetExceeded"),
        ]

    def test_recompute_from_csv(self, tmp_path):
        """由CSV各行独立重算的统计与汇总一致"""
        seconds = [0.1, 0.4, 0.2, 0.8, 0.5]
        records = [_record(f"a{i}", 10 * (i + 1), s) for i, s in enumerate(seconds)]
        path = tmp_path / "results.csv"
        write_csv(records, path)
        rows = {row.stage: row for row in summarize(read_csv(path))}
        lines = path.read_text(encoding="utf-8").splitlines()[1:]
        write_times = [float(line.split(",")[3]) for line in lines if line.split(",")[2] == "write"]
        assert rows["write"].median == pytest.approx(statistics.median(write_times))
        assert rows["write"].max == pytest.approx(max(write_times))

    def test_summary_csv_and_render(self):
        rows = summarize([_record("a", 10, 1.0), _record("b", 20, 2.0)])
        text = summary_csv(rows)
        assert text.splitlines()[0] == "stage,min,avg,median,max,p95,success"
        assert len(text.splitlines()) == 1 + len(STAGES) + 1
        console = Console(record=True, width=120)
        render_summary(rows, fit=fit_linear([(10, 5.0), (20, 10.0)]), sweep={5: 0, 10: 2}, console=console)
        output = console.export_text()
        assert "parse" in output and "total" in output
        assert "10240 KiB" in output


class TestSynth:
    def test_source_shape(self):
        source = synth_source(6)
        assert source.count(".method") == 6
        assert "Lcom/google/ads/synth/Ad0;" in source

    def test_dex_contents(self):
        dex = parse_dex(synthesize_dex(20))
        assert len(find_try_blocks(dex, AdConfig().ad_packages)) > 0
        assert len(find_protected_invocations(dex, default_permission_map())) > 0

    @pytest.mark.parametrize("size", [10, 50])
    def test_size(self, size):
        data = synthesize_dex(size)
        assert abs(len(data) / 1024 - size) / size < 0.15

    def test_deterministic(self):
        assert synthesize_apk(10, seed=3) == synthesize_apk(10, seed=3)
        assert synthesize_apk(10, seed=3) != synthesize_apk(10, seed=4)

    def test_write_corpus(self, tmp_path):
        paths = write_corpus([10, 20.5], tmp_path / "corpus")
        assert [p.name for p in paths] == ["synth_10k.apk", "synth_20.5k.apk"]
        assert all(p.exists() for p in paths)


class TestPipeline:
    def test_all_stages_ok(self, configs, identity):
        ad, weave = configs
        record = run_pipeline(synthesize_apk(100), ad=ad, weave=weave, app="synth", identity=identity)
        assert [stage.stage for stage in record.stages] == list(STAGES)
        assert record.ok and record.failed_outcome is None
        assert record.dex_size_kib > 50
        assert record.peak_rss_mib > 0

    def test_output_verifies(self, configs, identity):
        ad, weave = configs
        pipeline = Pipeline(ad=ad, weave=weave, identity=identity)
        record = pipeline.run(synthesize_apk(20))
        assert record.ok
        assert verify(pipeline.output, trust=identity.certificate).ok
        assert pipeline.report.n_wrapped > 0 and pipeline.report.n_try_neutralized > 0
        woven = parse_dex(unpack(pipeline.output).classes_dex)
        assert woven.find_class("Ldexweaver/Monitor;") is not None

    def test_budget_exceeded_at_parse(self, configs):
        ad, weave = configs
        apk = synthesize_apk(100)
        record = run_pipeline(apk, ad=ad, weave=weave, budget=MemoryBudget(ceiling_mib=0.05))
        assert len(record.stages) == 1
        assert record.stages[0].stage == "parse"
        assert record.failed_outcome == "BudgetExceeded"
        assert not record.ok

    def test_generous_budget(self, configs):
        ad, weave = configs
        record = run_pipeline(synthesize_apk(100), ad=ad, weave=weave, budget=MemoryBudget(ceiling_mib=64))
        assert record.ok

    def test_register_pressure_fails_instrument(self, configs):
        ad, weave = configs
        apk = write_zip([("classes.dex", write_dex(load_fixture("pressure"))), ("AndroidManifest.xml", b"<m/>")])
        record = run_pipeline(apk, ad=ad, weave=weave)
        assert [stage.outcome for stage in record.stages] == ["ok", "RegisterPressure"]

    def test_lenient_pipeline_skips(self, configs):
        ad, weave = configs
        apk = write_zip([("classes.dex", write_dex(load_fixture("pressure"))), ("AndroidManifest.xml", b"<m/>")])
        pipeline = Pipeline(ad=ad, weave=weave, strict=False)
        assert pipeline.run(apk).ok
        assert pipeline.report.n_skipped == 1

    def test_missing_classes_dex(self):
        record = run_pipeline(write_zip([("AndroidManifest.xml", b"<m/>")]))
        assert record.failed_outcome == "MissingClassesDex"

    def test_larger_dex_takes_longer(self, configs, identity):
        ad, weave = configs
        small, large = synthesize_apk(10), synthesize_apk(200)
        pipeline = Pipeline(ad=ad, weave=weave, identity=identity)
        pipeline.run(small)
        small_times = [pipeline.run(small).total_seconds for _ in range(3)]
        large_times = [pipeline.run(large).total_seconds for _ in range(3)]
        assert statistics.median(large_times) > statistics.median(small_times)


class TestCorpus:
    def test_bench_corpus(self, configs, tmp_path):
        ad, weave = configs
        paths = write_corpus([10, 20], tmp_path)
        records = bench_corpus(paths, ad=ad, weave=weave, repetitions=2, warmup_runs=1)
        assert [r.app for r in records] == ["synth_10k", "synth_10k", "synth_20k", "synth_20k"]
        assert all(r.ok for r in records)
        fit = fit_linear(timing_samples(records))
        assert fit.n == 4

    def test_device_budget(self):
        assert device_budget("smartphone1").ceiling_mib == 24
        assert device_budget("tablet1").ceiling_mib == 48
        with pytest.raises(ConfigError):
            device_budget("toaster")

    def test_heap_sweep(self, configs, tmp_path):
        ad, weave = configs
        paths = write_corpus([20], tmp_path)
        assert heap_sweep(paths, ad=ad, weave=weave, budgets=(0.01, 64)) == {0.01: 0, 64: 1}

    def test_store_and_history(self, tmp_path):
        db = DatabaseManager(str(tmp_path / "db"))
        records = [_record("a", 10, 1.0), _record("b", 20, 1.0, failed_at="repack")]
        assert db.store(records, budget_mib=32) == 2
        history = db.history()
        assert [run.app for run in history] == ["b", "a"]
        assert history[0].outcome == "BudgetExceeded"
        assert history[0].budget_mib == 32
        assert [sample.stage for sample in history[1].stages] == list(STAGES)
        db.close()


@pytest.fixture(scope="module")
def large_apk():
    """至少4 MiB的合成APK"""
    return synthesize_apk(4200, seed=11)


@pytest.mark.slow
class TestAcceptance:
    def test_large_dex_fails_parse_under_small_heap(self, configs, large_apk):
        ad, weave = configs
        record = run_pipeline(large_apk, ad=ad, weave=weave, budget=MemoryBudget(ceiling_mib=1))
        assert record.dex_size_kib >= 4096
        assert [stage.stage for stage in record.stages] == ["parse"]
        assert record.failed_outcome == "BudgetExceeded"

    def test_large_dex_passes_under_large_heap(self, configs, large_apk, identity):
        ad, weave = configs
        record = run_pipeline(large_apk, ad=ad, weave=weave, budget=MemoryBudget(ceiling_mib=64), identity=identity)
        assert record.ok
        assert [stage.outcome for stage in record.stages] == ["ok"] * len(STAGES)

    def test_100k_pipeline_under_five_seconds(self, configs, identity):
        ad, weave = configs
        apk = synthesize_apk(100, seed=5)
        pipeline = Pipeline(ad=ad, weave=weave, identity=identity)
        record = pipeline.run(apk)
        assert record.ok
        assert pipeline.report.n_wrapped > 0 and pipeline.report.n_try_neutralized > 0
        assert record.total_seconds < 5.0

    def test_timing_monotone_in_size(self, configs, identity):
        ad, weave = configs
        pipeline = Pipeline(ad=ad, weave=weave, identity=identity)
        medians = []
        for size in (10, 50, 100, 500):
            apk = synthesize_apk(size, seed=2)
            pipeline.run(apk)
            medians.append(statistics.median(pipeline.run(apk).total_seconds for _ in range(5)))
        assert medians == sorted(medians)


class TestRegressionConstants:
    @pytest.mark.parametrize("slope, intercept", [(0.069, 0.3), (0.049, -0.4)])
    def test_two_points_exact(self, slope, intercept):
        fit = fit_linear([(0, intercept), (100, slope * 100 + intercept)])
        assert fit.slope == pytest.approx(slope, abs=1e-12)
        assert fit.intercept == pytest.approx(intercept, abs=1e-12)

    @pytest.mark.parametrize("slope, intercept", [(0.069, 0.3), (0.049, -0.4)])
    def test_bounded_noise(self, slope, intercept):
        rng = np.random.default_rng(20)
        x = np.linspace(10, 2000, 50)
        y = slope * x + intercept + rng.uniform(-0.01, 0.01, size=x.size)
        fit = fit_linear(list(zip(x, y)))
        assert fit.n == 50
        assert fit.slope == pytest.approx(slope, rel=0.05)
        assert fit.intercept == pytest.approx(intercept, abs=0.02)
        assert fit.residual_std_error < 0.01


def test_instrument_releases_replaced_model(configs):
    ad, weave = configs
    dex = parse_dex(synthesize_dex(20))
    meter = MemoryMeter()
    meter.charge(estimate_dex_bytes(dex))
    woven = Pipeline(ad=ad, weave=weave).instrument(dex, meter)
    assert meter.used == estimate_dex_bytes(woven)
    assert meter.peak > meter.used


def test_meter_release():
    meter = MemoryMeter(MemoryBudget(ceiling_mib=1), stage="parse")
    meter.charge(600 * 1024)
    meter.release(500 * 1024)
    meter.charge(600 * 1024)
    assert meter.used == 700 * 1024
    assert meter.peak == 700 * 1024
    meter.release(10 * 1024 * 1024)
    assert meter.used == 0
