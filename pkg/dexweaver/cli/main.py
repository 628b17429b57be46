#!/usr/bin/env python3
"""DexWeaver命令行工具主入口"""

import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional

from loguru import logger
from rich.console import Console
from rich.table import Table

from .. import __version__
from ..asm import assemble_file, disassemble
from ..bench import (
    bench_corpus,
    device_budget,
    fit_linear,
    heap_sweep,
    read_csv,
    render_summary,
    summarize,
    summary_csv,
    timing_samples,
    write_corpus,
    write_csv,
)
from ..bench.pipeline import Pipeline
from ..core.budget import MemoryBudget
from ..core.config import get_config, init_config, setup_logging
from ..core.database import init_database
from ..core.errors import DegenerateSamples, DexWeaverError
from ..dex import DexFile, dex_stats, parse_dex, write_dex
from ..interp import ApiEnvironment, execute
from ..interp.environment import parse_binding
from ..package import (
    generate_identity,
    load_certificate,
    load_keystore,
    repack,
    save_keystore,
    sign,
    unpack,
    verify,
)
from ..passes import AdConfig, WeaveConfig, load_ad_config, neutralize_ads, weave_permissions
from ..policy import PolicyService, default_permission_map, load_permission_map, load_policy
from .schemas import PipelineConfig

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_PARTIAL = 2

POLICY_ENTRY = "assets/dexweaver/policy.json"


def _fail(exc: Exception):
    """以JSON诊断输出错误并以1退出"""
    if isinstance(exc, DexWeaverError):
        data = exc.to_dict()
    else:
        data = {"error": type(exc).__name__, "message": str(exc)}
        if getattr(exc, "filename", None):
            data["path"] = str(exc.filename)
    print(json.dumps(data, ensure_ascii=False), file=sys.stderr)
    sys.exit(EXIT_FAILURE)


def _print_json(data):
    print(json.dumps(data, ensure_ascii=False, indent=2))


def _load_dex(path: str) -> DexFile:
    """按后缀读取 .mdsm 源文本、.apk 或 .dex"""
    path = Path(path)
    if path.suffix == ".mdsm":
        return assemble_file(path)
    data = path.read_bytes()
    if path.suffix == ".apk":
        data = unpack(data).classes_dex
    return parse_dex(data)


def _permission_map(path: Optional[str]):
    return load_permission_map(path) if path else default_permission_map()


def _exit_for_report(report, path: Optional[str] = None):
    data = report.model_dump(mode="json")
    if path:
        Path(path).write_text(json.dumps(data, ensure_ascii=False, indent=2), encoding="utf-8")
    _print_json(data)
    if report.n_skipped:
        sys.exit(EXIT_PARTIAL)


def cmd_asm(args):
    """汇编mdsm源文件"""
    try:
        data = write_dex(assemble_file(args.input))
        Path(args.output).write_bytes(data)
        logger.info("已写出 {} ({} 字节)", args.output, len(data))
    except (DexWeaverError, OSError) as e:
        _fail(e)


def cmd_disasm(args):
    """反汇编DEX文件"""
    try:
        text = disassemble(_load_dex(args.input))
        if args.output:
            Path(args.output).write_text(text, encoding="utf-8")
        else:
            sys.stdout.write(text)
    except (DexWeaverError, OSError) as e:
        _fail(e)


def cmd_adremove(args):
    """移除广告包中try块的执行"""
    try:
        cfg = load_ad_config(args.ad_config) if args.ad_config else AdConfig()
        if args.packages:
            cfg = cfg.model_copy(update={"ad_packages": [p for p in args.packages.split(",") if p]})
        if args.io_only:
            cfg = cfg.model_copy(update={"io_only": True})
        dex, report = neutralize_ads(_load_dex(args.input), cfg)
        Path(args.output).write_bytes(write_dex(dex))
    except (DexWeaverError, OSError) as e:
        _fail(e)
    _exit_for_report(report, args.report)


def cmd_weave(args):
    """在受保护的API调用周围织入策略检查"""
    try:
        cfg = WeaveConfig(permission_map=_permission_map(args.map))
        dex, report = weave_permissions(_load_dex(args.input), cfg)
        Path(args.output).write_bytes(write_dex(dex))
    except (DexWeaverError, OSError) as e:
        _fail(e)
    _exit_for_report(report, args.report)


def cmd_run(args):
    """解释执行一个方法"""
    try:
        service = None
        if args.policy:
            service = PolicyService(load_policy(args.policy), _permission_map(args.map))
        if args.env:
            env = ApiEnvironment.from_file(args.env, policy_service=service)
        else:
            env = ApiEnvironment(policy_service=service)
        if args.app:
            env.app = args.app
        values = [parse_binding(v) for v in json.loads(args.args)]
        result = execute(_load_dex(args.input), args.entry, values, env=env, step_budget=args.budget,
                         trace=args.trace is not None)
        data = result.to_dict()
        if args.trace:
            Path(args.trace).write_text(json.dumps(data, ensure_ascii=False, indent=2), encoding="utf-8")
    except (DexWeaverError, OSError) as e:
        _fail(e)
    except (ValueError, TypeError) as e:
        _fail(DexWeaverError(f"无效的参数列表: {e}"))
    data.pop("insn_trace", None)
    _print_json(data)


def cmd_repack(args):
    """用新的classes.dex重新打包APK（不签名）"""
    try:
        archive = unpack(Path(args.input).read_bytes())
        dex = _load_dex(args.dex)
        Path(args.output).write_bytes(repack(archive, write_dex(dex)))
    except (DexWeaverError, OSError) as e:
        _fail(e)


def cmd_sign(args):
    """对APK做v1签名"""
    try:
        identity = load_keystore(args.keystore)
        Path(args.output).write_bytes(sign(Path(args.input).read_bytes(), identity))
    except (DexWeaverError, OSError) as e:
        _fail(e)


def cmd_verify(args):
    """校验APK的v1签名"""
    try:
        trust = load_certificate(args.cert) if args.cert else None
        result = verify(Path(args.input).read_bytes(), trust)
    except (DexWeaverError, OSError) as e:
        _fail(e)
    _print_json(result.model_dump(mode="json"))
    if not result.ok:
        sys.exit(EXIT_FAILURE)


def cmd_keygen(args):
    """生成签名密钥库"""
    try:
        identity = generate_identity(seed=args.seed)
        save_keystore(identity, args.output)
        print(f"密钥库已写出: {args.output} ({identity.algorithm})")
    except (DexWeaverError, OSError) as e:
        _fail(e)


def cmd_stats(args):
    """DEX统计信息"""
    try:
        path = Path(args.input)
        dex = _load_dex(args.input)
        size = len(unpack(path.read_bytes()).classes_dex) if path.suffix == ".apk" else path.stat().st_size
        stats = dex_stats(dex, _permission_map(args.map), size_bytes=size)
    except (DexWeaverError, OSError) as e:
        _fail(e)
    if args.json:
        _print_json(stats.model_dump())
        return
    table = Table(title=str(path.name))
    table.add_column("项目")
    table.add_column("数值", justify="right")
    for key, value in stats.model_dump().items():
        table.add_row(key, str(value))
    Console().print(table)


def cmd_pipeline(args):
    """完整流水线：解包、解析、插桩、写出、重新打包、签名"""
    try:
        cfg = PipelineConfig(
            ad_config=args.ad_config,
            permission_map=args.map,
            policy=args.policy,
            keystore=args.keystore,
            output_dir=args.output_dir,
            adremove=not args.no_adremove,
            weave=not args.no_weave,
        )
        cfg.check_paths()
        ad = None
        if cfg.adremove:
            ad = load_ad_config(cfg.ad_config) if cfg.ad_config else AdConfig()
        weave = WeaveConfig(permission_map=_permission_map(cfg.permission_map)) if cfg.weave else None
        identity = load_keystore(cfg.keystore) if cfg.keystore else generate_identity()
        extra = []
        if cfg.policy:
            policy = load_policy(cfg.policy)
            body = {"apps": {app: sorted(perms) for app, perms in sorted(policy.apps.items())}}
            extra.append((POLICY_ENTRY, json.dumps(body, indent=2, sort_keys=True).encode("utf-8")))
        input_path = Path(args.input)
        apk = input_path.read_bytes()
    except (DexWeaverError, OSError) as e:
        _fail(e)

    pipeline = Pipeline(ad=ad, weave=weave, identity=identity, strict=False, extra_entries=extra)
    record = pipeline.run(apk, app=args.app or input_path.stem)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    report_path = cfg.output_dir / "report.json"
    report_path.write_text(json.dumps({
        "record": record.model_dump(mode="json"),
        "report": pipeline.report.model_dump(mode="json"),
    }, ensure_ascii=False, indent=2), encoding="utf-8")

    failed = next((stage for stage in record.stages if not stage.ok), None)
    if failed is not None:
        print(json.dumps({
            "error": failed.outcome,
            "message": f"{failed.stage} 阶段失败: {failed.message}",
            "path": str(input_path),
        }, ensure_ascii=False), file=sys.stderr)
        sys.exit(EXIT_FAILURE)

    output = cfg.output_dir / input_path.name
    output.write_bytes(pipeline.output)
    print(f"已写出 {output}: 包装 {pipeline.report.n_wrapped} 处调用, "
          f"中和 {pipeline.report.n_try_neutralized} 个try块, 跳过 {pipeline.report.n_skipped} 个方法")
    if pipeline.report.n_skipped:
        sys.exit(EXIT_PARTIAL)


def _show_history(base_dir: Optional[str], limit: int):
    runs = init_database(base_dir).history(limit)
    table = Table(title="基准测试历史")
    for column in ("ID", "应用", "大小 (KiB)", "堆上限 (MiB)", "峰值RSS (MiB)", "结果", "时间"):
        table.add_column(column)
    for run in runs:
        table.add_row(
            str(run.id), run.app, f"{run.dex_size_kib:g}",
            "-" if run.budget_mib is None else f"{run.budget_mib:g}",
            "-" if run.peak_rss_mib is None else f"{run.peak_rss_mib:.1f}",
            run.outcome, run.created_at.strftime("%Y-%m-%d %H:%M:%S"),
        )
    Console().print(table)


def cmd_bench(args):
    """运行基准测试并汇总"""
    try:
        if args.history:
            _show_history(args.base_dir, args.limit)
            return
        if args.report:
            rows = summarize(read_csv(args.report))
            print(summary_csv(rows), end="")
            return

        corpus = args.corpus
        if args.synth:
            sizes = [float(s) for s in args.synth.split(",") if s]
            out_dir = args.out or corpus
            if not out_dir:
                raise DexWeaverError("--synth 需要 --out 或 --corpus 指定输出目录")
            for path in write_corpus(sizes, out_dir):
                print(f"已生成 {path}")
            corpus = corpus or out_dir
        if not corpus:
            return

        paths = sorted(Path(corpus).glob("*.apk"))
        if args.device:
            budget = device_budget(args.device)
        elif args.budget_mib:
            budget = MemoryBudget(ceiling_mib=args.budget_mib)
        else:
            budget = None
        ad = AdConfig()
        weave = WeaveConfig(permission_map=_permission_map(args.map))
        records = bench_corpus(paths, ad=ad, weave=weave, budget=budget, repetitions=args.repetitions)
        if args.csv:
            write_csv(records, args.csv)
        try:
            fit = fit_linear(timing_samples(records))
        except DegenerateSamples:
            fit = None
        sweep = heap_sweep(paths, ad=ad, weave=weave) if args.sweep else None
        render_summary(summarize(records), fit=fit, sweep=sweep)
        if args.store:
            count = init_database(args.base_dir).store(records, budget.ceiling_mib if budget else None)
            print(f"已保存 {count} 次运行")
    except (DexWeaverError, OSError) as e:
        _fail(e)
    except ValueError as e:
        _fail(DexWeaverError(f"无效的参数: {e}"))


def create_parser():
    """创建命令行参数解析器"""
    parser = argparse.ArgumentParser(
        prog='dexweaver',
        description='DexWeaver - Dalvik字节码的设备端插桩工具'
    )
    parser.add_argument('--version', action='version', version=f'dexweaver {__version__}')
    parser.add_argument('--log-level', default=None, help='日志级别（默认取环境变量DEXWEAVER_LOG）')
    parser.add_argument('--base-dir', default=None, help='工作目录（保存基准测试历史）')

    subparsers = parser.add_subparsers(dest='command', help='可用命令')

    # asm 命令
    asm_parser = subparsers.add_parser('asm', help='汇编mdsm源文件为DEX')
    asm_parser.add_argument('input', help='mdsm源文件')
    asm_parser.add_argument('-o', '--output', required=True, help='输出DEX路径')
    asm_parser.set_defaults(func=cmd_asm)

    # disasm 命令
    disasm_parser = subparsers.add_parser('disasm', help='反汇编DEX为mdsm')
    disasm_parser.add_argument('input', help='DEX或APK文件')
    disasm_parser.add_argument('-o', '--output', help='输出路径（默认标准输出）')
    disasm_parser.set_defaults(func=cmd_disasm)

    # adremove 命令
    adremove_parser = subparsers.add_parser('adremove', help='中和广告包中的try块')
    adremove_parser.add_argument('input', help='DEX、APK或mdsm文件')
    adremove_parser.add_argument('-o', '--output', required=True, help='输出DEX路径')
    adremove_parser.add_argument('--ad-config', help='广告配置JSON')
    adremove_parser.add_argument('--packages', help='逗号分隔的广告包前缀，覆盖配置')
    adremove_parser.add_argument('--io-only', action='store_true', help='只处理捕获java.io/java.net异常的try块')
    adremove_parser.add_argument('--report', help='插桩报告JSON输出路径')
    adremove_parser.set_defaults(func=cmd_adremove)

    # weave 命令
    weave_parser = subparsers.add_parser('weave', help='织入权限检查')
    weave_parser.add_argument('input', help='DEX、APK或mdsm文件')
    weave_parser.add_argument('-o', '--output', required=True, help='输出DEX路径')
    weave_parser.add_argument('--map', help='权限映射文件（默认使用内置映射）')
    weave_parser.add_argument('--report', help='插桩报告JSON输出路径')
    weave_parser.set_defaults(func=cmd_weave)

    # run 命令
    run_parser = subparsers.add_parser('run', help='解释执行一个方法')
    run_parser.add_argument('input', help='DEX、APK或mdsm文件')
    run_parser.add_argument('--entry', required=True, help='入口方法签名，例如 Lapp/Main;->main()I')
    run_parser.add_argument('--args', default='[]', help='JSON参数列表')
    run_parser.add_argument('--env', help='环境文件env.json')
    run_parser.add_argument('--policy', help='策略文件；不给出时全部放行')
    run_parser.add_argument('--map', help='权限映射文件')
    run_parser.add_argument('--app', help='应用ID（覆盖环境文件）')
    run_parser.add_argument('--budget', type=int, default=None, help='步数上限')
    run_parser.add_argument('--trace', metavar='PATH', help='把含逐条指令轨迹的完整结果写入该文件')
    run_parser.set_defaults(func=cmd_run)

    # repack 命令
    repack_parser = subparsers.add_parser('repack', help='替换classes.dex并重新打包')
    repack_parser.add_argument('input', help='原APK')
    repack_parser.add_argument('--dex', required=True, help='新的DEX或mdsm文件')
    repack_parser.add_argument('-o', '--output', required=True, help='输出APK路径')
    repack_parser.set_defaults(func=cmd_repack)

    # sign 命令
    sign_parser = subparsers.add_parser('sign', help='v1签名')
    sign_parser.add_argument('input', help='APK文件')
    sign_parser.add_argument('--keystore', required=True, help='密钥库JSON')
    sign_parser.add_argument('-o', '--output', required=True, help='输出APK路径')
    sign_parser.set_defaults(func=cmd_sign)

    # verify 命令
    verify_parser = subparsers.add_parser('verify', help='校验v1签名')
    verify_parser.add_argument('input', help='APK文件')
    verify_parser.add_argument('--cert', help='要求的签名证书（PEM或密钥库）')
    verify_parser.set_defaults(func=cmd_verify)

    # pipeline 命令
    pipeline_parser = subparsers.add_parser('pipeline', help='运行完整插桩流水线')
    pipeline_parser.add_argument('input', help='APK文件')
    pipeline_parser.add_argument('-o', '--output-dir', required=True, help='输出目录')
    pipeline_parser.add_argument('--ad-config', help='广告配置JSON')
    pipeline_parser.add_argument('--map', help='权限映射文件')
    pipeline_parser.add_argument('--policy', help='嵌入APK的用户策略')
    pipeline_parser.add_argument('--keystore', help='密钥库JSON（默认生成临时身份）')
    pipeline_parser.add_argument('--app', help='应用ID（默认取文件名）')
    pipeline_parser.add_argument('--no-adremove', action='store_true', help='不运行广告移除')
    pipeline_parser.add_argument('--no-weave', action='store_true', help='不运行权限包装')
    pipeline_parser.set_defaults(func=cmd_pipeline)

    # bench 命令
    bench_parser = subparsers.add_parser('bench', help='流水线基准测试')
    bench_parser.add_argument('--corpus', help='APK语料目录')
    bench_parser.add_argument('--budget-mib', type=float, help='内存预算 (MiB)')
    bench_parser.add_argument('--device', help='设备堆上限: smartphone1, smartphone2, tablet1')
    bench_parser.add_argument('--csv', help='逐阶段结果CSV输出路径')
    bench_parser.add_argument('--map', help='权限映射文件')
    bench_parser.add_argument('--repetitions', type=int, default=None, help='每个应用的重复次数')
    bench_parser.add_argument('--sweep', action='store_true', help='5..50 MiB 堆上限扫描')
    bench_parser.add_argument('--synth', help='逗号分隔的合成DEX大小 (KiB)')
    bench_parser.add_argument('--out', help='合成语料输出目录')
    bench_parser.add_argument('--report', help='汇总已有的CSV')
    bench_parser.add_argument('--store', action='store_true', help='把结果保存到历史数据库')
    bench_parser.add_argument('--history', action='store_true', help='查看历史运行')
    bench_parser.add_argument('--limit', type=int, default=50, help='历史记录条数')
    bench_parser.set_defaults(func=cmd_bench)

    # keygen 命令
    keygen_parser = subparsers.add_parser('keygen', help='生成签名密钥库')
    keygen_parser.add_argument('-o', '--output', required=True, help='密钥库JSON路径')
    keygen_parser.add_argument('--seed', type=int, default=None, help='确定性种子（生成EC P-256密钥）')
    keygen_parser.set_defaults(func=cmd_keygen)

    # stats 命令
    stats_parser = subparsers.add_parser('stats', help='DEX统计信息')
    stats_parser.add_argument('input', help='DEX、APK或mdsm文件')
    stats_parser.add_argument('--map', help='权限映射文件')
    stats_parser.add_argument('--json', action='store_true', help='以JSON输出')
    stats_parser.set_defaults(func=cmd_stats)

    return parser


def main(argv: Optional[List[str]] = None):
    """主入口函数"""
    parser = create_parser()
    args = parser.parse_args(argv)

    if args.base_dir:
        init_config(base_dir=args.base_dir, log_level=args.log_level or get_config().log_level)
    setup_logging(args.log_level)

    if hasattr(args, 'func'):
        args.func(args)
    else:
        parser.print_help()


if __name__ == "__main__":
    main()
