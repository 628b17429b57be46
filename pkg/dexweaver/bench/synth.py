"""合成基准语料

按请求的大小复制方法体生成DEX：一半方法位于广告包中并带有IOException的
try块，另一半调用受位置权限保护的API。
"""

import hashlib
import math
from pathlib import Path
from typing import List, Union

from loguru import logger

from ..asm.assembler import assemble
from ..dex.writer import write_dex
from ..package.archive import ANDROID_MANIFEST, CLASSES_DEX, write_zip

AD_PACKAGE = "com/google/ads/synth"
APP_PACKAGE = "com/example/synth"
METHODS_PER_CLASS = 64
PROTECTED_CALL = (
    "Landroid/location/LocationManager;->getLastKnownLocation(Ljava/lang/String;)Landroid/location/Location;"
)

_AD_METHOD = """\
.method public static a{i}()I
    .registers 2
    .try :L0 :L1 catch Ljava/io/IOException; :L1
    :L0
    const-string v0, "{s0}"
    const-string v1, "{s1}"
    invoke-static {{v0}}, Ljava/lang/Integer;->parseInt(Ljava/lang/String;)I
    move-result v1
    return v1
    :L1
    move-exception v0
    const/4 v1, 0
    return v1
.end method
"""

_APP_METHOD = """\
.method public static m{i}(Landroid/location/LocationManager;)Landroid/location/Location;
    .registers 3
    const-string v0, "{s0}"
    const-string v1, "{s1}"
    invoke-virtual {{v2, v0}}, {call}
    move-result-object v1
    return-object v1
.end method
"""


def _text(seed: int, index: int, slot: int) -> str:
    """96个字符的唯一字符串"""
    key = f"{seed}:{index}:{slot}".encode("ascii")
    return hashlib.sha256(key).hexdigest() + hashlib.sha256(key + b"+").hexdigest()[:32]


def _classes(package: str, prefix: str, template: str, indices: List[int], seed: int) -> List[str]:
    lines = []
    for start in range(0, len(indices), METHODS_PER_CLASS):
        lines.append(f".class public L{package}/{prefix}{start // METHODS_PER_CLASS};")
        lines.append(".super Ljava/lang/Object;")
        for index in indices[start:start + METHODS_PER_CLASS]:
            lines.append(template.format(i=index, s0=_text(seed, index, 0), s1=_text(seed, index, 1), call=PROTECTED_CALL))
    return lines


def synth_source(n_methods: int, seed: int = 0) -> str:
    """生成含 n_methods 个方法的mdsm源文本，偶数号方法在广告包中"""
    indices = list(range(n_methods))
    lines = _classes(AD_PACKAGE, "Ad", _AD_METHOD, indices[0::2], seed)
    lines += _classes(APP_PACKAGE, "Main", _APP_METHOD, indices[1::2], seed)
    return "\n".join(lines) + "\n"


def synthesize_dex(size_kib: float, seed: int = 0) -> bytes:
    """生成约 size_kib 大小的DEX

    先用两个小样本估算每个方法的字节数，再一次生成目标大小。
    """
    small, large = 16, 48
    s_small = len(write_dex(assemble(synth_source(small, seed))))
    s_large = len(write_dex(assemble(synth_source(large, seed))))
    per_method = (s_large - s_small) / (large - small)
    base = s_small - small * per_method
    n_methods = max(2, math.ceil((size_kib * 1024 - base) / per_method))
    data = write_dex(assemble(synth_source(n_methods, seed)))
    logger.debug("合成DEX: 目标 {} KiB, 实际 {:.1f} KiB, {} 个方法", size_kib, len(data) / 1024, n_methods)
    return data


def synthesize_apk(size_kib: float, seed: int = 0) -> bytes:
    """生成包含合成DEX、清单与一个资源文件的未签名APK"""
    manifest = (
        '<?xml version="1.0" encoding="utf-8"?>\n'
        f'<manifest package="com.example.synth{seed}">\n'
        '  <uses-permission android:name="android.permission.ACCESS_FINE_LOCATION"/>\n'
        '</manifest>\n'
    ).encode("utf-8")
    return write_zip([
        (CLASSES_DEX, synthesize_dex(size_kib, seed)),
        (ANDROID_MANIFEST, manifest),
        ("assets/synth.txt", f"synthetic corpus, seed {seed}\n".encode("utf-8")),
    ])


def write_corpus(sizes: List[float], out_dir: Union[str, Path], seed: int = 0) -> List[Path]:
    """为每个大小写出一个 synth_<size>k.apk"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for size in sizes:
        path = out_dir / f"synth_{size:g}k.apk"
        path.write_bytes(synthesize_apk(size, seed))
        paths.append(path)
    return paths
