"""APK容器的解包与重新打包

输出是确定性的：条目按路径排序，时间戳固定，小于阈值的条目不压缩。
"""

import io
import re
import zipfile
import zlib
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Tuple

from loguru import logger

from ..core.config import get_config
from ..core.errors import BadZip, EntryTooLarge, MissingClassesDex

CLASSES_DEX = "classes.dex"
ANDROID_MANIFEST = "AndroidManifest.xml"
ZIP_LIMIT = 0xFFFFFFFF

_SIGNATURE_RE = re.compile(r"^META-INF/(MANIFEST\.MF|[^/]+\.(SF|RSA|DSA|EC)|SIG-[^/]*)$", re.IGNORECASE)


def is_signature_entry(name: str) -> bool:
    """JAR签名相关的条目"""
    return bool(_SIGNATURE_RE.match(name))


@dataclass
class Archive:
    """解包后的APK，条目保持原始字节"""

    entries: List[Tuple[str, bytes]] = field(default_factory=list)

    def get(self, name: str) -> Optional[bytes]:
        for entry_name, data in self.entries:
            if entry_name == name:
                return data
        return None

    @property
    def classes_dex(self) -> bytes:
        data = self.get(CLASSES_DEX)
        if data is None:
            raise MissingClassesDex("APK中没有classes.dex")
        return data

    @property
    def manifest_bytes(self) -> Optional[bytes]:
        return self.get(ANDROID_MANIFEST)

    @property
    def content_entries(self) -> List[Tuple[str, bytes]]:
        return [(name, data) for name, data in self.entries if not is_signature_entry(name)]

    @property
    def signature_entries(self) -> List[Tuple[str, bytes]]:
        return [(name, data) for name, data in self.entries if is_signature_entry(name)]

    @property
    def names(self) -> List[str]:
        return [name for name, _ in self.entries]


def read_entries(data: bytes) -> List[Tuple[str, bytes]]:
    """读取zip中的全部文件条目

    Raises:
        BadZip: 不是有效的zip、条目重复或数据损坏
    """
    try:
        with zipfile.ZipFile(io.BytesIO(data)) as zf:
            entries = []
            seen = set()
            for info in zf.infolist():
                if info.is_dir():
                    continue
                if info.filename in seen:
                    raise BadZip(f"重复的条目: {info.filename}")
                seen.add(info.filename)
                entries.append((info.filename, zf.read(info)))
            return entries
    except (zipfile.BadZipFile, zlib.error, EOFError, OSError) as exc:
        raise BadZip(f"无效的zip: {exc}") from exc


def unpack(data: bytes) -> Archive:
    """解包APK

    Returns:
        Archive，条目顺序与zip中央目录一致

    Raises:
        BadZip, MissingClassesDex
    """
    archive = Archive(read_entries(data))
    if archive.get(CLASSES_DEX) is None:
        raise MissingClassesDex("APK中没有classes.dex")
    logger.debug("解包APK: {} 个条目 ({} 个签名条目)", len(archive.entries), len(archive.signature_entries))
    return archive


def write_zip(entries: Iterable[Tuple[str, bytes]]) -> bytes:
    """确定性地写出zip"""
    config = get_config()
    ordered = sorted(entries, key=lambda item: item[0])
    names = [name for name, _ in ordered]
    if len(set(names)) != len(names):
        raise BadZip("条目路径重复")
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", allowZip64=False) as zf:
        for name, data in ordered:
            if len(data) >= ZIP_LIMIT:
                raise EntryTooLarge(f"条目 {name} 超过zip格式上限: {len(data)} 字节", path=name)
            info = zipfile.ZipInfo(name, date_time=tuple(config.zip_date_time))
            info.compress_type = zipfile.ZIP_STORED if len(data) < config.deflate_threshold else zipfile.ZIP_DEFLATED
            info.create_system = 3
            info.external_attr = 0o644 << 16
            zf.writestr(info, data)
    return buf.getvalue()


def repack(archive: Archive, new_dex: bytes, extra_entries: Iterable[Tuple[str, bytes]] = ()) -> bytes:
    """用新的classes.dex重建APK，丢弃旧签名

    Args:
        archive: 原APK
        new_dex: 新的DEX字节
        extra_entries: 追加或替换的条目

    Returns:
        未签名的APK字节
    """
    entries = {name: data for name, data in archive.content_entries}
    entries[CLASSES_DEX] = new_dex
    for name, data in extra_entries:
        entries[name] = data
    output = write_zip(entries.items())
    logger.debug("重新打包: {} 个条目, {} 字节", len(entries), len(output))
    return output
