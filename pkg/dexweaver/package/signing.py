"""v1 (JAR) 签名与校验

签名文件布局: META-INF/MANIFEST.MF（每个条目的SHA-256摘要）、
META-INF/CERT.SF（清单及各节的摘要）、META-INF/CERT.RSA 或 CERT.EC
（对CERT.SF的分离式PKCS#7签名，内嵌证书）。
"""

import base64
import datetime
import hashlib
import io
import json
import zipfile
import zlib
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from asn1crypto import cms
from cryptography import x509
from cryptography.exceptions import InvalidSignature, UnsupportedAlgorithm
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec, padding, rsa
from cryptography.hazmat.primitives.serialization import pkcs7
from cryptography.x509.oid import NameOID
from loguru import logger
from pydantic import BaseModel

from ..core.config import get_config
from ..core.errors import BadZip, ConfigError, CryptoFailure
from .archive import is_signature_entry, read_entries, write_zip

MANIFEST_NAME = "META-INF/MANIFEST.MF"
SIGNATURE_FILE = "META-INF/CERT.SF"
LINE_LIMIT = 72
DIGEST_NAME = "SHA-256"

# P-256 的群阶
_P256_ORDER = 0xFFFFFFFF00000000FFFFFFFFFFFFFFFFBCE6FAADA7179E84F3B9CAC2FC632551
_SEEDED_EPOCH = datetime.datetime(2020, 1, 1, tzinfo=datetime.timezone.utc)
_VALIDITY = datetime.timedelta(days=365 * 30)


@dataclass
class SigningIdentity:
    """签名身份：密钥对与自签名证书"""

    private_key: Union[rsa.RSAPrivateKey, ec.EllipticCurvePrivateKey]
    certificate: x509.Certificate

    @property
    def algorithm(self) -> str:
        return "EC" if isinstance(self.private_key, ec.EllipticCurvePrivateKey) else "RSA"

    @property
    def block_name(self) -> str:
        return f"META-INF/CERT.{self.algorithm}"

    @property
    def public_key_der(self) -> bytes:
        return self.certificate.public_key().public_bytes(
            serialization.Encoding.DER, serialization.PublicFormat.SubjectPublicKeyInfo
        )

    def to_dict(self) -> dict:
        key_pem = self.private_key.private_bytes(
            serialization.Encoding.PEM, serialization.PrivateFormat.PKCS8, serialization.NoEncryption()
        )
        cert_pem = self.certificate.public_bytes(serialization.Encoding.PEM)
        return {"private_key": key_pem.decode("ascii"), "certificate": cert_pem.decode("ascii")}


def _seed_key(seed: int) -> ec.EllipticCurvePrivateKey:
    digest = hashlib.sha256(f"dexweaver-seed:{seed}".encode("ascii")).digest()
    secret = int.from_bytes(digest, "big") % (_P256_ORDER - 1) + 1
    return ec.derive_private_key(secret, ec.SECP256R1())


def generate_identity(seed: Optional[int] = None, key_size: Optional[int] = None) -> SigningIdentity:
    """生成新的签名身份

    Args:
        seed: 确定性种子；给定时生成由种子导出的EC P-256密钥
        key_size: 无种子时的RSA密钥长度，默认取配置

    Returns:
        SigningIdentity，证书CN为 dexweaver
    """
    config = get_config()
    try:
        if seed is None:
            key = rsa.generate_private_key(public_exponent=65537, key_size=key_size or config.key_size)
            serial = x509.random_serial_number()
            not_before = datetime.datetime.now(datetime.timezone.utc) - datetime.timedelta(days=1)
        else:
            key = _seed_key(seed)
            serial = int.from_bytes(hashlib.sha256(f"dexweaver-serial:{seed}".encode("ascii")).digest()[:16], "big") >> 1
            not_before = _SEEDED_EPOCH
        name = x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, config.created_by)])
        certificate = (
            x509.CertificateBuilder()
            .subject_name(name)
            .issuer_name(name)
            .public_key(key.public_key())
            .serial_number(serial or 1)
            .not_valid_before(not_before)
            .not_valid_after(not_before + _VALIDITY)
            .sign(key, hashes.SHA256())
        )
    except (ValueError, TypeError, UnsupportedAlgorithm) as exc:
        raise CryptoFailure(f"生成签名身份失败: {exc}") from exc
    logger.debug("生成签名身份: {} 序列号 {:x}", "EC" if seed is not None else "RSA", serial)
    return SigningIdentity(key, certificate)


def save_keystore(identity: SigningIdentity, path: Union[str, Path]):
    Path(path).write_text(json.dumps(identity.to_dict(), indent=2), encoding="utf-8")


def load_keystore(path: Union[str, Path]) -> SigningIdentity:
    """读取JSON密钥库 ``{"private_key": PEM, "certificate": PEM}``"""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"密钥库不存在: {path}", path=str(path))
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
        key = serialization.load_pem_private_key(data["private_key"].encode("ascii"), password=None)
        certificate = x509.load_pem_x509_certificate(data["certificate"].encode("ascii"))
    except (ValueError, KeyError, TypeError, UnsupportedAlgorithm) as exc:
        raise ConfigError(f"密钥库无效: {exc}", path=str(path)) from exc
    if not isinstance(key, (rsa.RSAPrivateKey, ec.EllipticCurvePrivateKey)):
        raise ConfigError("密钥库中的私钥类型不受支持", path=str(path))
    return SigningIdentity(key, certificate)


def load_certificate(path: Union[str, Path]) -> x509.Certificate:
    """读取PEM证书，也接受密钥库文件"""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"证书文件不存在: {path}", path=str(path))
    text = path.read_text(encoding="utf-8")
    try:
        if text.lstrip().startswith("{"):
            text = json.loads(text)["certificate"]
        return x509.load_pem_x509_certificate(text.encode("ascii"))
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"证书无效: {exc}", path=str(path)) from exc


# 清单文件

def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def _digest(data: bytes) -> str:
    return _b64(hashlib.sha256(data).digest())


def wrap_line(line: str) -> bytes:
    """按72字节折行，续行以一个空格开头"""
    raw = line.encode("utf-8")
    if len(raw) <= LINE_LIMIT:
        return raw + b"\r\n"
    out = [raw[:LINE_LIMIT]]
    raw = raw[LINE_LIMIT:]
    while raw:
        out.append(b" " + raw[:LINE_LIMIT - 1])
        raw = raw[LINE_LIMIT - 1:]
    return b"\r\n".join(out) + b"\r\n"


def _section(lines: List[str]) -> bytes:
    return b"".join(wrap_line(line) for line in lines) + b"\r\n"


def build_manifest(entries: List[Tuple[str, bytes]]) -> Tuple[bytes, Dict[str, bytes]]:
    """生成MANIFEST.MF

    Returns:
        (清单字节, 条目名 -> 该条目所在节的字节)
    """
    created_by = get_config().created_by
    manifest = _section(["Manifest-Version: 1.0", f"Created-By: {created_by}"])
    sections = {}
    for name, data in sorted(entries):
        section = _section([f"Name: {name}", f"{DIGEST_NAME}-Digest: {_digest(data)}"])
        sections[name] = section
        manifest += section
    return manifest, sections


def build_signature_file(manifest: bytes, sections: Dict[str, bytes]) -> bytes:
    created_by = get_config().created_by
    out = _section([
        "Signature-Version: 1.0",
        f"Created-By: {created_by}",
        f"{DIGEST_NAME}-Digest-Manifest: {_digest(manifest)}",
    ])
    for name, section in sections.items():
        out += _section([f"Name: {name}", f"{DIGEST_NAME}-Digest: {_digest(section)}"])
    return out


def parse_sections(data: bytes) -> List[Dict[str, str]]:
    """解析清单或签名文件为属性节列表，续行会被拼接"""
    sections: List[Dict[str, str]] = []
    current: Dict[str, str] = {}
    last_key = None
    for raw in data.decode("utf-8").split("\r\n"):
        if not raw:
            if current:
                sections.append(current)
            current, last_key = {}, None
            continue
        if raw.startswith(" ") and last_key is not None:
            current[last_key] += raw[1:]
            continue
        key, _, value = raw.partition(": ")
        current[key] = value
        last_key = key
    if current:
        sections.append(current)
    return sections


def sign(apk: bytes, identity: SigningIdentity) -> bytes:
    """对APK做v1签名，原有的签名条目被替换

    Raises:
        BadZip, CryptoFailure
    """
    entries = [(name, data) for name, data in read_entries(apk) if not is_signature_entry(name)]
    manifest, sections = build_manifest(entries)
    signature_file = build_signature_file(manifest, sections)
    try:
        block = (
            pkcs7.PKCS7SignatureBuilder()
            .set_data(signature_file)
            .add_signer(identity.certificate, identity.private_key, hashes.SHA256())
            .sign(serialization.Encoding.DER, [
                pkcs7.PKCS7Options.DetachedSignature,
                pkcs7.PKCS7Options.NoAttributes,
                pkcs7.PKCS7Options.Binary,
            ])
        )
    except (ValueError, TypeError, UnsupportedAlgorithm) as exc:
        raise CryptoFailure(f"PKCS#7签名失败: {exc}") from exc
    entries += [(MANIFEST_NAME, manifest), (SIGNATURE_FILE, signature_file), (identity.block_name, block)]
    logger.debug("签名APK: {} 个条目", len(sections))
    return write_zip(entries)


# 校验

class VerifyStatus(str, Enum):
    VERIFIED = "Verified"
    DIGEST_MISMATCH = "DigestMismatch"
    UNTRUSTED_SIGNER = "UntrustedSigner"
    UNSIGNED = "Unsigned"


class VerifyResult(BaseModel):
    """校验结果；entry 指出第一个不一致的条目"""

    status: VerifyStatus
    entry: Optional[str] = None
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status == VerifyStatus.VERIFIED


def _check_block(block: bytes, signature_file: bytes) -> x509.Certificate:
    """校验PKCS#7签名，返回内嵌证书；失败时抛出InvalidSignature"""
    try:
        info = cms.ContentInfo.load(block)
        signed = info["content"]
        certificate = x509.load_der_x509_certificate(signed["certificates"][0].chosen.dump())
        signer = signed["signer_infos"][0]
        signature = signer["signature"].native
        algorithm = signer["digest_algorithm"]["algorithm"].native
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise InvalidSignature(f"无法解析签名块: {exc}") from exc
    hash_algorithm = {"sha256": hashes.SHA256(), "sha1": hashes.SHA1(), "sha512": hashes.SHA512()}.get(algorithm)
    if hash_algorithm is None:
        raise InvalidSignature(f"不支持的摘要算法 {algorithm}")

    message = signature_file
    attrs = signer["signed_attrs"]
    if attrs.native:
        digests = [a["values"][0].native for a in attrs if a["type"].native == "message_digest"]
        expected = hashlib.new(hash_algorithm.name, signature_file).digest()
        if digests != [expected]:
            raise InvalidSignature("签名属性中的摘要不一致")
        message = b"\x31" + attrs.dump()[1:]

    public_key = certificate.public_key()
    if isinstance(public_key, rsa.RSAPublicKey):
        public_key.verify(signature, message, padding.PKCS1v15(), hash_algorithm)
    elif isinstance(public_key, ec.EllipticCurvePublicKey):
        public_key.verify(signature, message, ec.ECDSA(hash_algorithm))
    else:
        raise InvalidSignature("不支持的公钥类型")
    return certificate


def _public_der(certificate: x509.Certificate) -> bytes:
    return certificate.public_key().public_bytes(
        serialization.Encoding.DER, serialization.PublicFormat.SubjectPublicKeyInfo
    )


def verify(apk: bytes, trust: Optional[x509.Certificate] = None) -> VerifyResult:
    """校验v1签名

    依次检查：签名条目是否齐全、PKCS#7签名、签名者是否可信、
    清单摘要、每个条目的摘要。

    Args:
        apk: APK字节
        trust: 要求的签名证书；为None时信任内嵌证书

    Returns:
        VerifyResult
    """
    try:
        zf = zipfile.ZipFile(io.BytesIO(apk))
    except (zipfile.BadZipFile, OSError):
        return VerifyResult(status=VerifyStatus.UNSIGNED, message="不是有效的zip")
    with zf:
        infos = {info.filename: info for info in zf.infolist() if not info.is_dir()}
        signature_names = [name for name in infos if is_signature_entry(name)]
        blocks = [n for n in signature_names if n.upper().endswith((".RSA", ".DSA", ".EC"))]
        signature_files = [n for n in signature_names if n.upper().endswith(".SF")]
        if MANIFEST_NAME not in infos or not blocks or not signature_files:
            return VerifyResult(status=VerifyStatus.UNSIGNED, message="缺少签名条目")

        block_name = blocks[0]
        stem = block_name.rsplit(".", 1)[0]
        sf_name = stem + ".SF" if stem + ".SF" in infos else signature_files[0]
        try:
            block, signature_file, manifest = (zf.read(infos[n]) for n in (block_name, sf_name, MANIFEST_NAME))
        except (zipfile.BadZipFile, zlib.error, EOFError) as exc:
            return VerifyResult(status=VerifyStatus.DIGEST_MISMATCH, entry=block_name, message=f"签名条目损坏: {exc}")

        try:
            certificate = _check_block(block, signature_file)
        except InvalidSignature as exc:
            return VerifyResult(status=VerifyStatus.DIGEST_MISMATCH, entry=block_name, message=str(exc) or "签名无效")

        if trust is not None and _public_der(trust) != _public_der(certificate):
            return VerifyResult(status=VerifyStatus.UNTRUSTED_SIGNER, entry=block_name, message="签名证书不可信")

        sf_main = parse_sections(signature_file)
        if not sf_main or sf_main[0].get(f"{DIGEST_NAME}-Digest-Manifest") != _digest(manifest):
            return VerifyResult(status=VerifyStatus.DIGEST_MISMATCH, entry=MANIFEST_NAME, message="清单摘要不一致")

        digests = {s["Name"]: s.get(f"{DIGEST_NAME}-Digest") for s in parse_sections(manifest)[1:] if "Name" in s}
        for name in sorted(infos):
            if is_signature_entry(name):
                continue
            try:
                data = zf.read(infos[name])
            except (zipfile.BadZipFile, zlib.error, EOFError) as exc:
                return VerifyResult(status=VerifyStatus.DIGEST_MISMATCH, entry=name, message=f"条目损坏: {exc}")
            if digests.get(name) != _digest(data):
                return VerifyResult(status=VerifyStatus.DIGEST_MISMATCH, entry=name, message="条目摘要不一致")
        missing = sorted(set(digests) - set(infos))
        if missing:
            return VerifyResult(status=VerifyStatus.DIGEST_MISMATCH, entry=missing[0], message="清单中的条目不存在")
    return VerifyResult(status=VerifyStatus.VERIFIED)
