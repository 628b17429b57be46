"""APK解包、确定性重新打包与v1签名"""

from .archive import Archive, repack, unpack, write_zip
from .signing import (
    SigningIdentity,
    VerifyResult,
    VerifyStatus,
    generate_identity,
    load_certificate,
    load_keystore,
    save_keystore,
    sign,
    verify,
)

__all__ = [
    "Archive",
    "SigningIdentity",
    "VerifyResult",
    "VerifyStatus",
    "generate_identity",
    "load_certificate",
    "load_keystore",
    "repack",
    "save_keystore",
    "sign",
    "unpack",
    "verify",
    "write_zip",
]
