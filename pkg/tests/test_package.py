"""APK解包、重新打包与v1签名"""

import io
import os
import zipfile

import pytest

from dexweaver.core.errors import BadZip, ConfigError, MissingClassesDex
from dexweaver.dex import write_dex
from dexweaver.package import (
    VerifyStatus,
    generate_identity,
    load_certificate,
    load_keystore,
    repack,
    save_keystore,
    sign,
    unpack,
    verify,
    write_zip,
)
from dexweaver.package.archive import is_signature_entry, read_entries
from dexweaver.package.signing import LINE_LIMIT, build_manifest, parse_sections, wrap_line
from tests.conftest import load_fixture

ASSET = "assets/data.bin"


@pytest.fixture
def apk():
    return write_zip([
        ("classes.dex", write_dex(load_fixture("hello"))),
        ("AndroidManifest.xml", b"<manifest package='com.example.gps'/>"),
        (ASSET, bytes(range(256)) * 8),
    ])


def _replace(data: bytes, name: str, content: bytes) -> bytes:
    return write_zip([(n, content if n == name else d) for n, d in read_entries(data)])


class TestArchive:
    def test_unpack(self, apk):
        archive = unpack(apk)
        assert len(archive.content_entries) == 3
        assert archive.signature_entries == []
        assert archive.classes_dex == write_dex(load_fixture("hello"))
        assert archive.manifest_bytes.startswith(b"<manifest")

    def test_missing_classes_dex(self):
        with pytest.raises(MissingClassesDex):
            unpack(write_zip([("AndroidManifest.xml", b"<manifest/>")]))

    def test_not_a_zip(self, apk):
        with pytest.raises(BadZip):
            unpack(b"not a zip at all")
        with pytest.raises(BadZip):
            unpack(apk[: len(apk) // 2])

    def test_duplicate_paths(self):
        with pytest.raises(BadZip):
            write_zip([("a", b"1"), ("a", b"2")])

    def test_deterministic(self, apk):
        archive = unpack(apk)
        new_dex = write_dex(load_fixture("gps"))
        first = repack(archive, new_dex)
        assert repack(unpack(apk), new_dex) == first
        assert unpack(first).classes_dex == new_dex

    def test_fixed_timestamps_and_compression(self, apk):
        with zipfile.ZipFile(io.BytesIO(repack(unpack(apk), b"dex\n035\x00"))) as zf:
            infos = {info.filename: info for info in zf.infolist()}
        assert [info.filename for info in infos.values()] == sorted(infos)
        assert all(info.date_time == (1980, 1, 1, 0, 0, 0) for info in infos.values())
        assert infos[ASSET].compress_type == zipfile.ZIP_DEFLATED
        assert infos["classes.dex"].compress_type == zipfile.ZIP_STORED

    def test_large_asset_survives(self, apk):
        blob = os.urandom(1024 * 1024)
        archive = unpack(apk)
        output = repack(archive, archive.classes_dex, extra_entries=[("assets/blob.bin", blob)])
        assert unpack(output).get("assets/blob.bin") == blob

    def test_old_signatures_dropped(self, apk, identity):
        signed = sign(apk, identity)
        assert len(unpack(signed).signature_entries) == 3
        repacked = unpack(repack(unpack(signed), write_dex(load_fixture("gps"))))
        assert repacked.signature_entries == []

    @pytest.mark.parametrize("name, expected", [
        ("META-INF/MANIFEST.MF", True),
        ("META-INF/CERT.SF", True),
        ("META-INF/CERT.RSA", True),
        ("META-INF/ANDROID.EC", True),
        ("META-INF/SIG-extra", True),
        ("META-INF/services/x", False),
        ("classes.dex", False),
    ])
    def test_is_signature_entry(self, name, expected):
        assert is_signature_entry(name) == expected


class TestSigning:
    def test_sign_and_verify(self, apk, identity):
        signed = sign(apk, identity)
        assert {"META-INF/MANIFEST.MF", "META-INF/CERT.SF", "META-INF/CERT.EC"} <= set(unpack(signed).names)
        result = verify(signed)
        assert result.status == VerifyStatus.VERIFIED and result.ok
        assert verify(signed, trust=identity.certificate).ok

    def test_rsa_identity(self, apk):
        identity = generate_identity()
        assert identity.algorithm == "RSA"
        signed = sign(apk, identity)
        assert "META-INF/CERT.RSA" in unpack(signed).names
        assert verify(signed, trust=identity.certificate).ok

    def test_deterministic_manifest(self, apk, identity):
        first = unpack(sign(apk, identity)).get("META-INF/MANIFEST.MF")
        second = unpack(sign(apk, identity)).get("META-INF/MANIFEST.MF")
        assert first == second

    def test_tampered_entry(self, apk, identity):
        tampered = _replace(sign(apk, identity), ASSET, b"changed")
        result = verify(tampered)
        assert result.status == VerifyStatus.DIGEST_MISMATCH
        assert result.entry == ASSET

    def test_added_entry(self, apk, identity):
        entries = read_entries(sign(apk, identity)) + [("assets/extra.txt", b"extra")]
        result = verify(write_zip(entries))
        assert result.status == VerifyStatus.DIGEST_MISMATCH
        assert result.entry == "assets/extra.txt"

    def test_tampered_manifest(self, apk, identity):
        signed = sign(apk, identity)
        manifest = unpack(signed).get("META-INF/MANIFEST.MF")
        result = verify(_replace(signed, "META-INF/MANIFEST.MF", manifest + b"Name: x\r\n\r\n"))
        assert result.status == VerifyStatus.DIGEST_MISMATCH
        assert result.entry == "META-INF/MANIFEST.MF"

    def test_tampered_signature_file(self, apk, identity):
        signed = sign(apk, identity)
        signature_file = unpack(signed).get("META-INF/CERT.SF")
        result = verify(_replace(signed, "META-INF/CERT.SF", signature_file.replace(b"1.0", b"2.0", 1)))
        assert result.status == VerifyStatus.DIGEST_MISMATCH
        assert result.entry == "META-INF/CERT.EC"

    def test_untrusted_signer(self, apk, identity, other_identity):
        result = verify(sign(apk, identity), trust=other_identity.certificate)
        assert result.status == VerifyStatus.UNTRUSTED_SIGNER

    def test_unsigned(self, apk):
        assert verify(apk).status == VerifyStatus.UNSIGNED
        assert verify(b"garbage").status == VerifyStatus.UNSIGNED

    def test_resign_replaces_signature(self, apk, identity, other_identity):
        signed = sign(sign(apk, identity), other_identity)
        assert verify(signed, trust=other_identity.certificate).ok
        assert verify(signed, trust=identity.certificate).status == VerifyStatus.UNTRUSTED_SIGNER


class TestIdentity:
    def test_seeded(self, identity):
        again = generate_identity(seed=7)
        assert again.public_key_der == identity.public_key_der
        assert again.certificate.serial_number == identity.certificate.serial_number
        assert identity.algorithm == "EC"

    def test_seeds_differ(self, identity, other_identity):
        assert identity.public_key_der != other_identity.public_key_der

    def test_unseeded_differ(self):
        assert generate_identity().public_key_der != generate_identity().public_key_der

    def test_self_signed(self, identity):
        certificate = identity.certificate
        assert certificate.issuer == certificate.subject
        certificate.verify_directly_issued_by(certificate)

    def test_keystore_round_trip(self, identity, tmp_path):
        path = tmp_path / "ks.json"
        save_keystore(identity, path)
        loaded = load_keystore(path)
        assert loaded.public_key_der == identity.public_key_der
        assert loaded.certificate == identity.certificate
        assert load_certificate(path) == identity.certificate

    def test_pem_certificate(self, identity, tmp_path):
        path = tmp_path / "cert.pem"
        path.write_text(identity.to_dict()["certificate"], encoding="utf-8")
        assert load_certificate(path) == identity.certificate

    def test_missing_keystore(self, tmp_path):
        with pytest.raises(ConfigError) as info:
            load_keystore(tmp_path / "none.json")
        assert info.value.path == str(tmp_path / "none.json")

    def test_invalid_keystore(self, tmp_path):
        path = tmp_path / "ks.json"
        path.write_text('{"private_key": "nope", "certificate": "nope"}', encoding="utf-8")
        with pytest.raises(ConfigError):
            load_keystore(path)


class TestManifest:
    def test_wrap_line(self):
        short = wrap_line("Name: a")
        assert short == b"Name: a\r\n"
        long_name = "Name: " + "x" * 200
        lines = wrap_line(long_name).split(b"\r\n")[:-1]
        assert all(len(line) <= LINE_LIMIT for line in lines)
        assert all(line.startswith(b" ") for line in lines[1:])
        assert b"".join([lines[0]] + [line[1:] for line in lines[1:]]) == long_name.encode()

    def test_long_names_parse_back(self):
        name = "assets/" + "deep/" * 30 + "file.bin"
        manifest, sections = build_manifest([(name, b"data")])
        parsed = parse_sections(manifest)
        assert parsed[0]["Manifest-Version"] == "1.0"
        assert parsed[1]["Name"] == name
        assert list(sections) == [name]
