"""测试共享的fixture"""

from pathlib import Path

import pytest

from dexweaver.asm import assemble_file
from dexweaver.core.config import init_config
from dexweaver.package import generate_identity
from dexweaver.policy import PermissionMap, Policy, PolicyService

FIXTURES = Path(__file__).parent / "fixtures"
FIXTURE_PATHS = sorted(FIXTURES.glob("*.mdsm"))

GPS_APP = "com.example.gps"
GET_LOCATION = "Lapi/Gps;->getLocation()I"


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: 多兆字节输入或重复计时的测试")


def load_fixture(name: str):
    return assemble_file(FIXTURES / f"{name}.mdsm")


@pytest.fixture(autouse=True)
def isolated_config(tmp_path):
    """每个测试使用独立的工作目录与默认配置"""
    config = init_config(base_dir=str(tmp_path / "home"))
    yield config
    init_config()


@pytest.fixture
def permission_map():
    return PermissionMap(entries={
        GET_LOCATION: ["ACCESS_FINE_LOCATION"],
        "Lapi/Sms;->send(Ljava/lang/String;)V": ["SEND_SMS"],
        "Lapi/Net;->read()I": ["INTERNET"],
        "Lapi/Cam;-><init>()V": ["CAMERA"],
        "Lapi/Cam;->snap()I": ["CAMERA"],
    })


@pytest.fixture
def grant_all(permission_map):
    return PolicyService(Policy(apps={GPS_APP: permission_map.permissions}), permission_map)


@pytest.fixture
def grant_none(permission_map):
    return PolicyService(Policy(apps={}), permission_map)


@pytest.fixture(scope="session")
def identity():
    return generate_identity(seed=7)


@pytest.fixture(scope="session")
def other_identity():
    return generate_identity(seed=8)
