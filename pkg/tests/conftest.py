"""
Gemeinsame Fixtures: kleine Konfigurationen auf dem Crash-Simulator
"""

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from app.config import (
    AppConfig,
    DeviceBackend,
    IndexConfig,
    ShadowConfig,
    StorageConfig,
    TxnConfig,
)
from app.core.engine import Engine
from app.core.storage import CrashSimDevice


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: Abnahmeläufe in voller Grösse (pytest -m slow)")


def small_config(**index_overrides) -> AppConfig:
    """512 Seiten, 256 logische Seiten, höchstens 3 Records pro Blatt"""
    index = dict(
        skiplist_capacity=4096,
        overflow_capacity=64,
        merge_workers=1,
        leaf_max_records=3,
        internal_max_keys=3,
    )
    index.update(index_overrides)
    return AppConfig(
        storage=StorageConfig(backend=DeviceBackend.CRASH_SIM, device_pages=512),
        shadow=ShadowConfig(logical_capacity=256, delta_pages=8),
        index=IndexConfig(**index),
        txn=TxnConfig(enter_retries=200),
        log_dir=None,
    )


@pytest.fixture
def app_config() -> AppConfig:
    return small_config()


@pytest.fixture
def device(app_config) -> CrashSimDevice:
    return CrashSimDevice(app_config.storage.device_pages, app_config.storage.page_size)


@pytest.fixture
def engine(app_config, device):
    engine = Engine.open(device, app_config)
    yield engine
    engine.stop_persister()


def reopen(engine: Engine, selector=None) -> Engine:
    """Crash (Standard: keine offenen Writes überleben) und Wiederanlauf"""
    from app.core.storage import SubsetChoice

    engine.stop_persister()
    engine.device.crash(selector or SubsetChoice.none())
    return Engine.open(engine.device, engine.config)


def commit_puts(engine: Engine, items: dict):
    txn = engine.begin()
    for key, value in items.items():
        engine.put(txn, key, value)
    engine.commit(txn)
