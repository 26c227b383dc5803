"""
Tests für das JSONL Event-Log
"""

import json

from app.core.engine import Engine
from app.core.event_log import EventLog
from app.core.storage import CrashSimDevice
from tests.conftest import commit_puts, small_config


def test_log_writes_jsonl(tmp_path):
    log = EventLog(tmp_path)
    log.log("shadow", "flush", epoch=2, dirty=3)
    log.log("engine", "persist", epoch=2)

    files = list(tmp_path.glob("events_*.jsonl"))
    assert len(files) == 1
    lines = [json.loads(line) for line in files[0].read_text(encoding="utf-8").splitlines()]
    assert [line["action"] for line in lines] == ["flush", "persist"]
    assert lines[0]["details"] == {"epoch": 2, "dirty": 3}


def test_get_logs_filters(tmp_path):
    log = EventLog(tmp_path)
    log.log("shadow", "flush", epoch=2)
    log.log("engine", "persist", epoch=2)
    log.log("shadow", "flush", epoch=3)

    flushes = log.get_logs(action="flush")
    assert len(flushes) == 2
    assert log.get_logs(component="engine")[0].details == {"epoch": 2}
    assert len(log.get_logs(limit=1)) == 1


def test_memory_log_is_bounded():
    log = EventLog(None, keep_in_memory=2)
    for n in range(5):
        log.log("bench", "bench_run", n=n)
    assert [e.details["n"] for e in log.recent] == [3, 4]


def test_engine_logs_persist_and_recover():
    log = EventLog(None)
    device = CrashSimDevice(512)
    engine = Engine.open(device, small_config(), log)
    commit_puts(engine, {b"a": b"1"})
    engine.persist()
    assert log.get_logs(action="persist")[0].details["epoch"] == 2

    device.crash()
    Engine.open(device, small_config(), log)
    assert log.get_logs(action="recover")
