"""
Tests für die Transaktions-Engine (Primitive, Locks, persist, Recovery)
"""

import time
from dataclasses import replace

import pytest

from app.config import DeviceBackend
from app.core.engine import Engine
from app.core.errors import InvalidTransactionState, SimulatedCrash, TransactionAborted
from app.core.storage import SubsetChoice
from tests.conftest import commit_puts, reopen, small_config


def test_read_own_writes_and_commit(engine):
    txn = engine.begin()
    assert engine.get(txn, b"x") is None
    engine.put(txn, b"x", b"1")
    assert engine.get(txn, b"x") == b"1"
    engine.commit(txn)

    reader = engine.begin()
    assert engine.get(reader, b"x") == b"1"
    engine.commit(reader)
    assert engine.stats.commits == 2


def test_abort_discards_writes(engine):
    txn = engine.begin()
    engine.put(txn, b"x", b"1")
    engine.abort(txn)
    assert engine.contents() == {}
    assert engine.stats.abort_reasons == {"user": 1}


def test_delete_and_getrange(engine):
    commit_puts(engine, {b"a": b"1", b"b": b"2", b"c": b"3"})
    txn = engine.begin()
    engine.delete(txn, b"b")
    assert engine.get(txn, b"b") is None
    assert engine.getrange(txn, b"a", b"c") == [(b"a", b"1"), (b"c", b"3")]
    engine.commit(txn)
    assert engine.contents() == {b"a": b"1", b"c": b"3"}


def test_getrange_merges_write_set(engine):
    commit_puts(engine, {b"a": b"1", b"d": b"4"})
    txn = engine.begin()
    engine.put(txn, b"b", b"2")
    engine.put(txn, b"d", b"9")
    assert engine.getrange(txn, b"a", b"z") == [(b"a", b"1"), (b"b", b"2"), (b"d", b"9")]
    engine.abort(txn)


def test_delete_of_own_insert_commits_nothing(engine):
    txn = engine.begin()
    engine.put(txn, b"n", b"1")
    engine.delete(txn, b"n")
    engine.commit(txn)
    assert engine.contents() == {}
    assert engine.record_count() == 0


def test_empty_value_rejected(engine):
    txn = engine.begin()
    with pytest.raises(ValueError):
        engine.put(txn, b"k", b"")
    with pytest.raises(ValueError):
        engine.get(txn, b"")
    with pytest.raises(ValueError):
        engine.getrange(txn, b"z", b"a")


def test_finished_transaction_rejects_operations(engine):
    txn = engine.begin()
    engine.commit(txn)
    with pytest.raises(InvalidTransactionState):
        engine.get(txn, b"x")
    with pytest.raises(InvalidTransactionState):
        engine.begin(txn)


def test_record_lock_conflict_aborts_requester(engine):
    commit_puts(engine, {b"x": b"0"})
    writer = engine.begin()
    engine.put(writer, b"x", b"1")
    reader = engine.begin()
    with pytest.raises(TransactionAborted) as info:
        engine.get(reader, b"x")
    assert info.value.reason == "record_lock"
    assert info.value.retryable
    # Weitere Operationen des abgebrochenen Clients melden den Abbruch
    with pytest.raises(TransactionAborted):
        engine.get(reader, b"y")
    engine.commit(writer)
    assert engine.contents() == {b"x": b"1"}


def test_gap_lock_prevents_phantom(engine):
    commit_puts(engine, {b"1": b"v", b"4": b"v", b"8": b"v"})
    engine.persist()

    reader = engine.begin()
    assert engine.getrange(reader, b"3", b"6") == [(b"4", b"v")]
    inserter = engine.begin()
    with pytest.raises(TransactionAborted) as info:
        engine.put(inserter, b"5", b"v")
    assert info.value.reason == "gap_lock"
    assert engine.getrange(reader, b"3", b"6") == [(b"4", b"v")]
    engine.commit(reader)

    retry = engine.begin()
    engine.put(retry, b"5", b"v")
    engine.commit(retry)
    assert sorted(engine.contents()) == [b"1", b"4", b"5", b"8"]


def test_gap_lock_above_largest_key_uses_sentinel(engine):
    commit_puts(engine, {b"a": b"1"})
    reader = engine.begin()
    assert engine.getrange(reader, b"b", b"z") == []
    inserter = engine.begin()
    with pytest.raises(TransactionAborted):
        engine.put(inserter, b"q", b"1")
    engine.commit(reader)


def test_insert_outside_locked_range_succeeds(engine):
    commit_puts(engine, {b"1": b"v", b"4": b"v", b"8": b"v"})
    reader = engine.begin()
    engine.getrange(reader, b"3", b"6")
    inserter = engine.begin()
    engine.put(inserter, b"0", b"v")
    engine.commit(inserter)
    engine.commit(reader)


def test_locked_tombstone_survives_persist(engine):
    commit_puts(engine, {b"a": b"1", b"c": b"3"})
    engine.persist()

    scanner = engine.begin()
    assert engine.getrange(scanner, b"a", b"b") == [(b"a", b"1")]
    deleter = engine.begin()
    engine.delete(deleter, b"c")
    engine.commit(deleter)
    engine.persist()

    # Der Gap-Lock des Scanners hängt weiter an c
    inserter = engine.begin()
    with pytest.raises(TransactionAborted):
        engine.put(inserter, b"b", b"2")
    engine.commit(scanner)
    engine.persist()
    assert engine.index.index_search(b"c") is None
    assert engine.contents() == {b"a": b"1"}


def test_commit_after_intervening_persist(engine):
    commit_puts(engine, {b"x": b"0"})
    txn = engine.begin()
    engine.put(txn, b"x", b"1")
    engine.put(txn, b"y", b"2")
    engine.persist()
    engine.commit(txn)
    assert engine.contents() == {b"x": b"1", b"y": b"2"}
    engine.index.check_invariants()


def test_persisted_commits_survive_crash(engine):
    commit_puts(engine, {b"a": b"1"})
    assert engine.persist() == 2
    commit_puts(engine, {b"b": b"2"})

    recovered = reopen(engine, SubsetChoice.all())
    assert recovered.contents() == {b"a": b"1"}
    assert recovered.snapshot_epoch == 2


def test_crash_during_persist_keeps_previous_snapshot(engine):
    commit_puts(engine, {b"a": b"1"})
    engine.persist()
    commit_puts(engine, {b"b": b"2"})
    engine.device.arm(after_ops=1)
    with pytest.raises(SimulatedCrash):
        engine.persist()
    assert engine.protocol.accepting

    recovered = reopen(engine, SubsetChoice.all())
    assert recovered.contents() == {b"a": b"1"}


def test_structure_unchanged_between_persists(engine):
    commit_puts(engine, {f"k{i:02d}".encode(): b"a" for i in range(20)})
    engine.persist()
    before = engine.index.structure_hash()
    for i in range(20):
        txn = engine.begin()
        engine.put(txn, f"k{i:02d}".encode(), b"b")
        engine.put(txn, f"n{i:02d}".encode(), b"c")
        engine.commit(txn)
    assert engine.index.structure_hash() == before
    engine.persist()
    assert engine.index.structure_hash() != before
    engine.index.check_invariants()


def test_full_skiplist_triggers_persist_on_commit():
    app_config = small_config(skiplist_capacity=4)
    with Engine.open(None, app_config) as engine:
        for i in range(10):
            commit_puts(engine, {f"k{i}".encode(): b"v"})
        assert engine.stats.commit_restarts > 0
        assert len(engine.contents()) == 10


def test_recorder_receives_events(engine):
    events = []
    engine.recorder = lambda kind, txn_id, details: events.append((kind, details))
    txn = engine.begin()
    engine.get(txn, b"x")
    engine.put(txn, b"x", b"1")
    engine.commit(txn)
    engine.persist()
    assert [kind for kind, _ in events] == ["begin", "read", "write", "commit", "persist_begin", "persist"]
    assert events[1][1] == {"key": b"x", "value": None}


def test_background_persister_advances_epoch():
    app_config = small_config()
    app_config = replace(app_config, txn=replace(app_config.txn, persist_interval=0.01))
    with Engine.open(None, app_config) as engine:
        commit_puts(engine, {b"a": b"1"})
        deadline = time.time() + 5
        while engine.persister.job.runs < 1 and time.time() < deadline:
            time.sleep(0.01)
        assert engine.snapshot_epoch >= 2
        assert engine.persister.job.runs >= 1


def test_group_commit_returns_after_persist():
    app_config = small_config()
    app_config = replace(app_config, txn=replace(app_config.txn, group_commit=True, persist_interval=0.02))
    engine = Engine.open(None, app_config)
    txn = engine.begin()
    engine.put(txn, b"g", b"1")
    engine.commit(txn)
    assert txn.commit_wait_seconds > 0
    assert engine.protocol.generation >= 1

    recovered = reopen(engine, SubsetChoice.none())
    assert recovered.contents() == {b"g": b"1"}


def test_file_backed_engine_reopens(tmp_path):
    app_config = replace(small_config(), storage=replace(small_config().storage, backend=DeviceBackend.FILE))
    path = tmp_path / "kv.db"
    with Engine.open(path, app_config) as engine:
        commit_puts(engine, {b"a": b"1", b"b": b"2"})
        engine.persist()
        commit_puts(engine, {b"c": b"3"})
    with Engine.open(path, app_config) as engine:
        assert engine.contents() == {b"a": b"1", b"b": b"2"}
        info = engine.info()
        assert info["record_count"] == 2
        assert info["page_table_bytes"] == 2 * app_config.shadow.logical_capacity * 4


@pytest.mark.slow
def test_structure_invariant_over_many_operations():
    import random

    rng = random.Random(1)
    app_config = small_config(skiplist_capacity=100_000)
    with Engine.open(None, app_config) as engine:
        commit_puts(engine, {f"k{i:04d}".encode(): b"v" for i in range(500)})
        engine.persist()
        before = engine.index.structure_hash()
        for _ in range(10_000):
            txn = engine.begin()
            key = f"k{rng.randrange(1000):04d}".encode()
            if rng.random() < 0.5:
                engine.get(txn, key)
            else:
                engine.put(txn, key, f"{rng.random()}".encode())
            engine.commit(txn)
        assert engine.index.structure_hash() == before
        engine.persist()
        engine.index.check_invariants()


def test_persister_job_status():
    app_config = small_config()
    engine = Engine.open(None, app_config)
    assert "persister" not in engine.info()
    engine.start_persister(0.01)
    job = engine.info()["persister"]
    assert job["status"] == "running"
    assert job["interval"] == 0.01
    assert job["stopped_at"] is None
    persister = engine.persister
    engine.stop_persister()
    stopped = persister.job.to_dict()
    assert stopped["status"] == "cancelled"
    assert stopped["stopped_at"] is not None
    assert not persister.running
    with pytest.raises(ValueError):
        engine.start_persister(0)
