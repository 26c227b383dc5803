"""
Tests für Record- und Gap-Lock-Tabellen (No-Wait)
"""

from app.core.index import SENTINEL
from app.core.locks import LockMode, LockTable, LockTables

S, X = LockMode.SHARED, LockMode.EXCLUSIVE


def test_shared_locks_are_compatible():
    table = LockTable("record")
    assert table.acquire(b"k", 1, S)
    assert table.acquire(b"k", 2, S)
    assert table.lookup(b"k") == (S, {1, 2})


def test_exclusive_conflicts_without_waiting():
    table = LockTable("record")
    assert table.acquire(b"k", 1, X)
    assert not table.acquire(b"k", 2, S)
    assert not table.acquire(b"k", 2, X)
    assert table.lookup(b"k") == (X, {1})


def test_reacquire_is_idempotent():
    table = LockTable("record")
    assert table.acquire(b"k", 1, X)
    assert table.acquire(b"k", 1, X)
    assert table.acquire(b"k", 1, S)
    assert table.lookup(b"k") == (X, {1})


def test_upgrade_only_for_sole_holder():
    table = LockTable("record")
    table.acquire(b"k", 1, S)
    assert table.acquire(b"k", 1, X)
    assert table.lookup(b"k") == (X, {1})

    other = LockTable("record")
    other.acquire(b"k", 1, S)
    other.acquire(b"k", 2, S)
    assert not other.acquire(b"k", 1, X)


def test_release_removes_entry_after_last_holder():
    table = LockTable("gap")
    table.acquire(b"k", 1, S)
    table.acquire(b"k", 2, S)
    table.release(b"k", 1)
    assert table.is_locked(b"k")
    table.release(b"k", 2)
    assert not table.is_locked(b"k")
    assert len(table) == 0
    # Freigabe ohne Lock ist ein No-Op
    table.release(b"k", 3)


def test_sentinel_is_a_lockable_key():
    table = LockTable("gap")
    assert table.acquire(SENTINEL, 1, S)
    assert not table.acquire(SENTINEL, 2, X)
    assert table.lookup(SENTINEL) == (S, {1})


def test_lock_tables_combined_view():
    tables = LockTables(stripes=4)
    tables.records.acquire(b"a", 1, S)
    tables.gaps.acquire(b"b", 1, X)
    assert tables.is_locked(b"a")
    assert tables.is_locked(b"b")
    assert not tables.is_locked(b"c")
    assert tables.held_count() == 2
