"""
Tests für die Skip-List
"""

import random
import threading

import pytest

from app.core.errors import DuplicateKey, SkipListFull
from app.core.skiplist import SkipList


def test_insert_and_search():
    skiplist = SkipList(capacity=16, max_level=4, seed=1)
    node = skiplist.insert(b"b", b"2")
    skiplist.insert(b"a", b"1")
    assert skiplist.search(b"b") is node
    assert skiplist.search(b"a").value == b"1"
    assert skiplist.search(b"c") is None
    assert len(skiplist) == 2


def test_items_sorted():
    skiplist = SkipList(capacity=64, seed=2)
    keys = [f"k{i:02d}".encode() for i in range(30)]
    shuffled = list(keys)
    random.Random(5).shuffle(shuffled)
    for key in shuffled:
        skiplist.insert(key, key.upper())
    assert [k for k, _ in skiplist.items()] == keys
    skiplist.check_invariants()


def test_duplicate_key_rejected():
    skiplist = SkipList(capacity=8)
    skiplist.insert(b"x", b"1")
    with pytest.raises(DuplicateKey):
        skiplist.insert(b"x", b"2")
    assert skiplist.search(b"x").value == b"1"


def test_capacity_exhausted():
    skiplist = SkipList(capacity=2)
    skiplist.insert(b"a", b"1")
    skiplist.insert(b"b", b"2")
    with pytest.raises(SkipListFull):
        skiplist.insert(b"c", b"3")


def test_update_in_place():
    skiplist = SkipList(capacity=8)
    node = skiplist.insert(b"a", b"1")
    skiplist.update(node, b"9")
    assert skiplist.search(b"a").value == b"9"
    assert len(skiplist) == 1


def test_nodes_from():
    skiplist = SkipList(capacity=8, seed=3)
    for key in (b"a", b"c", b"e"):
        skiplist.insert(key, key)
    assert [n.key for n in skiplist.nodes_from(b"b")] == [b"c", b"e"]
    assert [n.key for n in skiplist.nodes_from(b"c")] == [b"c", b"e"]
    assert list(skiplist.nodes_from(b"f")) == []


def test_concurrent_inserts_keep_order():
    skiplist = SkipList(capacity=4000, seed=4)

    def insert_range(offset: int):
        for i in range(offset, 2000, 4):
            skiplist.insert(f"{i:05d}".encode(), b"v")

    threads = [threading.Thread(target=insert_range, args=(i,)) for i in range(4)]
    for thread in threads:
        thread.start()
    for thread in threads:
        thread.join()

    assert len(skiplist) == 2000
    assert [k for k, _ in skiplist.items()] == [f"{i:05d}".encode() for i in range(2000)]
    skiplist.check_invariants()


def test_invalid_capacity():
    with pytest.raises(ValueError):
        SkipList(capacity=0)
