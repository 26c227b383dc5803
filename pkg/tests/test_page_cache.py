"""
Tests für den Buffer-Cache (Pin/Unpin, Dirty, LRU)
"""

from dataclasses import dataclass

import pytest

from app.core.page_cache import MIN_CACHED_NODES, PageCache

PAGE = 4096


@dataclass
class Node:
    addr: int
    payload: str = ""


class FakeStore:
    def __init__(self):
        self.loads = []
        self.writes = []

    def load(self, addr: int) -> Node:
        self.loads.append(addr)
        return Node(addr, f"disk{addr}")

    def write(self, node: Node):
        self.writes.append((node.addr, node.payload))


def make(capacity_bytes=None):
    store = FakeStore()
    return store, PageCache(store.load, store.write, PAGE, capacity_bytes)


def test_get_loads_once():
    store, cache = make()
    first = cache.get(3)
    second = cache.get(3)
    assert first is second
    assert store.loads == [3]
    assert cache.stats.misses == 1
    assert cache.stats.hits == 1


def test_add_marks_dirty_and_write_back():
    store, cache = make()
    cache.add(Node(7, "new"))
    assert cache.dirty_addrs() == [7]
    assert cache.write_back() == 1
    assert store.writes == [(7, "new")]
    assert cache.dirty_addrs() == []


def test_update_marks_dirty_unless_false():
    store, cache = make()

    def change(node):
        node.payload = "changed"

    assert cache.update(1, change) is None
    assert cache.dirty_addrs() == [1]
    cache.write_back()
    assert cache.update(1, lambda node: False) is False
    assert cache.dirty_addrs() == []


def test_mark_dirty_requires_cached_node():
    _, cache = make()
    with pytest.raises(KeyError):
        cache.mark_dirty(99)


def test_unpin_without_pin():
    _, cache = make()
    cache.get(1)
    with pytest.raises(AssertionError):
        cache.unpin(1)


def test_pin_counts():
    _, cache = make()
    cache.pin(4)
    cache.pin(4)
    assert cache.pin_count(4) == 2
    cache.unpin(4)
    assert cache.pin_count(4) == 1
    cache.unpin(4)
    assert cache.pin_count(4) == 0


def test_bounded_cache_evicts_lru_and_writes_dirty():
    store, cache = make(capacity_bytes=PAGE)
    assert cache.max_nodes == MIN_CACHED_NODES
    cache.add(Node(0, "dirty"))
    for addr in range(1, MIN_CACHED_NODES + 1):
        cache.get(addr)
    assert 0 not in cache
    assert (0, "dirty") in store.writes
    assert cache.stats.evictions == 1
    assert len(cache) == MIN_CACHED_NODES


def test_pinned_nodes_are_never_evicted():
    _, cache = make(capacity_bytes=PAGE)
    cache.get(0, pin=True)
    for addr in range(1, 3 * MIN_CACHED_NODES):
        cache.get(addr)
    assert 0 in cache
    cache.unpin(0)


def test_clear_drops_everything():
    store, cache = make()
    cache.add(Node(1, "x"))
    cache.clear()
    assert len(cache) == 0
    assert cache.dirty_addrs() == []
    assert store.writes == []
