"""
Tests für den B+-Baum: Coalescing, Batch-Merge, Persistenz
"""

import random

import pytest

from app.config import ShadowConfig
from app.core.bplustree import (
    BPlusTree,
    InternalNode,
    NodeLimits,
    coalesce_internal,
    coalesce_leaf,
    split_leaf_records,
    split_points,
)
from app.core.shadow import ShadowPager
from app.core.storage import CrashSimDevice

LIMITS = NodeLimits(page_size=4096, leaf_max_records=3, internal_max_keys=3)


def new_tree(limits: NodeLimits = LIMITS, merge_workers: int = 1, cache_bytes=None):
    device = CrashSimDevice(1024)
    shadow = ShadowPager.open(device, ShadowConfig(logical_capacity=512, delta_pages=16))
    return device, shadow, BPlusTree.open(shadow, limits, cache_bytes, merge_workers)


def persist(tree: BPlusTree):
    tree.checkpoint()
    tree.shadow.flush()


def key(n: int) -> bytes:
    return f"{n:04d}".encode()


def test_split_points_even():
    assert split_points([1] * 6, 3) == [0, 2, 4, 6]


def test_split_points_weighted_groups_not_empty():
    assert split_points([5, 1, 1, 1, 1, 1], 2) == [0, 1, 6]
    cuts = split_points([100, 1, 1], 3)
    assert cuts == [0, 1, 2, 3]


def test_split_leaf_records_respects_limit():
    records = [(key(i), b"v") for i in range(7)]
    parts = split_leaf_records(records, LIMITS)
    assert [r for part in parts for r in part] == records
    assert all(1 <= len(part) <= 3 for part in parts)
    assert len(parts) == 3


def test_coalesce_leaf_insert_update_remove():
    node = [(b"a", b"1"), (b"c", b"3"), (b"d", b"4")]
    updates = [(b"b", b"2"), (b"c", b""), (b"d", b"5"), (b"e", b"")]
    result = coalesce_leaf(node, updates, set(), LIMITS)
    assert result.groups == [[(b"a", b"1"), (b"b", b"2"), (b"d", b"5")]]
    assert (result.inserted, result.updated, result.removed, result.dropped_tombstones) == (1, 1, 1, 1)
    assert result.retained == []


def test_coalesce_leaf_retains_locked_tombstone():
    result = coalesce_leaf([(b"a", b"1"), (b"c", b"3")], [(b"c", b"")], {b"c"}, LIMITS)
    assert result.groups == [[(b"a", b"1"), (b"c", b"")]]
    assert result.retained == [b"c"]
    assert result.removed == 0


def test_coalesce_leaf_overflow_splits():
    node = [(b"a", b"1"), (b"c", b"3"), (b"e", b"5")]
    result = coalesce_leaf(node, [(b"b", b"2")], set(), LIMITS)
    assert result.groups == [[(b"a", b"1"), (b"b", b"2")], [(b"c", b"3"), (b"e", b"5")]]


def test_coalesce_leaf_empty_result():
    result = coalesce_leaf([(b"a", b"1")], [(b"a", b"")], set(), LIMITS)
    assert result.groups == [[]]


def test_coalesce_internal_inserts_pointer():
    node = InternalNode(addr=9, keys=[b"m"], children=[1, 2])
    groups, promoted = coalesce_internal(node, [(b"f", 3)], LIMITS)
    assert groups == [([b"f", b"m"], [1, 3, 2])]
    assert promoted == []


def test_coalesce_internal_split_promotes_separator():
    node = InternalNode(addr=9, keys=[b"b", b"d", b"f"], children=[1, 2, 3, 4])
    groups, promoted = coalesce_internal(node, [(b"h", 5)], LIMITS)
    assert groups == [([b"b"], [1, 2]), ([b"f", b"h"], [3, 4, 5])]
    assert promoted == [b"d"]


def test_fresh_tree_is_single_empty_leaf():
    _, _, tree = new_tree()
    assert tree.height == 1
    assert tree.root == 1
    assert list(tree.iter_records()) == []
    assert tree.search(b"x") is None
    tree.check_invariants()


def test_merge_builds_multi_level_tree():
    _, _, tree = new_tree()
    records = [(key(i), f"v{i}".encode()) for i in range(50)]
    stats, retained = tree.merge(records, set())
    assert stats.inserted == 50
    assert retained == set()
    assert tree.height >= 3
    assert list(tree.iter_records()) == records
    assert tree.record_count == 50
    tree.check_invariants(check_occupancy=True)

    value, leaf, slot = tree.search(key(17))
    assert value == b"v17"
    assert tree.read_slot(leaf, slot) == (key(17), b"v17")


def test_iter_from_starts_at_successor():
    _, _, tree = new_tree()
    tree.merge([(key(i), b"v") for i in range(0, 40, 2)], set())
    assert [k for k, _, _, _ in tree.iter_from(key(7))][:3] == [key(8), key(10), key(12)]


def test_merge_matches_sorted_dict_oracle():
    rng = random.Random(7)
    _, _, tree = new_tree()
    oracle = {}
    for _ in range(40):
        batch = {}
        for _ in range(rng.randint(1, 12)):
            k = key(rng.randrange(60))
            if k in oracle and rng.random() < 0.3:
                batch[k] = b""
            else:
                batch[k] = f"r{rng.randrange(1000)}".encode()
        tree.merge(sorted(batch.items()), set())
        for k, v in batch.items():
            if v:
                oracle[k] = v
            else:
                oracle.pop(k, None)
        assert list(tree.iter_records()) == sorted(oracle.items())
        tree.check_invariants()
        persist(tree)


def test_structure_unchanged_by_value_updates():
    _, _, tree = new_tree()
    tree.merge([(key(i), b"aaaa") for i in range(20)], set())
    before = tree.structure_hash()
    for i in range(20):
        _, leaf, slot = tree.search(key(i))
        assert tree.update_value(leaf, slot, b"bbbb")
    assert tree.structure_hash() == before
    assert all(v == b"bbbb" for _, v in tree.iter_records())


def test_update_value_refuses_when_leaf_would_overflow():
    limits = NodeLimits(page_size=4096, inline_value_limit=2000)
    _, _, tree = new_tree(limits)
    tree.merge([(key(i), b"x" * 1300) for i in range(3)], set())
    _, leaf, slot = tree.search(key(0))
    assert not tree.update_value(leaf, slot, b"y" * 1900)
    assert tree.search(key(0))[0] == b"x" * 1300


def test_single_and_parallel_merge_build_same_structure():
    rng = random.Random(3)
    batches = []
    for _ in range(10):
        batch = {key(rng.randrange(200)): b"v" for _ in range(25)}
        batches.append(sorted(batch.items()))

    hashes = []
    for workers in (1, 4):
        _, _, tree = new_tree(merge_workers=workers)
        for batch in batches:
            tree.merge(batch, set())
            persist(tree)
        tree.check_invariants()
        hashes.append(tree.structure_hash())
    assert hashes[0] == hashes[1]


def test_checkpoint_and_recovery_reload_tree():
    device, shadow, tree = new_tree()
    records = [(key(i), f"v{i}".encode()) for i in range(30)]
    tree.merge(records, set())
    persist(tree)
    expected_hash = tree.structure_hash()

    recovered = ShadowPager.recover(device)
    reloaded = BPlusTree.open(recovered, LIMITS)
    assert list(reloaded.iter_records()) == records
    assert reloaded.structure_hash() == expected_hash
    assert reloaded.record_count == 30


def test_overflow_values_roundtrip():
    limits = NodeLimits(page_size=4096, inline_value_limit=100, leaf_max_records=3, internal_max_keys=3)
    device, _, tree = new_tree(limits)
    big = bytes(range(256)) * 40
    tree.merge([(b"big", big), (b"small", b"s")], set())
    persist(tree)

    reloaded = BPlusTree.open(ShadowPager.recover(device), limits)
    assert dict(reloaded.iter_records()) == {b"big": big, b"small": b"s"}


def test_bounded_cache_still_merges_correctly():
    _, _, tree = new_tree(cache_bytes=8 * 4096)
    records = [(key(i), b"v") for i in range(120)]
    tree.merge(records, set())
    persist(tree)
    assert list(tree.iter_records()) == records
    assert tree.cache.stats.evictions > 0
    tree.check_invariants()


def test_retained_tombstone_stays_in_tree():
    _, _, tree = new_tree()
    tree.merge([(b"a", b"1"), (b"b", b"2")], set())
    _, retained = tree.merge([(b"a", b"")], {b"a"})
    assert retained == {b"a"}
    assert tree.search(b"a")[0] == b""
    _, retained = tree.merge([(b"a", b"")], set())
    assert retained == set()
    assert tree.search(b"a") is None


@pytest.mark.slow
def test_merge_oracle_randomized_pairs():
    rng = random.Random(2024)
    for pair in range(1000):
        workers = 4 if pair % 50 == 0 else 1
        device = CrashSimDevice(8192)
        shadow = ShadowPager.open(device, ShadowConfig(logical_capacity=4096, delta_pages=64))
        tree = BPlusTree.open(shadow, NodeLimits(4096), None, workers)

        base = {key(n): f"b{n}".encode() for n in rng.sample(range(10_000), rng.randint(0, 5000))}
        tree.merge(sorted(base.items()), set())
        oracle = dict(base)
        batch = {}
        for n in rng.sample(range(10_000), rng.randint(1, 5000)):
            k = key(n)
            if k in oracle and rng.random() < 0.3:
                batch[k] = b""
                del oracle[k]
            else:
                batch[k] = f"m{n}".encode()
                oracle[k] = batch[k]
        tree.merge(sorted(batch.items()), set())

        assert list(tree.iter_records()) == sorted(oracle.items()), pair
        tree.check_invariants(check_occupancy=True)


def tree_shape(tree: BPlusTree, addr=None):
    """Blatt: Schlüsselliste, innerer Knoten: (Separatoren, Kinder)"""
    node = tree.cache.get(tree.root if addr is None else addr)
    if node.is_leaf:
        return [int(k) for k in node.keys]
    return [int(k) for k in node.keys], [tree_shape(tree, child) for child in node.children]


def two_digit(*numbers: int):
    return [(f"{n:02d}".encode(), f"v{n}".encode()) for n in numbers]


@pytest.mark.parametrize("workers", [1, 4])
def test_merge_into_existing_tree_grows_new_root(workers):
    limits = NodeLimits(page_size=4096, leaf_max_records=2, internal_max_keys=1)
    _, shadow, tree = new_tree(limits, merge_workers=workers)

    # Ausgangsbaum: (17,24) links, (35) und (37,50) rechts unter Separator 24
    tree.merge(two_digit(17, 24, 30, 35, 37, 50), set())
    tree.merge([(b"30", b"")], set())
    assert tree.height == 3
    assert tree_shape(tree) == ([24], [
        ([], [[17, 24]]),
        ([35], [[35], [37, 50]]),
    ])

    stats, _ = tree.merge(two_digit(8, 14, 18, 31, 36, 40), set())
    assert stats.new_roots == 1
    assert tree.height == 4
    assert tree_shape(tree) == ([24], [
        ([8], [
            ([], [[8]]),
            ([17], [[14, 17], [18, 24]]),
        ]),
        ([35], [
            ([], [[31, 35]]),
            ([37], [[36, 37], [40, 50]]),
        ]),
    ])
    assert [int(k) for k, _ in tree.iter_records()] == [8, 14, 17, 18, 24, 31, 35, 36, 37, 40, 50]
    tree.check_invariants(check_occupancy=True)

    persist(tree)
    reopened = BPlusTree.open(ShadowPager.recover(shadow.device), limits)
    assert tree_shape(reopened) == tree_shape(tree)
