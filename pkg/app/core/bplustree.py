"""
weakkv - B+-Baum
Persistenter B+-Baum über logischen Seiten des Shadow-Layers.

Zwischen zwei persists ändert sich die Struktur nie (nur Wert-Bytes in
bestehenden Slots). Strukturänderungen passieren ausschliesslich im
Batch-Merge während persist, Ebene für Ebene von den Blättern aufwärts:

    1. Partitionieren: sortierte Eingabe nach zuständigem Knoten aufteilen
    2. Coalescing:     Teilliste in den Knoten mischen, bei Überlauf in
                       frische Knoten aufteilen und Zeiger emittieren
    3. Sammeln:        emittierte Zeiger in Schlüsselreihenfolge bilden
                       die Eingabe der nächsten Ebene

Seitenformate: siehe FORMAT.md.
"""

import bisect
import hashlib
import heapq
import math
import struct
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Set, Tuple

from app.core.errors import CorruptDatabase, DeviceFull
from app.core.page_cache import PageCache
from app.core.shadow import ShadowPager

NODE_LEAF = 1
NODE_INTERNAL = 2
NO_PAGE = 0xFFFFFFFF

META_ADDR = 0
META_MAGIC = b"WKVTREE1"
# magic, root, height, next_logical, record_count
META_STRUCT = struct.Struct("<8sIIIQ")

# type, flags, count, next_leaf (nur Blätter)
NODE_HEADER = struct.Struct("<BBHI8x")
# offset, key_len, value_len, flags
LEAF_SLOT = struct.Struct("<HHHH")
# offset, key_len
INTERNAL_SLOT = struct.Struct("<HH")
CHILD = struct.Struct("<I")
# erste Overflow-Seite, Gesamtlänge
OVERFLOW_REF = struct.Struct("<II")
# next, length
OVERFLOW_HEADER = struct.Struct("<IH")

SLOT_OVERFLOW = 0x1

Record = Tuple[bytes, bytes]


@dataclass(frozen=True)
class NodeLimits:
    """Kapazität eines Knotens (Seitengrösse, optional feste Anzahl)"""
    page_size: int
    inline_value_limit: int = 1024
    leaf_max_records: Optional[int] = None
    internal_max_keys: Optional[int] = None

    def record_cost(self, key: bytes, value: bytes) -> int:
        inline = len(value) if len(value) <= self.inline_value_limit else OVERFLOW_REF.size
        return LEAF_SLOT.size + len(key) + inline

    def separator_cost(self, key: bytes) -> int:
        return INTERNAL_SLOT.size + len(key) + CHILD.size

    @property
    def usable(self) -> int:
        return self.page_size - NODE_HEADER.size

    def leaf_fits(self, records: Sequence[Record]) -> bool:
        if self.leaf_max_records is not None and len(records) > self.leaf_max_records:
            return False
        return sum(self.record_cost(k, v) for k, v in records) <= self.usable

    def internal_fits(self, keys: Sequence[bytes]) -> bool:
        if self.internal_max_keys is not None and len(keys) > self.internal_max_keys:
            return False
        return CHILD.size + sum(self.separator_cost(k) for k in keys) <= self.usable


@dataclass(eq=False)
class LeafNode:
    addr: int
    keys: List[bytes] = field(default_factory=list)
    values: List[bytes] = field(default_factory=list)
    next_leaf: int = NO_PAGE
    # Overflow-Seiten, die die aktuelle Kodierung auf Disk belegt
    overflow_pages: List[int] = field(default_factory=list)

    is_leaf = True

    def records(self) -> List[Record]:
        return list(zip(self.keys, self.values))


@dataclass(eq=False)
class InternalNode:
    """Kind i deckt die Schlüssel (keys[i-1], keys[i]] ab"""
    addr: int
    keys: List[bytes] = field(default_factory=list)
    children: List[int] = field(default_factory=list)

    is_leaf = False

    def child_index(self, key: bytes) -> int:
        return bisect.bisect_left(self.keys, key)


@dataclass
class MergeStats:
    records_in: int = 0
    inserted: int = 0
    updated: int = 0
    removed: int = 0
    dropped_tombstones: int = 0
    retained_tombstones: int = 0
    nodes_touched: int = 0
    nodes_created: int = 0
    new_roots: int = 0

    def to_dict(self) -> Dict[str, int]:
        return dict(self.__dict__)


# ============ Coalescing (reine Funktionen, laufen in Workern) ============

def split_points(weights: Sequence[int], groups: int) -> List[int]:
    """
    Schnittpunkte für eine Aufteilung in `groups` Gruppen mit etwa
    gleichem Gewicht: cut_i = grösstes j mit prefix[j] <= i * total / groups.
    Gibt die Grenzen [0, c_1, ..., n] zurück, jede Gruppe nicht leer.
    """
    n = len(weights)
    prefix = [0]
    for w in weights:
        prefix.append(prefix[-1] + w)
    total = prefix[-1]
    cuts = [0]
    for i in range(1, groups):
        target = i * total / groups
        j = bisect.bisect_right(prefix, target) - 1
        j = max(j, cuts[-1] + 1)
        j = min(j, n - (groups - i))
        cuts.append(j)
    cuts.append(n)
    return cuts


def _greedy_cuts(items: Sequence, fits) -> List[int]:
    cuts = [0]
    start = 0
    for end in range(1, len(items) + 1):
        if not fits(items[start:end]) and end - 1 > start:
            cuts.append(end - 1)
            start = end - 1
    cuts.append(len(items))
    return cuts


def split_leaf_records(records: List[Record], limits: NodeLimits) -> List[List[Record]]:
    """Teilt eine zu grosse Record-Liste in gleichmässig gefüllte Blätter"""
    if limits.leaf_fits(records):
        return [records]
    if limits.leaf_max_records is not None:
        weights = [1] * len(records)
        groups = math.ceil(len(records) / limits.leaf_max_records)
        groups = max(groups, math.ceil(sum(limits.record_cost(k, v) for k, v in records) / limits.usable))
    else:
        weights = [limits.record_cost(k, v) for k, v in records]
        groups = math.ceil(sum(weights) / limits.usable)
    groups = min(max(groups, 2), len(records))
    cuts = split_points(weights, groups)
    parts = [records[a:b] for a, b in zip(cuts, cuts[1:])]
    if all(limits.leaf_fits(p) for p in parts):
        return parts
    cuts = _greedy_cuts(records, limits.leaf_fits)
    return [records[a:b] for a, b in zip(cuts, cuts[1:])]


def split_internal(
    keys: List[bytes],
    children: List[int],
    limits: NodeLimits
) -> Tuple[List[Tuple[List[bytes], List[int]]], List[bytes]]:
    """
    Teilt einen übervollen inneren Knoten. Gibt die Gruppen (keys, children)
    und die hochgereichten Separatoren zwischen den Gruppen zurück.
    """
    n_children = len(children)
    if limits.internal_max_keys is not None:
        weights = [1] * n_children
        groups = math.ceil(n_children / (limits.internal_max_keys + 1))
    else:
        weights = [CHILD.size + (limits.separator_cost(keys[i]) - CHILD.size if i < len(keys) else 0)
                   for i in range(n_children)]
        groups = math.ceil(sum(weights) / limits.usable)
    groups = min(max(groups, 2), n_children)

    def build(cuts: List[int]):
        parts = []
        promoted = []
        for idx, (a, b) in enumerate(zip(cuts, cuts[1:])):
            parts.append((keys[a:b - 1], children[a:b]))
            if idx < len(cuts) - 2:
                promoted.append(keys[b - 1])
        return parts, promoted

    parts, promoted = build(split_points(weights, groups))
    if all(limits.internal_fits(k) for k, _ in parts):
        return parts, promoted
    positions = list(range(n_children))
    cuts = _greedy_cuts(positions, lambda sub: limits.internal_fits(keys[sub[0]:sub[-1]]))
    return build(cuts)


@dataclass
class LeafCoalesceResult:
    groups: List[List[Record]]
    inserted: int = 0
    updated: int = 0
    removed: int = 0
    dropped_tombstones: int = 0
    retained: List[bytes] = field(default_factory=list)


def coalesce_leaf(
    node_records: List[Record],
    updates: List[Record],
    retain: Set[bytes],
    limits: NodeLimits
) -> LeafCoalesceResult:
    """
    Mischt Knoteninhalt und sortierte Teilliste. Ein leerer Wert ist ein
    Tombstone: er entfernt den Record, ausser der Schlüssel ist in retain.
    """
    result = LeafCoalesceResult(groups=[])
    merged: List[Record] = []
    i = j = 0

    def emit(key: bytes, value: bytes):
        if value:
            merged.append((key, value))
        elif key in retain:
            merged.append((key, value))
            result.retained.append(key)

    while i < len(node_records) or j < len(updates):
        if j >= len(updates) or (i < len(node_records) and node_records[i][0] < updates[j][0]):
            key, value = node_records[i]
            if not value and key not in retain:
                result.removed += 1
            emit(key, value)
            i += 1
        elif i >= len(node_records) or updates[j][0] < node_records[i][0]:
            key, value = updates[j]
            if value:
                result.inserted += 1
            elif key not in retain:
                result.dropped_tombstones += 1
            emit(key, value)
            j += 1
        else:
            key, value = updates[j]
            if value:
                result.updated += 1
            elif key not in retain:
                result.removed += 1
            emit(key, value)
            i += 1
            j += 1

    result.groups = split_leaf_records(merged, limits) if merged else [[]]
    return result


def coalesce_internal(
    node: InternalNode,
    pointers: List[Tuple[bytes, int]],
    limits: NodeLimits
) -> Tuple[List[Tuple[List[bytes], List[int]]], List[bytes]]:
    """Fügt emittierte (Separator, rechtes Kind) Zeiger ein, teilt bei Überlauf"""
    keys = list(node.keys)
    children = list(node.children)
    for separator, child in pointers:
        pos = bisect.bisect_left(keys, separator)
        keys.insert(pos, separator)
        children.insert(pos + 1, child)
    if limits.internal_fits(keys):
        return [(keys, children)], []
    return split_internal(keys, children, limits)


# ============ Baum ============

class BPlusTree:
    """
    B+-Baum mit Meta-Seite auf logischer Adresse 0.

    Leser arbeiten ohne Latches; update_value ändert nur Wert-Bytes.
    merge und checkpoint dürfen nur laufen, wenn kein Client im Server ist.
    """

    def __init__(
        self,
        shadow: ShadowPager,
        limits: NodeLimits,
        cache_bytes: Optional[int] = None,
        merge_workers: int = 1
    ):
        self.shadow = shadow
        self.limits = limits
        self.merge_workers = max(1, merge_workers)
        self.cache = PageCache(self._load_node, self._write_node, shadow.page_size, cache_bytes)

        self.root = NO_PAGE
        self.height = 0
        self.next_logical = 1
        self.record_count = 0
        self._free_logical: List[int] = []
        self._alloc_lock = threading.Lock()
        self._count_lock = threading.Lock()
        self._meta_dirty = False

    # ============ Laden / Anlegen ============

    @classmethod
    def open(
        cls,
        shadow: ShadowPager,
        limits: NodeLimits,
        cache_bytes: Optional[int] = None,
        merge_workers: int = 1
    ) -> "BPlusTree":
        """Lädt den Baum aus der Meta-Seite oder legt einen leeren an"""
        tree = cls(shadow, limits, cache_bytes, merge_workers)
        page = shadow.shadow_read(META_ADDR)
        magic, root, height, next_logical, record_count = META_STRUCT.unpack_from(page, 0)
        if magic == bytes(8):
            root_leaf = LeafNode(addr=tree._alloc())
            tree.cache.add(root_leaf)
            tree.root = root_leaf.addr
            tree.height = 1
            tree._meta_dirty = True
            return tree
        if magic != META_MAGIC:
            raise CorruptDatabase("Baum-Metaseite ungültig")
        tree.root = root
        tree.height = height
        tree.next_logical = next_logical
        tree.record_count = record_count
        # Nicht gemappte Adressen unter der Hochwassermarke sind frei
        tree._free_logical = [
            a for a in range(1, next_logical) if shadow.current_mapping(a) is None
        ]
        heapq.heapify(tree._free_logical)
        return tree

    def _alloc(self) -> int:
        with self._alloc_lock:
            if self._free_logical:
                return heapq.heappop(self._free_logical)
            if self.next_logical >= self.shadow.logical_capacity:
                raise DeviceFull(
                    f"Logische Kapazität erschöpft ({self.shadow.logical_capacity} Seiten)"
                )
            addr = self.next_logical
            self.next_logical += 1
            self._meta_dirty = True
            return addr

    def _release(self, addr: int):
        self.shadow.shadow_discard(addr)
        with self._alloc_lock:
            heapq.heappush(self._free_logical, addr)

    # ============ Kodierung ============

    def _load_node(self, addr: int):
        page = self.shadow.shadow_read(addr)
        node_type, _, count, next_leaf = NODE_HEADER.unpack_from(page, 0)
        if node_type == NODE_LEAF:
            return self._decode_leaf(addr, page, count, next_leaf)
        if node_type == NODE_INTERNAL:
            return self._decode_internal(addr, page, count)
        raise CorruptDatabase(f"Logische Seite {addr} ist kein Baumknoten (Typ {node_type})")

    def _decode_leaf(self, addr: int, page: bytes, count: int, next_leaf: int) -> LeafNode:
        node = LeafNode(addr=addr, next_leaf=next_leaf)
        for i in range(count):
            offset, key_len, value_len, flags = LEAF_SLOT.unpack_from(
                page, NODE_HEADER.size + i * LEAF_SLOT.size
            )
            key = page[offset: offset + key_len]
            if flags & SLOT_OVERFLOW:
                first, total = OVERFLOW_REF.unpack_from(page, offset + key_len)
                value, chain = self._read_overflow(first, total)
                node.overflow_pages.extend(chain)
            else:
                value = page[offset + key_len: offset + key_len + value_len]
            node.keys.append(bytes(key))
            node.values.append(bytes(value))
        return node

    def _decode_internal(self, addr: int, page: bytes, count: int) -> InternalNode:
        node = InternalNode(addr=addr)
        base = NODE_HEADER.size
        for i in range(count + 1):
            node.children.append(CHILD.unpack_from(page, base + i * CHILD.size)[0])
        slots = base + (count + 1) * CHILD.size
        for i in range(count):
            offset, key_len = INTERNAL_SLOT.unpack_from(page, slots + i * INTERNAL_SLOT.size)
            node.keys.append(bytes(page[offset: offset + key_len]))
        return node

    def _read_overflow(self, first: int, total: int) -> Tuple[bytes, List[int]]:
        parts = []
        chain = []
        addr = first
        remaining = total
        while remaining > 0:
            if addr == NO_PAGE:
                raise CorruptDatabase("Overflow-Kette zu kurz")
            page = self.shadow.shadow_read(addr)
            next_addr, length = OVERFLOW_HEADER.unpack_from(page, 0)
            parts.append(page[OVERFLOW_HEADER.size: OVERFLOW_HEADER.size + length])
            chain.append(addr)
            remaining -= length
            addr = next_addr
        return b"".join(parts), chain

    def _write_overflow(self, value: bytes) -> Tuple[int, List[int]]:
        chunk = self.shadow.page_size - OVERFLOW_HEADER.size
        pieces = [value[i: i + chunk] for i in range(0, len(value), chunk)]
        addrs = [self._alloc() for _ in pieces]
        for idx, piece in enumerate(pieces):
            next_addr = addrs[idx + 1] if idx + 1 < len(addrs) else NO_PAGE
            page = bytearray(self.shadow.page_size)
            OVERFLOW_HEADER.pack_into(page, 0, next_addr, len(piece))
            page[OVERFLOW_HEADER.size: OVERFLOW_HEADER.size + len(piece)] = piece
            self.shadow.shadow_write(addrs[idx], bytes(page))
        return addrs[0], addrs

    def _write_node(self, node):
        self.shadow.shadow_write(node.addr, self.encode_node(node))

    def encode_node(self, node) -> bytes:
        if node.is_leaf:
            return self._encode_leaf(node)
        return self._encode_internal(node)

    def _encode_leaf(self, node: LeafNode) -> bytes:
        # Alte Overflow-Ketten freigeben, neue schreiben
        for addr in node.overflow_pages:
            self._release(addr)
        node.overflow_pages = []

        page = bytearray(self.shadow.page_size)
        NODE_HEADER.pack_into(page, 0, NODE_LEAF, 0, len(node.keys), node.next_leaf)
        heap_end = self.shadow.page_size
        for i, (key, value) in enumerate(zip(node.keys, node.values)):
            if len(value) > self.limits.inline_value_limit:
                first, chain = self._write_overflow(value)
                node.overflow_pages.extend(chain)
                stored = OVERFLOW_REF.pack(first, len(value))
                flags, value_len = SLOT_OVERFLOW, 0
            else:
                stored = value
                flags, value_len = 0, len(value)
            heap_end -= len(key) + len(stored)
            page[heap_end: heap_end + len(key)] = key
            page[heap_end + len(key): heap_end + len(key) + len(stored)] = stored
            LEAF_SLOT.pack_into(
                page, NODE_HEADER.size + i * LEAF_SLOT.size, heap_end, len(key), value_len, flags
            )
        if NODE_HEADER.size + len(node.keys) * LEAF_SLOT.size > heap_end:
            raise AssertionError(f"Blatt {node.addr} passt nicht in eine Seite")
        return bytes(page)

    def _encode_internal(self, node: InternalNode) -> bytes:
        page = bytearray(self.shadow.page_size)
        NODE_HEADER.pack_into(page, 0, NODE_INTERNAL, 0, len(node.keys), NO_PAGE)
        base = NODE_HEADER.size
        for i, child in enumerate(node.children):
            CHILD.pack_into(page, base + i * CHILD.size, child)
        slots = base + len(node.children) * CHILD.size
        heap_end = self.shadow.page_size
        for i, key in enumerate(node.keys):
            heap_end -= len(key)
            page[heap_end: heap_end + len(key)] = key
            INTERNAL_SLOT.pack_into(page, slots + i * INTERNAL_SLOT.size, heap_end, len(key))
        if slots + len(node.keys) * INTERNAL_SLOT.size > heap_end:
            raise AssertionError(f"Innerer Knoten {node.addr} passt nicht in eine Seite")
        return bytes(page)

    def _write_meta(self):
        page = bytearray(self.shadow.page_size)
        META_STRUCT.pack_into(
            page, 0, META_MAGIC, self.root, self.height, self.next_logical, self.record_count
        )
        self.shadow.shadow_write(META_ADDR, bytes(page))
        self._meta_dirty = False

    # ============ Lesen ============

    def _find_leaf(self, key: bytes) -> LeafNode:
        node = self.cache.get(self.root)
        while not node.is_leaf:
            node = self.cache.get(node.children[node.child_index(key)])
        return node

    def _descend(self, key: bytes, level: int):
        """Knoten auf Ebene `level` (0 = Blätter), der key abdeckt"""
        node = self.cache.get(self.root)
        depth = self.height - 1
        while depth > level:
            node = self.cache.get(node.children[node.child_index(key)])
            depth -= 1
        return node

    def search(self, key: bytes) -> Optional[Tuple[bytes, int, int]]:
        """(Wert, Blattadresse, Slot) oder None"""
        leaf = self._find_leaf(key)
        slot = bisect.bisect_left(leaf.keys, key)
        if slot < len(leaf.keys) and leaf.keys[slot] == key:
            return leaf.values[slot], leaf.addr, slot
        return None

    def iter_from(self, key: bytes) -> Iterator[Tuple[bytes, bytes, int, int]]:
        """(Schlüssel, Wert, Blattadresse, Slot) ab dem ersten Schlüssel >= key"""
        leaf = self._find_leaf(key)
        slot = bisect.bisect_left(leaf.keys, key)
        while True:
            for i in range(slot, len(leaf.keys)):
                yield leaf.keys[i], leaf.values[i], leaf.addr, i
            if leaf.next_leaf == NO_PAGE:
                return
            leaf = self.cache.get(leaf.next_leaf)
            slot = 0

    def iter_records(self) -> Iterator[Record]:
        for key, value, _, _ in self.iter_from(b""):
            yield key, value

    def read_slot(self, addr: int, slot: int) -> Tuple[bytes, bytes]:
        leaf = self.cache.get(addr)
        return leaf.keys[slot], leaf.values[slot]

    def adjust_record_count(self, delta: int):
        if delta:
            with self._count_lock:
                self.record_count += delta
                self._meta_dirty = True

    def update_value(self, addr: int, slot: int, value: bytes) -> bool:
        """
        Ersetzt den Wert im Slot. False, wenn das Blatt danach nicht mehr
        in seine Seite passt (Struktur bleibt unverändert).
        """
        def mutate(leaf: LeafNode):
            records = leaf.records()
            records[slot] = (records[slot][0], value)
            if not self.limits.leaf_fits(records) and len(value) > len(leaf.values[slot]):
                return False
            leaf.values[slot] = value
            return True

        return self.cache.update(addr, mutate)

    # ============ Merge ============

    def merge(self, records: List[Record], retain: Set[bytes]) -> Tuple[MergeStats, Set[bytes]]:
        """
        Mischt die sortierte Eingabe in den Baum. Gibt Statistik und die
        Schlüssel zurück, die als Tombstone im Baum verbleiben.
        """
        stats = MergeStats(records_in=len(records))
        retained: Set[bytes] = set()
        if not records:
            return stats, retained

        pinned: List[int] = []

        def fetch(addr: int):
            node = self.cache.get(addr, pin=True)
            pinned.append(addr)
            return node

        try:
            pointers = self._merge_leaves(records, retain, stats, retained, fetch, pinned)
            level = 1
            while pointers:
                if level >= self.height:
                    # Wurzel läuft über: neue Wurzel über der alten
                    new_root = InternalNode(addr=self._alloc(), children=[self.root])
                    self.cache.add(new_root, pin=True)
                    pinned.append(new_root.addr)
                    self.root = new_root.addr
                    self.height += 1
                    stats.new_roots += 1
                    stats.nodes_created += 1
                    self._meta_dirty = True
                pointers = self._merge_internal_level(pointers, level, stats, fetch, pinned)
                level += 1
        finally:
            for addr in pinned:
                self.cache.unpin(addr)
        return stats, retained

    def _partition(self, keys: List[bytes], level: int, fetch) -> List[Tuple[object, int, int]]:
        """Zusammenhängende Bereiche [a, b) der Eingabe pro zuständigem Knoten"""
        partitions = []
        start = 0
        current = None
        for idx, key in enumerate(keys):
            node = self._descend(key, level)
            if current is None or node.addr != current.addr:
                if current is not None:
                    partitions.append((current, start, idx))
                current = fetch(node.addr)
                start = idx
        partitions.append((current, start, len(keys)))
        return partitions

    def _run(self, fn, jobs):
        if self.merge_workers == 1 or len(jobs) == 1:
            return [fn(*job) for job in jobs]
        with ThreadPoolExecutor(max_workers=self.merge_workers) as pool:
            return list(pool.map(lambda job: fn(*job), jobs))

    def _merge_leaves(self, records, retain, stats, retained, fetch, pinned) -> List[Tuple[bytes, int]]:
        partitions = self._partition([k for k, _ in records], 0, fetch)
        jobs = [
            (leaf.records(), records[a:b], retain, self.limits)
            for leaf, a, b in partitions
        ]
        results = self._run(coalesce_leaf, jobs)

        # Adressen sequenziell in Schlüsselreihenfolge vergeben (deterministisch)
        pointers: List[Tuple[bytes, int]] = []
        live_delta = 0
        for (leaf, _, _), result in zip(partitions, results):
            stats.inserted += result.inserted
            stats.updated += result.updated
            stats.removed += result.removed
            stats.dropped_tombstones += result.dropped_tombstones
            stats.nodes_touched += 1
            retained.update(result.retained)
            live_delta += result.inserted

            groups = result.groups
            first = groups[0]
            leaf.keys = [k for k, _ in first]
            leaf.values = [v for _, v in first]
            old_next = leaf.next_leaf
            previous = leaf
            for prev_group, group in zip(groups, groups[1:]):
                fresh = LeafNode(
                    addr=self._alloc(),
                    keys=[k for k, _ in group],
                    values=[v for _, v in group]
                )
                self.cache.add(fresh, pin=True)
                pinned.append(fresh.addr)
                previous.next_leaf = fresh.addr
                previous = fresh
                pointers.append((prev_group[-1][0], fresh.addr))
                stats.nodes_created += 1
            previous.next_leaf = old_next
            self.cache.mark_dirty(leaf.addr)

        stats.retained_tombstones = len(retained)
        self.adjust_record_count(live_delta)
        return pointers

    def _merge_internal_level(self, pointers, level, stats, fetch, pinned) -> List[Tuple[bytes, int]]:
        partitions = self._partition([k for k, _ in pointers], level, fetch)
        jobs = [(node, pointers[a:b], self.limits) for node, a, b in partitions]
        results = self._run(coalesce_internal, jobs)

        emitted: List[Tuple[bytes, int]] = []
        for (node, _, _), (groups, promoted) in zip(partitions, results):
            stats.nodes_touched += 1
            node.keys, node.children = list(groups[0][0]), list(groups[0][1])
            self.cache.mark_dirty(node.addr)
            for separator, (keys, children) in zip(promoted, groups[1:]):
                fresh = InternalNode(addr=self._alloc(), keys=list(keys), children=list(children))
                self.cache.add(fresh, pin=True)
                pinned.append(fresh.addr)
                emitted.append((separator, fresh.addr))
                stats.nodes_created += 1
        return emitted

    # ============ Checkpoint ============

    def checkpoint(self) -> int:
        """Schreibt alle Dirty-Knoten und ggf. die Meta-Seite über den Shadow-Layer"""
        written = self.cache.write_back()
        if written or self._meta_dirty:
            self._write_meta()
            written += 1
        return written

    # ============ Introspektion ============

    def leaves(self) -> List[LeafNode]:
        node = self.cache.get(self.root)
        while not node.is_leaf:
            node = self.cache.get(node.children[0])
        result = [node]
        while node.next_leaf != NO_PAGE:
            node = self.cache.get(node.next_leaf)
            result.append(node)
        return result

    def leaf_keys(self) -> List[List[bytes]]:
        return [list(leaf.keys) for leaf in self.leaves()]

    def structure_hash(self) -> str:
        """Hash über das Strukturskelett (Adressen, Schlüssel, Links; keine Werte)"""
        digest = hashlib.blake2b(digest_size=16)
        digest.update(struct.pack("<II", self.root, self.height))
        stack = [self.root]
        while stack:
            node = self.cache.get(stack.pop())
            digest.update(struct.pack("<IB", node.addr, NODE_LEAF if node.is_leaf else NODE_INTERNAL))
            for key in node.keys:
                digest.update(struct.pack("<H", len(key)) + key)
            if node.is_leaf:
                digest.update(struct.pack("<I", node.next_leaf))
            else:
                digest.update(struct.pack(f"<{len(node.children)}I", *node.children))
                stack.extend(reversed(node.children))
        return digest.hexdigest()

    def check_invariants(self, check_occupancy: bool = False):
        """Ordnung, gleiche Blatttiefe, Schlüsselbereiche, Sibling-Kette, Seitengrösse"""
        leaves_in_order: List[int] = []

        def visit(addr: int, low: Optional[bytes], high: Optional[bytes], depth: int):
            node = self.cache.get(addr)
            keys = node.keys
            if any(a >= b for a, b in zip(keys, keys[1:])):
                raise AssertionError(f"Knoten {addr}: Schlüssel nicht streng aufsteigend")
            for key in keys:
                if (low is not None and key <= low) or (high is not None and key > high):
                    raise AssertionError(f"Knoten {addr}: Schlüssel {key!r} ausserhalb ({low!r}, {high!r}]")
            if node.is_leaf:
                if depth != self.height:
                    raise AssertionError(f"Blatt {addr} auf Tiefe {depth}, erwartet {self.height}")
                if not self.limits.leaf_fits(node.records()):
                    raise AssertionError(f"Blatt {addr} zu voll")
                if check_occupancy and addr != self.root and not node.keys:
                    raise AssertionError(f"Blatt {addr} ist leer")
                leaves_in_order.append(addr)
                return
            if len(node.children) != len(keys) + 1:
                raise AssertionError(f"Knoten {addr}: {len(keys)} Schlüssel, {len(node.children)} Kinder")
            if not self.limits.internal_fits(keys):
                raise AssertionError(f"Innerer Knoten {addr} zu voll")
            bounds = [low] + list(keys) + [high]
            for i, child in enumerate(node.children):
                visit(child, bounds[i], bounds[i + 1], depth + 1)

        visit(self.root, None, None, 1)
        chain = [leaf.addr for leaf in self.leaves()]
        if chain != leaves_in_order:
            raise AssertionError("Sibling-Kette weicht von der Baumreihenfolge ab")
