"""
weakkv - Zweistufiger Index
Skip-List (neue Schlüssel seit dem letzten persist) über einem persistenten
B+-Baum. Die Schlüsselmengen beider Stufen sind disjunkt.
"""

import threading
from dataclasses import dataclass, field
from enum import Enum
from functools import total_ordering
from typing import Callable, Dict, List, Optional, Tuple, Union

from app.config import IndexConfig
from app.core.bplustree import NO_PAGE, BPlusTree, MergeStats, NodeLimits
from app.core.errors import OverflowMapFull, StaleLocation
from app.core.shadow import ShadowPager
from app.core.skiplist import SkipList, SkipNode


@total_ordering
class Sentinel:
    """Virtueller Schlüssel oberhalb aller echten Schlüssel"""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __eq__(self, other) -> bool:
        return other is self

    def __lt__(self, other) -> bool:
        return False

    def __hash__(self) -> int:
        return hash("weakkv-sentinel")

    def __repr__(self) -> str:
        return "SENTINEL"


SENTINEL = Sentinel()

# Schlüssel in den Lock-Tabellen
LockKey = Union[bytes, Sentinel]


class LocationTag(str, Enum):
    LIST = "list"
    TREE = "tree"
    NONE = "none"


@dataclass(frozen=True)
class RecordLocation:
    """Fundort eines Records; List/Tree gelten nur in der Epoche, in der sie ermittelt wurden"""
    tag: LocationTag
    epoch: int = -1
    key: bytes = b""
    node: Optional[SkipNode] = None
    leaf: int = NO_PAGE
    slot: int = -1

    @classmethod
    def none(cls) -> "RecordLocation":
        return cls(LocationTag.NONE)


@dataclass
class RangeResult:
    records: List[Tuple[bytes, bytes, RecordLocation]] = field(default_factory=list)
    successor: LockKey = SENTINEL


class Index:
    """
    Fassade über Skip-List, B+-Baum und Überlauf-Tabelle.

    epoch zählt die Merges; ein Merge ändert die Baumstruktur und
    invalidiert alle zuvor ausgegebenen List/Tree-Locations.
    """

    def __init__(self, tree: BPlusTree, config: IndexConfig, epoch: int = 0):
        self.tree = tree
        self.config = config
        self._epoch = epoch
        self.skiplist = self._new_skiplist()
        # In-Place-Updates, die nicht mehr ins Blatt passen
        self._overflow: Dict[bytes, bytes] = {}
        # Baum-Schlüssel, deren Wert (in place) ein Tombstone ist
        self._tree_tombstones = set()
        self._lock = threading.Lock()
        self._reserved_inserts = 0
        self._reserved_updates = 0
        self.last_merge: Optional[MergeStats] = None

    @classmethod
    def open(cls, shadow: ShadowPager, config: IndexConfig) -> "Index":
        limits = NodeLimits(
            page_size=shadow.page_size,
            inline_value_limit=config.inline_value_limit,
            leaf_max_records=config.leaf_max_records,
            internal_max_keys=config.internal_max_keys
        )
        tree = BPlusTree.open(shadow, limits, config.cache_bytes, config.merge_workers)
        index = cls(tree, config, epoch=shadow.epoch)
        # Tombstones, die ein früherer Merge behalten hat
        index._tree_tombstones = {k for k, v in tree.iter_records() if not v}
        return index

    def _new_skiplist(self) -> SkipList:
        return SkipList(self.config.skiplist_capacity, self.config.skiplist_max_level)

    @property
    def epoch(self) -> int:
        return self._epoch

    # ============ Suche ============

    def index_search(self, key: bytes) -> Optional[Tuple[bytes, RecordLocation]]:
        """Record aus Skip-List oder Baum; Tombstones werden unverändert zurückgegeben"""
        epoch = self._epoch
        node = self.skiplist.search(key)
        if node is not None:
            return node.value, RecordLocation(LocationTag.LIST, epoch, key, node=node)
        found = self.tree.search(key)
        if found is None:
            return None
        value, leaf, slot = found
        value = self._overflow.get(key, value)
        return value, RecordLocation(LocationTag.TREE, epoch, key, leaf=leaf, slot=slot)

    def successor(self, key: bytes) -> LockKey:
        """Kleinster indizierter Schlüssel >= key, sonst SENTINEL"""
        candidates = []
        node = next(self.skiplist.nodes_from(key), None)
        if node is not None:
            candidates.append(node.key)
        record = next(self.tree.iter_from(key), None)
        if record is not None:
            candidates.append(record[0])
        return min(candidates) if candidates else SENTINEL

    def _iter_merged(self, start: bytes):
        """Skip-List und Baum ab start in Schlüsselreihenfolge"""
        epoch = self._epoch
        list_iter = self.skiplist.nodes_from(start)
        tree_iter = self.tree.iter_from(start)
        list_next = next(list_iter, None)
        tree_next = next(tree_iter, None)
        while list_next is not None or tree_next is not None:
            if tree_next is None or (list_next is not None and list_next.key < tree_next[0]):
                node = list_next
                yield node.key, node.value, RecordLocation(LocationTag.LIST, epoch, node.key, node=node)
                list_next = next(list_iter, None)
            else:
                key, value, leaf, slot = tree_next
                value = self._overflow.get(key, value)
                yield key, value, RecordLocation(LocationTag.TREE, epoch, key, leaf=leaf, slot=slot)
                tree_next = next(tree_iter, None)

    def index_range(self, k1: bytes, k2: bytes) -> RangeResult:
        """Alle Records in [k1, k2] plus kleinster Schlüssel >= k2 für den Gap-Lock"""
        if k1 > k2:
            raise ValueError(f"Ungültiger Bereich: {k1!r} > {k2!r}")
        result = RangeResult()
        for key, value, location in self._iter_merged(k1):
            if key > k2:
                break
            result.records.append((key, value, location))
        result.successor = self.successor(k2)
        return result

    def index_scan(self, start: bytes, count: int) -> List[Tuple[bytes, bytes, RecordLocation]]:
        """Bis zu count Records ab start (inkl. Tombstones)"""
        records = []
        for record in self._iter_merged(start):
            if len(records) >= count:
                break
            records.append(record)
        return records

    # ============ Schreiben ============

    def skiplist_insert(self, key: bytes, value: bytes) -> RecordLocation:
        node = self.skiplist.insert(key, value)
        return RecordLocation(LocationTag.LIST, self._epoch, key, node=node)

    def update_in_place(self, location: RecordLocation, value: bytes):
        """Ersetzt den Wert am Fundort; Struktur bleibt unverändert"""
        if location.tag == LocationTag.NONE:
            raise ValueError("update_in_place braucht eine List- oder Tree-Location")
        if location.epoch != self._epoch:
            raise StaleLocation(
                f"Location aus Epoche {location.epoch}, aktuell {self._epoch}"
            )
        if location.tag == LocationTag.LIST:
            self.skiplist.update(location.node, value)
            return

        key = location.key
        with self._lock:
            if key in self._overflow:
                old = self._overflow[key]
                self._overflow[key] = value
            else:
                _, old = self.tree.read_slot(location.leaf, location.slot)
                if not self.tree.update_value(location.leaf, location.slot, value):
                    if len(self._overflow) >= self.config.overflow_capacity:
                        raise OverflowMapFull(
                            f"Überlauf-Tabelle voll ({self.config.overflow_capacity} Einträge)"
                        )
                    self._overflow[key] = value
            if value:
                self._tree_tombstones.discard(key)
            else:
                self._tree_tombstones.add(key)
        self.tree.adjust_record_count((1 if value else 0) - (1 if old else 0))

    # ============ Reservierung (commit darf nicht halb scheitern) ============

    def reserve(self, inserts: int, updates: int) -> bool:
        with self._lock:
            if len(self.skiplist) + self._reserved_inserts + inserts > self.config.skiplist_capacity:
                return False
            if len(self._overflow) + self._reserved_updates + updates > self.config.overflow_capacity:
                return False
            self._reserved_inserts += inserts
            self._reserved_updates += updates
            return True

    def release(self, inserts: int, updates: int):
        with self._lock:
            self._reserved_inserts -= inserts
            self._reserved_updates -= updates

    # ============ Merge / Checkpoint ============

    def merge_input(self) -> List[Tuple[bytes, bytes]]:
        """Sortierte Eingabe des nächsten Merges"""
        records: Dict[bytes, bytes] = {key: b"" for key in self._tree_tombstones}
        records.update(self._overflow)
        records.update(self.skiplist.items())
        return sorted(records.items())

    def merge(self, retain_tombstone: Optional[Callable[[bytes], bool]] = None) -> MergeStats:
        """
        Mischt Skip-List, Überlauf-Tabelle und Tombstones in den Baum.
        Tombstones bleiben erhalten, solange retain_tombstone(key) wahr ist.
        Nur im Persisting-Zustand aufrufen.
        """
        records = self.merge_input()
        retain = set()
        if retain_tombstone is not None:
            retain = {key for key, value in records if not value and retain_tombstone(key)}
        stats, retained = self.tree.merge(records, retain)
        self.skiplist = self._new_skiplist()
        self._overflow = {}
        self._tree_tombstones = set(retained)
        self._epoch += 1
        self.last_merge = stats
        return stats

    def tree_checkpoint(self) -> int:
        """Schreibt alle Dirty-Knoten über den Shadow-Layer"""
        return self.tree.checkpoint()

    # ============ Introspektion ============

    def contents(self) -> Dict[bytes, bytes]:
        """Logischer Inhalt ohne Tombstones"""
        return {key: value for key, value, _ in self._iter_merged(b"") if value}

    def record_count(self) -> int:
        list_live = sum(1 for _, value in self.skiplist.items() if value)
        return self.tree.record_count + list_live

    def overflow_count(self) -> int:
        return len(self._overflow)

    def structure_hash(self) -> str:
        return self.tree.structure_hash()

    def check_invariants(self, check_occupancy: bool = False):
        self.skiplist.check_invariants()
        self.tree.check_invariants(check_occupancy)
        list_keys = {key for key, _ in self.skiplist.items()}
        tree_records = {key: value for key, value in self.tree.iter_records()}
        overlap = list_keys & tree_records.keys()
        if overlap:
            raise AssertionError(f"Schlüssel in Skip-List und Baum: {sorted(overlap)[:3]}")
        live = sum(1 for key, value in tree_records.items() if self._overflow.get(key, value))
        if live != self.tree.record_count:
            raise AssertionError(f"record_count {self.tree.record_count}, gezählt {live}")
