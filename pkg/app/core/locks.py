"""
weakkv - Lock-Tabellen
Record- und Gap-Locks für strikte Zwei-Phasen-Sperren (SS2PL) mit
No-Wait: ein Konflikt wird nie abgewartet, der Anfragende bricht ab.

Ein Gap-Lock auf Schlüssel k deckt das offene Intervall unterhalb von k
bis zum nächstkleineren indizierten Schlüssel. SENTINEL deckt den
Bereich oberhalb des grössten Schlüssels.
"""

import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Set, Tuple

from app.core.index import LockKey


class LockMode(str, Enum):
    SHARED = "S"
    EXCLUSIVE = "X"


@dataclass
class LockEntry:
    mode: LockMode
    holders: Set[int] = field(default_factory=set)


class LockTable:
    """Hash-Tabelle Key -> (Modus, Halter), in Buckets mit eigenem Mutex"""

    def __init__(self, name: str, stripes: int = 64):
        self.name = name
        self._stripes = max(1, stripes)
        self._buckets: List[Dict[LockKey, LockEntry]] = [{} for _ in range(self._stripes)]
        self._mutexes = [threading.Lock() for _ in range(self._stripes)]

    def _bucket(self, key: LockKey) -> int:
        return hash(key) % self._stripes

    def acquire(self, key: LockKey, holder: int, mode: LockMode) -> bool:
        """
        Versucht den Lock zu nehmen, ohne zu warten.
        Upgrade S -> X nur, wenn der Halter einziger Teilhaber ist.
        """
        b = self._bucket(key)
        with self._mutexes[b]:
            bucket = self._buckets[b]
            entry = bucket.get(key)
            if entry is None:
                bucket[key] = LockEntry(mode, {holder})
                return True
            if holder in entry.holders:
                if mode == LockMode.SHARED or entry.mode == LockMode.EXCLUSIVE:
                    return True
                if entry.holders == {holder}:
                    entry.mode = LockMode.EXCLUSIVE
                    return True
                return False
            if entry.mode == LockMode.SHARED and mode == LockMode.SHARED:
                entry.holders.add(holder)
                return True
            return False

    def release(self, key: LockKey, holder: int):
        b = self._bucket(key)
        with self._mutexes[b]:
            bucket = self._buckets[b]
            entry = bucket.get(key)
            if entry is None or holder not in entry.holders:
                return
            entry.holders.discard(holder)
            if not entry.holders:
                del bucket[key]

    def lookup(self, key: LockKey) -> Optional[Tuple[LockMode, Set[int]]]:
        b = self._bucket(key)
        with self._mutexes[b]:
            entry = self._buckets[b].get(key)
            return None if entry is None else (entry.mode, set(entry.holders))

    def is_locked(self, key: LockKey) -> bool:
        b = self._bucket(key)
        with self._mutexes[b]:
            return key in self._buckets[b]

    def __len__(self) -> int:
        return sum(len(bucket) for bucket in self._buckets)


class LockTables:
    """Record- und Gap-Lock-Tabelle einer Engine"""

    def __init__(self, stripes: int = 64):
        self.records = LockTable("record", stripes)
        self.gaps = LockTable("gap", stripes)

    def is_locked(self, key: LockKey) -> bool:
        """Ob irgendein Record- oder Gap-Lock auf key gehalten wird"""
        return self.records.is_locked(key) or self.gaps.is_locked(key)

    def held_count(self) -> int:
        return len(self.records) + len(self.gaps)
