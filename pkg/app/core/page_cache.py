"""
weakkv - Buffer-Cache
Dekodierte Baumknoten nach logischer Adresse, mit Pin-Counts und LRU.
Dirty-Knoten werden beim Verdrängen oder beim Checkpoint über den
Shadow-Layer zurückgeschrieben.
"""

import threading
from collections import OrderedDict
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Set

from app.config import PAGE_SIZE

# Kleinster Cache, damit ein Merge-Pfad immer Platz hat
MIN_CACHED_NODES = 8


@dataclass
class CacheStats:
    hits: int = 0
    misses: int = 0
    evictions: int = 0
    write_backs: int = 0

    def to_dict(self) -> Dict[str, int]:
        return dict(self.__dict__)


class PageCache:
    """
    LRU-Cache über Knotenobjekten.

    loader(addr) liest und dekodiert einen Knoten, writer(node) kodiert
    und schreibt ihn. Gepinnte Knoten werden nie verdrängt.
    """

    def __init__(
        self,
        loader: Callable[[int], Any],
        writer: Callable[[Any], None],
        page_size: int = PAGE_SIZE,
        capacity_bytes: Optional[int] = None
    ):
        self._loader = loader
        self._writer = writer
        self.page_size = page_size
        self.capacity_bytes = capacity_bytes
        self.max_nodes = (
            None if capacity_bytes is None
            else max(MIN_CACHED_NODES, capacity_bytes // page_size)
        )
        self._nodes: "OrderedDict[int, Any]" = OrderedDict()
        self._pins: Dict[int, int] = {}
        self._dirty: Set[int] = set()
        self._lock = threading.RLock()
        self.stats = CacheStats()

    def __len__(self) -> int:
        return len(self._nodes)

    def __contains__(self, addr: int) -> bool:
        return addr in self._nodes

    def get(self, addr: int, pin: bool = False) -> Any:
        with self._lock:
            node = self._nodes.get(addr)
            if node is None:
                self.stats.misses += 1
                node = self._loader(addr)
                self._nodes[addr] = node
            else:
                self.stats.hits += 1
                self._nodes.move_to_end(addr)
            if pin:
                self._pins[addr] = self._pins.get(addr, 0) + 1
            self._evict_if_needed()
            return node

    def add(self, node: Any, pin: bool = False):
        """Neu angelegter Knoten (immer dirty)"""
        with self._lock:
            self._nodes[node.addr] = node
            self._dirty.add(node.addr)
            if pin:
                self._pins[node.addr] = self._pins.get(node.addr, 0) + 1
            self._evict_if_needed()

    def pin(self, addr: int):
        self.get(addr, pin=True)

    def unpin(self, addr: int):
        with self._lock:
            count = self._pins.get(addr, 0)
            if count <= 0:
                raise AssertionError(f"Knoten {addr} ist nicht gepinnt")
            if count == 1:
                del self._pins[addr]
            else:
                self._pins[addr] = count - 1
            self._evict_if_needed()

    def pin_count(self, addr: int) -> int:
        return self._pins.get(addr, 0)

    def mark_dirty(self, addr: int):
        with self._lock:
            if addr not in self._nodes:
                raise KeyError(f"Knoten {addr} nicht im Cache")
            self._dirty.add(addr)

    def update(self, addr: int, mutate: Callable[[Any], Any]) -> Any:
        """Wendet mutate unter dem Cache-Lock an und markiert dirty, falls es nicht False liefert"""
        with self._lock:
            node = self.get(addr)
            result = mutate(node)
            if result is not False:
                self._dirty.add(addr)
            return result

    def dirty_addrs(self) -> List[int]:
        with self._lock:
            return sorted(self._dirty)

    def write_back(self) -> int:
        """Schreibt alle Dirty-Knoten in Adressreihenfolge"""
        with self._lock:
            addrs = sorted(self._dirty)
            for addr in addrs:
                self._writer(self._nodes[addr])
                self._dirty.discard(addr)
            self.stats.write_backs += len(addrs)
            self._evict_if_needed()
            return len(addrs)

    def _evict_if_needed(self):
        if self.max_nodes is None:
            return
        while len(self._nodes) > self.max_nodes:
            victim = next((a for a in self._nodes if a not in self._pins), None)
            if victim is None:
                return
            node = self._nodes.pop(victim)
            if victim in self._dirty:
                self._writer(node)
                self._dirty.discard(victim)
                self.stats.write_backs += 1
            self.stats.evictions += 1

    def clear(self):
        """Verwirft den Cache ohne Rückschreiben"""
        with self._lock:
            self._nodes.clear()
            self._pins.clear()
            self._dirty.clear()
