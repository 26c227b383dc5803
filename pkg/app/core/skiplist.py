"""
weakkv - Skip-List
In-Memory Skip-List für neue Schlüssel zwischen zwei persists.

Suchen laufen ohne Lock. Einfügen verlinkt jede Ebene per Compare-and-Swap;
CPython kennt kein CAS auf Attributen, daher wird es mit einem kurzen
Link-Lock nachgebildet (prüfen + setzen, nichts sonst).
"""

import itertools
import random
import threading
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Tuple

from app.core.errors import DuplicateKey, SkipListFull


@dataclass(eq=False)
class SkipNode:
    """Knoten der Skip-List; value ist der atomar ersetzbare Slot"""
    key: bytes
    value: bytes
    slot: int
    forward: List[Optional["SkipNode"]] = field(default_factory=list)

    @property
    def height(self) -> int:
        return len(self.forward)


class SkipList:
    """
    Lock-freie Suche, CAS-basiertes Einfügen.

    Arena: feste Kapazität an Knoten. Ist sie erschöpft, wirft insert
    SkipListFull und der Aufrufer muss persist auslösen.
    """

    P = 0.5

    def __init__(self, capacity: int = 1_048_576, max_level: int = 20, seed: Optional[int] = None):
        if capacity <= 0:
            raise ValueError("Skip-List Kapazität muss > 0 sein")
        self.capacity = capacity
        self.max_level = max_level
        self._head = SkipNode(key=b"", value=b"", slot=-1, forward=[None] * max_level)
        self._arena = itertools.count()
        self._size = 0
        self._cas_lock = threading.Lock()
        self._rng = random.Random(seed)
        self._rng_lock = threading.Lock()

    def __len__(self) -> int:
        return self._size

    def _random_height(self) -> int:
        with self._rng_lock:
            height = 1
            while height < self.max_level and self._rng.random() < self.P:
                height += 1
            return height

    def _cas(self, node: SkipNode, level: int, expected: Optional[SkipNode], new: SkipNode) -> bool:
        with self._cas_lock:
            if node.forward[level] is not expected:
                return False
            node.forward[level] = new
            return True

    def _find(self, key: bytes) -> Tuple[List[SkipNode], List[Optional[SkipNode]]]:
        """Vorgänger und Nachfolger pro Ebene"""
        preds: List[SkipNode] = [self._head] * self.max_level
        succs: List[Optional[SkipNode]] = [None] * self.max_level
        node = self._head
        for level in range(self.max_level - 1, -1, -1):
            nxt = node.forward[level]
            while nxt is not None and nxt.key < key:
                node = nxt
                nxt = node.forward[level]
            preds[level] = node
            succs[level] = nxt
        return preds, succs

    def search(self, key: bytes) -> Optional[SkipNode]:
        node = self._head
        for level in range(self.max_level - 1, -1, -1):
            nxt = node.forward[level]
            while nxt is not None and nxt.key < key:
                node = nxt
                nxt = node.forward[level]
        candidate = node.forward[0]
        if candidate is not None and candidate.key == key:
            return candidate
        return None

    def insert(self, key: bytes, value: bytes) -> SkipNode:
        """Fügt einen neuen Schlüssel ein (Schlüssel darf nicht existieren)"""
        slot = next(self._arena)
        if slot >= self.capacity:
            raise SkipListFull(f"Skip-List Arena voll ({self.capacity} Knoten)")

        height = self._random_height()
        node = SkipNode(key=key, value=value, slot=slot, forward=[None] * height)

        # Ebene 0 ist der Linearisierungspunkt
        while True:
            preds, succs = self._find(key)
            if succs[0] is not None and succs[0].key == key:
                raise DuplicateKey(f"Schlüssel existiert bereits in der Skip-List: {key!r}")
            node.forward[0] = succs[0]
            if self._cas(preds[0], 0, succs[0], node):
                break

        with self._cas_lock:
            self._size += 1

        for level in range(1, height):
            while True:
                node.forward[level] = succs[level]
                if self._cas(preds[level], level, succs[level], node):
                    break
                preds, succs = self._find(key)
        return node

    def update(self, node: SkipNode, value: bytes):
        """Ersetzt den Wert (eine Referenzzuweisung ist atomar)"""
        node.value = value

    def items(self) -> Iterator[Tuple[bytes, bytes]]:
        node = self._head.forward[0]
        while node is not None:
            yield node.key, node.value
            node = node.forward[0]

    def nodes_from(self, key: bytes) -> Iterator[SkipNode]:
        """Knoten ab dem ersten Schlüssel >= key"""
        _, succs = self._find(key)
        node = succs[0]
        while node is not None:
            yield node
            node = node.forward[0]

    def check_invariants(self):
        """Sortierung auf Ebene 0, höhere Ebenen sind Teilfolgen"""
        level0 = []
        node = self._head.forward[0]
        while node is not None:
            level0.append(node)
            node = node.forward[0]
        keys = [n.key for n in level0]
        if any(a >= b for a, b in zip(keys, keys[1:])):
            raise AssertionError("Skip-List Ebene 0 nicht streng aufsteigend")
        present = set(id(n) for n in level0)
        for level in range(1, self.max_level):
            node = self._head.forward[level]
            previous = None
            while node is not None:
                if id(node) not in present:
                    raise AssertionError(f"Knoten auf Ebene {level} fehlt auf Ebene 0")
                if previous is not None and previous.key >= node.key:
                    raise AssertionError(f"Ebene {level} nicht aufsteigend")
                previous = node
                node = node.forward[level]
        if len(level0) != self._size:
            raise AssertionError("Grösse stimmt nicht mit Ebene 0 überein")
