"""
weakkv - Storage Layer
Seitenorientiertes Block-Device: echte Datei (fsync) oder Crash-Simulator,
der Schreibvorgänge zwischen zwei sync-Barrieren beliebig verlieren kann.

Crash-Modell: ein Seiten-Write ist atomar (keine Torn Pages). Nach einem
Crash enthält jede Seite entweder ihren dauerhaften Inhalt oder einen der
seit dem letzten sync an sie gerichteten Writes.
"""

import os
import random
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Tuple

from app.config import PAGE_SIZE
from app.core.errors import PageOutOfRange, SimulatedCrash, StorageIOError

# Physische Seitennummer (Byte-Offset = PageId x PAGE_SIZE)
PageId = int


def zero_page(page_size: int = PAGE_SIZE) -> bytes:
    """Seite aus lauter Nullen (Inhalt nie geschriebener Seiten)"""
    return bytes(page_size)


@dataclass
class DeviceStats:
    """I/O-Zähler eines Devices"""
    reads: int = 0
    writes: int = 0
    syncs: int = 0

    def to_dict(self) -> Dict[str, int]:
        return {"reads": self.reads, "writes": self.writes, "syncs": self.syncs}


class BlockDevice(ABC):
    """Abstrakte Basisklasse für Block-Devices"""

    def __init__(self, page_count: int, page_size: int = PAGE_SIZE):
        if page_count <= 0:
            raise ValueError(f"Ungültige Seitenanzahl: {page_count}")
        self.page_count = page_count
        self.page_size = page_size
        self.stats = DeviceStats()

    def _check_page_id(self, page_id: PageId):
        if not 0 <= page_id < self.page_count:
            raise PageOutOfRange(
                f"Seite {page_id} ausserhalb des Devices (Kapazität {self.page_count})"
            )

    def _check_data(self, data: bytes):
        if len(data) != self.page_size:
            raise ValueError(
                f"Seite muss genau {self.page_size} Bytes haben, erhalten: {len(data)}"
            )

    @abstractmethod
    def read_page(self, page_id: PageId) -> bytes:
        """Liest den aktuellen (live) Inhalt einer Seite"""
        pass

    @abstractmethod
    def write_page(self, page_id: PageId, data: bytes):
        """Schreibt eine ganze Seite"""
        pass

    @abstractmethod
    def sync(self):
        """Barriere: alle bisherigen Writes werden dauerhaft"""
        pass

    def close(self):
        """Gibt Ressourcen frei"""
        pass


class FileDevice(BlockDevice):
    """
    Datenbankdatei als Seiten-Array: Seite p liegt bei Offset p x page_size.
    sync() ruft fsync auf. pread/pwrite sind positionsunabhängig, daher
    dürfen Threads verschiedene Seiten gleichzeitig lesen.
    """

    def __init__(
        self,
        path: Path,
        page_count: int,
        page_size: int = PAGE_SIZE,
        fail_sync: bool = False
    ):
        super().__init__(page_count, page_size)
        self.path = Path(path)
        self.fail_sync = fail_sync
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fd = os.open(str(self.path), os.O_RDWR | os.O_CREAT, 0o644)
        # sync() schliesst parallele Writes aus
        self._write_lock = threading.Lock()

        # Datei auf volle Grösse bringen (sparse, liest sich als Nullen)
        size = os.fstat(self._fd).st_size
        if size < page_count * page_size:
            os.ftruncate(self._fd, page_count * page_size)

    @classmethod
    def open_existing(cls, path: Path, page_size: int = PAGE_SIZE) -> "FileDevice":
        """Öffnet eine bestehende Datei, Kapazität aus der Dateigrösse"""
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Datenbankdatei nicht gefunden: {path}")
        size = path.stat().st_size
        if size == 0 or size % page_size != 0:
            raise StorageIOError(f"Dateigrösse {size} ist kein Vielfaches von {page_size}")
        return cls(path, size // page_size, page_size)

    def read_page(self, page_id: PageId) -> bytes:
        self._check_page_id(page_id)
        data = os.pread(self._fd, self.page_size, page_id * self.page_size)
        self.stats.reads += 1
        if len(data) < self.page_size:
            data = data + bytes(self.page_size - len(data))
        return data

    def write_page(self, page_id: PageId, data: bytes):
        self._check_page_id(page_id)
        self._check_data(data)
        with self._write_lock:
            written = os.pwrite(self._fd, data, page_id * self.page_size)
            if written != self.page_size:
                raise StorageIOError(f"Kurzer Write auf Seite {page_id}: {written} Bytes")
            self.stats.writes += 1

    def sync(self):
        with self._write_lock:
            if self.fail_sync:
                raise StorageIOError("Simulierter fsync-Fehler")
            try:
                os.fsync(self._fd)
            except OSError as e:
                raise StorageIOError(f"fsync fehlgeschlagen: {e}") from e
            self.stats.syncs += 1

    def close(self):
        if self._fd >= 0:
            os.close(self._fd)
            self._fd = -1


class SubsetMode(str, Enum):
    ALL = "all"
    NONE = "none"
    INDICES = "indices"
    RANDOM = "random"


@dataclass(frozen=True)
class SubsetChoice:
    """
    Auswahl der offenen (nicht gesyncten) Writes, die einen Crash überleben.
    Indizes beziehen sich auf die Reihenfolge in pending_writes().
    """
    mode: SubsetMode
    chosen: FrozenSet[int] = frozenset()
    seed: int = 0
    probability: float = 0.5

    @classmethod
    def all(cls) -> "SubsetChoice":
        return cls(SubsetMode.ALL)

    @classmethod
    def none(cls) -> "SubsetChoice":
        return cls(SubsetMode.NONE)

    @classmethod
    def indices(cls, chosen: Iterable[int]) -> "SubsetChoice":
        return cls(SubsetMode.INDICES, chosen=frozenset(chosen))

    @classmethod
    def random(cls, seed: int, probability: float = 0.5) -> "SubsetChoice":
        return cls(SubsetMode.RANDOM, seed=seed, probability=probability)

    def select(self, pending_count: int) -> List[bool]:
        """Gibt pro offenem Write zurück, ob er überlebt"""
        if self.mode == SubsetMode.ALL:
            return [True] * pending_count
        if self.mode == SubsetMode.NONE:
            return [False] * pending_count
        if self.mode == SubsetMode.INDICES:
            return [i in self.chosen for i in range(pending_count)]
        rng = random.Random(self.seed)
        return [rng.random() < self.probability for _ in range(pending_count)]


class CrashSimDevice(BlockDevice):
    """
    In-Memory Device mit Crash-Simulation.

    - durable: Inhalt, der jeden Crash überlebt
    - pending: Writes seit dem letzten sync (in Ausgabereihenfolge)
    - crash(): durable wird um eine beliebige Teilmenge von pending ergänzt

    Da sync alle offenen Writes dauerhaft macht, besteht jedes Crash-Ergebnis
    aus vollständigen Epochen plus einer Teilmenge der letzten offenen Epoche.
    """

    def __init__(
        self,
        page_count: int,
        page_size: int = PAGE_SIZE,
        fail_sync: bool = False,
        durable: Optional[Dict[PageId, bytes]] = None
    ):
        super().__init__(page_count, page_size)
        self.fail_sync = fail_sync
        self._durable: Dict[PageId, bytes] = dict(durable or {})
        self._pending: List[Tuple[PageId, bytes]] = []
        self._live: Dict[PageId, bytes] = dict(self._durable)
        self._lock = threading.Lock()
        self._zero = zero_page(page_size)

        # Crash-Trigger auf Storage-Ebene
        self.op_count = 0
        self.barrier_log: List[int] = []
        self._crash_at: Optional[int] = None
        self.crashed = False

    @classmethod
    def from_image(
        cls,
        image: Dict[PageId, bytes],
        page_count: int,
        page_size: int = PAGE_SIZE
    ) -> "CrashSimDevice":
        """Neues Device mit gegebenem dauerhaften Inhalt"""
        return cls(page_count, page_size, durable=image)

    def snapshot(self) -> Dict[PageId, bytes]:
        """Kopie des dauerhaften Inhalts"""
        with self._lock:
            return dict(self._durable)

    def arm(self, after_ops: int):
        """
        Plant einen Crash: nach after_ops weiteren write_page/sync-Aufrufen
        löst der nächste Aufruf SimulatedCrash aus, ohne Wirkung.
        """
        if after_ops < 0:
            raise ValueError("after_ops muss >= 0 sein")
        self._crash_at = self.op_count + after_ops

    def disarm(self):
        self._crash_at = None

    def _tick(self):
        if self.crashed:
            raise SimulatedCrash("Device ist abgestürzt")
        if self._crash_at is not None and self.op_count >= self._crash_at:
            self.crashed = True
            raise SimulatedCrash(f"Geplanter Crash bei Operation {self.op_count}")
        self.op_count += 1

    def read_page(self, page_id: PageId) -> bytes:
        self._check_page_id(page_id)
        with self._lock:
            self.stats.reads += 1
            return self._live.get(page_id, self._zero)

    def write_page(self, page_id: PageId, data: bytes):
        self._check_page_id(page_id)
        self._check_data(data)
        data = bytes(data)
        with self._lock:
            self._tick()
            self._pending.append((page_id, data))
            self._live[page_id] = data
            self.stats.writes += 1

    def sync(self):
        with self._lock:
            self._tick()
            if self.fail_sync:
                raise StorageIOError("Simulierter sync-Fehler")
            for page_id, data in self._pending:
                self._durable[page_id] = data
            self._pending.clear()
            self.barrier_log.append(self.op_count)
            self.stats.syncs += 1

    def pending_writes(self) -> List[Tuple[PageId, bytes]]:
        """Offene Writes der letzten Epoche (Reihenfolge = Ausgabe)"""
        with self._lock:
            return list(self._pending)

    def crash(self, selector: SubsetChoice = SubsetChoice.none()):
        """
        Simuliert einen Crash: überlebende Writes werden in Ausgabereihenfolge
        angewendet (Last-Write-Wins innerhalb der Auswahl).
        """
        with self._lock:
            survives = selector.select(len(self._pending))
            for (page_id, data), keep in zip(self._pending, survives):
                if keep:
                    self._durable[page_id] = data
            self._pending.clear()
            self._live = dict(self._durable)
            self._crash_at = None
            self.crashed = False
