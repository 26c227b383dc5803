"""
weakkv - Shadow Paging
Logische "current file" über dem Block-Device. flush() speichert einen
crash-atomaren Snapshot (die "stable file"), recover() stellt den letzten
Snapshot wieder her.

Physisches Layout (Details in FORMAT.md):
    Seite 0-1      Header-Slots (Ping-Pong, höchste gültige Generation gewinnt)
    Image A / B    volles Table-Image, abwechselnd beschrieben
    Delta-Region   ein Delta-Record pro Seite
    Rest           Datenseiten
"""

import hashlib
import math
import struct
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Dict, List, Optional, Set, Tuple

import numpy as np

from app.config import ShadowConfig
from app.core.errors import (
    CorruptDatabase,
    DeviceFull,
    PageOutOfRange,
    WeakKVError,
)
from app.core.event_log import EventLog, null_event_log
from app.core.storage import BlockDevice, PageId, zero_page

# Logische Seitennummer
LogicalAddr = int

# Epoche = Anzahl erfolgreicher flushes
SnapshotEpoch = int

UNMAPPED = 0xFFFFFFFF

MAGIC = b"WEAKKV01"
FORMAT_VERSION = 1

# magic, version, page_size, logical_capacity, device_pages, delta_pages,
# generation, image_epoch, active_image, image_checksum, delta_base_seq
HEADER_STRUCT = struct.Struct("<8sIIIIIQQIQQ")
# seq, epoch, part, parts, count, group_digest
DELTA_STRUCT = struct.Struct("<QQHHIQ")
PAIR_STRUCT = struct.Struct("<II")
CHECKSUM_SIZE = 8


def checksum64(data: bytes) -> int:
    """64-Bit Prüfsumme (BLAKE2b)"""
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


@dataclass(frozen=True)
class ShadowLayout:
    """Berechnete Regionen einer Datenbankdatei"""
    page_size: int
    device_pages: int
    logical_capacity: int
    delta_pages: int

    @property
    def entries_per_page(self) -> int:
        return self.page_size // 4

    @property
    def image_pages(self) -> int:
        return math.ceil(self.logical_capacity / self.entries_per_page)

    def image_start(self, region: int) -> PageId:
        return 2 + region * self.image_pages

    @property
    def delta_start(self) -> PageId:
        return 2 + 2 * self.image_pages

    @property
    def data_start(self) -> PageId:
        return self.delta_start + self.delta_pages

    @property
    def data_pages(self) -> int:
        return self.device_pages - self.data_start

    @property
    def pairs_per_delta(self) -> int:
        return (self.page_size - DELTA_STRUCT.size - CHECKSUM_SIZE) // PAIR_STRUCT.size

    def validate(self):
        if self.data_pages <= 0:
            raise ValueError(
                f"Device zu klein: {self.device_pages} Seiten, Metadaten belegen {self.data_start}"
            )
        if self.logical_capacity >= UNMAPPED or self.device_pages >= UNMAPPED:
            raise ValueError("Kapazität überschreitet 32-Bit Seitennummern")


@dataclass
class ShadowHeader:
    """Inhalt eines Header-Slots"""
    page_size: int
    logical_capacity: int
    device_pages: int
    delta_pages: int
    generation: int
    image_epoch: SnapshotEpoch
    active_image: int
    image_checksum: int
    delta_base_seq: int

    def encode(self) -> bytes:
        body = HEADER_STRUCT.pack(
            MAGIC, FORMAT_VERSION, self.page_size, self.logical_capacity,
            self.device_pages, self.delta_pages, self.generation, self.image_epoch,
            self.active_image, self.image_checksum, self.delta_base_seq
        )
        page = bytearray(self.page_size)
        page[: len(body)] = body
        page[len(body): len(body) + CHECKSUM_SIZE] = checksum64(body).to_bytes(8, "little")
        return bytes(page)

    @classmethod
    def decode(cls, page: bytes) -> Optional["ShadowHeader"]:
        """None wenn der Slot leer oder ungültig ist"""
        body = page[: HEADER_STRUCT.size]
        stored = int.from_bytes(page[HEADER_STRUCT.size: HEADER_STRUCT.size + CHECKSUM_SIZE], "little")
        if checksum64(body) != stored:
            return None
        fields = HEADER_STRUCT.unpack(body)
        if fields[0] != MAGIC or fields[1] != FORMAT_VERSION:
            return None
        return cls(*fields[2:])


@dataclass
class DeltaRecord:
    """Ein Delta-Record (eine Seite) in der Delta-Region"""
    seq: int
    epoch: SnapshotEpoch
    part: int
    parts: int
    group_digest: int
    pairs: List[Tuple[LogicalAddr, PageId]] = field(default_factory=list)

    def encode(self, page_size: int) -> bytes:
        page = bytearray(page_size)
        DELTA_STRUCT.pack_into(
            page, 0, self.seq, self.epoch, self.part, self.parts,
            len(self.pairs), self.group_digest
        )
        offset = DELTA_STRUCT.size
        for logical, physical in self.pairs:
            PAIR_STRUCT.pack_into(page, offset, logical, physical)
            offset += PAIR_STRUCT.size
        page[-CHECKSUM_SIZE:] = checksum64(bytes(page[:-CHECKSUM_SIZE])).to_bytes(8, "little")
        return bytes(page)

    @classmethod
    def decode(cls, page: bytes) -> Optional["DeltaRecord"]:
        stored = int.from_bytes(page[-CHECKSUM_SIZE:], "little")
        if checksum64(page[:-CHECKSUM_SIZE]) != stored:
            return None
        seq, epoch, part, parts, count, digest = DELTA_STRUCT.unpack_from(page, 0)
        if parts == 0 or part >= parts:
            return None
        max_pairs = (len(page) - DELTA_STRUCT.size - CHECKSUM_SIZE) // PAIR_STRUCT.size
        if count > max_pairs:
            return None
        pairs = [
            PAIR_STRUCT.unpack_from(page, DELTA_STRUCT.size + i * PAIR_STRUCT.size)
            for i in range(count)
        ]
        return cls(seq, epoch, part, parts, digest, pairs)


def group_digest(epoch: SnapshotEpoch, pairs: List[Tuple[LogicalAddr, PageId]]) -> int:
    """Prüfsumme über alle Paare eines flush (verhindert gemischte Gruppen)"""
    data = bytearray(epoch.to_bytes(8, "little"))
    for logical, physical in pairs:
        data += PAIR_STRUCT.pack(logical, physical)
    return checksum64(bytes(data))


@dataclass
class ShadowStats:
    """Zähler des Shadow-Layers"""
    flushes: int = 0
    flush_failures: int = 0
    deltas_written: int = 0
    image_rewrites: int = 0
    deltas_replayed: int = 0
    deltas_ignored: int = 0
    header_fallbacks: int = 0
    recovery_seconds: float = 0.0

    def to_dict(self) -> Dict[str, float]:
        return dict(self.__dict__)


class ShadowPager:
    """
    Shadow-Paging über einem Block-Device.

    Invarianten:
    - Page-Table injektiv, keine gemappte Seite in der Free-List
    - Seiten der stabilen Tabelle werden zwischen zwei flushes nie überschrieben
    """

    def __init__(
        self,
        device: BlockDevice,
        layout: ShadowLayout,
        table: np.ndarray,
        epoch: SnapshotEpoch,
        header: ShadowHeader,
        header_slot: int,
        delta_pos: int,
        event_log: Optional[EventLog] = None
    ):
        self.device = device
        self.layout = layout
        self.event_log = event_log or null_event_log
        self.stats = ShadowStats()

        self._current = table.copy()
        self._stable = table.copy()
        self._dirty: Set[LogicalAddr] = set()
        self._epoch = epoch
        self._lock = threading.Lock()

        # Header-/Delta-Zustand
        self._generation = header.generation
        self._header_slot = header_slot
        self._active_image = header.active_image
        self._delta_base_seq = header.delta_base_seq
        self._delta_pos = delta_pos

        # Seiten eines fehlgeschlagenen flush, der evtl. doch dauerhaft wurde
        self._protected: Set[PageId] = set()

        # Free-List: Komplement der referenzierten Datenseiten
        referenced = self._mapped_pages(self._stable)
        self._free: Deque[PageId] = deque(
            p for p in range(layout.data_start, layout.device_pages) if p not in referenced
        )
        self._garbage: List[PageId] = []

    # ============ Format / Recovery ============

    @classmethod
    def format(
        cls,
        device: BlockDevice,
        shadow_config: ShadowConfig,
        event_log: Optional[EventLog] = None
    ) -> "ShadowPager":
        """Initialisiert ein leeres Device (Epoche 0)"""
        layout = ShadowLayout(
            page_size=device.page_size,
            device_pages=device.page_count,
            logical_capacity=shadow_config.logical_capacity,
            delta_pages=shadow_config.delta_pages
        )
        layout.validate()
        table = np.full(layout.logical_capacity, UNMAPPED, dtype=np.uint32)
        image_checksum = cls._write_image(device, layout, 0, table)
        header = ShadowHeader(
            page_size=layout.page_size,
            logical_capacity=layout.logical_capacity,
            device_pages=layout.device_pages,
            delta_pages=layout.delta_pages,
            generation=1,
            image_epoch=0,
            active_image=0,
            image_checksum=image_checksum,
            delta_base_seq=1
        )
        device.sync()
        device.write_page(0, header.encode())
        device.sync()
        pager = cls(device, layout, table, 0, header, 0, 0, event_log)
        pager.event_log.log("shadow", "format", device_pages=layout.device_pages,
                            logical_capacity=layout.logical_capacity)
        return pager

    @classmethod
    def open(
        cls,
        device: BlockDevice,
        shadow_config: ShadowConfig,
        event_log: Optional[EventLog] = None
    ) -> "ShadowPager":
        """Formatiert frische Devices, stellt alle anderen wieder her"""
        zero = zero_page(device.page_size)
        if device.read_page(0) == zero and device.read_page(1) == zero:
            return cls.format(device, shadow_config, event_log)
        return cls.recover(device, event_log)

    @classmethod
    def recover(cls, device: BlockDevice, event_log: Optional[EventLog] = None) -> "ShadowPager":
        """
        Stellt den Zustand des letzten erfolgreichen flush wieder her:
        Basis-Image laden, dann Delta-Gruppen in Sequenzreihenfolge anwenden.
        Ein unvollständiges oder ungültiges Ende der Delta-Region gilt als
        nicht dauerhaft und wird ignoriert.
        """
        started = time.perf_counter()
        candidates: List[Tuple[ShadowHeader, int]] = []
        for slot in (0, 1):
            header = ShadowHeader.decode(device.read_page(slot))
            if header is not None:
                candidates.append((header, slot))
        if not candidates:
            raise CorruptDatabase("Kein gültiger Header gefunden")
        candidates.sort(key=lambda c: c[0].generation, reverse=True)

        chosen: Optional[Tuple[ShadowHeader, int, np.ndarray]] = None
        fallbacks = 0
        for header, slot in candidates:
            layout = ShadowLayout(
                page_size=header.page_size,
                device_pages=header.device_pages,
                logical_capacity=header.logical_capacity,
                delta_pages=header.delta_pages
            )
            if layout.device_pages > device.page_count or layout.page_size != device.page_size:
                raise CorruptDatabase("Header passt nicht zum Device")
            table = cls._read_image(device, layout, header.active_image)
            if checksum64(table.tobytes()) == header.image_checksum:
                chosen = (header, slot, table)
                break
            fallbacks += 1
        if chosen is None:
            raise CorruptDatabase("Table-Image beschädigt (Prüfsumme)")

        header, slot, table = chosen
        layout = ShadowLayout(header.page_size, header.device_pages,
                              header.logical_capacity, header.delta_pages)
        epoch, delta_pos, applied, ignored = cls._replay_deltas(device, layout, header, table)

        # Beide Slots zählen für die nächste Generation
        header.generation = max(h.generation for h, _ in candidates)
        pager = cls(device, layout, table, epoch, header, slot, delta_pos, event_log)
        pager.stats.deltas_replayed = applied
        pager.stats.deltas_ignored = ignored
        pager.stats.header_fallbacks = fallbacks
        pager.stats.recovery_seconds = time.perf_counter() - started
        pager.event_log.log(
            "shadow", "recover",
            epoch=epoch, deltas_replayed=applied, deltas_ignored=ignored,
            header_fallbacks=fallbacks, elapsed=pager.stats.recovery_seconds
        )
        return pager

    @staticmethod
    def _replay_deltas(
        device: BlockDevice,
        layout: ShadowLayout,
        header: ShadowHeader,
        table: np.ndarray
    ) -> Tuple[SnapshotEpoch, int, int, int]:
        """Wendet vollständige Delta-Gruppen an; gibt (epoch, pos, applied, ignored)"""
        epoch = header.image_epoch
        pos = 0
        applied = 0
        ignored = 0
        group: List[DeltaRecord] = []

        for i in range(layout.delta_pages):
            record = DeltaRecord.decode(device.read_page(layout.delta_start + i))
            expected_seq = header.delta_base_seq + i
            valid = (
                record is not None
                and record.seq == expected_seq
                and record.epoch > epoch
                and record.part == len(group)
                and (not group or (record.parts == group[0].parts
                                   and record.epoch == group[0].epoch
                                   and record.group_digest == group[0].group_digest))
            )
            if not valid:
                if group or record is not None:
                    ignored += 1
                break
            group.append(record)
            if len(group) == record.parts:
                pairs = [pair for part in group for pair in part.pairs]
                if group_digest(record.epoch, pairs) != record.group_digest:
                    ignored += 1
                    break
                for logical, physical in pairs:
                    if logical >= layout.logical_capacity:
                        raise CorruptDatabase(f"Delta verweist auf logische Seite {logical}")
                    table[logical] = physical
                epoch = record.epoch
                applied += len(group)
                pos = i + 1
                group = []
        return epoch, pos, applied, ignored

    @staticmethod
    def _read_image(device: BlockDevice, layout: ShadowLayout, region: int) -> np.ndarray:
        start = layout.image_start(region)
        raw = b"".join(device.read_page(start + i) for i in range(layout.image_pages))
        return np.frombuffer(raw[: layout.logical_capacity * 4], dtype="<u4").astype(np.uint32)

    @staticmethod
    def _write_image(
        device: BlockDevice,
        layout: ShadowLayout,
        region: int,
        table: np.ndarray
    ) -> int:
        """Schreibt das volle Image in die Region, gibt die Prüfsumme zurück"""
        raw = table.astype("<u4").tobytes()
        padded = raw + bytes(layout.image_pages * layout.page_size - len(raw))
        start = layout.image_start(region)
        for i in range(layout.image_pages):
            device.write_page(start + i, padded[i * layout.page_size: (i + 1) * layout.page_size])
        return checksum64(raw)

    # ============ Current File ============

    @property
    def epoch(self) -> SnapshotEpoch:
        return self._epoch

    @property
    def page_size(self) -> int:
        return self.layout.page_size

    @property
    def logical_capacity(self) -> int:
        return self.layout.logical_capacity

    def _check_addr(self, addr: LogicalAddr):
        if not 0 <= addr < self.layout.logical_capacity:
            raise PageOutOfRange(
                f"Logische Seite {addr} ausserhalb der Kapazität {self.layout.logical_capacity}"
            )

    def shadow_read(self, addr: LogicalAddr) -> bytes:
        """Liest aus der current file; nicht gemappte Seiten sind Nullen"""
        self._check_addr(addr)
        physical = int(self._current[addr])
        if physical == UNMAPPED:
            return zero_page(self.layout.page_size)
        return self.device.read_page(physical)

    def shadow_write(self, addr: LogicalAddr, data: bytes):
        """Schreibt out-of-place auf eine freie physische Seite und lenkt das Mapping um"""
        self._check_addr(addr)
        if len(data) != self.layout.page_size:
            raise ValueError(f"Seite muss genau {self.layout.page_size} Bytes haben")
        with self._lock:
            physical = self._allocate()
        try:
            self.device.write_page(physical, data)
        except WeakKVError:
            with self._lock:
                self._free.appendleft(physical)
            raise
        with self._lock:
            self._remap(addr, physical)

    def shadow_discard(self, addr: LogicalAddr):
        """Hebt das Mapping einer logischen Seite auf"""
        self._check_addr(addr)
        with self._lock:
            self._remap(addr, UNMAPPED)

    def _remap(self, addr: LogicalAddr, physical: int):
        old = int(self._current[addr])
        self._current[addr] = physical
        self._dirty.add(addr)
        if old != UNMAPPED and old != int(self._stable[addr]) and old not in self._protected:
            self._garbage.append(old)

    def _allocate(self) -> PageId:
        if not self._free:
            self._collect_garbage()
        if not self._free:
            raise DeviceFull(
                f"Keine freie Seite ({self.layout.data_pages} Datenseiten belegt)"
            )
        return self._free.popleft()

    def _collect_garbage(self) -> int:
        count = len(self._garbage)
        self._free.extend(self._garbage)
        self._garbage.clear()
        return count

    def gc(self) -> int:
        """Gibt Seiten frei, die weder current noch stable referenziert"""
        with self._lock:
            count = self._collect_garbage()
        if count:
            self.event_log.log("shadow", "gc", reclaimed=count)
        return count

    # ============ Flush ============

    def flush(self) -> SnapshotEpoch:
        """
        Crash-atomarer Snapshot der current file.
        Reihenfolge: Datenseiten sync -> Delta (oder Image + Header) -> sync.
        Schlägt ein Schritt fehl, bleibt der vorherige Snapshot das Ziel;
        der Dirty-Set bleibt erhalten und ein erneuter flush ist sicher.
        Aufrufer garantiert, dass parallel kein shadow_write läuft.
        """
        with self._lock:
            attempt = self._current.copy()
            dirty = sorted(self._dirty)
            pairs = [(addr, int(attempt[addr])) for addr in dirty]
            new_epoch = self._epoch + 1
            parts = max(1, math.ceil(len(pairs) / self.layout.pairs_per_delta))
            use_image = parts > self.layout.delta_pages - self._delta_pos

            try:
                # Datenseiten müssen vor den Metadaten dauerhaft sein
                self.device.sync()
                self._protected |= self._mapped_pages(attempt) - self._mapped_pages(self._stable)
                if use_image:
                    self._flush_image(attempt, new_epoch)
                else:
                    self._flush_deltas(pairs, new_epoch, parts)
            except WeakKVError as e:
                self.stats.flush_failures += 1
                self.event_log.log("shadow", "flush_failed", epoch=self._epoch, error=str(e))
                raise

            # Erfolg: überholte stabile Seiten direkt freigeben
            keep = self._mapped_pages(attempt)
            released = (self._mapped_pages(self._stable) | self._protected) - keep
            self._free.extend(sorted(released))
            self._protected = set()
            self._stable = attempt
            self._dirty.clear()
            self._epoch = new_epoch
            self.stats.flushes += 1

        self.event_log.log(
            "shadow", "flush",
            epoch=new_epoch, dirty_pages=len(pairs), image_rewrite=use_image
        )
        return new_epoch

    def _flush_deltas(self, pairs: List[Tuple[LogicalAddr, PageId]], epoch: SnapshotEpoch, parts: int):
        digest = group_digest(epoch, pairs)
        per_page = self.layout.pairs_per_delta
        for part in range(parts):
            record = DeltaRecord(
                seq=self._delta_base_seq + self._delta_pos + part,
                epoch=epoch,
                part=part,
                parts=parts,
                group_digest=digest,
                pairs=pairs[part * per_page: (part + 1) * per_page]
            )
            self.device.write_page(
                self.layout.delta_start + self._delta_pos + part,
                record.encode(self.layout.page_size)
            )
        self.device.sync()
        self._delta_pos += parts
        self.stats.deltas_written += parts

    def _flush_image(self, table: np.ndarray, epoch: SnapshotEpoch):
        region = 1 - self._active_image
        image_checksum = self._write_image(self.device, self.layout, region, table)
        self.device.sync()
        next_seq = self._delta_base_seq + self._delta_pos
        header = ShadowHeader(
            page_size=self.layout.page_size,
            logical_capacity=self.layout.logical_capacity,
            device_pages=self.layout.device_pages,
            delta_pages=self.layout.delta_pages,
            generation=self._generation + 1,
            image_epoch=epoch,
            active_image=region,
            image_checksum=image_checksum,
            delta_base_seq=next_seq
        )
        slot = 1 - self._header_slot
        self.device.write_page(slot, header.encode())
        self.device.sync()
        self._generation += 1
        self._header_slot = slot
        self._active_image = region
        self._delta_base_seq = next_seq
        self._delta_pos = 0
        self.stats.image_rewrites += 1

    # ============ Introspektion ============

    @staticmethod
    def _mapped_pages(table: np.ndarray) -> Set[PageId]:
        return set(int(p) for p in table[table != UNMAPPED])

    def current_mapping(self, addr: LogicalAddr) -> Optional[PageId]:
        physical = int(self._current[addr])
        return None if physical == UNMAPPED else physical

    def stable_mapping(self, addr: LogicalAddr) -> Optional[PageId]:
        physical = int(self._stable[addr])
        return None if physical == UNMAPPED else physical

    def mapped_count(self) -> int:
        return int(np.count_nonzero(self._current != UNMAPPED))

    def stable_mapped_count(self) -> int:
        return int(np.count_nonzero(self._stable != UNMAPPED))

    def page_table_bytes(self) -> int:
        """Speicherbedarf beider Page-Tables (current und stable) im RAM"""
        return int(self._current.nbytes + self._stable.nbytes)

    def free_count(self) -> int:
        return len(self._free)

    def free_pages(self) -> List[PageId]:
        return list(self._free)

    def garbage_count(self) -> int:
        return len(self._garbage)

    def dirty_count(self) -> int:
        return len(self._dirty)

    def max_mapped_addr(self) -> int:
        """Höchste gemappte logische Adresse + 1 (0 wenn leer)"""
        mapped = np.nonzero(self._current != UNMAPPED)[0]
        return int(mapped[-1]) + 1 if len(mapped) else 0

    def header_info(self) -> Dict[str, int]:
        return {
            "generation": self._generation,
            "header_slot": self._header_slot,
            "active_image": self._active_image,
            "delta_base_seq": self._delta_base_seq,
            "delta_pos": self._delta_pos,
            "delta_pages": self.layout.delta_pages,
            "epoch": self._epoch,
        }

    def check_invariants(self):
        """Injektivität und Disjunktheit von Free-List und Mappings"""
        with self._lock:
            current = self._current[self._current != UNMAPPED]
            if len(set(current.tolist())) != len(current):
                raise AssertionError("Page-Table nicht injektiv")
            referenced = self._mapped_pages(self._current) | self._mapped_pages(self._stable)
            free = set(self._free)
            if len(free) != len(self._free):
                raise AssertionError("Free-List enthält Duplikate")
            if free & referenced:
                raise AssertionError("Gemappte Seite in der Free-List")
            if free & set(self._garbage):
                raise AssertionError("Seite gleichzeitig frei und Garbage")
