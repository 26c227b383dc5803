"""
weakkv - Transaktions-Engine
Öffentliche Schnittstelle: begin, get, getrange, put, delete, commit,
abort, persist sowie open/close.

Garantien (ACID⁻): Atomarität, Konsistenz und Serialisierbarkeit wie
gewohnt. Dauerhaft sind nur Transaktionen, die vor einem abgeschlossenen
persist committet wurden.
"""

import itertools
import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Set, Tuple, Union

from app.config import AppConfig, DeviceBackend, config as default_config
from app.core.errors import (
    InvalidTransactionState,
    SkipListFull,
    TransactionAborted,
    WeakKVError,
)
from app.core.event_log import EventLog, null_event_log
from app.core.index import Index, LocationTag, LockKey, RecordLocation
from app.core.input_validator import KeyValueValidator
from app.core.locks import LockMode, LockTable, LockTables
from app.core.protocol import ClientState, PersistProtocol
from app.core.shadow import ShadowPager
from app.core.storage import BlockDevice, CrashSimDevice, FileDevice

# Wiederholungen, bis Bereichsergebnis und Locks übereinstimmen
RANGE_LOCK_ATTEMPTS = 16

# Empfänger für Historien-Ereignisse: (kind, txn_id, details)
Recorder = Callable[[str, Optional[int], Dict], None]


@dataclass
class WriteEntry:
    value: bytes
    location: RecordLocation


@dataclass
class Transaction:
    """Client-seitiger Zustand einer Transaktion"""
    id: int
    state: ClientState = ClientState.RUNNING
    begun: bool = False
    begin_epoch: int = -1
    write_set: Dict[bytes, WriteEntry] = field(default_factory=dict)
    locks: Set[Tuple[str, LockKey]] = field(default_factory=set)
    pinned: List[int] = field(default_factory=list)
    commit_wait_seconds: float = 0.0
    abort_reason: Optional[str] = None

    @property
    def active(self) -> bool:
        return self.begun and self.state in (ClientState.RUNNING, ClientState.OBSERVING)


@dataclass
class EngineStats:
    commits: int = 0
    aborts: int = 0
    abort_reasons: Dict[str, int] = field(default_factory=dict)
    persists: int = 0
    persist_failures: int = 0
    last_persist_seconds: float = 0.0
    commit_restarts: int = 0

    def to_dict(self) -> Dict:
        return {
            "commits": self.commits,
            "aborts": self.aborts,
            "abort_reasons": dict(self.abort_reasons),
            "persists": self.persists,
            "persist_failures": self.persist_failures,
            "last_persist_seconds": self.last_persist_seconds,
            "commit_restarts": self.commit_restarts,
        }


class Engine:
    """
    Gemeinsames Service-Objekt: beliebig viele Client-Threads rufen die
    Primitive nebenläufig auf.
    """

    def __init__(
        self,
        device: BlockDevice,
        shadow: ShadowPager,
        index: Index,
        app_config: Optional[AppConfig] = None,
        event_log: Optional[EventLog] = None
    ):
        self.device = device
        self.shadow = shadow
        self.index = index
        self.config = app_config or default_config
        self.event_log = event_log or null_event_log
        self.locks = LockTables(self.config.txn.lock_stripes)
        self.protocol = PersistProtocol(self.config.txn)
        self.validator = KeyValueValidator(self.config.index.max_key, self.config.index.max_value)
        self.stats = EngineStats()
        self.recorder: Optional[Recorder] = None
        self.persister = None

        self._txn_ids = itertools.count(1)
        self._stats_lock = threading.Lock()
        self._record_lock = threading.Lock()

    # ============ Lebenszyklus ============

    @classmethod
    def open(
        cls,
        target: Union[str, Path, BlockDevice, None] = None,
        app_config: Optional[AppConfig] = None,
        event_log: Optional[EventLog] = None
    ) -> "Engine":
        """Formatiert ein frisches Device oder stellt ein bestehendes wieder her"""
        app_config = app_config or default_config
        if event_log is None:
            event_log = EventLog(app_config.log_dir) if app_config.log_dir else null_event_log

        if isinstance(target, BlockDevice):
            device = target
        elif app_config.storage.backend == DeviceBackend.CRASH_SIM and target is None:
            device = CrashSimDevice(
                app_config.storage.device_pages,
                app_config.storage.page_size,
                fail_sync=app_config.storage.fail_sync
            )
        else:
            path = Path(target) if target is not None else app_config.db_path
            if path.exists() and path.stat().st_size > 0:
                device = FileDevice.open_existing(path, app_config.storage.page_size)
                device.fail_sync = app_config.storage.fail_sync
            else:
                device = FileDevice(
                    path,
                    app_config.storage.device_pages,
                    app_config.storage.page_size,
                    fail_sync=app_config.storage.fail_sync
                )

        shadow = ShadowPager.open(device, app_config.shadow, event_log)
        index = Index.open(shadow, app_config.index)
        engine = cls(device, shadow, index, app_config, event_log)
        if app_config.txn.persist_interval:
            engine.start_persister(app_config.txn.persist_interval)
        return engine

    def start_persister(self, interval: float):
        """Startet den Hintergrund-Persister (Verwundbarkeitsfenster = interval)"""
        from app.utils.background_jobs import PeriodicPersister

        self.stop_persister()
        self.persister = PeriodicPersister(self, interval)
        self.persister.start()

    def stop_persister(self):
        if self.persister is not None:
            self.persister.stop()
            self.persister = None

    def close(self):
        """Stoppt den Persister und schliesst das Device (ohne persist)"""
        self.stop_persister()
        self.device.close()

    def __enter__(self) -> "Engine":
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()

    @property
    def epoch(self) -> int:
        """Epoche für Transaktionen (Anzahl Merges)"""
        return self.index.epoch

    @property
    def snapshot_epoch(self) -> int:
        """Epoche des letzten dauerhaften Snapshots"""
        return self.shadow.epoch

    # ============ Hilfsfunktionen ============

    def _record(self, kind: str, txn: Optional[Transaction], **details):
        if self.recorder is not None:
            with self._record_lock:
                self.recorder(kind, txn.id if txn else None, details)

    def _count_abort(self, reason: str):
        with self._stats_lock:
            self.stats.aborts += 1
            self.stats.abort_reasons[reason] = self.stats.abort_reasons.get(reason, 0) + 1

    def _check_active(self, txn: Transaction):
        if not txn.begun:
            raise InvalidTransactionState(f"Transaktion {txn.id} wurde nicht begonnen")
        if txn.state == ClientState.ABORTED:
            raise TransactionAborted(txn.abort_reason or "aborted")
        if not txn.active:
            raise InvalidTransactionState(f"Transaktion {txn.id} ist {txn.state.value}")

    def _check(self, result):
        if not result.valid:
            raise ValueError(result.message)

    @contextmanager
    def _inside(self, txn: Transaction):
        """server_enter ... server_leave um eine Operation"""
        self.protocol.enter()
        txn.state = ClientState.OBSERVING
        try:
            yield
        finally:
            if txn.state == ClientState.OBSERVING:
                txn.state = ClientState.RUNNING
            self.protocol.server_leave()

    def _lock(self, txn: Transaction, table: LockTable, key: LockKey, mode: LockMode):
        if not table.acquire(key, txn.id, mode):
            reason = f"{table.name}_lock"
            self._release(txn, ClientState.ABORTED)
            txn.abort_reason = reason
            self._count_abort(reason)
            self._record("abort", txn, reason=reason)
            raise TransactionAborted(reason, key if isinstance(key, bytes) else None)
        txn.locks.add((table.name, key))

    def _release(self, txn: Transaction, final_state: ClientState):
        for table_name, key in txn.locks:
            table = self.locks.records if table_name == "record" else self.locks.gaps
            table.release(key, txn.id)
        txn.locks.clear()
        for addr in txn.pinned:
            self.index.tree.cache.unpin(addr)
        txn.pinned.clear()
        txn.write_set.clear()
        txn.state = final_state

    def _remember(self, txn: Transaction, key: bytes, value: bytes, location: RecordLocation):
        if location.tag == LocationTag.TREE:
            self.index.tree.cache.pin(location.leaf)
            txn.pinned.append(location.leaf)
        txn.write_set[key] = WriteEntry(value, location)

    # ============ Primitive ============

    def begin(self, txn: Optional[Transaction] = None) -> Transaction:
        """Startet eine Transaktion und merkt sich die aktuelle Epoche"""
        if txn is None:
            txn = Transaction(id=next(self._txn_ids))
        elif txn.begun:
            raise InvalidTransactionState(f"Transaktion {txn.id} wurde bereits begonnen")
        txn.begun = True
        txn.state = ClientState.RUNNING
        txn.begin_epoch = self.index.epoch
        self._record("begin", txn)
        return txn

    def get(self, txn: Transaction, key: bytes) -> Optional[bytes]:
        self._check_active(txn)
        self._check(self.validator.validate_key(key))
        entry = txn.write_set.get(key)
        if entry is not None:
            value = entry.value or None
        else:
            with self._inside(txn):
                self._lock(txn, self.locks.records, key, LockMode.SHARED)
                found = self.index.index_search(key)
            value = found[0] if found and found[0] else None
        self._record("read", txn, key=key, value=value)
        return value

    def getrange(self, txn: Transaction, k1: bytes, k2: bytes) -> List[Tuple[bytes, bytes]]:
        """Alle Records in [k1, k2]; sperrt Records, deren Gaps und den Nachfolger von k2"""
        self._check_active(txn)
        self._check(self.validator.validate_range(k1, k2))
        with self._inside(txn):
            result = self.index.index_range(k1, k2)
            for _ in range(RANGE_LOCK_ATTEMPTS):
                keys = [key for key, _, _ in result.records]
                for key in keys:
                    self._lock(txn, self.locks.records, key, LockMode.SHARED)
                    self._lock(txn, self.locks.gaps, key, LockMode.SHARED)
                self._lock(txn, self.locks.gaps, result.successor, LockMode.SHARED)
                check = self.index.index_range(k1, k2)
                if [key for key, _, _ in check.records] == keys and check.successor == result.successor:
                    result = check
                    break
                result = check
            else:
                self._release(txn, ClientState.ABORTED)
                txn.abort_reason = "range_unstable"
                self._count_abort("range_unstable")
                self._record("abort", txn, reason="range_unstable")
                raise TransactionAborted("range_unstable", k1)

        merged = {key: value for key, value, _ in result.records}
        for key, entry in txn.write_set.items():
            if k1 <= key <= k2:
                merged[key] = entry.value
        items = sorted((key, value) for key, value in merged.items() if value)
        self._record("range", txn, low=k1, high=k2, items=items)
        return items

    def _lock_insert_gap(self, txn: Transaction, key: bytes):
        """Exklusiver Gap-Lock auf den Nachfolger; wiederholt bis der Nachfolger stabil ist"""
        successor = self.index.successor(key)
        for _ in range(RANGE_LOCK_ATTEMPTS):
            self._lock(txn, self.locks.gaps, successor, LockMode.EXCLUSIVE)
            current = self.index.successor(key)
            if current == successor:
                return
            successor = current
        self._release(txn, ClientState.ABORTED)
        txn.abort_reason = "gap_unstable"
        self._count_abort("gap_unstable")
        self._record("abort", txn, reason="gap_unstable")
        raise TransactionAborted("gap_unstable", key)

    def put(self, txn: Transaction, key: bytes, value: bytes):
        self._check_active(txn)
        self._check(self.validator.validate_key(key))
        self._check(self.validator.validate_value(value))
        entry = txn.write_set.get(key)
        if entry is not None:
            entry.value = value
        else:
            with self._inside(txn):
                self._lock(txn, self.locks.records, key, LockMode.EXCLUSIVE)
                found = self.index.index_search(key)
                if found is None:
                    self._lock_insert_gap(txn, key)
                    location = RecordLocation.none()
                else:
                    location = found[1]
                self._remember(txn, key, value, location)
        self._record("write", txn, key=key, value=value)

    def delete(self, txn: Transaction, key: bytes):
        """Put mit Tombstone; für nicht vorhandene Schlüssel nur der Record-Lock"""
        self._check_active(txn)
        self._check(self.validator.validate_key(key))
        entry = txn.write_set.get(key)
        if entry is not None:
            entry.value = b""
            self._record("write", txn, key=key, value=None)
            return
        with self._inside(txn):
            self._lock(txn, self.locks.records, key, LockMode.EXCLUSIVE)
            found = self.index.index_search(key)
            if found is not None and found[0]:
                self._remember(txn, key, b"", found[1])
        if found is not None and found[0]:
            self._record("write", txn, key=key, value=None)

    def commit(self, txn: Transaction):
        """
        Wendet den Write-Set an. Stammen Locations aus einer früheren Epoche,
        wird der Baum neu durchsucht (persist hat die Skip-List gemischt).
        """
        self._check_active(txn)
        inserts = len(txn.write_set)
        updates = sum(1 for e in txn.write_set.values() if e.location.tag != LocationTag.NONE)
        if inserts > self.config.index.skiplist_capacity or updates > self.config.index.overflow_capacity:
            raise SkipListFull(f"Write-Set mit {inserts} Einträgen passt nie in den Index")

        while True:
            self.protocol.enter()
            txn.state = ClientState.OBSERVING
            if self.index.reserve(inserts, updates):
                break
            # Skip-List oder Überlauf-Tabelle voll: persist schafft Platz
            txn.state = ClientState.RUNNING
            self.protocol.server_leave()
            with self._stats_lock:
                self.stats.commit_restarts += 1
            self.persist()

        txn.state = ClientState.COMMITTING
        generation = self.protocol.generation
        try:
            epoch = self.index.epoch
            for key, entry in txn.write_set.items():
                location = entry.location
                if location.tag != LocationTag.NONE and location.epoch != epoch:
                    found = self.index.index_search(key)
                    location = found[1] if found is not None else RecordLocation.none()
                if location.tag == LocationTag.NONE:
                    if entry.value:
                        self.index.skiplist_insert(key, entry.value)
                else:
                    self.index.update_in_place(location, entry.value)
            self._record("commit", txn)
        finally:
            self.index.release(inserts, updates)
            self._release(txn, ClientState.COMMITTED)
            self.protocol.server_leave()

        with self._stats_lock:
            self.stats.commits += 1

        if self.config.txn.group_commit:
            started = time.perf_counter()
            self.protocol.wait_for_persist(generation)
            txn.commit_wait_seconds = time.perf_counter() - started

    def abort(self, txn: Transaction):
        """Gibt Locks und gepinnte Puffer frei, verwirft den Write-Set"""
        if txn.state == ClientState.ABORTED and txn.begun:
            return
        self._check_active(txn)
        self._release(txn, ClientState.ABORTED)
        txn.abort_reason = "user"
        self._count_abort("user")
        self._record("abort", txn, reason="user")

    def persist(self) -> int:
        """Macht alle zuvor committeten Transaktionen dauerhaft, gibt die neue Epoche zurück"""
        return self.protocol.server_persist(self._do_persist)

    def _do_persist(self) -> int:
        started = time.perf_counter()
        self._record("persist_begin", None)
        try:
            merge_stats = self.index.merge(retain_tombstone=self.locks.is_locked)
            pages = self.index.tree_checkpoint()
            epoch = self.shadow.flush()
        except WeakKVError as e:
            with self._stats_lock:
                self.stats.persist_failures += 1
            self.event_log.log("engine", "persist_failed", epoch=self.shadow.epoch, error=str(e))
            raise
        elapsed = time.perf_counter() - started
        with self._stats_lock:
            self.stats.persists += 1
            self.stats.last_persist_seconds = elapsed
        if self.config.debug:
            self.index.check_invariants()
        self._record("persist", None, epoch=epoch)
        self.event_log.log(
            "engine", "persist",
            epoch=epoch, merged_records=merge_stats.records_in, pages_written=pages, elapsed=elapsed
        )
        return epoch

    # ============ Introspektion ============

    def contents(self) -> Dict[bytes, bytes]:
        """Logischer Inhalt (committet, ohne Tombstones)"""
        return self.index.contents()

    def record_count(self) -> int:
        return self.index.record_count()

    def info(self) -> Dict:
        """Kennzahlen für inspect/recover"""
        shadow = self.shadow
        db_bytes = shadow.layout.device_pages * shadow.page_size
        info = {
            **shadow.header_info(),
            "snapshot_epoch": shadow.epoch,
            "tree_height": self.index.tree.height,
            "record_count": self.record_count(),
            "free_pages": shadow.free_count(),
            "mapped_pages": shadow.mapped_count(),
            "page_table_bytes": shadow.page_table_bytes(),
            "mapped_bytes": shadow.mapped_count() * shadow.page_size,
            "database_bytes": db_bytes,
            "image_rewrites": shadow.stats.image_rewrites,
            "deltas_written": shadow.stats.deltas_written,
            "recovery_seconds": shadow.stats.recovery_seconds,
        }
        if self.persister is not None:
            info["persister"] = self.persister.job.to_dict()
        return info
