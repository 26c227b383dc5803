"""
weakkv - Historien und Schedules
Zeichnet Engine-Ereignisse als Historie auf und führt Schedules aus
(ein Thread pro Transaktion, Schritte in vorgegebener Reihenfolge).

Schedule-Format, eine Zeile pro Schritt:

    T1 begin
    T1 get x
    T1 put y 2
    T1 getrange a c
    T1 delete x
    T1 commit
    - persist
    - crash

Leerzeilen und Zeilen mit # werden ignoriert. Der erste Schritt einer
Transaktion beginnt sie implizit.
"""

import queue
import threading
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from app.core.engine import Engine, Transaction
from app.core.errors import ScheduleError, SimulatedCrash, TransactionAborted, WeakKVError
from app.core.storage import CrashSimDevice, SubsetChoice

TXN_OPS = {"begin", "get", "put", "delete", "getrange", "commit", "abort"}
GLOBAL_OPS = {"persist", "crash"}
NO_TXN = "-"


class EventKind(str, Enum):
    BEGIN = "begin"
    READ = "read"
    WRITE = "write"
    RANGE = "range"
    COMMIT = "commit"
    ABORT = "abort"
    PERSIST_BEGIN = "persist_begin"
    PERSIST = "persist"


@dataclass(frozen=True)
class HistoryEvent:
    seq: int
    kind: EventKind
    txn: Optional[str] = None
    key: Optional[bytes] = None
    value: Optional[bytes] = None
    # RANGE: Obergrenze und gelesene Records; PERSIST: Epoche; ABORT: Grund
    high: Optional[bytes] = None
    items: Tuple[Tuple[bytes, bytes], ...] = ()
    epoch: Optional[int] = None
    reason: Optional[str] = None

    def __str__(self) -> str:
        if self.kind == EventKind.READ:
            return f"r_{self.txn}({_text(self.key)}, {_text(self.value)})"
        if self.kind == EventKind.WRITE:
            return f"w_{self.txn}({_text(self.key)}, {_text(self.value)})"
        if self.kind == EventKind.COMMIT:
            return f"c_{self.txn}"
        if self.kind == EventKind.ABORT:
            return f"a_{self.txn}"
        if self.kind == EventKind.RANGE:
            return f"rr_{self.txn}[{_text(self.key)}, {_text(self.high)}]"
        return self.kind.value


def _text(value: Optional[bytes]) -> str:
    if value is None:
        return "⊥"
    try:
        return value.decode("utf-8")
    except UnicodeDecodeError:
        return value.hex()


class HistoryRecorder:
    """Empfängt Engine-Ereignisse und vergibt globale Sequenznummern"""

    def __init__(self, record_all: bool = False):
        self.events: List[HistoryEvent] = []
        self.labels: Dict[int, str] = {}
        # record_all: auch Transaktionen ohne Label aufzeichnen (als T<id>)
        self.record_all = record_all
        self._lock = threading.Lock()

    def attach(self, engine: Engine):
        engine.recorder = self

    def label(self, txn: Transaction, name: str):
        self.labels[txn.id] = name

    def __call__(self, kind: str, txn_id: Optional[int], details: Dict[str, Any]):
        name = None
        if txn_id is not None:
            name = self.labels.get(txn_id)
            if name is None:
                if not self.record_all:
                    return
                name = f"T{txn_id}"
        items = tuple(details.get("items", ()))
        with self._lock:
            self.events.append(HistoryEvent(
                seq=len(self.events),
                kind=EventKind(kind),
                txn=name,
                key=details.get("key", details.get("low")),
                value=details.get("value"),
                high=details.get("high"),
                items=items,
                epoch=details.get("epoch"),
                reason=details.get("reason")
            ))

    def data_events(self) -> List[HistoryEvent]:
        """Historie ohne begin-Ereignisse"""
        return [e for e in self.events if e.kind != EventKind.BEGIN]


# ============ Schedules ============

@dataclass(frozen=True)
class ScheduleStep:
    txn: str
    op: str
    key: Optional[str] = None
    value: Optional[str] = None

    def __str__(self) -> str:
        return " ".join(p for p in (self.txn, self.op, self.key, self.value) if p is not None)


def parse_schedule(text: str) -> List[ScheduleStep]:
    """Liest das Textformat (eine Zeile pro Schritt)"""
    steps = []
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) < 2 or len(parts) > 4:
            raise ScheduleError(f"Zeile {number}: erwartet 'txn op [key [value]]': {raw!r}")
        txn, op = parts[0], parts[1].lower()
        key = parts[2] if len(parts) > 2 else None
        value = parts[3] if len(parts) > 3 else None
        if op in GLOBAL_OPS:
            if txn != NO_TXN or key is not None:
                raise ScheduleError(f"Zeile {number}: {op} wird als '- {op}' geschrieben")
        elif op in TXN_OPS:
            if txn == NO_TXN:
                raise ScheduleError(f"Zeile {number}: {op} braucht eine Transaktion")
            if op in ("get", "delete") and (key is None or value is not None):
                raise ScheduleError(f"Zeile {number}: {op} erwartet genau einen Schlüssel")
            if op in ("put", "getrange") and (key is None or value is None):
                raise ScheduleError(f"Zeile {number}: {op} erwartet Schlüssel und Wert")
            if op in ("begin", "commit", "abort") and key is not None:
                raise ScheduleError(f"Zeile {number}: {op} erwartet keine Argumente")
        else:
            raise ScheduleError(f"Zeile {number}: unbekannte Operation '{op}'")
        steps.append(ScheduleStep(txn, op, key, value))
    return steps


def format_schedule(steps: Sequence[ScheduleStep]) -> str:
    return "\n".join(str(step) for step in steps) + "\n"


def load_schedule(path: Path) -> List[ScheduleStep]:
    return parse_schedule(Path(path).read_text(encoding="utf-8"))


def encode(text: Optional[str]) -> Optional[bytes]:
    return None if text is None else text.encode("utf-8")


@dataclass
class ScheduleResult:
    history: List[HistoryEvent]
    final: Dict[bytes, bytes]
    outcomes: Dict[str, str]
    engine: Engine
    crashed: bool = False
    crash_step: Optional[int] = None
    # Inhalt unmittelbar vor dem Crash (None ohne Crash)
    before_crash: Optional[Dict[bytes, bytes]] = None


class _TxnWorker:
    """Eigener Thread pro Transaktion; führt übergebene Schritte nacheinander aus"""

    def __init__(self, name: str):
        self.name = name
        self._jobs: "queue.Queue" = queue.Queue()
        self._thread = threading.Thread(target=self._loop, name=f"txn-{name}", daemon=True)
        self._thread.start()

    def _loop(self):
        while True:
            job = self._jobs.get()
            if job is None:
                return
            fn, box, done = job
            try:
                box["result"] = fn()
            except BaseException as e:
                box["error"] = e
            done.set()

    def run(self, fn: Callable[[], Any]) -> Any:
        box: Dict[str, Any] = {}
        done = threading.Event()
        self._jobs.put((fn, box, done))
        done.wait()
        if "error" in box:
            raise box["error"]
        return box.get("result")

    def stop(self):
        self._jobs.put(None)
        self._thread.join()


class _InlineWorker:
    def __init__(self, name: str):
        self.name = name

    def run(self, fn: Callable[[], Any]) -> Any:
        return fn()

    def stop(self):
        pass


def load_initial(engine: Engine, initial: Dict[bytes, bytes], persist: bool = True):
    """Lädt Anfangsdaten ausserhalb der aufgezeichneten Historie"""
    if initial:
        txn = engine.begin()
        for key, value in sorted(initial.items()):
            engine.put(txn, key, value)
        engine.commit(txn)
    if persist:
        engine.persist()


def recover_engine(engine: Engine, selector: SubsetChoice) -> Engine:
    """Crash des Simulator-Devices und Wiederanlauf"""
    device = engine.device
    if not isinstance(device, CrashSimDevice):
        raise ScheduleError("Crash braucht das Crash-Simulator Device")
    device.crash(selector)
    return Engine.open(device, engine.config, engine.event_log)


def run_schedule(
    steps: Sequence[ScheduleStep],
    engine: Engine,
    selector: Optional[SubsetChoice] = None,
    crash_at_step: Optional[int] = None,
    threaded: bool = True,
    recover: bool = True
) -> ScheduleResult:
    """
    Führt den Schedule gegen die Engine aus. Ein Lock-Konflikt bricht die
    Transaktion ab, ihre restlichen Schritte werden übersprungen. Ein
    Crash (Schritt 'crash', crash_at_step oder ein vom Device ausgelöster
    SimulatedCrash) beendet den Lauf, danach wird wiederhergestellt.
    Mit recover=False bleibt das abgestürzte Device unverändert, der
    Aufrufer wählt die überlebenden Writes selbst.
    """
    selector = selector or SubsetChoice.none()
    recorder = HistoryRecorder()
    recorder.attach(engine)
    worker_cls = _TxnWorker if threaded else _InlineWorker
    workers: Dict[str, Any] = {}
    txns: Dict[str, Transaction] = {}
    outcomes: Dict[str, str] = {}
    crashed = False
    crash_step = None

    def txn_for(name: str) -> Transaction:
        if name not in txns:
            workers[name] = worker_cls(name)
            txn = workers[name].run(engine.begin)
            recorder.label(txn, name)
            txns[name] = txn
            outcomes[name] = "active"
        return txns[name]

    try:
        for index, step in enumerate(steps):
            if crash_at_step is not None and index == crash_at_step:
                crashed, crash_step = True, index
                break
            if step.op == "crash":
                crashed, crash_step = True, index
                break
            if step.op == "persist":
                try:
                    engine.persist()
                except SimulatedCrash:
                    crashed, crash_step = True, index
                    break
                continue

            state = outcomes.get(step.txn)
            if state in ("committed", "user_aborted"):
                raise ScheduleError(f"Schritt {index}: {step.txn} ist bereits beendet ({step})")
            if state == "aborted":
                continue
            if step.op == "begin":
                if step.txn in txns:
                    raise ScheduleError(f"Schritt {index}: {step.txn} wurde bereits begonnen")
                txn_for(step.txn)
                continue

            txn = txn_for(step.txn)
            action = _action(engine, txn, step)
            try:
                workers[step.txn].run(action)
                if step.op == "commit":
                    outcomes[step.txn] = "committed"
                elif step.op == "abort":
                    outcomes[step.txn] = "user_aborted"
            except TransactionAborted:
                outcomes[step.txn] = "aborted"
            except SimulatedCrash:
                crashed, crash_step = True, index
                break
    finally:
        for worker in workers.values():
            worker.stop()

    if crashed:
        try:
            before = engine.contents()
        except WeakKVError:
            # Merge mitten im persist abgebrochen
            before = None
        if not recover:
            return ScheduleResult(
                history=recorder.data_events(),
                final={},
                outcomes=outcomes,
                engine=engine,
                crashed=True,
                crash_step=crash_step,
                before_crash=before
            )
        recovered = recover_engine(engine, selector)
        return ScheduleResult(
            history=recorder.data_events(),
            final=recovered.contents(),
            outcomes=outcomes,
            engine=recovered,
            crashed=True,
            crash_step=crash_step,
            before_crash=before
        )
    return ScheduleResult(
        history=recorder.data_events(),
        final=engine.contents(),
        outcomes=outcomes,
        engine=engine
    )


def _action(engine: Engine, txn: Transaction, step: ScheduleStep) -> Callable[[], Any]:
    key, value = encode(step.key), encode(step.value)
    actions: Dict[str, Callable[[], Any]] = {
        "get": lambda: engine.get(txn, key),
        "put": lambda: engine.put(txn, key, value),
        "delete": lambda: engine.delete(txn, key),
        "getrange": lambda: engine.getrange(txn, key, value),
        "commit": lambda: engine.commit(txn),
        "abort": lambda: engine.abort(txn),
    }
    return actions[step.op]


def history_text(history: Sequence[HistoryEvent]) -> str:
    """Kompakte Darstellung, z.B. 'r_T1(x, 0) w_T1(y, 2) c_T1'"""
    return " ".join(str(event) for event in history)

