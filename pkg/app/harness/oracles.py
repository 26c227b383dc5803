"""
weakkv - Orakel für Historien

- serial_oracle: seriell ausgeführte Transaktionsprogramme
- check_serializability: committete Transaktionen in Commit-Reihenfolge
  erklären alle gelesenen Werte und den Endzustand
- check_pc_projection: der wiederhergestellte Zustand entspricht genau den
  Transaktionen, die vor dem letzten abgeschlossenen persist committet haben
- check_prefix_preservation: die dauerhafte Menge ist abgeschlossen unter
  Abhängigkeiten (kein Leser ohne seinen Schreiber)
"""

from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from app.harness.history import EventKind, HistoryEvent, ScheduleStep, encode

State = Dict[bytes, bytes]
# (op, key, arg): arg = Wert bei put, Obergrenze bei getrange
ProgramOp = Tuple[str, bytes, Optional[bytes]]


@dataclass
class Verdict:
    property: str
    passed: bool
    message: str = ""
    details: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "property": self.property,
            "passed": self.passed,
            "message": self.message,
            "details": self.details,
        }


@dataclass
class TxnProgram:
    """Operationsfolge einer Transaktion, seriell ausführbar"""
    name: str
    ops: List[ProgramOp] = field(default_factory=list)

    def run(self, state: State) -> List[Tuple[ProgramOp, Any]]:
        """Führt das Programm auf `state` aus und gibt die gelesenen Werte zurück"""
        observed = []
        for op in self.ops:
            kind, key, arg = op
            if kind == "get":
                observed.append((op, state.get(key)))
            elif kind == "getrange":
                observed.append((op, sorted((k, v) for k, v in state.items() if key <= k <= arg)))
            elif kind == "put":
                state[key] = arg
            elif kind == "delete":
                state.pop(key, None)
        return observed


def programs_from_steps(steps: Sequence[ScheduleStep]) -> Dict[str, TxnProgram]:
    programs: Dict[str, TxnProgram] = {}
    for step in steps:
        if step.op not in ("get", "put", "delete", "getrange"):
            continue
        program = programs.setdefault(step.txn, TxnProgram(step.txn))
        program.ops.append((step.op, encode(step.key), encode(step.value)))
    return programs


def programs_from_history(history: Sequence[HistoryEvent]) -> Dict[str, TxnProgram]:
    """Programme mit den tatsächlich ausgeführten Operationen (inkl. Lesewerten)"""
    programs: Dict[str, TxnProgram] = {}
    for event in history:
        if event.txn is None:
            continue
        program = programs.setdefault(event.txn, TxnProgram(event.txn))
        if event.kind == EventKind.READ:
            program.ops.append(("get", event.key, None))
        elif event.kind == EventKind.RANGE:
            program.ops.append(("getrange", event.key, event.high))
        elif event.kind == EventKind.WRITE:
            if event.value is None:
                program.ops.append(("delete", event.key, None))
            else:
                program.ops.append(("put", event.key, event.value))
    return programs


def recorded_reads(history: Sequence[HistoryEvent], txn: str) -> List[Any]:
    reads = []
    for event in history:
        if event.txn != txn:
            continue
        if event.kind == EventKind.READ:
            reads.append(event.value)
        elif event.kind == EventKind.RANGE:
            reads.append(list(event.items))
    return reads


def serial_oracle(
    programs: Mapping[str, TxnProgram],
    order: Iterable[str],
    initial: Optional[State] = None
) -> State:
    """Endzustand bei serieller Ausführung in der gegebenen Reihenfolge"""
    state = dict(initial or {})
    for name in order:
        programs[name].run(state)
    return state


def commit_order(history: Sequence[HistoryEvent], before_seq: Optional[int] = None) -> List[str]:
    return [
        e.txn for e in history
        if e.kind == EventKind.COMMIT and (before_seq is None or e.seq < before_seq)
    ]


def persist_boundaries(history: Sequence[HistoryEvent]) -> List[int]:
    """
    Zulässige Grenzen für den dauerhaften Zustand: das letzte abgeschlossene
    persist (oder der Anfang) und ein danach begonnenes, nicht beendetes persist.
    """
    completed = -1
    in_flight = None
    for event in history:
        if event.kind == EventKind.PERSIST:
            completed = event.seq
            in_flight = None
        elif event.kind == EventKind.PERSIST_BEGIN:
            in_flight = event.seq
    boundaries = [completed]
    if in_flight is not None:
        boundaries.append(in_flight)
    return boundaries


def check_serializability(
    history: Sequence[HistoryEvent],
    final: State,
    initial: Optional[State] = None
) -> Verdict:
    """Replay der committeten Transaktionen in Commit-Reihenfolge"""
    programs = programs_from_history(history)
    order = commit_order(history)
    state = dict(initial or {})
    for name in order:
        observed = [value for _, value in programs[name].run(state)]
        expected = recorded_reads(history, name)
        if observed != expected:
            return Verdict(
                "serializability", False,
                f"{name} las {expected}, seriell wäre {observed}",
                {"txn": name, "order": order}
            )
    if state != final:
        return Verdict(
            "serializability", False,
            "Endzustand weicht von der seriellen Ausführung ab",
            {"order": order, "expected": _show(state), "actual": _show(final)}
        )
    return Verdict("serializability", True, f"{len(order)} Transaktionen in Commit-Reihenfolge")


def check_pc_projection(
    history: Sequence[HistoryEvent],
    recovered: State,
    initial: Optional[State] = None
) -> Verdict:
    """Wiederhergestellter Zustand == Projektion auf die vor persist committeten Transaktionen"""
    programs = programs_from_history(history)
    candidates = []
    for boundary in persist_boundaries(history):
        order = commit_order(history, before_seq=boundary if boundary >= 0 else 0)
        expected = serial_oracle(programs, order, initial)
        if expected == recovered:
            return Verdict(
                "pc_projection", True,
                f"{len(order)} dauerhafte Transaktionen",
                {"durable": order, "boundary": boundary}
            )
        candidates.append({"boundary": boundary, "durable": order, "expected": _show(expected)})
    return Verdict(
        "pc_projection", False,
        "Wiederhergestellter Zustand entspricht keiner persist-Grenze",
        {"candidates": candidates, "actual": _show(recovered)}
    )


@dataclass(frozen=True)
class Dependency:
    """reader greift auf key zu, nachdem writer ihn geschrieben hat"""
    writer: str
    reader: str
    key: bytes
    access_seq: int


def dependencies(history: Sequence[HistoryEvent]) -> List[Dependency]:
    """Abhängigkeiten zwischen committeten Transaktionen (Lesen oder Schreiben nach Schreiben)"""
    committed = set(commit_order(history))
    last_writer: Dict[bytes, List[Tuple[int, str]]] = {}
    found: List[Dependency] = []
    for event in history:
        if event.txn not in committed:
            continue
        if event.kind in (EventKind.READ, EventKind.WRITE):
            accessed = [event.key]
        elif event.kind == EventKind.RANGE:
            accessed = [k for k in last_writer if event.key <= k <= event.high]
        else:
            continue
        for key in accessed:
            for _, writer in last_writer.get(key, ()):
                if writer != event.txn:
                    found.append(Dependency(writer, event.txn, key, event.seq))
        if event.kind == EventKind.WRITE:
            last_writer.setdefault(event.key, []).append((event.seq, event.txn))
    return found


def check_prefix_preservation(
    history: Sequence[HistoryEvent],
    durable: Optional[Sequence[str]] = None
) -> Verdict:
    """
    Jede Operation, die von einer anderen abhängt, folgt auf deren Commit.
    Mit `durable`: die dauerhafte Menge enthält zu jedem Leser seine Schreiber.
    """
    commit_seq = {e.txn: e.seq for e in history if e.kind == EventKind.COMMIT}
    edges = dependencies(history)
    early = [d for d in edges if commit_seq[d.writer] > d.access_seq]
    if early:
        first = early[0]
        return Verdict(
            "prefix_preservation", False,
            f"{first.reader} greift auf {_text(first.key)} zu, bevor {first.writer} committet",
            {"early": [(d.writer, d.reader, _text(d.key)) for d in early]}
        )
    if durable is not None:
        durable_set = set(durable)
        missing = sorted({
            (d.writer, d.reader) for d in edges
            if d.reader in durable_set and d.writer not in durable_set
        })
        if missing:
            return Verdict(
                "prefix_preservation", False,
                f"Abhängigkeit verloren: {missing[0][1]} dauerhaft, {missing[0][0]} nicht",
                {"missing": missing}
            )
    return Verdict("prefix_preservation", True, f"{len(edges)} Abhängigkeiten geprüft")


def _text(value: bytes) -> str:
    return value.decode("utf-8", "replace")


def _show(state: State) -> Dict[str, str]:
    return {_text(k): _text(v) for k, v in sorted(state.items())}
