"""
weakkv - Crash-Suite
Zufällige Schedules mit Crash-Plänen auf zwei Ebenen:
- primitive: Crash zwischen zwei Engine-Operationen
- storage: Crash vor dem n-ten write_page/sync des Devices

Nach dem Crash wird wiederhergestellt und gegen die Orakel geprüft.
Dazu das Konsistenz-Szenario (x < y) mit allen persist-Positionen,
allen Crash-Punkten und allen überlebenden Teilmengen.
"""

import random
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple

from app.config import AppConfig, DeviceBackend, IndexConfig, ShadowConfig, StorageConfig, TxnConfig
from app.core.engine import Engine
from app.core.errors import ServerBusy, TransactionAborted
from app.core.storage import CrashSimDevice, PageId, SubsetChoice
from app.harness.explorer import explore_protocol
from app.harness.history import (
    EventKind,
    HistoryRecorder,
    ScheduleStep,
    load_initial,
    run_schedule,
)
from app.harness.oracles import (
    Verdict,
    check_pc_projection,
    check_prefix_preservation,
    check_serializability,
    persist_boundaries,
    programs_from_steps,
)

# Grenze für die Aufzählung überlebender Teilmengen (2^n Fälle)
MAX_EXHAUSTIVE_PENDING = 12


def harness_config(**overrides) -> AppConfig:
    """Kleine Konfiguration auf dem Crash-Simulator (schnelle Wiederanläufe)"""
    app_config = AppConfig(
        storage=StorageConfig(backend=DeviceBackend.CRASH_SIM, device_pages=512),
        shadow=ShadowConfig(logical_capacity=256, delta_pages=8),
        index=IndexConfig(
            skiplist_capacity=4096,
            overflow_capacity=64,
            merge_workers=1,
            leaf_max_records=3,
            internal_max_keys=3
        ),
        txn=TxnConfig(enter_retries=200),
        log_dir=None
    )
    for name, value in overrides.items():
        setattr(app_config, name, value)
    return app_config


class CrashTrigger(str, Enum):
    END = "end"              # nach dem letzten Schritt
    PRIMITIVE = "primitive"  # vor Schritt `at`
    STORAGE = "storage"      # vor der Device-Operation `at`


@dataclass(frozen=True)
class CrashPlan:
    trigger: CrashTrigger = CrashTrigger.END
    at: int = 0
    seed: int = 0

    def selector(self) -> SubsetChoice:
        return SubsetChoice.random(self.seed)

    def to_dict(self) -> Dict[str, Any]:
        return {"trigger": self.trigger.value, "at": self.at, "seed": self.seed}


@dataclass
class CrashCase:
    seed: int
    steps: List[ScheduleStep]
    initial: Dict[bytes, bytes]
    plan: CrashPlan


@dataclass
class CaseResult:
    case: CrashCase
    verdicts: List[Verdict]
    recovered: Dict[bytes, bytes]
    crash_step: Optional[int] = None

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts)

    def failures(self) -> List[Verdict]:
        return [v for v in self.verdicts if not v.passed]


def fresh_engine(app_config: AppConfig, initial: Dict[bytes, bytes]) -> Engine:
    device = CrashSimDevice(app_config.storage.device_pages, app_config.storage.page_size)
    engine = Engine.open(device, app_config)
    load_initial(engine, initial)
    return engine


def judge(
    history,
    recovered: Dict[bytes, bytes],
    initial: Dict[bytes, bytes],
    before_crash: Optional[Dict[bytes, bytes]] = None
) -> List[Verdict]:
    """Projektion auf dauerhafte Commits, Präfix-Erhalt und (falls kein persist unterbrochen wurde) Serialisierbarkeit"""
    verdicts = [check_pc_projection(history, recovered, initial)]
    pc = verdicts[0]
    if pc.passed:
        verdicts.append(check_prefix_preservation(history, pc.details["durable"]))
    interrupted = len(persist_boundaries(history)) > 1
    if before_crash is not None and not interrupted:
        verdicts.append(check_serializability(history, before_crash, initial))
    return verdicts


def run_case(case: CrashCase, app_config: Optional[AppConfig] = None, threaded: bool = True) -> CaseResult:
    """Führt einen Fall aus: Schedule, Crash nach Plan, Recovery, Orakel"""
    app_config = app_config or harness_config()
    engine = fresh_engine(app_config, case.initial)
    plan = case.plan
    if plan.trigger == CrashTrigger.STORAGE:
        engine.device.arm(plan.at)

    result = run_schedule(
        case.steps,
        engine,
        selector=plan.selector(),
        crash_at_step=plan.at if plan.trigger == CrashTrigger.PRIMITIVE else None,
        threaded=threaded
    )
    before = result.before_crash
    if not result.crashed:
        # Crash am Ende (auch wenn der Storage-Trigger nie erreicht wurde)
        engine.device.disarm()
        before = result.final
        result.engine.device.crash(plan.selector())
        recovered_engine = Engine.open(result.engine.device, app_config)
    else:
        recovered_engine = result.engine
    recovered = recovered_engine.contents()
    return CaseResult(
        case=case,
        verdicts=judge(result.history, recovered, case.initial, before),
        recovered=recovered,
        crash_step=result.crash_step
    )


# ============ Zufällige Schedules ============

def random_schedule(
    rng: random.Random,
    max_txns: int = 6,
    max_ops: int = 4,
    keys: int = 8,
    persist_probability: float = 0.15,
    abort_probability: float = 0.1
) -> List[ScheduleStep]:
    """Verschränkt 1..max_txns Programme mit je 1..max_ops Operationen"""
    key_names = [f"k{i}" for i in range(keys)]
    programs: List[List[ScheduleStep]] = []
    value_counter = 0
    for t in range(rng.randint(1, max_txns)):
        name = f"T{t + 1}"
        ops = []
        for _ in range(rng.randint(1, max_ops)):
            op = rng.choice(("get", "get", "put", "put", "delete", "getrange"))
            key = rng.choice(key_names)
            if op == "put":
                value_counter += 1
                ops.append(ScheduleStep(name, op, key, f"v{value_counter}"))
            elif op == "getrange":
                high = rng.choice(key_names)
                low, high = min(key, high), max(key, high)
                ops.append(ScheduleStep(name, op, low, high))
            else:
                ops.append(ScheduleStep(name, op, key))
        end = "abort" if rng.random() < abort_probability else "commit"
        ops.append(ScheduleStep(name, end))
        programs.append(ops)

    steps: List[ScheduleStep] = []
    cursors = [0] * len(programs)
    while True:
        open_programs = [i for i, ops in enumerate(programs) if cursors[i] < len(ops)]
        if not open_programs:
            break
        if rng.random() < persist_probability:
            steps.append(ScheduleStep("-", "persist"))
        i = rng.choice(open_programs)
        steps.append(programs[i][cursors[i]])
        cursors[i] += 1
    return steps


def random_initial(rng: random.Random, keys: int = 8) -> Dict[bytes, bytes]:
    return {
        f"k{i}".encode(): f"init{i}".encode()
        for i in range(keys) if rng.random() < 0.5
    }


def random_case(seed: int, max_txns: int = 6, max_ops: int = 4, keys: int = 8) -> CrashCase:
    """Deterministisch aus dem Seed: Anfangsdaten, Schedule und Crash-Plan"""
    rng = random.Random(seed)
    initial = random_initial(rng, keys)
    steps = random_schedule(rng, max_txns, max_ops, keys)
    trigger = rng.choice(list(CrashTrigger))
    if trigger == CrashTrigger.PRIMITIVE:
        at = rng.randint(0, len(steps))
    elif trigger == CrashTrigger.STORAGE:
        at = rng.randint(0, 40)
    else:
        at = 0
    return CrashCase(seed, steps, initial, CrashPlan(trigger, at, seed))


@dataclass
class SuiteReport:
    cases: int = 0
    passed: int = 0
    failing_seeds: List[int] = field(default_factory=list)
    failures: Dict[str, int] = field(default_factory=dict)
    triggers: Dict[str, int] = field(default_factory=dict)
    elapsed: float = 0.0

    @property
    def ok(self) -> bool:
        return self.cases == self.passed

    def to_dict(self) -> Dict[str, Any]:
        return {
            "cases": self.cases,
            "passed": self.passed,
            "ok": self.ok,
            "failing_seeds": self.failing_seeds,
            "failures": self.failures,
            "triggers": self.triggers,
            "elapsed_seconds": round(self.elapsed, 3),
        }


def run_suite(
    cases: int,
    seed: int = 0,
    app_config: Optional[AppConfig] = None,
    threaded: bool = True,
    progress: Optional[Callable[[int, int], None]] = None
) -> SuiteReport:
    """Fälle seed .. seed+cases-1; jeder Fall ist für sich reproduzierbar"""
    report = SuiteReport()
    started = time.perf_counter()
    for n in range(cases):
        case = random_case(seed + n)
        result = run_case(case, app_config, threaded)
        report.cases += 1
        trigger = case.plan.trigger.value
        report.triggers[trigger] = report.triggers.get(trigger, 0) + 1
        if result.passed:
            report.passed += 1
        else:
            report.failing_seeds.append(case.seed)
            for verdict in result.failures():
                report.failures[verdict.property] = report.failures.get(verdict.property, 0) + 1
        if progress is not None:
            progress(n + 1, cases)
    report.elapsed = time.perf_counter() - started
    return report


# ============ Konsistenz-Szenario x < y ============

ANOMALY_INITIAL = {b"x": b"0", b"y": b"1"}

ANOMALY_STEPS = [
    ScheduleStep("T1", "get", "x"),
    ScheduleStep("T1", "get", "y"),
    ScheduleStep("T1", "put", "y", "2"),
    ScheduleStep("T1", "commit"),
    ScheduleStep("T2", "get", "x"),
    ScheduleStep("T2", "get", "y"),
    ScheduleStep("T2", "put", "x", "1"),
    ScheduleStep("T2", "commit"),
]

# Zulässige (x, y) nach Recovery: nichts, nur T1, beide
ANOMALY_ALLOWED = {(b"0", b"1"), (b"0", b"2"), (b"1", b"2")}


def anomaly_schedules() -> List[Tuple[Optional[int], List[ScheduleStep]]]:
    """Ohne persist und mit einem persist an jeder Position"""
    schedules: List[Tuple[Optional[int], List[ScheduleStep]]] = [(None, list(ANOMALY_STEPS))]
    for position in range(len(ANOMALY_STEPS) + 1):
        steps = list(ANOMALY_STEPS)
        steps.insert(position, ScheduleStep("-", "persist"))
        schedules.append((position, steps))
    return schedules


def anomaly_programs():
    return programs_from_steps(ANOMALY_STEPS)


def surviving_images(
    durable: Dict[PageId, bytes],
    pending: Sequence[Tuple[PageId, bytes]],
    seed: int = 0
) -> Iterator[Dict[PageId, bytes]]:
    """Alle Teilmengen der offenen Writes (Zufallsauswahl ab MAX_EXHAUSTIVE_PENDING)"""
    count = len(pending)
    if count <= MAX_EXHAUSTIVE_PENDING:
        masks = range(1 << count)
    else:
        rng = random.Random(seed)
        masks = [0, (1 << count) - 1] + [rng.getrandbits(count) for _ in range(1 << MAX_EXHAUSTIVE_PENDING)]
    for mask in masks:
        image = dict(durable)
        for i, (page_id, data) in enumerate(pending):
            if mask >> i & 1:
                image[page_id] = data
        yield image


@dataclass
class AnomalyReport:
    schedules: int = 0
    crash_points: int = 0
    recoveries: int = 0
    outcomes: Dict[str, int] = field(default_factory=dict)
    violations: List[Dict[str, Any]] = field(default_factory=list)
    elapsed: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schedules": self.schedules,
            "crash_points": self.crash_points,
            "recoveries": self.recoveries,
            "outcomes": self.outcomes,
            "violations": self.violations[:20],
            "ok": self.ok,
            "elapsed_seconds": round(self.elapsed, 3),
        }


def _outcome(state: Dict[bytes, bytes]) -> Tuple[Optional[bytes], Optional[bytes]]:
    return state.get(b"x"), state.get(b"y")


def explore_anomaly(app_config: Optional[AppConfig] = None) -> AnomalyReport:
    """
    Für jede persist-Position: jeder Storage-Crash-Punkt nach dem Laden der
    Anfangsdaten, dazu jede Teilmenge der offenen Writes. Der Zustand
    (x, y) = (1, 1) darf nie auftreten; jeder Wiederanlauf muss der Projektion auf dauerhafte Commits entsprechen.
    """
    app_config = app_config or harness_config()
    report = AnomalyReport()
    started = time.perf_counter()

    for position, steps in anomaly_schedules():
        report.schedules += 1

        # Testlauf ohne Crash: Anzahl Device-Operationen des Schedules
        engine = fresh_engine(app_config, ANOMALY_INITIAL)
        ops_before = engine.device.op_count
        run_schedule(steps, engine, threaded=False)
        total_ops = engine.device.op_count - ops_before

        for crash_at in range(total_ops + 1):
            report.crash_points += 1
            engine = fresh_engine(app_config, ANOMALY_INITIAL)
            device: CrashSimDevice = engine.device
            device.arm(crash_at)
            result = run_schedule(steps, engine, threaded=False, recover=False)
            device.disarm()
            durable, pending = device.snapshot(), device.pending_writes()

            for image in surviving_images(durable, pending, seed=crash_at):
                report.recoveries += 1
                survivor = CrashSimDevice.from_image(image, device.page_count, device.page_size)
                recovered = Engine.open(survivor, app_config).contents()
                x, y = _outcome(recovered)
                label = f"({_show(x)},{_show(y)})"
                report.outcomes[label] = report.outcomes.get(label, 0) + 1
                verdict = check_pc_projection(result.history, recovered, ANOMALY_INITIAL)
                if (x, y) not in ANOMALY_ALLOWED or not verdict.passed:
                    report.violations.append({
                        "persist_position": position,
                        "crash_at": crash_at,
                        "outcome": label,
                        "verdict": verdict.to_dict(),
                    })

    report.elapsed = time.perf_counter() - started
    return report


def _show(value: Optional[bytes]) -> str:
    return "⊥" if value is None else value.decode("utf-8")


# ============ Nebenläufige Serialisierbarkeit (ohne Crash) ============

@dataclass
class WorkloadReport:
    committed: int
    aborted: int
    persists: int
    verdict: Verdict

    def to_dict(self) -> Dict[str, Any]:
        return {
            "committed": self.committed,
            "aborted": self.aborted,
            "persists": self.persists,
            "verdict": self.verdict.to_dict(),
        }


def run_concurrent_workload(
    threads: int = 4,
    transactions: int = 1000,
    keys: int = 16,
    seed: int = 0,
    persist_interval: Optional[float] = 0.005,
    app_config: Optional[AppConfig] = None
) -> WorkloadReport:
    """
    Echte Threads mit zufälligen Transaktionen (abgebrochene werden
    wiederholt), dazu optional ein Hintergrund-Persister. Der Endzustand
    muss der seriellen Ausführung in Commit-Reihenfolge entsprechen.
    """
    app_config = app_config or harness_config()
    rng = random.Random(seed)
    initial = random_initial(rng, keys)
    engine = fresh_engine(app_config, initial)
    recorder = HistoryRecorder(record_all=True)
    recorder.attach(engine)
    if persist_interval:
        engine.start_persister(persist_interval)

    key_names = [f"k{i}".encode() for i in range(keys)]
    counter_lock = threading.Lock()
    remaining = [transactions]
    aborted = [0]

    def one_transaction(local: random.Random, tag: str):
        txn = engine.begin()
        try:
            for n in range(local.randint(1, 4)):
                op = local.random()
                key = local.choice(key_names)
                if op < 0.4:
                    engine.get(txn, key)
                elif op < 0.75:
                    engine.put(txn, key, f"{tag}.{n}".encode())
                elif op < 0.85:
                    engine.delete(txn, key)
                else:
                    high = local.choice(key_names)
                    engine.getrange(txn, min(key, high), max(key, high))
            engine.commit(txn)
        except ServerBusy:
            engine.abort(txn)
            raise

    def worker(index: int):
        local = random.Random(seed * 1000 + index)
        serial = 0
        while True:
            with counter_lock:
                if remaining[0] <= 0:
                    return
                remaining[0] -= 1
            serial += 1
            tag = f"w{index}.{serial}"
            while True:
                try:
                    one_transaction(local, tag)
                    break
                except (TransactionAborted, ServerBusy):
                    with counter_lock:
                        aborted[0] += 1
                    time.sleep(local.random() * 0.0005)

    pool = [threading.Thread(target=worker, args=(i,), name=f"client-{i}") for i in range(threads)]
    for thread in pool:
        thread.start()
    for thread in pool:
        thread.join()
    engine.stop_persister()

    history = recorder.data_events()
    verdict = check_serializability(history, engine.contents(), initial)
    committed = sum(1 for e in history if e.kind == EventKind.COMMIT)
    persists = sum(1 for e in history if e.kind == EventKind.PERSIST)
    engine.close()
    return WorkloadReport(committed, aborted[0], persists, verdict)


# ============ Gesamtbericht ============

def run_crash_suite(
    cases: int = 10_000,
    seed: int = 0,
    clients: int = 3,
    depth: int = 12,
    transactions: int = 1000,
    threads: int = 4,
    progress: Optional[Callable[[str], None]] = None
) -> Dict[str, Any]:
    """Alle Eigenschaften nacheinander; Ergebnis als JSON-fähiges Dict"""
    say = progress or (lambda message: None)
    report: Dict[str, Any] = {"seed": seed}

    say(f"Zufällige Crash-Fälle: {cases}")
    suite = run_suite(cases, seed)
    report["pc_projection"] = suite.to_dict()

    say("Konsistenz-Szenario x < y (erschöpfend)")
    report["anomaly"] = explore_anomaly().to_dict()

    say(f"Serialisierbarkeit: {threads} Threads, {transactions} Transaktionen")
    report["serializability"] = run_concurrent_workload(threads, transactions, seed=seed).to_dict()

    say(f"Protokoll-Explorer: {clients} Clients, Tiefe {depth}")
    correct = explore_protocol(clients, depth)
    mutant = explore_protocol(clients, depth, broken=True)
    report["protocol"] = correct.to_dict()
    report["protocol_mutant"] = mutant.to_dict()

    report["ok"] = (
        suite.ok
        and report["anomaly"]["ok"]
        and report["serializability"]["verdict"]["passed"]
        and correct.passed
        and not mutant.passed
    )
    return report
