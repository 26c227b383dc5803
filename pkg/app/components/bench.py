"""
weakkv - Benchmark
YCSB-artige Workloads gegen eine Datenbankdatei, Sweep über das
Verwundbarkeitsfenster und Messung der Recovery-Zeit.

Latenz = begin bis Rückkehr von commit (bei Group Commit inklusive
Wartezeit bis zum nächsten persist).
"""

import random
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from app.config import DATA_DIR, AppConfig, Workload, config as default_config
from app.core.engine import Engine
from app.core.errors import ServerBusy, TransactionAborted
from app.core.event_log import EventLog, null_event_log
from app.core.input_validator import default_validator

# Feste Spaltenreihenfolge der CSV-Ausgabe
CSV_COLUMNS = [
    "workload", "threads", "records", "read_ratio", "persist_interval",
    "group_commit", "duration_s", "ops", "throughput", "p50_us", "p99_us",
    "wait_p50_us", "wait_p99_us", "aborts", "persists",
]

# Datensätze pro Ladetransaktion
LOAD_BATCH = 1000

BENCH_DB = DATA_DIR / "bench.db"


@dataclass
class WorkloadSpec:
    workload: Workload = Workload.READ_OR_WRITE
    records: int = 200_000
    key_size: int = 16
    value_size: int = 100
    threads: int = 4
    read_ratio: float = 0.5
    duration: float = 10.0
    # Feste Anzahl Operationen statt Dauer (gesamt über alle Threads)
    ops: Optional[int] = None
    seed: int = 42
    persist_interval: float = 5.0
    group_commit: bool = False

    @classmethod
    def from_config(cls, app_config: AppConfig) -> "WorkloadSpec":
        bench = app_config.bench
        return cls(
            records=bench.records,
            key_size=bench.key_size,
            value_size=bench.value_size,
            threads=bench.threads,
            read_ratio=bench.read_ratio,
            duration=bench.duration,
            seed=bench.seed,
            persist_interval=bench.persist_interval,
            group_commit=app_config.txn.group_commit
        )

    def validate(self):
        result = default_validator.validate_workload(
            self.workload.value, self.records, self.threads, self.read_ratio,
            self.key_size, self.value_size, self.persist_interval
        )
        if not result.valid:
            hint = f" (Vorschlag: {result.suggestion})" if result.suggestion else ""
            raise ValueError(result.message + hint)
        if self.group_commit and self.persist_interval <= 0:
            raise ValueError("Group Commit braucht ein persist-Intervall > 0")
        if self.ops is None and self.duration <= 0:
            raise ValueError("duration muss > 0 sein (oder ops angeben)")

    def key(self, n: int) -> bytes:
        """Dezimal mit führenden Nullen: lexikographisch = numerisch"""
        return str(n).zfill(self.key_size).encode()


@dataclass
class BenchResult:
    workload: str
    threads: int
    records: int
    read_ratio: float
    persist_interval: float
    group_commit: bool
    duration_s: float
    ops: int
    throughput: float
    p50_us: float
    p99_us: float
    wait_p50_us: float
    wait_p99_us: float
    aborts: int
    persists: int
    per_thread: List[int] = field(default_factory=list)

    def to_row(self) -> Dict[str, Any]:
        return {column: getattr(self, column) for column in CSV_COLUMNS}

    def summary(self) -> str:
        mode = "Group Commit" if self.group_commit else "Commit"
        window = "pro Commit" if self.persist_interval == 0 else f"{self.persist_interval}s"
        return (
            f"{self.workload}: {self.ops} Ops in {self.duration_s:.2f}s = {self.throughput:,.0f} Ops/s | "
            f"p50 {self.p50_us:.0f}µs p99 {self.p99_us:.0f}µs | {mode}, Fenster {window} | "
            f"Aborts {self.aborts}, persists {self.persists}"
        )


def append_csv(results: Sequence[BenchResult], path: Path) -> pd.DataFrame:
    """Hängt Zeilen an (Kopfzeile nur bei neuer Datei)"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame([r.to_row() for r in results], columns=CSV_COLUMNS)
    frame.to_csv(path, mode="a", header=not path.exists(), index=False)
    return frame


def load_records(engine: Engine, count: int, key_size: int = 16, value_size: int = 100):
    """Schlüssel 0..count-1 in Batches laden, danach persist"""
    value = b"v" * value_size
    for start in range(0, count, LOAD_BATCH):
        txn = engine.begin()
        for n in range(start, min(start + LOAD_BATCH, count)):
            engine.put(txn, str(n).zfill(key_size).encode(), value)
        engine.commit(txn)
    engine.persist()


def bench_config(spec: WorkloadSpec, app_config: AppConfig) -> AppConfig:
    """Kopie der Konfiguration mit den Transaktions-Parametern des Laufs"""
    txn = replace(app_config.txn, group_commit=spec.group_commit, persist_interval=None)
    return replace(app_config, txn=txn)


def open_bench_engine(
    spec: WorkloadSpec,
    app_config: AppConfig,
    path: Path,
    event_log: EventLog
) -> Engine:
    """Frische Datenbank; ausser beim Insert-Workload mit spec.records vorgeladen"""
    path = Path(path)
    if path.exists():
        path.unlink()
    engine = Engine.open(path, bench_config(spec, app_config), event_log)
    if spec.workload != Workload.INSERTION:
        load_records(engine, spec.records, spec.key_size, spec.value_size)
    return engine


class _Worker:
    """Ein Client-Thread: eine Operation pro Transaktion"""

    def __init__(self, engine: Engine, spec: WorkloadSpec, index: int, per_commit_persist: bool):
        self.engine = engine
        self.spec = spec
        self.rng = random.Random(spec.seed * 1000 + index)
        self.per_commit_persist = per_commit_persist
        self.value = bytes([ord("a") + index % 26]) * spec.value_size
        self.latencies: List[float] = []
        self.waits: List[float] = []
        self.aborts = 0

    def _operation(self, txn):
        spec, engine, rng = self.spec, self.engine, self.rng
        if spec.workload == Workload.READ_OR_WRITE:
            key = spec.key(rng.randrange(spec.records))
            if rng.random() < spec.read_ratio:
                engine.get(txn, key)
            else:
                engine.put(txn, key, self.value)
        elif spec.workload == Workload.INSERTION:
            engine.put(txn, spec.key(rng.randrange(spec.records * 100)), self.value)
        elif spec.workload == Workload.RANGE_QUERY:
            start = rng.randrange(spec.records)
            count = rng.randint(1, 100)
            engine.getrange(txn, spec.key(start), spec.key(min(start + count - 1, spec.records - 1)))
        else:
            key = spec.key(rng.randrange(spec.records))
            engine.get(txn, key)
            engine.put(txn, key, self.value)

    def run_one(self) -> bool:
        started = time.perf_counter()
        txn = self.engine.begin()
        try:
            self._operation(txn)
            self.engine.commit(txn)
        except TransactionAborted:
            self.aborts += 1
            return False
        except ServerBusy:
            self.engine.abort(txn)
            self.aborts += 1
            return False
        if self.per_commit_persist:
            self.engine.persist()
        self.latencies.append(time.perf_counter() - started)
        self.waits.append(txn.commit_wait_seconds)
        return True


def _percentile_us(samples: List[float], q: float) -> float:
    if not samples:
        return 0.0
    return float(np.percentile(np.asarray(samples), q) * 1e6)


def cmd_bench(
    spec: WorkloadSpec,
    app_config: Optional[AppConfig] = None,
    path: Path = BENCH_DB,
    csv_path: Optional[Path] = None,
    event_log: Optional[EventLog] = None
) -> BenchResult:
    """Führt einen Workload aus und hängt das Ergebnis an die CSV-Datei an"""
    spec.validate()
    app_config = app_config or default_config
    event_log = event_log or null_event_log
    engine = open_bench_engine(spec, app_config, path, event_log)
    per_commit = spec.persist_interval == 0
    persists_before = engine.stats.persists

    workers = [_Worker(engine, spec, i, per_commit) for i in range(spec.threads)]
    budget_lock = threading.Lock()
    budget = [spec.ops]
    deadline = [0.0]

    def run(worker: _Worker):
        while True:
            if budget[0] is not None:
                with budget_lock:
                    if budget[0] <= 0:
                        return
                    budget[0] -= 1
            elif time.perf_counter() >= deadline[0]:
                return
            if not worker.run_one() and budget[0] is not None:
                with budget_lock:
                    budget[0] += 1

    if not per_commit:
        engine.start_persister(spec.persist_interval)
    threads = [threading.Thread(target=run, args=(w,), name=f"bench-{i}") for i, w in enumerate(workers)]
    started = time.perf_counter()
    deadline[0] = started + spec.duration
    for thread in threads:
        thread.start()
    for thread in threads:
        thread.join()
    elapsed = time.perf_counter() - started
    engine.stop_persister()
    persists = engine.stats.persists - persists_before
    engine.close()

    latencies = [s for w in workers for s in w.latencies]
    waits = [s for w in workers for s in w.waits]
    ops = len(latencies)
    result = BenchResult(
        workload=spec.workload.value,
        threads=spec.threads,
        records=spec.records,
        read_ratio=spec.read_ratio,
        persist_interval=spec.persist_interval,
        group_commit=spec.group_commit,
        duration_s=round(elapsed, 4),
        ops=ops,
        throughput=round(ops / elapsed, 2) if elapsed > 0 else 0.0,
        p50_us=round(_percentile_us(latencies, 50), 2),
        p99_us=round(_percentile_us(latencies, 99), 2),
        wait_p50_us=round(_percentile_us(waits, 50), 2) if spec.group_commit else 0.0,
        wait_p99_us=round(_percentile_us(waits, 99), 2) if spec.group_commit else 0.0,
        aborts=sum(w.aborts for w in workers),
        persists=persists,
        per_thread=[len(w.latencies) for w in workers]
    )
    event_log.log("bench", "bench_run", **result.to_row())
    if csv_path is not None:
        append_csv([result], csv_path)
    return result


def cmd_sweep_window(
    intervals: Sequence[float],
    spec: Optional[WorkloadSpec] = None,
    app_config: Optional[AppConfig] = None,
    path: Path = BENCH_DB,
    csv_path: Optional[Path] = None,
    event_log: Optional[EventLog] = None,
    progress=None
) -> pd.DataFrame:
    """Reiner Schreib-Workload, eine Zeile pro persist-Intervall"""
    if not intervals:
        raise ValueError("Mindestens ein Intervall angeben")
    base = spec or WorkloadSpec()
    results = []
    for interval in intervals:
        run_spec = replace(base, workload=Workload.READ_OR_WRITE, read_ratio=0.0, persist_interval=interval)
        result = cmd_bench(run_spec, app_config, path, None, event_log)
        results.append(result)
        if progress is not None:
            progress(result)
    if csv_path is not None:
        append_csv(results, csv_path)
    return pd.DataFrame([r.to_row() for r in results], columns=CSV_COLUMNS)


# ============ Recovery-Zeit ============

@dataclass
class RecoveryFit:
    table: pd.DataFrame
    slope: float
    intercept: float
    r_squared: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            "rows": self.table.to_dict(orient="records"),
            "slope_s_per_mb": self.slope,
            "intercept_s": self.intercept,
            "r_squared": self.r_squared,
        }


def linear_fit(x: Sequence[float], y: Sequence[float]):
    """Kleinste Quadrate: (Steigung, Achsenabschnitt, R²)"""
    xs, ys = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    slope, intercept = np.polyfit(xs, ys, 1)
    predicted = slope * xs + intercept
    total = float(np.sum((ys - ys.mean()) ** 2))
    r_squared = 1.0 - float(np.sum((ys - predicted) ** 2)) / total if total > 0 else 1.0
    return float(slope), float(intercept), r_squared


def cmd_recovery_scaling(
    sizes_mb: Sequence[int],
    workdir: Path,
    app_config: Optional[AppConfig] = None,
    fill: float = 0.25,
    repeats: int = 3
) -> RecoveryFit:
    """
    Legt je Grösse eine Datenbank an, füllt etwa `fill` der Seiten mit
    Records und misst die Recovery-Zeit (Minimum aus `repeats` Läufen).
    """
    from app.components.admin import cmd_create, cmd_recover

    app_config = app_config or default_config
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    rows = []
    for size in sizes_mb:
        pages = size * 1024 * 1024 // app_config.storage.page_size
        path = workdir / f"recovery_{size}mb.db"
        if path.exists():
            path.unlink()
        sized = replace(
            app_config,
            storage=replace(app_config.storage, device_pages=pages),
            shadow=replace(app_config.shadow, logical_capacity=pages // 2),
            txn=replace(app_config.txn, persist_interval=None),
            log_dir=None
        )
        # ~30 Records à 116 B pro Blatt
        records = int(pages * fill * 30)
        cmd_create(path, sized, preload=records)
        timings = [cmd_recover(path, sized)["recovery_seconds"] for _ in range(repeats)]
        rows.append({"size_mb": size, "records": records, "recovery_s": min(timings)})
    table = pd.DataFrame(rows, columns=["size_mb", "records", "recovery_s"])
    slope, intercept, r_squared = linear_fit(table["size_mb"], table["recovery_s"])
    return RecoveryFit(table, slope, intercept, r_squared)
