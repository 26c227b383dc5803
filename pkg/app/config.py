"""
weakkv - Konfiguration
Seiten-, Index-, Transaktions-, Benchmark- und Harness-Parameter
"""

import os
from pathlib import Path

# .env Datei laden (überschreibt System-Variablen)
from dotenv import load_dotenv
load_dotenv(Path(__file__).parent.parent / ".env", override=True)
from dataclasses import dataclass, field
from typing import Optional
from enum import Enum

# Basis-Pfade
BASE_DIR = Path(__file__).parent.parent
DATA_DIR = BASE_DIR / "data"
EVENT_LOG_DIR = DATA_DIR / "event_logs"
RESULTS_DIR = DATA_DIR / "results"

# Verzeichnisse erstellen falls nicht vorhanden
for dir_path in [DATA_DIR, EVENT_LOG_DIR, RESULTS_DIR]:
    dir_path.mkdir(parents=True, exist_ok=True)

# Seitengrösse: alle Formatbeschreibungen (FORMAT.md) gehen von 4096 aus
PAGE_SIZE = 4096


def _env_int(name: str, default: int) -> int:
    value = os.getenv(name, "")
    return int(value) if value.strip() else default


def _env_float(name: str, default: float) -> float:
    value = os.getenv(name, "")
    return float(value) if value.strip() else default


class DeviceBackend(Enum):
    """Verfügbare Block-Device Backends"""
    FILE = "file"            # Echte Datenbankdatei mit fsync
    CRASH_SIM = "crash_sim"  # In-Memory, simuliert Umordnung bei Crash


class Workload(Enum):
    """Benchmark-Workloads (YCSB-artig)"""
    READ_OR_WRITE = "rw"
    INSERTION = "insert"
    RANGE_QUERY = "range"
    READ_MODIFY_WRITE = "rmw"


@dataclass
class StorageConfig:
    """Block-Device Konfiguration"""
    backend: DeviceBackend = DeviceBackend.FILE
    page_size: int = PAGE_SIZE

    # Physische Kapazität in Seiten (65536 x 4 KB = 256 MB)
    device_pages: int = _env_int("WEAKKV_DEVICE_PAGES", 65536)

    # Simulierter I/O-Fehler bei sync() (nur für Tests)
    fail_sync: bool = False


@dataclass
class ShadowConfig:
    """Shadow-Paging Konfiguration"""
    # Anzahl logischer Seiten (Grösse der Page-Table)
    logical_capacity: int = _env_int("WEAKKV_LOGICAL_PAGES", 32768)

    # Delta-Region: bei Überlauf wird ein volles Image geschrieben
    delta_pages: int = 1024


@dataclass
class IndexConfig:
    """Index-Konfiguration (Skip-List + B+-Baum)"""
    max_key: int = 1024
    max_value: int = 65536

    # Skip-List Arena (bei voller Arena muss persist laufen)
    skiplist_capacity: int = _env_int("WEAKKV_SKIPLIST_CAPACITY", 1_048_576)
    skiplist_max_level: int = 20

    # Überlauf-Tabelle für In-Place-Updates die nicht mehr ins Blatt passen
    overflow_capacity: int = 4096

    # Werte länger als diese Grenze landen in Overflow-Seitenketten
    inline_value_limit: int = 1024

    # Worker für die Coalescing-Phase des Merges
    merge_workers: int = 4

    # Buffer-Cache Grösse in Bytes (None = unbegrenzt)
    cache_bytes: Optional[int] = None

    # Test-Hooks: feste Knotenkapazität statt Seitengrösse
    leaf_max_records: Optional[int] = None
    internal_max_keys: Optional[int] = None


@dataclass
class TxnConfig:
    """Transaktions-Konfiguration"""
    # Group Commit: commit meldet sich erst nach dem nächsten persist zurück
    group_commit: bool = False

    # server_enter: begrenzter Exponential Backoff
    enter_retries: int = 2000
    enter_backoff_base: float = 0.0005
    enter_backoff_max: float = 0.05

    # Lock-Tabellen: Anzahl Buckets mit eigenem Mutex
    lock_stripes: int = 64

    # Intervall des Hintergrund-Persisters in Sekunden (None = aus)
    persist_interval: Optional[float] = None


@dataclass
class BenchConfig:
    """Benchmark-Konfiguration (Desk-Scale)"""
    records: int = 200_000
    key_size: int = 16
    value_size: int = 100
    threads: int = 4
    read_ratio: float = 0.5

    # Verwundbarkeitsfenster in Sekunden (0 = persist nach jedem commit)
    persist_interval: float = _env_float("WEAKKV_PERSIST_INTERVAL", 5.0)

    duration: float = 10.0
    seed: int = 42
    csv_path: Path = RESULTS_DIR / "bench.csv"


@dataclass
class HarnessConfig:
    """Verifikations-Konfiguration (Protokoll-Explorer)"""
    # Suche endet nach so vielen besuchten Zuständen
    explorer_max_states: int = _env_int("WEAKKV_EXPLORER_MAX_STATES", 2_000_000)

    # Runden pro Client und persists pro Lauf im Modell
    explorer_rounds: int = 2
    explorer_persists: int = 2


@dataclass
class AppConfig:
    """Haupt-Konfiguration"""
    storage: StorageConfig = field(default_factory=StorageConfig)
    shadow: ShadowConfig = field(default_factory=ShadowConfig)
    index: IndexConfig = field(default_factory=IndexConfig)
    txn: TxnConfig = field(default_factory=TxnConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    harness: HarnessConfig = field(default_factory=HarnessConfig)

    # Standard-Datenbankpfad
    db_path: Path = Path(os.getenv("WEAKKV_DB", str(DATA_DIR / "weakkv.db")))

    # Event-Log (None = nur im Speicher)
    log_dir: Optional[Path] = EVENT_LOG_DIR

    # Debug-Modus (zusätzliche Invarianten-Checks)
    debug: bool = os.getenv("DEBUG", "false").lower() == "true"


# Globale Konfiguration
config = AppConfig()
