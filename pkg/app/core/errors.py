"""
weakkv - Fehlerklassen
"""

from typing import Optional


class WeakKVError(Exception):
    """Basisklasse aller Engine-Fehler"""


# ============ Storage ============

class StorageIOError(WeakKVError):
    """I/O-Fehler des Block-Devices (echt oder simuliert)"""


class PageOutOfRange(WeakKVError):
    """Seitennummer ausserhalb der Device- bzw. logischen Kapazität"""


class DeviceFull(WeakKVError):
    """Keine freie physische Seite mehr, auch nach GC"""


class CorruptDatabase(WeakKVError):
    """Header oder Table-Image nicht lesbar - nicht wiederherstellbar"""


class SimulatedCrash(WeakKVError):
    """Ausgelöst vom Crash-Simulator am geplanten Crash-Punkt"""


# ============ Index ============

class SkipListFull(WeakKVError):
    """Skip-List Arena erschöpft - persist erforderlich"""


class OverflowMapFull(WeakKVError):
    """Überlauf-Tabelle voll - persist erforderlich"""


class StaleLocation(WeakKVError):
    """Record-Location stammt aus einer früheren Epoche"""


class DuplicateKey(WeakKVError):
    """Schlüssel existiert bereits im Index"""


# ============ Transaktionen ============

class TransactionAborted(WeakKVError):
    """
    Transaktion wurde abgebrochen (No-Wait bei Lock-Konflikt).
    Wiederholbar: der Aufrufer kann die Transaktion neu starten.
    """

    retryable = True

    def __init__(self, reason: str, key: Optional[bytes] = None):
        self.reason = reason
        self.key = key
        super().__init__(f"Transaktion abgebrochen ({reason}, key={key!r})")


class InvalidTransactionState(WeakKVError):
    """Operation im aktuellen Client-Zustand nicht erlaubt"""


class ServerBusy(WeakKVError):
    """server_enter nach allen Backoff-Versuchen abgelehnt"""


# ============ Harness ============

class ScheduleError(WeakKVError):
    """Ungültiger Schedule (z.B. Operation auf beendeter Transaktion)"""


class StateSpaceExceeded(WeakKVError):
    """Zustandsraum-Grenze des Protokoll-Explorers überschritten"""
