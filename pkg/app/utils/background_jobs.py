"""
weakkv - Hintergrund-Jobs
Periodischer Persister: ruft persist() im festen Intervall auf.
Das Intervall ist das Verwundbarkeitsfenster.
"""

import threading
import time
from dataclasses import asdict, dataclass
from datetime import datetime
from enum import Enum
from typing import Dict, Optional

from app.core.errors import WeakKVError


class JobStatus(str, Enum):
    PENDING = "pending"
    RUNNING = "running"
    FAILED = "failed"
    CANCELLED = "cancelled"


@dataclass
class PersistJob:
    """Zustand des periodischen Persisters"""
    interval: float
    status: JobStatus = JobStatus.PENDING
    runs: int = 0
    failures: int = 0
    last_epoch: Optional[int] = None
    last_error: Optional[str] = None
    started_at: Optional[str] = None
    stopped_at: Optional[str] = None

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["status"] = self.status.value
        return data


class PeriodicPersister:
    """
    Daemon-Thread, der engine.persist() alle `interval` Sekunden ausführt.
    Fehler eines persist beenden den Thread nicht; sie werden im Job
    vermerkt und der nächste Lauf versucht es erneut.
    """

    def __init__(self, engine, interval: float):
        if interval <= 0:
            raise ValueError("Persist-Intervall muss > 0 sein")
        self.engine = engine
        self.interval = interval
        self.job = PersistJob(interval=interval)
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None

    @property
    def running(self) -> bool:
        return self._thread is not None and self._thread.is_alive()

    def start(self):
        if self.running:
            return
        self._stop.clear()
        self.job.status = JobStatus.RUNNING
        self.job.started_at = datetime.now().isoformat()
        self._thread = threading.Thread(target=self._run, name="weakkv-persister", daemon=True)
        self._thread.start()

    def _run(self):
        next_run = time.monotonic() + self.interval
        while not self._stop.wait(max(0.0, next_run - time.monotonic())):
            next_run += self.interval
            try:
                self.job.last_epoch = self.engine.persist()
                self.job.runs += 1
            except WeakKVError as e:
                self.job.failures += 1
                self.job.last_error = str(e)
            # Überholte Termine nicht nachholen
            now = time.monotonic()
            if next_run < now:
                next_run = now

    def stop(self, timeout: Optional[float] = None):
        """Stoppt den Thread (ein laufender persist wird zu Ende geführt)"""
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout)
        if self.job.status == JobStatus.RUNNING:
            self.job.status = JobStatus.CANCELLED if self.job.failures == 0 else JobStatus.FAILED
            self.job.stopped_at = datetime.now().isoformat()
