"""
weakkv - Client/Server Persist-Protokoll

Clients betreten den Server für jede Operation (server_enter) und
verlassen ihn danach (server_leave). persist sperrt neue Eintritte,
wartet bis kein Client mehr im Server ist und führt dann exklusiv
merge + checkpoint + flush aus.

Eintritt: zuerst Zähler erhöhen, dann Flag prüfen. Die umgekehrte
Reihenfolge lässt einen Client im Server, während persist läuft.
"""

import random
import threading
import time
from enum import Enum
from typing import Callable, Optional, TypeVar

from app.config import TxnConfig
from app.core.errors import ServerBusy

T = TypeVar("T")


class ServerState(str, Enum):
    ACCEPTING = "accepting"
    WAITING = "waiting"
    PERSISTING = "persisting"


class ClientState(str, Enum):
    RUNNING = "running"
    OBSERVING = "observing"
    COMMITTING = "committing"
    ABORTED = "aborted"
    COMMITTED = "committed"


class PersistProtocol:
    """Zustand des Servers: accepting-Flag, Zähler, Persist-Mutex"""

    def __init__(self, config: Optional[TxnConfig] = None):
        self.config = config or TxnConfig()
        self._accepting = True
        self._n_accessing = 0
        self._inside = 0
        self._state = ServerState.ACCEPTING
        self._cond = threading.Condition()
        self._persist_mutex = threading.Lock()
        self._generation = 0
        self._rng = random.Random()

        # Verletzungen der Sicherheitseigenschaft (sollte immer 0 bleiben)
        self.violations = 0
        self.rejected_enters = 0

    @property
    def accepting(self) -> bool:
        return self._accepting

    @property
    def n_accessing(self) -> int:
        return self._n_accessing

    @property
    def inside(self) -> int:
        """Clients mit erfolgreichem server_enter, noch ohne server_leave"""
        return self._inside

    @property
    def state(self) -> ServerState:
        return self._state

    @property
    def generation(self) -> int:
        """Anzahl abgeschlossener persists"""
        return self._generation

    def server_enter(self) -> bool:
        with self._cond:
            self._n_accessing += 1
        if not self._accepting:
            with self._cond:
                self._n_accessing -= 1
                self.rejected_enters += 1
                if self._n_accessing == 0:
                    self._cond.notify_all()
            return False
        with self._cond:
            self._inside += 1
        return True

    def enter(self):
        """server_enter mit begrenztem Exponential Backoff und Jitter"""
        for attempt in range(self.config.enter_retries):
            if self.server_enter():
                return
            delay = min(self.config.enter_backoff_base * (2 ** attempt), self.config.enter_backoff_max)
            time.sleep(delay + self._rng.random() * delay)
        raise ServerBusy(f"Server nach {self.config.enter_retries} Versuchen nicht erreichbar")

    def server_leave(self):
        with self._cond:
            if self._n_accessing <= 0 or self._inside <= 0:
                raise AssertionError("server_leave ohne vorheriges server_enter")
            self._inside -= 1
            self._n_accessing -= 1
            if self._n_accessing == 0:
                self._cond.notify_all()

    def server_persist(self, do_persist: Callable[[], T]) -> T:
        """Waiting -> Persisting -> do_persist -> Accepting"""
        with self._persist_mutex:
            self._accepting = False
            self._state = ServerState.WAITING
            try:
                with self._cond:
                    while self._n_accessing != 0:
                        self._cond.wait()
                    self._state = ServerState.PERSISTING
                    if self._inside != 0:
                        self.violations += 1
                result = do_persist()
                with self._cond:
                    self._generation += 1
                return result
            finally:
                with self._cond:
                    self._state = ServerState.ACCEPTING
                    self._accepting = True
                    self._cond.notify_all()

    def wait_for_persist(self, generation: int, timeout: Optional[float] = None) -> bool:
        """Blockiert bis ein persist nach `generation` abgeschlossen ist (Group Commit)"""
        with self._cond:
            return self._cond.wait_for(lambda: self._generation > generation, timeout)
