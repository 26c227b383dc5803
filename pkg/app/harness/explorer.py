"""
weakkv - Protokoll-Explorer
Erschöpfende Tiefensuche über alle Verschränkungen der Einzelschritte
von server_enter / server_leave / server_persist.

Modell (ein Schritt = eine atomare Speicheroperation):
- Client: Zähler erhöhen, Flag lesen, bei gesperrtem Server Zähler
  wieder senken, Operation (Observing), optional Committing, leave
- Persister: Flag löschen, auf Zähler 0 warten, Persisting, Flag setzen

Sicherheitseigenschaft: nie Persisting während ein Client Observing
oder Committing ist.

Die Mutante liest das Flag vor dem Erhöhen des Zählers. Zwischen beiden
Schritten kann der Persister das Flag löschen und bei Zähler 0 beginnen.
"""

import time
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Any, Dict, List, Optional, Tuple

from app.config import HarnessConfig, config
from app.core.errors import StateSpaceExceeded


class Client(IntEnum):
    IDLE = 0
    INCREMENTED = 1   # Zähler erhöht, Flag noch nicht gelesen
    BACKING_OFF = 2   # Flag war gelöscht, Zähler wird gesenkt
    OBSERVING = 3
    COMMITTING = 4
    CHECKED = 5       # nur Mutante: Flag gelesen, Zähler noch nicht erhöht


class Persister(IntEnum):
    IDLE = 0
    WAITING = 1
    PERSISTING = 2


# (accepting, n_accessing, persister, persists, ((client, runden), ...))
ModelState = Tuple[bool, int, int, int, Tuple[Tuple[int, int], ...]]
Step = Tuple[str, str]


@dataclass
class ExplorationResult:
    clients: int
    steps: int
    broken: bool
    passed: bool
    complete: bool
    states: int
    transitions: int
    counterexample: List[Step] = field(default_factory=list)
    elapsed: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "clients": self.clients,
            "steps": self.steps,
            "variant": "broken" if self.broken else "correct",
            "passed": self.passed,
            "complete": self.complete,
            "states": self.states,
            "transitions": self.transitions,
            "counterexample": [f"{actor}: {action}" for actor, action in self.counterexample],
            "elapsed_seconds": round(self.elapsed, 3),
        }


class ProtocolModel:
    """Übergangsrelation des Protokolls für `clients` Clients und einen Persister"""

    def __init__(self, clients: int, broken: bool = False, rounds: int = 2, persists: int = 2):
        if not 1 <= clients <= 3:
            raise ValueError("Explorer unterstützt 1 bis 3 Clients")
        self.clients = clients
        self.broken = broken
        self.rounds = rounds
        self.persists = persists

    def initial(self) -> ModelState:
        return (True, 0, int(Persister.IDLE), 0, tuple((int(Client.IDLE), 0) for _ in range(self.clients)))

    def unsafe(self, state: ModelState) -> bool:
        _, _, persister, _, clients = state
        return persister == Persister.PERSISTING and any(
            pc in (Client.OBSERVING, Client.COMMITTING) for pc, _ in clients
        )

    def successors(self, state: ModelState) -> List[Tuple[Step, ModelState]]:
        accepting, n, persister, persists, clients = state
        result: List[Tuple[Step, ModelState]] = []

        # Persister
        if persister == Persister.IDLE and persists < self.persists:
            result.append((("persister", "accepting := false"),
                           (False, n, int(Persister.WAITING), persists, clients)))
        elif persister == Persister.WAITING and n == 0:
            result.append((("persister", "n_accessing == 0 -> Persisting"),
                           (accepting, n, int(Persister.PERSISTING), persists, clients)))
        elif persister == Persister.PERSISTING:
            result.append((("persister", "accepting := true"),
                           (True, n, int(Persister.IDLE), persists + 1, clients)))

        for i, (pc, rounds) in enumerate(clients):
            actor = f"client{i}"

            def moved(new_pc: int, new_rounds: int = rounds, new_accepting: bool = accepting,
                      new_n: int = n) -> ModelState:
                updated = list(clients)
                updated[i] = (new_pc, new_rounds)
                return (new_accepting, new_n, persister, persists, tuple(updated))

            if pc == Client.IDLE and rounds < self.rounds:
                if self.broken:
                    if accepting:
                        result.append(((actor, "accepting gelesen (true)"), moved(int(Client.CHECKED))))
                else:
                    result.append(((actor, "n_accessing += 1"), moved(int(Client.INCREMENTED), new_n=n + 1)))
            elif pc == Client.CHECKED:
                result.append(((actor, "n_accessing += 1 -> Observing"), moved(int(Client.OBSERVING), new_n=n + 1)))
            elif pc == Client.INCREMENTED:
                if accepting:
                    result.append(((actor, "accepting gelesen (true) -> Observing"), moved(int(Client.OBSERVING))))
                else:
                    result.append(((actor, "accepting gelesen (false)"), moved(int(Client.BACKING_OFF))))
            elif pc == Client.BACKING_OFF:
                result.append(((actor, "n_accessing -= 1"), moved(int(Client.IDLE), new_n=n - 1)))
            elif pc == Client.OBSERVING:
                result.append(((actor, "server_leave"), moved(int(Client.IDLE), rounds + 1, new_n=n - 1)))
                result.append(((actor, "-> Committing"), moved(int(Client.COMMITTING))))
            elif pc == Client.COMMITTING:
                result.append(((actor, "commit, server_leave"), moved(int(Client.IDLE), rounds + 1, new_n=n - 1)))
        return result


def explore_protocol(
    clients: int,
    steps: int,
    broken: bool = False,
    max_states: Optional[int] = None,
    strict: bool = False,
    rounds: Optional[int] = None,
    persists: Optional[int] = None,
    harness: Optional[HarnessConfig] = None
) -> ExplorationResult:
    """
    Tiefensuche bis zur Tiefe `steps`. Ein Zustand wird erneut besucht,
    wenn er mit mehr verbleibender Tiefe erreicht wird. Bei mehr als
    max_states Zuständen endet die Suche mit complete=False (oder mit
    StateSpaceExceeded, wenn strict gesetzt ist).
    Ohne explizite Werte gelten die Grenzen aus der Harness-Konfiguration.
    """
    harness = harness or config.harness
    if max_states is None:
        max_states = harness.explorer_max_states
    model = ProtocolModel(
        clients, broken,
        harness.explorer_rounds if rounds is None else rounds,
        harness.explorer_persists if persists is None else persists
    )
    started = time.perf_counter()
    # Zustand -> grösste verbleibende Tiefe, mit der er besucht wurde
    seen: Dict[ModelState, int] = {}
    transitions = 0
    complete = True
    path: List[Step] = []
    counterexample: Optional[List[Step]] = None

    root = model.initial()
    stack: List[Tuple[ModelState, int, int, Optional[Step]]] = [(root, steps, 0, None)]
    while stack:
        state, remaining, depth, step = stack.pop()
        del path[max(depth - 1, 0):]
        if step is not None:
            path.append(step)
        if model.unsafe(state):
            counterexample = list(path)
            break
        if seen.get(state, -1) >= remaining:
            continue
        seen[state] = remaining
        if len(seen) > max_states:
            if strict:
                raise StateSpaceExceeded(f"Mehr als {max_states} Zustände bei {clients} Clients")
            complete = False
            break
        if remaining == 0:
            continue
        for next_step, next_state in model.successors(state):
            transitions += 1
            stack.append((next_state, remaining - 1, depth + 1, next_step))

    return ExplorationResult(
        clients=clients,
        steps=steps,
        broken=broken,
        passed=counterexample is None,
        complete=complete,
        states=len(seen),
        transitions=transitions,
        counterexample=counterexample or [],
        elapsed=time.perf_counter() - started
    )
