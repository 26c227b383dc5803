"""
Tests für das Client/Server Persist-Protokoll
"""

import threading
import time

import pytest

from app.config import TxnConfig
from app.core.errors import ServerBusy
from app.core.protocol import PersistProtocol, ServerState


def test_enter_leave_counts():
    protocol = PersistProtocol()
    assert protocol.server_enter()
    assert protocol.n_accessing == 1
    assert protocol.inside == 1
    protocol.server_leave()
    assert protocol.n_accessing == 0


def test_leave_without_enter():
    with pytest.raises(AssertionError):
        PersistProtocol().server_leave()


def test_persist_runs_exclusively_and_reopens():
    protocol = PersistProtocol()
    seen = []

    def work():
        seen.append((protocol.state, protocol.accepting, protocol.server_enter()))
        return 42

    assert protocol.server_persist(work) == 42
    assert seen == [(ServerState.PERSISTING, False, False)]
    assert protocol.accepting
    assert protocol.state == ServerState.ACCEPTING
    assert protocol.generation == 1
    assert protocol.rejected_enters == 1


def test_persist_waits_for_clients_inside():
    protocol = PersistProtocol()
    assert protocol.server_enter()
    started = threading.Event()
    ran = threading.Event()

    def persister():
        started.set()
        protocol.server_persist(ran.set)

    thread = threading.Thread(target=persister)
    thread.start()
    started.wait()
    time.sleep(0.05)
    assert not ran.is_set()
    assert not protocol.accepting
    protocol.server_leave()
    thread.join(timeout=5)
    assert ran.is_set()
    assert protocol.violations == 0


def test_failed_persist_restores_accepting():
    protocol = PersistProtocol()

    def boom():
        raise RuntimeError("kaputt")

    with pytest.raises(RuntimeError):
        protocol.server_persist(boom)
    assert protocol.accepting
    assert protocol.generation == 0
    assert protocol.server_enter()


def test_enter_gives_up_after_retries():
    protocol = PersistProtocol(TxnConfig(enter_retries=3, enter_backoff_base=0.0001, enter_backoff_max=0.0001))
    protocol._accepting = False
    with pytest.raises(ServerBusy):
        protocol.enter()
    assert protocol.rejected_enters == 3
    assert protocol.n_accessing == 0


def test_wait_for_persist():
    protocol = PersistProtocol()
    generation = protocol.generation
    assert not protocol.wait_for_persist(generation, timeout=0.01)
    threading.Timer(0.02, lambda: protocol.server_persist(lambda: None)).start()
    assert protocol.wait_for_persist(generation, timeout=5)


def test_concurrent_clients_never_inside_during_persist():
    protocol = PersistProtocol(TxnConfig(enter_retries=10_000))
    stop = threading.Event()
    overlaps = []

    def client():
        while not stop.is_set():
            protocol.enter()
            if protocol.state == ServerState.PERSISTING:
                overlaps.append(1)
            protocol.server_leave()

    def work():
        time.sleep(0.001)
        if protocol.inside:
            overlaps.append(1)

    clients = [threading.Thread(target=client) for _ in range(4)]
    for thread in clients:
        thread.start()
    for _ in range(30):
        protocol.server_persist(work)
    stop.set()
    for thread in clients:
        thread.join()
    assert overlaps == []
    assert protocol.violations == 0
