"""
Tests für das Block-Device (Datei und Crash-Simulator)
"""

import pytest

from app.core.errors import PageOutOfRange, SimulatedCrash, StorageIOError
from app.core.storage import CrashSimDevice, FileDevice, SubsetChoice, zero_page

PAGE = 4096


def page(fill: int) -> bytes:
    return bytes([fill]) * PAGE


def test_unwritten_page_reads_zero():
    device = CrashSimDevice(8)
    assert device.read_page(3) == zero_page(PAGE)


def test_write_then_read_returns_live_content():
    device = CrashSimDevice(8)
    device.write_page(2, page(7))
    assert device.read_page(2) == page(7)


def test_page_out_of_range():
    device = CrashSimDevice(8)
    with pytest.raises(PageOutOfRange):
        device.read_page(8)
    with pytest.raises(PageOutOfRange):
        device.write_page(-1, page(1))


def test_wrong_page_length_rejected():
    device = CrashSimDevice(8)
    with pytest.raises(ValueError):
        device.write_page(0, b"short")


def test_synced_write_survives_crash_with_empty_subset():
    device = CrashSimDevice(8)
    device.write_page(1, page(1))
    device.sync()
    device.crash(SubsetChoice.none())
    assert device.read_page(1) == page(1)


def test_unsynced_write_lost_with_empty_subset():
    device = CrashSimDevice(8)
    device.write_page(1, page(1))
    device.crash(SubsetChoice.none())
    assert device.read_page(1) == zero_page(PAGE)


def test_crash_keeps_synced_prefix_and_any_subset_of_open_epoch():
    # write A; sync; write B; crash -> {A} oder {A, B}
    outcomes = set()
    for selector in (SubsetChoice.none(), SubsetChoice.all()):
        device = CrashSimDevice(8)
        device.write_page(1, page(0xA))
        device.sync()
        device.write_page(2, page(0xB))
        device.crash(selector)
        outcomes.add((device.read_page(1) == page(0xA), device.read_page(2) == page(0xB)))
    assert outcomes == {(True, False), (True, True)}


def test_indices_selector_applies_chosen_writes_in_issue_order():
    device = CrashSimDevice(8)
    device.write_page(3, page(1))
    device.write_page(4, page(2))
    device.write_page(3, page(3))
    assert [p for p, _ in device.pending_writes()] == [3, 4, 3]
    device.crash(SubsetChoice.indices({0, 2}))
    assert device.read_page(3) == page(3)
    assert device.read_page(4) == zero_page(PAGE)


def test_random_selector_is_reproducible():
    first = SubsetChoice.random(seed=11).select(20)
    second = SubsetChoice.random(seed=11).select(20)
    assert first == second
    assert SubsetChoice.random(seed=11, probability=0.0).select(5) == [False] * 5


def test_sync_makes_all_pending_durable():
    device = CrashSimDevice(8)
    device.write_page(0, page(1))
    device.write_page(1, page(2))
    device.sync()
    assert device.pending_writes() == []
    assert device.snapshot() == {0: page(1), 1: page(2)}


def test_armed_crash_prevents_the_operation():
    device = CrashSimDevice(8)
    device.write_page(0, page(1))
    device.arm(after_ops=1)
    device.write_page(1, page(2))
    with pytest.raises(SimulatedCrash):
        device.sync()
    # Device bleibt bis zum crash() gesperrt
    with pytest.raises(SimulatedCrash):
        device.write_page(2, page(3))
    device.crash(SubsetChoice.all())
    assert device.read_page(1) == page(2)
    assert device.read_page(2) == zero_page(PAGE)


def test_arm_rejects_negative():
    with pytest.raises(ValueError):
        CrashSimDevice(4).arm(-1)


def test_barrier_log_records_sync_positions():
    device = CrashSimDevice(8)
    device.write_page(0, page(1))
    device.sync()
    device.write_page(1, page(1))
    device.write_page(2, page(1))
    device.sync()
    assert device.barrier_log == [2, 5]
    assert device.op_count == 5


def test_from_image_reproduces_durable_content():
    device = CrashSimDevice(8)
    device.write_page(5, page(9))
    device.sync()
    device.write_page(6, page(4))
    copy = CrashSimDevice.from_image(device.snapshot(), device.page_count, device.page_size)
    assert copy.read_page(5) == page(9)
    assert copy.read_page(6) == zero_page(PAGE)


def test_crash_sim_fail_sync():
    device = CrashSimDevice(4, fail_sync=True)
    device.write_page(0, page(1))
    with pytest.raises(StorageIOError):
        device.sync()


def test_file_device_roundtrip(tmp_path):
    path = tmp_path / "db.bin"
    device = FileDevice(path, 16)
    device.write_page(3, page(5))
    device.sync()
    device.close()
    assert path.stat().st_size == 16 * PAGE

    reopened = FileDevice.open_existing(path)
    assert reopened.page_count == 16
    assert reopened.read_page(3) == page(5)
    assert reopened.read_page(4) == zero_page(PAGE)
    assert reopened.stats.reads == 2
    reopened.close()


def test_file_device_open_missing(tmp_path):
    with pytest.raises(FileNotFoundError):
        FileDevice.open_existing(tmp_path / "missing.db")


def test_file_device_rejects_odd_size(tmp_path):
    path = tmp_path / "odd.db"
    path.write_bytes(b"x" * 100)
    with pytest.raises(StorageIOError):
        FileDevice.open_existing(path)


def test_file_device_fail_sync(tmp_path):
    device = FileDevice(tmp_path / "f.db", 4, fail_sync=True)
    device.write_page(0, page(1))
    with pytest.raises(StorageIOError):
        device.sync()
    device.close()
