"""
weakkv - Datenbank-Administration
create / inspect / recover für Datenbankdateien
"""

import time
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, Optional

from app.components.bench import load_records
from app.config import AppConfig, config as default_config
from app.core.engine import Engine
from app.core.event_log import EventLog
from app.core.storage import FileDevice
from app.utils.file_handlers import database_file_stats, format_file_size


def _admin_config(app_config: Optional[AppConfig]) -> AppConfig:
    app_config = app_config or default_config
    # Admin-Befehle laufen ohne Hintergrund-Persister
    return replace(app_config, txn=replace(app_config.txn, persist_interval=None))


def cmd_create(
    path: Path,
    app_config: Optional[AppConfig] = None,
    force: bool = False,
    preload: int = 0,
    event_log: Optional[EventLog] = None
) -> Dict[str, Any]:
    """Legt eine leere Datenbank an (optional mit preload Records)"""
    app_config = _admin_config(app_config)
    path = Path(path)
    if path.exists() and path.stat().st_size > 0:
        if not force:
            raise FileExistsError(f"Datenbank existiert bereits: {path} (--force zum Überschreiben)")
        path.unlink()
    path.parent.mkdir(parents=True, exist_ok=True)

    with Engine.open(path, app_config, event_log) as engine:
        if preload:
            load_records(engine, preload)
        info = engine.info()
    return {**database_file_stats(path, app_config.storage.page_size), **info}


def cmd_inspect(path: Path, app_config: Optional[AppConfig] = None) -> Dict[str, Any]:
    """Header-Epochen, Stable-Table, Baumhöhe, Record-Anzahl, freie Seiten"""
    app_config = _admin_config(app_config)
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Datenbankdatei nicht gefunden: {path}")

    device = FileDevice.open_existing(path, app_config.storage.page_size)
    with Engine.open(device, app_config) as engine:
        info = engine.info()
    info["page_table_ratio"] = info["page_table_bytes"] / info["database_bytes"]
    info["page_table_human"] = format_file_size(info["page_table_bytes"])
    return {**database_file_stats(path, app_config.storage.page_size), **info}


def cmd_recover(
    path: Path,
    app_config: Optional[AppConfig] = None,
    event_log: Optional[EventLog] = None
) -> Dict[str, Any]:
    """Führt die Recovery aus und misst die Wanduhrzeit bis zum offenen Index"""
    app_config = _admin_config(app_config)
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Datenbankdatei nicht gefunden: {path}")

    started = time.perf_counter()
    device = FileDevice.open_existing(path, app_config.storage.page_size)
    engine = Engine.open(device, app_config, event_log)
    elapsed = time.perf_counter() - started
    try:
        stats = engine.shadow.stats
        return {
            "path": str(path),
            "recovery_seconds": elapsed,
            "table_seconds": stats.recovery_seconds,
            "epoch": engine.snapshot_epoch,
            "record_count": engine.record_count(),
            "deltas_replayed": stats.deltas_replayed,
            "deltas_ignored": stats.deltas_ignored,
            "header_fallbacks": stats.header_fallbacks,
            "database_bytes": device.page_count * device.page_size,
        }
    finally:
        engine.close()
