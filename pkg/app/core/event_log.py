"""
weakkv - Event-Log
Strukturiertes JSONL-Log für Engine-Ereignisse (flush, persist, recover, ...)
"""

import json
import secrets
import threading
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Any, Dict, List, Optional


@dataclass
class EventLogEntry:
    """Ein Log-Eintrag"""
    id: str
    timestamp: datetime
    component: str  # z.B. "shadow", "engine", "bench"
    action: str     # z.B. "flush", "persist", "recover"
    details: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "id": self.id,
            "timestamp": self.timestamp.isoformat(),
            "component": self.component,
            "action": self.action,
            "details": self.details
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "EventLogEntry":
        return cls(
            id=data["id"],
            timestamp=datetime.fromisoformat(data["timestamp"]),
            component=data.get("component", ""),
            action=data["action"],
            details=data.get("details", {})
        )


class EventLog:
    """
    Schreibt Ereignisse als JSON-Zeilen in täglich rotierte Dateien.
    Ohne log_dir werden Einträge nur im Speicher gehalten (Tests).
    """

    def __init__(self, log_dir: Optional[Path] = None, keep_in_memory: int = 1000):
        self.log_dir = Path(log_dir) if log_dir else None
        if self.log_dir:
            self.log_dir.mkdir(parents=True, exist_ok=True)
        self.keep_in_memory = keep_in_memory
        self.recent: List[EventLogEntry] = []
        self._lock = threading.Lock()

    def _get_log_file(self, date: datetime) -> Path:
        """Gibt Log-Datei für Datum zurück (täglich rotiert)"""
        return self.log_dir / f"events_{date.strftime('%Y-%m-%d')}.jsonl"

    def log(self, component: str, action: str, **details: Any) -> EventLogEntry:
        """Schreibt einen Eintrag"""
        entry = EventLogEntry(
            id=secrets.token_hex(8),
            timestamp=datetime.now(),
            component=component,
            action=action,
            details=details
        )
        with self._lock:
            self.recent.append(entry)
            if len(self.recent) > self.keep_in_memory:
                del self.recent[: len(self.recent) - self.keep_in_memory]
            if self.log_dir:
                with open(self._get_log_file(entry.timestamp), "a", encoding="utf-8") as f:
                    f.write(json.dumps(entry.to_dict(), ensure_ascii=False, default=str) + "\n")
        return entry

    def get_logs(
        self,
        action: Optional[str] = None,
        component: Optional[str] = None,
        days: int = 1,
        limit: int = 100
    ) -> List[EventLogEntry]:
        """Liest Einträge (Datei falls vorhanden, sonst Speicher), neueste zuerst"""
        entries: List[EventLogEntry] = []
        if self.log_dir:
            current = datetime.now() - timedelta(days=days - 1)
            while current.date() <= datetime.now().date():
                log_file = self._get_log_file(current)
                if log_file.exists():
                    try:
                        with open(log_file, "r", encoding="utf-8") as f:
                            for line in f:
                                if line.strip():
                                    entries.append(EventLogEntry.from_dict(json.loads(line)))
                    except Exception as e:
                        print(f"Fehler beim Lesen von {log_file}: {e}")
                current = current + timedelta(days=1)
        else:
            with self._lock:
                entries = list(self.recent)

        if action:
            entries = [e for e in entries if e.action == action]
        if component:
            entries = [e for e in entries if e.component == component]
        entries.sort(key=lambda e: e.timestamp, reverse=True)
        return entries[:limit]


# Stilles Log für Komponenten ohne eigenes Log
null_event_log = EventLog(None, keep_in_memory=0)
