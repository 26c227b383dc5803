"""
weakkv - File Handlers
Hilfsfunktionen für Datenbankdateien und Ergebnisberichte
"""

import json
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Optional

from app.config import PAGE_SIZE, RESULTS_DIR


def format_file_size(size_bytes: float) -> str:
    """Formatiert Dateigröße menschenlesbar"""
    for unit in ['B', 'KB', 'MB', 'GB']:
        if size_bytes < 1024:
            return f"{size_bytes:.1f} {unit}"
        size_bytes /= 1024
    return f"{size_bytes:.1f} TB"


def database_file_stats(path: Path, page_size: int = PAGE_SIZE) -> Dict[str, Any]:
    """Grösse, belegte Blöcke (sparse) und Änderungszeit einer Datenbankdatei"""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Datenbankdatei nicht gefunden: {path}")
    stat = path.stat()
    allocated = getattr(stat, "st_blocks", 0) * 512 or stat.st_size
    return {
        "path": str(path),
        "size_bytes": stat.st_size,
        "size_human": format_file_size(stat.st_size),
        "allocated_bytes": allocated,
        "allocated_human": format_file_size(allocated),
        "pages": stat.st_size // page_size,
        "modified": datetime.fromtimestamp(stat.st_mtime).isoformat(),
    }


def write_json_report(data: Dict[str, Any], path: Optional[Path] = None, prefix: str = "report") -> Path:
    """Schreibt einen JSON-Bericht (Standard: data/results/<prefix>_<zeit>.json)"""
    if path is None:
        path = RESULTS_DIR / f"{prefix}_{datetime.now().strftime('%Y%m%d_%H%M%S')}.json"
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(data, f, indent=2, ensure_ascii=False, default=str)
    return path


def read_json_report(path: Path) -> Dict[str, Any]:
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)
