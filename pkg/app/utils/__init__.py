"""weakkv - Utils Module"""

from app.utils.background_jobs import PersistJob, JobStatus, PeriodicPersister
from app.utils.file_handlers import (
    database_file_stats,
    format_file_size,
    read_json_report,
    write_json_report
)

__all__ = [
    "PersistJob",
    "JobStatus",
    "PeriodicPersister",
    "database_file_stats",
    "format_file_size",
    "read_json_report",
    "write_json_report"
]
