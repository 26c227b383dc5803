"""weakkv - Befehle hinter der Kommandozeile"""

from app.components.admin import cmd_create, cmd_inspect, cmd_recover
from app.components.bench import (
    BenchResult,
    WorkloadSpec,
    cmd_bench,
    cmd_recovery_scaling,
    cmd_sweep_window
)

__all__ = [
    "cmd_create",
    "cmd_inspect",
    "cmd_recover",
    "BenchResult",
    "WorkloadSpec",
    "cmd_bench",
    "cmd_recovery_scaling",
    "cmd_sweep_window"
]
