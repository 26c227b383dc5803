"""weakkv - Verifikations-Harness"""

from app.harness.crash import CrashPlan, CrashTrigger, explore_anomaly, run_case, run_suite
from app.harness.explorer import explore_protocol
from app.harness.history import HistoryEvent, parse_schedule, run_schedule
from app.harness.oracles import (
    check_pc_projection,
    check_prefix_preservation,
    check_serializability,
    serial_oracle
)

__all__ = [
    "CrashPlan",
    "CrashTrigger",
    "explore_anomaly",
    "run_case",
    "run_suite",
    "explore_protocol",
    "HistoryEvent",
    "parse_schedule",
    "run_schedule",
    "check_pc_projection",
    "check_prefix_preservation",
    "check_serializability",
    "serial_oracle"
]
