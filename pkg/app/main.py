"""
weakkv - Kommandozeile
Transaktionaler Key-Value-Speicher mit persist-Primitive

Befehle: create, inspect, recover, bench, sweep-window, crash-suite
"""

import argparse
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

# Pfad-Setup für relative Imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from app.components.admin import cmd_create, cmd_inspect, cmd_recover
from app.components.bench import BENCH_DB, WorkloadSpec, cmd_bench, cmd_sweep_window
from app.config import AppConfig, Workload, config
from app.core.errors import WeakKVError
from app.core.event_log import EventLog
from app.core.input_validator import default_validator
from app.harness.crash import run_crash_suite as crash_suite
from app.utils.file_handlers import write_json_report


def build_config(args: argparse.Namespace) -> AppConfig:
    """Globale Konfiguration mit den Flags überschrieben"""
    app_config = config
    if getattr(args, "cache_bytes", None) is not None:
        app_config = replace(app_config, index=replace(app_config.index, cache_bytes=args.cache_bytes))
    if getattr(args, "skiplist_capacity", None) is not None:
        app_config = replace(app_config, index=replace(app_config.index, skiplist_capacity=args.skiplist_capacity))
    if getattr(args, "device_pages", None) is not None:
        app_config = replace(app_config, storage=replace(app_config.storage, device_pages=args.device_pages))
    if getattr(args, "group_commit", False):
        app_config = replace(app_config, txn=replace(app_config.txn, group_commit=True))
    return app_config


def _print_report(title: str, report: dict):
    print("=" * 50)
    print(title)
    print("=" * 50)
    width = max(len(k) for k in report)
    for key, value in report.items():
        print(f"  {key.ljust(width)}  {value}")


def _workload_spec(args: argparse.Namespace, app_config: AppConfig):
    spec = WorkloadSpec.from_config(app_config)
    return replace(
        spec,
        workload=Workload(args.workload),
        records=args.records if args.records is not None else spec.records,
        threads=args.threads if args.threads is not None else spec.threads,
        read_ratio=args.read_ratio if args.read_ratio is not None else spec.read_ratio,
        persist_interval=args.persist_interval if args.persist_interval is not None else spec.persist_interval,
        duration=args.duration if args.duration is not None else spec.duration,
        ops=args.ops,
        seed=args.seed if args.seed is not None else spec.seed,
        group_commit=args.group_commit
    )


# ============ Befehle ============

def run_create(args: argparse.Namespace) -> int:
    app_config = build_config(args)
    report = cmd_create(args.db, app_config, force=args.force, preload=args.preload)
    print(f"✅ Datenbank angelegt: {report['path']} ({report['size_human']})")
    return 0


def run_inspect(args: argparse.Namespace) -> int:
    report = cmd_inspect(args.db, build_config(args))
    _print_report(f"Datenbank {report['path']}", report)
    print(f"\n📊 Page-Table: {report['page_table_human']} "
          f"({report['page_table_ratio'] * 100:.3f}% der Datenbankgrösse)")
    return 0


def run_recover(args: argparse.Namespace) -> int:
    report = cmd_recover(args.db, build_config(args))
    print(f"✅ Recovery in {report['recovery_seconds'] * 1000:.1f} ms: "
          f"Epoche {report['epoch']}, {report['record_count']} Records, "
          f"{report['deltas_replayed']} Deltas angewendet")
    return 0


def run_bench(args: argparse.Namespace) -> int:
    app_config = build_config(args)
    spec = _workload_spec(args, app_config)
    csv_path = Path(args.csv) if args.csv else app_config.bench.csv_path
    event_log = EventLog(app_config.log_dir) if app_config.log_dir else None
    print(f"🚀 Benchmark {spec.workload.value}: {spec.records} Records, {spec.threads} Threads")
    result = cmd_bench(spec, app_config, Path(args.db) if args.db else BENCH_DB, csv_path, event_log)
    print(result.summary())
    print(f"📄 CSV: {csv_path}")
    return 0


def run_sweep_window(args: argparse.Namespace) -> int:
    parsed = default_validator.parse_durations(args.intervals)
    if not parsed.valid:
        print(f"❌ {parsed.message} Beispiel: {parsed.suggestion or ''}")
        return 2
    app_config = build_config(args)
    spec = _workload_spec(args, app_config)
    csv_path = Path(args.csv) if args.csv else app_config.bench.csv_path
    print(f"🚀 Sweep über {len(parsed.corrected_value)} Intervalle")
    frame = cmd_sweep_window(
        parsed.corrected_value, spec, app_config,
        path=Path(args.db) if args.db else BENCH_DB,
        csv_path=csv_path,
        progress=lambda r: print(f"   {r.summary()}")
    )
    print(frame[["persist_interval", "throughput", "p50_us", "wait_p50_us"]].to_string(index=False))
    print(f"📄 CSV: {csv_path}")
    return 0


def run_crash_suite(args: argparse.Namespace) -> int:
    report = crash_suite(
        cases=args.cases,
        seed=args.seed,
        clients=args.clients,
        depth=args.depth,
        transactions=args.transactions,
        progress=lambda message: print(f"▶ {message}")
    )
    path = write_json_report(report, Path(args.report) if args.report else None, prefix="crash_suite")
    print(f"{'✅' if report['ok'] else '❌'} Crash-Suite {'bestanden' if report['ok'] else 'fehlgeschlagen'}")
    print(f"📄 Bericht: {path}")
    return 0 if report["ok"] else 1


# ============ Argumente ============

def _add_bench_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--db", help="Benchmark-Datenbank (wird neu angelegt)")
    parser.add_argument("--workload", default=Workload.READ_OR_WRITE.value,
                        choices=[w.value for w in Workload])
    parser.add_argument("--records", type=int)
    parser.add_argument("--threads", type=int)
    parser.add_argument("--read-ratio", type=float)
    parser.add_argument("--persist-interval", type=float,
                        help="Sekunden zwischen persists, 0 = persist nach jedem commit")
    parser.add_argument("--group-commit", action="store_true")
    parser.add_argument("--cache-bytes", type=int)
    parser.add_argument("--skiplist-capacity", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--duration", type=float)
    parser.add_argument("--ops", type=int, help="Feste Anzahl Operationen statt --duration")
    parser.add_argument("--csv", help="CSV-Datei (Zeilen werden angehängt)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="weakkv", description="Transaktionaler Key-Value-Speicher mit persist")
    commands = parser.add_subparsers(dest="command", required=True)

    create = commands.add_parser("create", help="Leere Datenbank anlegen")
    create.add_argument("db", nargs="?", default=str(config.db_path))
    create.add_argument("--force", action="store_true")
    create.add_argument("--preload", type=int, default=0, help="Records vorladen")
    create.add_argument("--device-pages", type=int)
    create.set_defaults(handler=run_create)

    inspect = commands.add_parser("inspect", help="Header, Stable-Table und Baum anzeigen")
    inspect.add_argument("db", nargs="?", default=str(config.db_path))
    inspect.set_defaults(handler=run_inspect)

    recover = commands.add_parser("recover", help="Recovery ausführen und Zeit messen")
    recover.add_argument("db", nargs="?", default=str(config.db_path))
    recover.set_defaults(handler=run_recover)

    bench = commands.add_parser("bench", help="YCSB-artiger Benchmark")
    _add_bench_flags(bench)
    bench.set_defaults(handler=run_bench)

    sweep = commands.add_parser("sweep-window", help="Durchsatz über persist-Intervalle")
    _add_bench_flags(sweep)
    sweep.add_argument("--intervals", default="1ms,100ms,1s,10s")
    sweep.set_defaults(handler=run_sweep_window)

    crash = commands.add_parser("crash-suite", help="Crash- und Protokoll-Prüfungen")
    crash.add_argument("--cases", type=int, default=10_000)
    crash.add_argument("--seed", type=int, default=0)
    crash.add_argument("--clients", type=int, default=3)
    crash.add_argument("--depth", type=int, default=12)
    crash.add_argument("--transactions", type=int, default=1000)
    crash.add_argument("--report", help="JSON-Bericht (Standard: data/results/)")
    crash.set_defaults(handler=run_crash_suite)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except (ValueError, FileExistsError, FileNotFoundError) as e:
        print(f"❌ {e}")
        return 2
    except WeakKVError as e:
        print(f"❌ {type(e).__name__}: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
