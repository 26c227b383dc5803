"""
Volle Crash-Suite: zufällige Crash-Fälle, Konsistenz-Szenario,
nebenläufige Serialisierbarkeit und Protokoll-Explorer.

Run: python scripts/run_crash_suite.py --cases 10000
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from app.harness.crash import run_crash_suite
from app.utils.file_handlers import write_json_report


def main() -> None:
    parser = argparse.ArgumentParser(description="Crash- und Protokoll-Prüfungen mit JSON-Bericht.")
    parser.add_argument("--cases", type=int, default=10_000)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--clients", type=int, default=3)
    parser.add_argument("--depth", type=int, default=12)
    parser.add_argument("--transactions", type=int, default=1000)
    parser.add_argument("--report", type=Path, default=None)
    args = parser.parse_args()

    print("=" * 50)
    print("weakkv Crash-Suite")
    print("=" * 50)
    report = run_crash_suite(
        cases=args.cases,
        seed=args.seed,
        clients=args.clients,
        depth=args.depth,
        transactions=args.transactions,
        progress=lambda message: print(f"▶ {message}")
    )
    path = write_json_report(report, args.report, prefix="crash_suite")

    suite = report["pc_projection"]
    print(f"\n📊 {suite['passed']}/{suite['cases']} Crash-Fälle bestanden ({suite['elapsed_seconds']}s)")
    print(f"📊 Szenario x < y: {report['anomaly']['outcomes']}")
    print(f"📊 Explorer: {report['protocol']['states']} Zustände, "
          f"Mutante {'gefunden' if not report['protocol_mutant']['passed'] else 'NICHT gefunden'}")
    print(f"\n{'✅' if report['ok'] else '❌'} Bericht: {path}")
    sys.exit(0 if report["ok"] else 1)


if __name__ == "__main__":
    main()
