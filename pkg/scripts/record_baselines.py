"""Run the acceptance suite and archive its report as a regression baseline."""

import sys
import time
from pathlib import Path

# Add parent dir so we can import the package
sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from euclid_qft.acceptance import run_acceptance
from euclid_qft.db import compare_to_baseline, init_db, record_run
from euclid_qft.report import RunReport
from euclid_qft.rng import resolve_seed


def record(output_path: Path, quick: bool, seed: int | None = None) -> bool:
    seed = resolve_seed(seed)
    print(f"[baseline] acceptance suite, seed={seed}, quick={quick}")
    report = RunReport(command="verify-all", config={"quick": quick, "only": []}, results={}, seed=seed)
    started = time.perf_counter()
    run_acceptance(report, quick=quick)
    report.stamp(time.perf_counter() - started)

    print(f"[baseline] archiving into {output_path}")
    conn = init_db(output_path)
    try:
        baseline = compare_to_baseline(conn, report)
        run_id = record_run(conn, report)
    finally:
        conn.close()

    failed = [c.name for c in report.checks if not c.passed]
    print("\n" + "=" * 60)
    print("BASELINE RECORDED")
    print("=" * 60)
    print(f"  Run id:              {run_id}")
    print(f"  Checks:              {len(report.checks)}")
    print(f"  Failed:              {len(failed)}{' (' + ', '.join(failed) + ')' if failed else ''}")
    print(f"  Wall time:           {report.wall_time_s:.1f} s")
    if baseline["baseline_id"] is not None:
        print(f"  Previous baseline:   #{baseline['baseline_id']} ({'identical' if baseline['identical'] else 'differs'})")
    print(f"  Output:              {output_path}")
    return not failed


if __name__ == "__main__":
    args = [a for a in sys.argv[1:] if not a.startswith("--")]
    output = Path(args[0]) if args else Path("runs.db")
    success = record(output, quick="--quick" in sys.argv)
    sys.exit(0 if success else 1)
