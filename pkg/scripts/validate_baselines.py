"""Validation of an archive of run reports."""

import json
import sqlite3
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from euclid_qft.acceptance import CRITERIA
from euclid_qft.report import SCHEMA_VERSION


def validate(db_path: Path) -> bool:
    """Run validation checks on a run archive."""
    if not db_path.exists():
        print(f"FAIL: Archive not found: {db_path}")
        return False

    conn = sqlite3.connect(str(db_path))
    conn.row_factory = sqlite3.Row
    passed = True

    def check(name: str, condition: bool, detail: str = ""):
        nonlocal passed
        status = "PASS" if condition else "FAIL"
        if not condition:
            passed = False
        msg = f"  [{status}] {name}"
        if detail:
            msg += f" - {detail}"
        print(msg)

    print(f"Validating: {db_path}\n")

    tables = [r[0] for r in conn.execute("SELECT name FROM sqlite_master WHERE type='table'").fetchall()]
    check("Table 'runs' exists", "runs" in tables)
    if "runs" not in tables:
        conn.close()
        print("\nSOME CHECKS FAILED")
        return False

    total = conn.execute("SELECT COUNT(*) FROM runs").fetchone()[0]
    check("At least one run archived", total > 0, f"got {total}")

    versions = {r[0] for r in conn.execute("SELECT DISTINCT schema_version FROM runs").fetchall()}
    check("Schema version current", versions <= {SCHEMA_VERSION}, f"got {sorted(versions)}")

    bad_bodies = 0
    for row in conn.execute("SELECT body FROM runs"):
        try:
            body = json.loads(row["body"])
        except json.JSONDecodeError:
            bad_bodies += 1
            continue
        if body.get("schema_version") != SCHEMA_VERSION or "meta" in body:
            bad_bodies += 1
    check("Bodies are timestamp-free JSON", bad_bodies == 0, f"got {bad_bodies} malformed")

    latest = conn.execute(
        "SELECT id, verdict, body FROM runs WHERE command = 'verify-all' ORDER BY id DESC LIMIT 1"
    ).fetchone()
    check("Acceptance baseline present", latest is not None)
    if latest is not None:
        body = json.loads(latest["body"])
        full = not body["config"].get("only")
        covered = {key.split("_", 1)[0] for key in body["results"]}
        expected = {f"{c.number:02d}" for c in CRITERIA}
        if full:
            check("Baseline covers every criterion", covered == expected, f"missing {sorted(expected - covered)}")
        failed = [c["name"] for c in body["checks"] if not c["passed"]]
        check(f"Baseline #{latest['id']} passes", latest["verdict"] == "pass", ", ".join(failed) or "all checks")

    conn.close()

    print(f"\n{'ALL CHECKS PASSED' if passed else 'SOME CHECKS FAILED'}")
    return passed


if __name__ == "__main__":
    db_path = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("runs.db")
    success = validate(db_path)
    sys.exit(0 if success else 1)
