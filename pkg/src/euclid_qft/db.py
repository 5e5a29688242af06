"""SQLite archive of run reports."""

import json
import os
import sqlite3
from contextlib import contextmanager
from pathlib import Path

from euclid_qft.report import SCHEMA_VERSION, RunReport, canonical_body

DB_ENV_VAR = "EUCLID_QFT_DB_PATH"
DEFAULT_DB_PATH = Path.home() / ".euclid_qft" / "runs.db"

SCHEMA_SQL = """
-- One row per archived report
CREATE TABLE IF NOT EXISTS runs (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    command TEXT NOT NULL,
    seed INTEGER NOT NULL,
    schema_version INTEGER NOT NULL,
    tool_version TEXT NOT NULL,
    verdict TEXT NOT NULL,
    body TEXT NOT NULL,
    wall_time_s REAL,
    created_at TEXT DEFAULT (datetime('now'))
);

CREATE INDEX IF NOT EXISTS idx_runs_command ON runs(command);
CREATE INDEX IF NOT EXISTS idx_runs_verdict ON runs(verdict);
"""


def get_db_path() -> Path:
    """Path of the run archive.

    Checks EUCLID_QFT_DB_PATH first, then falls back to ~/.euclid_qft/runs.db.
    """
    env_path = os.environ.get(DB_ENV_VAR)
    if env_path:
        resolved = Path(env_path).expanduser().resolve()
        if not resolved.suffix == ".db":
            raise ValueError(f"{DB_ENV_VAR} must point to a .db file, got: {resolved}")
        return resolved
    return DEFAULT_DB_PATH


def get_connection(db_path: Path | None = None) -> sqlite3.Connection:
    """Create a read-only SQLite connection to the archive."""
    path = db_path or get_db_path()
    if not Path(path).is_file():
        raise FileNotFoundError(f"Run archive not found: {path}")
    conn = sqlite3.connect(f"file:{path}?mode=ro", uri=True)
    conn.row_factory = sqlite3.Row
    return conn


def get_writable_connection(db_path: Path) -> sqlite3.Connection:
    """Create a writable SQLite connection (used when recording runs)."""
    conn = sqlite3.connect(str(db_path))
    conn.row_factory = sqlite3.Row
    conn.execute("PRAGMA journal_mode=WAL")
    return conn


def init_db(db_path: Path | None = None) -> sqlite3.Connection:
    """Open the archive for writing, creating the file and schema if needed."""
    path = Path(db_path or get_db_path())
    path.parent.mkdir(parents=True, exist_ok=True)
    conn = get_writable_connection(path)
    conn.executescript(SCHEMA_SQL)
    conn.commit()
    return conn


@contextmanager
def read_db(db_path: Path | None = None):
    """Context manager for read-only archive access."""
    conn = get_connection(db_path)
    try:
        yield conn
    finally:
        conn.close()


# --- Queries ---


def record_run(conn: sqlite3.Connection, report: RunReport) -> int:
    """Archive ``report``; returns the new row id."""
    cursor = conn.execute(
        """
        INSERT INTO runs (command, seed, schema_version, tool_version, verdict, body, wall_time_s)
        VALUES (?, ?, ?, ?, ?, ?, ?)
        """,
        (report.command, report.seed, SCHEMA_VERSION, report.tool_version, report.verdict,
         canonical_body(report), report.wall_time_s),
    )
    conn.commit()
    return int(cursor.lastrowid)


def _row(row: sqlite3.Row | None, with_body: bool = True) -> dict | None:
    if row is None:
        return None
    out = dict(row)
    if with_body and "body" in out:
        out["body"] = json.loads(out["body"])
    return out


def list_runs(conn: sqlite3.Connection, command: str | None = None, limit: int = 20) -> list[dict]:
    """Most recent runs first, without their bodies."""
    columns = "id, command, seed, schema_version, tool_version, verdict, wall_time_s, created_at"
    if command:
        rows = conn.execute(
            f"SELECT {columns} FROM runs WHERE command = ? ORDER BY id DESC LIMIT ?",
            (command, limit),
        ).fetchall()
    else:
        rows = conn.execute(f"SELECT {columns} FROM runs ORDER BY id DESC LIMIT ?", (limit,)).fetchall()
    return [dict(row) for row in rows]


def get_run(conn: sqlite3.Connection, run_id: int) -> dict | None:
    return _row(conn.execute("SELECT * FROM runs WHERE id = ?", (run_id,)).fetchone())


def latest_run(conn: sqlite3.Connection, command: str, seed: int | None = None) -> dict | None:
    """Newest archived run of ``command`` (optionally with ``seed``)."""
    if seed is None:
        row = conn.execute("SELECT * FROM runs WHERE command = ? ORDER BY id DESC LIMIT 1", (command,)).fetchone()
    else:
        row = conn.execute(
            "SELECT * FROM runs WHERE command = ? AND seed = ? ORDER BY id DESC LIMIT 1",
            (command, seed),
        ).fetchone()
    return _row(row)


def compare_to_baseline(conn: sqlite3.Connection, report: RunReport) -> dict:
    """Whether ``report``'s body equals the newest archived body for the same command and seed."""
    row = conn.execute(
        "SELECT id, body FROM runs WHERE command = ? AND seed = ? ORDER BY id DESC LIMIT 1",
        (report.command, report.seed),
    ).fetchone()
    if row is None:
        return {"baseline_id": None, "identical": None}
    return {"baseline_id": row["id"], "identical": row["body"] == canonical_body(report)}
