"""Embedded transactional store for annotation state.

Pipeline records stay in JSONL; annotation needs atomic status
transitions under concurrent annotators, so tasks, decisions, and
annotators live in a single sqlite file.  Every decision runs in an
IMMEDIATE transaction: the status transition an annotator observes is
the one their decision caused.
"""

from __future__ import annotations

import json
import random
import sqlite3
from contextlib import contextmanager
from datetime import datetime, timezone
from pathlib import Path

from cadforge.bench import cohen_kappa, counts_to_confusion

_SCHEMA = """
CREATE TABLE IF NOT EXISTS annotators (
    id TEXT PRIMARY KEY,
    name TEXT NOT NULL,
    created_at TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS tasks (
    pair_id TEXT PRIMARY KEY,
    record TEXT NOT NULL,
    status TEXT NOT NULL DEFAULT 'open',
    final_verdict INTEGER
);
CREATE TABLE IF NOT EXISTS decisions (
    seq INTEGER PRIMARY KEY AUTOINCREMENT,
    pair_id TEXT NOT NULL REFERENCES tasks(pair_id),
    annotator TEXT NOT NULL REFERENCES annotators(id),
    verdict TEXT NOT NULL CHECK (verdict IN ('pass', 'fail')),
    reason TEXT,
    at TEXT NOT NULL,
    UNIQUE (pair_id, annotator)
);
"""


class UnknownAnnotator(LookupError):
    pass


class UnknownTask(LookupError):
    pass


class DuplicateDecision(RuntimeError):
    pass


class TaskAlreadyResolved(RuntimeError):
    pass


class MissingReason(ValueError):
    pass


class ReviewDb:
    def __init__(self, path: str | Path):
        self.path = str(path)
        with self._connect() as conn:
            conn.executescript(_SCHEMA)

    @contextmanager
    def _connect(self):
        conn = sqlite3.connect(self.path, timeout=30.0)
        conn.row_factory = sqlite3.Row
        try:
            yield conn
            conn.commit()
        except Exception:
            conn.rollback()
            raise
        finally:
            conn.close()

    # -- setup ----------------------------------------------------------

    def register_annotator(self, name: str) -> str:
        with self._connect() as conn:
            conn.execute("BEGIN IMMEDIATE")
            count = conn.execute("SELECT COUNT(*) FROM annotators").fetchone()[0]
            annotator_id = f"ann-{count + 1}"
            conn.execute(
                "INSERT INTO annotators (id, name, created_at) VALUES (?, ?, ?)",
                (annotator_id, name, datetime.now(timezone.utc).isoformat()),
            )
        return annotator_id

    def import_pairs(self, records: list[dict]) -> int:
        """Register DatasetPair records as open tasks; existing ids are kept."""
        imported = 0
        with self._connect() as conn:
            for record in records:
                pair_id = record.get("instruction", {}).get("id")
                if not pair_id:
                    continue
                cursor = conn.execute(
                    "INSERT OR IGNORE INTO tasks (pair_id, record) VALUES (?, ?)",
                    (pair_id, json.dumps(record, sort_keys=True)),
                )
                imported += cursor.rowcount
        return imported

    # -- queries ----------------------------------------------------------

    def _require_annotator(self, conn, annotator_id: str) -> None:
        row = conn.execute("SELECT 1 FROM annotators WHERE id = ?", (annotator_id,)).fetchone()
        if row is None:
            raise UnknownAnnotator(annotator_id)

    def task_view(self, pair_id: str) -> dict:
        with self._connect() as conn:
            return self._task_view(conn, pair_id)

    def _task_view(self, conn, pair_id: str) -> dict:
        row = conn.execute(
            "SELECT pair_id, record, status, final_verdict FROM tasks WHERE pair_id = ?",
            (pair_id,),
        ).fetchone()
        if row is None:
            raise UnknownTask(pair_id)
        n = conn.execute("SELECT COUNT(*) FROM decisions WHERE pair_id = ?", (pair_id,)).fetchone()[0]
        record = json.loads(row["record"])
        return {
            "pair_id": row["pair_id"],
            "instruction": record.get("instruction", {}).get("text", ""),
            "images": record.get("images") or [],
            "status": row["status"],
            "final_verdict": None if row["final_verdict"] is None else bool(row["final_verdict"]),
            "n_decisions": n,
        }

    def next_task(self, annotator_id: str) -> dict | None:
        """An undecided-by-this-annotator task: arbitration cases first,
        then open tasks with one decision, then fresh ones."""
        with self._connect() as conn:
            self._require_annotator(conn, annotator_id)
            row = conn.execute(
                """
                SELECT t.pair_id,
                       (SELECT COUNT(*) FROM decisions d WHERE d.pair_id = t.pair_id) AS n
                FROM tasks t
                WHERE t.status != 'resolved'
                  AND NOT EXISTS (
                      SELECT 1 FROM decisions d
                      WHERE d.pair_id = t.pair_id AND d.annotator = ?
                  )
                ORDER BY (t.status = 'needs_arbitration') DESC, n DESC, t.pair_id ASC
                LIMIT 1
                """,
                (annotator_id,),
            ).fetchone()
            if row is None:
                return None
            return self._task_view(conn, row["pair_id"])

    # -- mutations --------------------------------------------------------

    def record_decision(self, annotator_id: str, pair_id: str, verdict: str, reason: str | None) -> dict:
        if verdict not in ("pass", "fail"):
            raise ValueError(f"verdict must be pass or fail, got {verdict!r}")
        if verdict == "fail" and not (reason and reason.strip()):
            raise MissingReason("a fail decision requires a reason")
        with self._connect() as conn:
            conn.execute("BEGIN IMMEDIATE")
            self._require_annotator(conn, annotator_id)
            task = conn.execute(
                "SELECT status, record FROM tasks WHERE pair_id = ?", (pair_id,)
            ).fetchone()
            if task is None:
                raise UnknownTask(pair_id)
            if task["status"] == "resolved":
                raise TaskAlreadyResolved(pair_id)
            existing = conn.execute(
                "SELECT 1 FROM decisions WHERE pair_id = ? AND annotator = ?",
                (pair_id, annotator_id),
            ).fetchone()
            if existing is not None:
                raise DuplicateDecision(f"{annotator_id} already decided {pair_id}")
            conn.execute(
                "INSERT INTO decisions (pair_id, annotator, verdict, reason, at) VALUES (?, ?, ?, ?, ?)",
                (pair_id, annotator_id, verdict, reason, datetime.now(timezone.utc).isoformat()),
            )
            verdicts = [
                row["verdict"]
                for row in conn.execute(
                    "SELECT verdict FROM decisions WHERE pair_id = ? ORDER BY seq", (pair_id,)
                )
            ]
            status, final = self._transition(verdicts)
            if status == "resolved":
                record = json.loads(task["record"])
                record.setdefault("verdicts", {})["human"] = final
                conn.execute(
                    "UPDATE tasks SET status = ?, final_verdict = ?, record = ? WHERE pair_id = ?",
                    (status, int(final), json.dumps(record, sort_keys=True), pair_id),
                )
            else:
                conn.execute("UPDATE tasks SET status = ? WHERE pair_id = ?", (status, pair_id))
            return self._task_view(conn, pair_id)

    @staticmethod
    def _transition(verdicts: list[str]) -> tuple[str, bool | None]:
        n = len(verdicts)
        if n == 1:
            return "open", None
        if n == 2:
            if verdicts[0] == verdicts[1]:
                return "resolved", verdicts[0] == "pass"
            return "needs_arbitration", None
        passes = sum(1 for v in verdicts if v == "pass")
        return "resolved", passes >= 2  # majority of three

    # -- statistics -------------------------------------------------------

    def agreement(self) -> dict:
        """Percent agreement and kappa over first-round decision pairs,
        plus machine/human kappa over resolved tasks carrying both."""
        with self._connect() as conn:
            resolved_count = conn.execute(
                "SELECT COUNT(*) FROM tasks WHERE status = 'resolved'"
            ).fetchone()[0]
            first_two: list[tuple[str, str]] = []
            for task in conn.execute("SELECT pair_id FROM tasks"):
                verdicts = [
                    row["verdict"]
                    for row in conn.execute(
                        "SELECT verdict FROM decisions WHERE pair_id = ? ORDER BY seq LIMIT 2",
                        (task["pair_id"],),
                    )
                ]
                if len(verdicts) == 2:
                    first_two.append((verdicts[0], verdicts[1]))
            machine_human: list[tuple[bool, bool]] = []
            for row in conn.execute(
                "SELECT record, final_verdict FROM tasks WHERE status = 'resolved'"
            ):
                record = json.loads(row["record"])
                fine = (record.get("verdicts") or {}).get("fine")
                if fine is not None and row["final_verdict"] is not None:
                    machine_human.append((bool(fine), bool(row["final_verdict"])))

        percent = None
        human_kappa = None
        if first_two:
            percent = sum(1 for a, b in first_two if a == b) / len(first_two)
            human_kappa = _kappa_from_pairs(
                [(a == "pass", b == "pass") for a, b in first_two]
            )
        machine_kappa = _kappa_from_pairs(machine_human) if machine_human else None
        return {
            "resolved_tasks": resolved_count,
            "rated_pairs": len(first_two),
            "percent_agreement": percent,
            "human_kappa": human_kappa,
            "machine_human_kappa": machine_kappa,
        }

    def export_curated(self) -> list[dict]:
        """Resolved-pass pairs, in DatasetPair schema with human verdicts set."""
        with self._connect() as conn:
            rows = conn.execute(
                "SELECT record FROM tasks WHERE status = 'resolved' AND final_verdict = 1 "
                "ORDER BY pair_id"
            ).fetchall()
        return [json.loads(row["record"]) for row in rows]

    def qc_sample(self, fraction: float = 0.3, seed: int = 0) -> list[dict]:
        """Read-only random sample of resolved tasks for quality control."""
        if not 0.0 < fraction <= 1.0:
            raise ValueError("fraction must be in (0, 1]")
        with self._connect() as conn:
            ids = [row["pair_id"] for row in conn.execute(
                "SELECT pair_id FROM tasks WHERE status = 'resolved' ORDER BY pair_id"
            )]
            rng = random.Random(seed)
            size = max(1, round(len(ids) * fraction)) if ids else 0
            chosen = sorted(rng.sample(ids, size)) if size else []
            return [self._task_view(conn, pair_id) for pair_id in chosen]


def _kappa_from_pairs(pairs: list[tuple[bool, bool]]) -> float | None:
    """Kappa over (rater_a_pass, rater_b_pass) pairs; None when a single
    verdict class makes chance agreement degenerate."""
    if not pairs:
        return None
    pp = sum(1 for a, b in pairs if a and b)
    pf = sum(1 for a, b in pairs if a and not b)
    fp = sum(1 for a, b in pairs if not a and b)
    ff = sum(1 for a, b in pairs if not a and not b)
    classes = {v for pair in pairs for v in pair}
    if len(classes) < 2:
        return None
    return cohen_kappa(counts_to_confusion((pp, pf, fp, ff)))
