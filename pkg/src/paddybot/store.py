"""Persistence: users, chat events, inference jobs with timing, feedback.

A single-node embedded SQLite store in WAL mode. One connection guarded by
a lock serializes writes (and job state transitions in particular); reads
see committed snapshots. Everything acknowledged here survives a process
restart.
"""

from __future__ import annotations

import json
import sqlite3
import statistics
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from . import metrics
from .domain import ImageRef

JOB_STATUSES = ("queued", "running", "done", "failed", "skipped_no_reply")
_FORWARD = {
    "queued": {"running", "failed"},
    "running": {"done", "failed"},
    "done": {"skipped_no_reply"},
    "failed": set(),
    "skipped_no_reply": set(),
}
VERDICTS = ("wrong_class", "not_disease", "confirm")
ROLES = ("farmer", "specialist", "admin")


class StoreError(Exception):
    pass


class UnknownJob(StoreError):
    pass


class IllegalTransition(StoreError):
    pass


class DuplicateFeedback(StoreError):
    pass


def now_ms() -> int:
    return int(time.time() * 1000)


@dataclass(frozen=True)
class UserRecord:
    user_id: str
    role: str = "farmer"
    display_name: str = ""


@dataclass(frozen=True)
class FeedbackRecord:
    feedback_id: str
    job_id: str
    specialist_id: str
    verdict: str
    corrected_class: str | None
    free_text: str
    ts_ms: int


@dataclass(frozen=True)
class JobRecord:
    job_id: str
    ref: int
    user_id: str
    group_id: str | None
    message_id: str | None
    reply_token: str | None
    status: str
    created_ms: int
    image: ImageRef | None = None
    start_ms: int | None = None
    end_ms: int | None = None
    duration_ms: float | None = None
    prediction: dict | None = None
    replied_classes: tuple[tuple[str, float], ...] = ()
    reply_message_ids: tuple[str, ...] = ()
    annotation_token: str | None = None
    failure_reason: str | None = None

    @property
    def short_ref(self) -> str:
        return f"J{self.ref}"

    @property
    def predicted_class_names(self) -> frozenset[str]:
        return frozenset(name for name, _ in self.replied_classes)


@dataclass(frozen=True)
class LatencySummary:
    count: int
    min_ms: float | None = None
    median_ms: float | None = None
    p95_ms: float | None = None
    max_ms: float | None = None


@dataclass(frozen=True)
class DeploymentAtp:
    """Chat-log performance report plus what was left out and why."""

    report: metrics.ATPReport
    sample_count: int
    excluded: dict[str, int] = field(default_factory=dict)


_SCHEMA = """
CREATE TABLE IF NOT EXISTS users (
    user_id TEXT PRIMARY KEY,
    role TEXT NOT NULL DEFAULT 'farmer',
    display_name TEXT NOT NULL DEFAULT ''
);
CREATE TABLE IF NOT EXISTS events (
    message_id TEXT PRIMARY KEY,
    event_type TEXT NOT NULL,
    message_type TEXT,
    user_id TEXT,
    group_id TEXT,
    reply_token TEXT,
    ts_ms INTEGER NOT NULL,
    received_ms INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS jobs (
    ref INTEGER PRIMARY KEY AUTOINCREMENT,
    job_id TEXT UNIQUE NOT NULL,
    message_id TEXT UNIQUE,
    user_id TEXT NOT NULL,
    group_id TEXT,
    reply_token TEXT,
    status TEXT NOT NULL,
    created_ms INTEGER NOT NULL,
    image_id TEXT,
    content_hash TEXT,
    width INTEGER,
    height INTEGER,
    storage_path TEXT,
    start_ms INTEGER,
    end_ms INTEGER,
    duration_ms REAL,
    prediction TEXT,
    replied_classes TEXT,
    reply_message_ids TEXT,
    annotation_token TEXT,
    failure_reason TEXT
);
CREATE TABLE IF NOT EXISTS feedback (
    feedback_id TEXT PRIMARY KEY,
    job_id TEXT NOT NULL,
    specialist_id TEXT NOT NULL,
    verdict TEXT NOT NULL,
    corrected_class TEXT,
    free_text TEXT NOT NULL DEFAULT '',
    ts_ms INTEGER NOT NULL,
    UNIQUE (job_id, specialist_id, verdict)
);
CREATE INDEX IF NOT EXISTS idx_jobs_created ON jobs (created_ms);
CREATE INDEX IF NOT EXISTS idx_feedback_job ON feedback (job_id);
"""


def _row_to_job(row: sqlite3.Row) -> JobRecord:
    image = None
    if row["image_id"]:
        image = ImageRef(
            id=row["image_id"],
            content_hash=row["content_hash"],
            width=row["width"],
            height=row["height"],
            storage_path=row["storage_path"] or "",
        )
    return JobRecord(
        job_id=row["job_id"],
        ref=row["ref"],
        user_id=row["user_id"],
        group_id=row["group_id"],
        message_id=row["message_id"],
        reply_token=row["reply_token"],
        status=row["status"],
        created_ms=row["created_ms"],
        image=image,
        start_ms=row["start_ms"],
        end_ms=row["end_ms"],
        duration_ms=row["duration_ms"],
        prediction=json.loads(row["prediction"]) if row["prediction"] else None,
        replied_classes=tuple(
            (str(name), float(conf))
            for name, conf in json.loads(row["replied_classes"] or "[]")
        ),
        reply_message_ids=tuple(json.loads(row["reply_message_ids"] or "[]")),
        annotation_token=row["annotation_token"],
        failure_reason=row["failure_reason"],
    )


class Store:
    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.RLock()
        self._conn = sqlite3.connect(self.path, check_same_thread=False)
        self._conn.row_factory = sqlite3.Row
        self._conn.execute("PRAGMA journal_mode=WAL")
        self._conn.execute("PRAGMA foreign_keys=ON")
        with self._conn:
            self._conn.executescript(_SCHEMA)

    def close(self) -> None:
        with self._lock:
            self._conn.close()

    def __enter__(self) -> "Store":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- users ------------------------------------------------------------

    def upsert_user(
        self, user_id: str, role: str | None = None, display_name: str | None = None
    ) -> UserRecord:
        """Create the user if unseen; update only the fields given."""
        if role is not None and role not in ROLES:
            raise StoreError(f"role must be one of {ROLES}, got {role!r}")
        with self._lock, self._conn:
            self._conn.execute(
                "INSERT OR IGNORE INTO users (user_id, role, display_name) VALUES (?, ?, ?)",
                (user_id, role or "farmer", display_name or ""),
            )
            if role is not None:
                self._conn.execute("UPDATE users SET role = ? WHERE user_id = ?", (role, user_id))
            if display_name is not None:
                self._conn.execute(
                    "UPDATE users SET display_name = ? WHERE user_id = ?",
                    (display_name, user_id),
                )
        return self.get_user(user_id)

    def get_user(self, user_id: str) -> UserRecord | None:
        with self._lock:
            row = self._conn.execute(
                "SELECT * FROM users WHERE user_id = ?", (user_id,)
            ).fetchone()
        if row is None:
            return None
        return UserRecord(
            user_id=row["user_id"], role=row["role"], display_name=row["display_name"]
        )

    # -- events -----------------------------------------------------------

    def append_event(
        self,
        message_id: str,
        event_type: str,
        message_type: str | None = None,
        user_id: str | None = None,
        group_id: str | None = None,
        reply_token: str | None = None,
        ts_ms: int | None = None,
    ) -> bool:
        """Record an inbound event. Returns False for a redelivery of an
        already-seen message id, which callers must treat as a no-op."""
        with self._lock, self._conn:
            cursor = self._conn.execute(
                "INSERT OR IGNORE INTO events "
                "(message_id, event_type, message_type, user_id, group_id, reply_token,"
                " ts_ms, received_ms) VALUES (?, ?, ?, ?, ?, ?, ?, ?)",
                (
                    message_id,
                    event_type,
                    message_type,
                    user_id,
                    group_id,
                    reply_token,
                    ts_ms if ts_ms is not None else now_ms(),
                    now_ms(),
                ),
            )
        return cursor.rowcount == 1

    def prune_events(self, older_than_ms: int) -> int:
        """Drop dedupe records older than the retention window."""
        with self._lock, self._conn:
            cursor = self._conn.execute(
                "DELETE FROM events WHERE received_ms < ?", (older_than_ms,)
            )
        return cursor.rowcount

    # -- jobs ---------------------------------------------------------------

    def create_job(
        self,
        user_id: str,
        group_id: str | None = None,
        message_id: str | None = None,
        reply_token: str | None = None,
    ) -> JobRecord:
        job_id = uuid.uuid4().hex
        with self._lock, self._conn:
            self._conn.execute(
                "INSERT INTO jobs (job_id, message_id, user_id, group_id, reply_token,"
                " status, created_ms) VALUES (?, ?, ?, ?, ?, 'queued', ?)",
                (job_id, message_id, user_id, group_id, reply_token, now_ms()),
            )
        return self.get_job(job_id)

    def get_job(self, job_id: str) -> JobRecord:
        with self._lock:
            row = self._conn.execute(
                "SELECT * FROM jobs WHERE job_id = ?", (job_id,)
            ).fetchone()
        if row is None:
            raise UnknownJob(f"no job {job_id!r}")
        return _row_to_job(row)

    def get_job_by_ref(self, ref: int) -> JobRecord:
        with self._lock:
            row = self._conn.execute("SELECT * FROM jobs WHERE ref = ?", (ref,)).fetchone()
        if row is None:
            raise UnknownJob(f"no job with ref {ref}")
        return _row_to_job(row)

    def find_job_by_message(self, message_id: str) -> JobRecord | None:
        with self._lock:
            row = self._conn.execute(
                "SELECT * FROM jobs WHERE message_id = ?", (message_id,)
            ).fetchone()
        return _row_to_job(row) if row else None

    def attach_image(self, job_id: str, image: ImageRef) -> JobRecord:
        with self._lock, self._conn:
            cursor = self._conn.execute(
                "UPDATE jobs SET image_id = ?, content_hash = ?, width = ?, height = ?,"
                " storage_path = ? WHERE job_id = ?",
                (image.id, image.content_hash, image.width, image.height,
                 image.storage_path, job_id),
            )
            if cursor.rowcount == 0:
                raise UnknownJob(f"no job {job_id!r}")
        return self.get_job(job_id)

    def transition_job(
        self,
        job_id: str,
        status: str,
        *,
        start_ms: int | None = None,
        end_ms: int | None = None,
        duration_ms: float | None = None,
        prediction: dict | None = None,
        replied_classes: list[tuple[str, float]] | None = None,
        annotation_token: str | None = None,
        failure_reason: str | None = None,
    ) -> JobRecord:
        """Move a job forward through its lifecycle.

        queued -> running -> done | failed, and done -> skipped_no_reply for
        jobs whose detections all fell below the reply threshold. Anything
        else raises IllegalTransition. A transition to done must carry (or
        already have) a prediction.
        """
        if status not in JOB_STATUSES:
            raise StoreError(f"unknown status {status!r}")
        with self._lock, self._conn:
            row = self._conn.execute(
                "SELECT * FROM jobs WHERE job_id = ?", (job_id,)
            ).fetchone()
            if row is None:
                raise UnknownJob(f"no job {job_id!r}")
            current = row["status"]
            if status not in _FORWARD[current]:
                raise IllegalTransition(f"cannot transition {current} -> {status}")
            if status == "done" and prediction is None and row["prediction"] is None:
                raise StoreError("a done job must carry a prediction")
            if end_ms is not None:
                effective_start = start_ms if start_ms is not None else row["start_ms"]
                if effective_start is not None and end_ms < effective_start:
                    raise StoreError("end_ms must be >= start_ms")
            updates: dict[str, object] = {"status": status}
            if start_ms is not None:
                updates["start_ms"] = start_ms
            if end_ms is not None:
                updates["end_ms"] = end_ms
            if duration_ms is not None:
                updates["duration_ms"] = duration_ms
            if prediction is not None:
                updates["prediction"] = json.dumps(prediction)
            if replied_classes is not None:
                updates["replied_classes"] = json.dumps(
                    [[name, conf] for name, conf in replied_classes]
                )
            if annotation_token is not None:
                updates["annotation_token"] = annotation_token
            if failure_reason is not None:
                updates["failure_reason"] = failure_reason
            assignments = ", ".join(f"{col} = ?" for col in updates)
            self._conn.execute(
                f"UPDATE jobs SET {assignments} WHERE job_id = ?",
                (*updates.values(), job_id),
            )
        return self.get_job(job_id)

    def set_reply_message_ids(self, job_id: str, message_ids: list[str]) -> JobRecord:
        with self._lock, self._conn:
            cursor = self._conn.execute(
                "UPDATE jobs SET reply_message_ids = ? WHERE job_id = ?",
                (json.dumps(list(message_ids)), job_id),
            )
            if cursor.rowcount == 0:
                raise UnknownJob(f"no job {job_id!r}")
        return self.get_job(job_id)

    def list_jobs(
        self,
        since_ms: int | None = None,
        until_ms: int | None = None,
        user_id: str | None = None,
        status: str | None = None,
        verdict: str | None = None,
    ) -> list[JobRecord]:
        query = "SELECT DISTINCT jobs.* FROM jobs"
        clauses: list[str] = []
        params: list[object] = []
        if verdict is not None:
            query += " JOIN feedback ON feedback.job_id = jobs.job_id"
            clauses.append("feedback.verdict = ?")
            params.append(verdict)
        if since_ms is not None:
            clauses.append("jobs.created_ms >= ?")
            params.append(since_ms)
        if until_ms is not None:
            clauses.append("jobs.created_ms <= ?")
            params.append(until_ms)
        if user_id is not None:
            clauses.append("jobs.user_id = ?")
            params.append(user_id)
        if status is not None:
            clauses.append("jobs.status = ?")
            params.append(status)
        if clauses:
            query += " WHERE " + " AND ".join(clauses)
        query += " ORDER BY jobs.ref"
        with self._lock:
            rows = self._conn.execute(query, params).fetchall()
        return [_row_to_job(row) for row in rows]

    def pending_jobs(self) -> list[JobRecord]:
        """Jobs a restarted service must pick up again."""
        with self._lock:
            rows = self._conn.execute(
                "SELECT * FROM jobs WHERE status IN ('queued', 'running') ORDER BY ref"
            ).fetchall()
        return [_row_to_job(row) for row in rows]

    # -- feedback -----------------------------------------------------------

    def record_feedback(
        self,
        job_id: str,
        specialist_id: str,
        verdict: str,
        corrected_class: str | None = None,
        free_text: str = "",
    ) -> FeedbackRecord:
        if verdict not in VERDICTS:
            raise StoreError(f"verdict must be one of {VERDICTS}, got {verdict!r}")
        if verdict == "wrong_class" and not corrected_class:
            raise StoreError("wrong_class verdict requires a corrected class")
        self.get_job(job_id)  # raises UnknownJob
        feedback_id = uuid.uuid4().hex
        try:
            with self._lock, self._conn:
                self._conn.execute(
                    "INSERT INTO feedback (feedback_id, job_id, specialist_id, verdict,"
                    " corrected_class, free_text, ts_ms) VALUES (?, ?, ?, ?, ?, ?, ?)",
                    (
                        feedback_id,
                        job_id,
                        specialist_id,
                        verdict,
                        corrected_class.strip().lower() if corrected_class else None,
                        free_text,
                        now_ms(),
                    ),
                )
        except sqlite3.IntegrityError:
            raise DuplicateFeedback(
                f"{specialist_id!r} already gave verdict {verdict!r} on job {job_id!r}"
            ) from None
        return FeedbackRecord(
            feedback_id=feedback_id,
            job_id=job_id,
            specialist_id=specialist_id,
            verdict=verdict,
            corrected_class=corrected_class.strip().lower() if corrected_class else None,
            free_text=free_text,
            ts_ms=now_ms(),
        )

    def list_feedback(self, job_id: str | None = None) -> list[FeedbackRecord]:
        query = "SELECT * FROM feedback"
        params: tuple = ()
        if job_id is not None:
            query += " WHERE job_id = ?"
            params = (job_id,)
        query += " ORDER BY ts_ms, rowid"
        with self._lock:
            rows = self._conn.execute(query, params).fetchall()
        return [
            FeedbackRecord(
                feedback_id=row["feedback_id"],
                job_id=row["job_id"],
                specialist_id=row["specialist_id"],
                verdict=row["verdict"],
                corrected_class=row["corrected_class"],
                free_text=row["free_text"],
                ts_ms=row["ts_ms"],
            )
            for row in rows
        ]

    def job_images(self) -> dict[str, ImageRef]:
        """Map of job id to stored image, for feedback exports."""
        with self._lock:
            rows = self._conn.execute(
                "SELECT * FROM jobs WHERE image_id IS NOT NULL"
            ).fetchall()
        return {row["job_id"]: _row_to_job(row).image for row in rows}

    # -- reports ------------------------------------------------------------

    def deployment_atp(
        self,
        since_ms: int | None = None,
        until_ms: int | None = None,
        verified_only: bool = True,
    ) -> DeploymentAtp:
        """Score the chat log: specialist verdicts define ground truth.

        confirm means the predicted class set was right; wrong_class replaces
        it with the corrected class; not_disease marks the image out of scope.
        The newest verdict per job wins. Jobs without a usable ground truth
        (unverified, non-target, failed) are excluded and counted. With
        verified_only off, unverified predictions are assumed confirmed.
        """
        jobs = self.list_jobs(since_ms=since_ms, until_ms=until_ms)
        samples: list[tuple[frozenset[str], frozenset[str]]] = []
        excluded = {"unverified": 0, "non_target": 0, "failed": 0}
        for job in jobs:
            if job.status in ("queued", "running"):
                continue
            if job.status == "failed":
                excluded["failed"] += 1
                continue
            verdicts = self.list_feedback(job.job_id)
            predicted = job.predicted_class_names
            if not verdicts:
                if verified_only:
                    excluded["unverified"] += 1
                    continue
                gt = predicted  # assume the bot was right
            else:
                latest = verdicts[-1]
                if latest.verdict == "not_disease":
                    excluded["non_target"] += 1
                    continue
                if latest.verdict == "confirm":
                    gt = predicted
                else:
                    gt = frozenset({latest.corrected_class})
            if not gt:
                excluded["non_target"] += 1
                continue
            samples.append((gt, predicted))
        report = metrics.atp_report(samples)
        return DeploymentAtp(report=report, sample_count=len(samples), excluded=excluded)

    def latency_report(
        self, since_ms: int | None = None, until_ms: int | None = None
    ) -> LatencySummary:
        jobs = self.list_jobs(since_ms=since_ms, until_ms=until_ms)
        durations: list[float] = []
        for job in jobs:
            if job.duration_ms is not None:
                durations.append(float(job.duration_ms))
            elif job.start_ms is not None and job.end_ms is not None:
                durations.append(float(job.end_ms - job.start_ms))
        if not durations:
            return LatencySummary(count=0)
        durations.sort()
        p95_index = max(0, -(-95 * len(durations) // 100) - 1)  # ceil without math
        return LatencySummary(
            count=len(durations),
            min_ms=durations[0],
            median_ms=float(statistics.median(durations)),
            p95_ms=durations[p95_index],
            max_ms=durations[-1],
        )

    # -- export / import ------------------------------------------------------

    def export_records(self, path: str | Path) -> int:
        """Dump jobs and feedback as line-delimited JSON for offline analysis."""
        path = Path(path)
        count = 0
        with self._lock:
            job_rows = self._conn.execute("SELECT * FROM jobs ORDER BY ref").fetchall()
            feedback_rows = self._conn.execute(
                "SELECT * FROM feedback ORDER BY ts_ms, rowid"
            ).fetchall()
        with path.open("w", encoding="utf-8") as fh:
            for row in job_rows:
                record = {"kind": "job", **{k: row[k] for k in row.keys()}}
                fh.write(json.dumps(record, separators=(",", ":")) + "\n")
                count += 1
            for row in feedback_rows:
                record = {"kind": "feedback", **{k: row[k] for k in row.keys()}}
                fh.write(json.dumps(record, separators=(",", ":")) + "\n")
                count += 1
        return count

    def import_records(self, path: str | Path) -> int:
        """Replay an export file; rows colliding with existing ids are skipped."""
        path = Path(path)
        imported = 0
        with path.open("r", encoding="utf-8") as fh, self._lock, self._conn:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                record = json.loads(line)
                kind = record.pop("kind")
                if kind == "job":
                    columns = ", ".join(record.keys())
                    holes = ", ".join("?" for _ in record)
                    cursor = self._conn.execute(
                        f"INSERT OR IGNORE INTO jobs ({columns}) VALUES ({holes})",
                        tuple(record.values()),
                    )
                elif kind == "feedback":
                    columns = ", ".join(record.keys())
                    holes = ", ".join("?" for _ in record)
                    cursor = self._conn.execute(
                        f"INSERT OR IGNORE INTO feedback ({columns}) VALUES ({holes})",
                        tuple(record.values()),
                    )
                else:
                    raise StoreError(f"unknown record kind {kind!r}")
                imported += cursor.rowcount
        return imported
