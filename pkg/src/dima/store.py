"""Durable single-file record store.

One JSON line per write; payloads are canonically serialized (sorted keys)
and carry a per-record checksum that is verified on load; a mismatch fails
loudly instead of returning silently corrupted state. Transcripts and method
events are append-only logs; sessions, progress and feedback are mutable
records whose version increments per write.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable

from .errors import CorruptRecord, NotFound

logger = logging.getLogger(__name__)

STORE_FORMAT_VERSION = 1


class RecordKind(str, Enum):
    SESSION = "session"
    TRANSCRIPT = "transcript"
    PROGRESS = "progress"
    FEEDBACK = "feedback"
    METHOD_EVENT = "method_event"


LOG_KINDS = frozenset({RecordKind.TRANSCRIPT, RecordKind.METHOD_EVENT})


@dataclass(frozen=True)
class StoreRecord:
    kind: RecordKind
    key: str
    payload: dict
    version: int
    learner_id: str = ""
    written_at: float = 0.0


def canonical_json(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def checksum(payload: dict) -> str:
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()


class MemoryStore:
    """In-memory implementation of the store interface (tests, fuzzing)."""

    def __init__(self):
        self._latest: dict[tuple[RecordKind, str], StoreRecord] = {}
        self._logs: dict[tuple[RecordKind, str], list[StoreRecord]] = {}
        self._lock = threading.Lock()

    # -- write ---------------------------------------------------------------

    def put(self, kind: RecordKind, key: str, payload: dict, learner_id: str = "") -> StoreRecord:
        kind = RecordKind(kind)
        if kind in LOG_KINDS:
            raise ValueError(f"{kind.value} records are append-only; use append()")
        with self._lock:
            previous = self._latest.get((kind, key))
            record = StoreRecord(
                kind=kind,
                key=key,
                payload=payload,
                version=(previous.version + 1) if previous else 1,
                learner_id=learner_id or (previous.learner_id if previous else ""),
                written_at=time.time(),
            )
            self._latest[(kind, key)] = record
            self._persist(record)
            return record

    def append(self, kind: RecordKind, key: str, payload: dict, learner_id: str = "") -> StoreRecord:
        kind = RecordKind(kind)
        if kind not in LOG_KINDS:
            raise ValueError(f"{kind.value} records are mutable; use put()")
        with self._lock:
            log = self._logs.setdefault((kind, key), [])
            record = StoreRecord(
                kind=kind,
                key=key,
                payload=payload,
                version=len(log) + 1,
                learner_id=learner_id,
                written_at=time.time(),
            )
            log.append(record)
            self._persist(record)
            return record

    def _persist(self, record: StoreRecord) -> None:
        pass

    # -- read ----------------------------------------------------------------

    def get(self, kind: RecordKind, key: str) -> dict:
        kind = RecordKind(kind)
        record = self._latest.get((kind, key))
        if record is None:
            raise NotFound(f"no {kind.value} record for key {key!r}")
        return record.payload

    def read_log(self, kind: RecordKind, key: str) -> list[dict]:
        kind = RecordKind(kind)
        log = self._logs.get((kind, key))
        if log is None:
            raise NotFound(f"no {kind.value} log for key {key!r}")
        return [r.payload for r in log]

    def has(self, kind: RecordKind, key: str) -> bool:
        kind = RecordKind(kind)
        return (kind, key) in self._latest or (kind, key) in self._logs

    def list_by(self, learner_id: str, kind: RecordKind) -> list[StoreRecord]:
        kind = RecordKind(kind)
        if kind in LOG_KINDS:
            records: Iterable[StoreRecord] = (
                r for log in self._logs.values() for r in log
            )
        else:
            records = self._latest.values()
        return [r for r in records if r.kind is kind and r.learner_id == learner_id]

    def list_kind(self, kind: RecordKind) -> list[StoreRecord]:
        kind = RecordKind(kind)
        if kind in LOG_KINDS:
            return [r for log in self._logs.values() for r in log if r.kind is kind]
        return [r for r in self._latest.values() if r.kind is kind]

    # -- maintenance -----------------------------------------------------------

    def purge_older_than(self, days: float, now: float | None = None) -> int:
        """Drop log entries older than the retention window (transcripts are
        sensitive; default retention is configured, not enforced implicitly)."""
        cutoff = (now if now is not None else time.time()) - days * 86400.0
        removed = 0
        with self._lock:
            for key, log in list(self._logs.items()):
                kept = [r for r in log if r.written_at >= cutoff]
                removed += len(log) - len(kept)
                self._logs[key] = kept
        return removed


class FileStore(MemoryStore):
    """Journal-backed store: every write is one line in a single file."""

    def __init__(self, path: str | Path):
        super().__init__()
        self._path = Path(path)
        self._path.parent.mkdir(parents=True, exist_ok=True)
        self._file = None
        if self._path.exists():
            self._load()
        self._file = self._path.open("a", encoding="utf-8")

    def _load(self) -> None:
        lines = self._path.read_text(encoding="utf-8").splitlines()
        numbered = [(i, line.strip()) for i, line in enumerate(lines, start=1) if line.strip()]
        for position, (line_no, line) in enumerate(numbered):
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                if position == len(numbered) - 1:
                    # A torn final line means the process died mid-write; the
                    # record was never acknowledged, so drop it and move on.
                    logger.warning("%s:%d: dropping torn final record", self._path, line_no)
                    continue
                raise CorruptRecord(f"{self._path}:{line_no}: unreadable record") from exc
            payload = raw.get("payload")
            if not isinstance(payload, dict) or raw.get("checksum") != checksum(payload):
                raise CorruptRecord(f"{self._path}:{line_no}: checksum mismatch")
            kind = RecordKind(raw["kind"])
            record = StoreRecord(
                kind=kind,
                key=raw["key"],
                payload=payload,
                version=int(raw["version"]),
                learner_id=raw.get("learner", ""),
                written_at=float(raw.get("written_at", 0.0)),
            )
            if kind in LOG_KINDS:
                self._logs.setdefault((kind, record.key), []).append(record)
            else:
                self._latest[(kind, record.key)] = record

    def _persist(self, record: StoreRecord) -> None:
        if self._file is None:
            return
        line = json.dumps(
            {
                "format": STORE_FORMAT_VERSION,
                "kind": record.kind.value,
                "key": record.key,
                "version": record.version,
                "learner": record.learner_id,
                "written_at": record.written_at,
                "payload": record.payload,
                "checksum": checksum(record.payload),
            },
            sort_keys=True,
            ensure_ascii=False,
        )
        self._file.write(line + "\n")
        self._file.flush()

    def close(self) -> None:
        if self._file is not None:
            self._file.close()
            self._file = None

    def purge_older_than(self, days: float, now: float | None = None) -> int:
        removed = super().purge_older_than(days, now)
        if removed:
            self._rewrite_journal()
        return removed

    def _rewrite_journal(self) -> None:
        with self._lock:
            self._file.close()
            self._file = None
            self._path.write_text("", encoding="utf-8")
            self._file = self._path.open("a", encoding="utf-8")
            for record in self._latest.values():
                self._persist(record)
            for log in self._logs.values():
                for record in log:
                    self._persist(record)
            self._file.flush()

    # -- debugging -------------------------------------------------------------

    def export_records(self) -> str:
        """The raw journal in its documented one-line-per-record format."""
        self._file.flush()
        return self._path.read_text(encoding="utf-8")

    @classmethod
    def import_records(cls, text: str, path: str | Path) -> "FileStore":
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(text, encoding="utf-8")
        return cls(target)
