"""Blinded rating study state machine over an append-only journal.

A study plans disjoint snippet subsets in a fixed presentation order shared
by every assessor. Sessions walk that order one item at a time; labels are
immutable once accepted and are journaled durably before acknowledgment.
No operation ever returns another session's data or any label history, so
assessors cannot receive feedback through the service.

The journal is one JSON object per line ``{seq, type, payload, checksum}``.
Replay rebuilds the full state; a torn trailing line (crash during append)
is truncated away, anything invalid before the tail raises.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import threading
import zlib
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .agreement import LABEL_CSV_HEADER, Rating, RatingLabel
from .errors import (
    AlreadyLabelled,
    InvalidLabel,
    JournalCorrupt,
    OutOfOrder,
    PoolTooSmall,
    UnknownSession,
    UnknownStudy,
)

DEFAULT_SUBSET_COUNT = 3
DEFAULT_SUBSET_SIZE = 280


@dataclass
class StudyPlan:
    """Randomized disjoint subsets with an immutable presentation order."""

    study_id: str
    subsets: list[list[str]]
    media: dict[str, str]
    seed: int
    condition: str = "face_blurred"

    @property
    def total_items(self) -> int:
        return sum(len(s) for s in self.subsets)

    def item_at(self, position: int) -> tuple[str, int]:
        """(snippet_id, 1-based subset ordinal) for a 0-based position."""
        offset = position
        for ordinal, subset in enumerate(self.subsets, start=1):
            if offset < len(subset):
                return subset[offset], ordinal
            offset -= len(subset)
        raise IndexError(position)

    def subset_of(self, snippet_id: str) -> int:
        for ordinal, subset in enumerate(self.subsets, start=1):
            if snippet_id in subset:
                return ordinal
        raise KeyError(snippet_id)

    def to_payload(self) -> dict:
        return {
            "study_id": self.study_id,
            "subsets": self.subsets,
            "media": self.media,
            "seed": self.seed,
            "condition": self.condition,
        }

    @classmethod
    def from_payload(cls, payload: Mapping) -> "StudyPlan":
        return cls(
            study_id=payload["study_id"],
            subsets=[list(s) for s in payload["subsets"]],
            media=dict(payload["media"]),
            seed=int(payload["seed"]),
            condition=payload["condition"],
        )


def plan_subsets(
    pool: Sequence[Mapping | tuple[str, str]],
    count: int = DEFAULT_SUBSET_COUNT,
    size: int = DEFAULT_SUBSET_SIZE,
    seed: int = 0,
    study_id: str | None = None,
    condition: str = "face_blurred",
) -> StudyPlan:
    """Sample ``count`` disjoint subsets of ``size`` snippets without replacement.

    Pool entries are (snippet_id, media) pairs or mappings with those keys.
    The drawn order is the presentation order and never changes afterwards.
    """
    items = []
    for entry in pool:
        if isinstance(entry, Mapping):
            items.append((str(entry["snippet_id"]), str(entry.get("media", ""))))
        else:
            items.append((str(entry[0]), str(entry[1])))
    ids = [i for i, _ in items]
    if len(set(ids)) != len(ids):
        raise ValueError("pool contains duplicate snippet ids")
    if len(items) < count * size:
        raise PoolTooSmall(f"pool of {len(items)} cannot cover {count} x {size} snippets")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(items), size=count * size, replace=False)
    subsets = [
        [items[j][0] for j in chosen[i * size : (i + 1) * size]] for i in range(count)
    ]
    media = {items[j][0]: items[j][1] for j in chosen}
    if study_id is None:
        study_id = f"study-{seed}-{zlib.crc32(','.join(ids).encode()) & 0xFFFFFF:06x}"
    return StudyPlan(
        study_id=study_id, subsets=subsets, media=media, seed=seed, condition=condition
    )


@dataclass
class Session:
    session_id: str
    study_id: str
    assessor: str
    cursor: int = 0
    labels: dict[str, "LabelRecord"] = field(default_factory=dict)

    @property
    def state(self) -> str:
        return "completed" if self.completed else "active"

    completed: bool = False


@dataclass(frozen=True)
class LabelRecord:
    session_id: str
    snippet_id: str
    label: RatingLabel
    timestamp: str
    seq: int


@dataclass(frozen=True)
class ItemView:
    """What a session is allowed to see about its next item."""

    snippet_id: str
    media: str
    position: int  # 1-based
    total: int
    subset: int  # 1-based ordinal


def _session_id(study_id: str, assessor: str) -> str:
    digest = hashlib.blake2s(f"{study_id}\x00{assessor}".encode("utf-8"), digest_size=6)
    return f"sess-{digest.hexdigest()}"


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _line_checksum(seq: int, event_type: str, payload: Mapping) -> int:
    canon = json.dumps(
        {"seq": seq, "type": event_type, "payload": payload},
        sort_keys=True,
        separators=(",", ":"),
    )
    return zlib.crc32(canon.encode("utf-8")) & 0xFFFFFFFF


class StudyStore:
    """Journal-backed study/session/label state; safe for concurrent use."""

    def __init__(
        self,
        journal_path: str | Path,
        fsync: bool = False,
        clock: Callable[[], str] = _utc_now,
    ):
        self.journal_path = Path(journal_path)
        self.fsync = fsync
        self.clock = clock
        self._lock = threading.RLock()
        self._seq = 0
        self.studies: dict[str, StudyPlan] = {}
        self.sessions: dict[str, Session] = {}
        self._session_keys: dict[tuple[str, str], str] = {}
        self.journal_path.parent.mkdir(parents=True, exist_ok=True)
        self._replay()
        self._fh = open(self.journal_path, "a", encoding="utf-8")

    def close(self) -> None:
        with self._lock:
            self._fh.close()

    # --- journal ---------------------------------------------------------

    def _replay(self) -> None:
        if not self.journal_path.exists():
            return
        raw = self.journal_path.read_bytes()
        offset = 0
        valid_end = 0
        lines = raw.split(b"\n")
        invalid_at: int | None = None
        for line in lines:
            line_len = len(line) + 1
            if not line.strip():
                offset += line_len
                continue
            event = self._decode_line(line)
            if event is None:
                invalid_at = offset
                break
            self._apply(event)
            offset += line_len
            valid_end = offset
        if invalid_at is not None:
            tail = raw[invalid_at:]
            # One torn record at the very end is a crash artifact; anything
            # else means the journal was damaged in place.
            if len(tail.strip().splitlines()) > 1:
                raise JournalCorrupt(
                    f"invalid journal record before the tail at byte {invalid_at}"
                )
            with open(self.journal_path, "r+b") as fh:
                fh.truncate(valid_end)

    def _decode_line(self, line: bytes) -> dict | None:
        try:
            event = json.loads(line.decode("utf-8"))
        except (ValueError, UnicodeDecodeError):
            return None
        if not isinstance(event, dict):
            return None
        try:
            seq, etype, payload, stored = (
                event["seq"], event["type"], event["payload"], event["checksum"],
            )
        except KeyError:
            return None
        if _line_checksum(seq, etype, payload) != stored:
            return None
        if seq != self._seq + 1:
            return None
        return event

    def _append(self, event_type: str, payload: dict) -> int:
        seq = self._seq + 1
        record = {
            "seq": seq,
            "type": event_type,
            "payload": payload,
            "checksum": _line_checksum(seq, event_type, payload),
        }
        self._fh.write(json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n")
        self._fh.flush()
        if self.fsync:
            os.fsync(self._fh.fileno())
        self._seq = seq
        return seq

    def _apply(self, event: Mapping) -> None:
        etype, payload = event["type"], event["payload"]
        if etype == "study":
            plan = StudyPlan.from_payload(payload)
            self.studies[plan.study_id] = plan
        elif etype == "session":
            session = Session(
                session_id=payload["session_id"],
                study_id=payload["study_id"],
                assessor=payload["assessor"],
            )
            self.sessions[session.session_id] = session
            self._session_keys[(session.study_id, session.assessor)] = session.session_id
        elif etype == "label":
            session = self.sessions[payload["session_id"]]
            record = LabelRecord(
                session_id=payload["session_id"],
                snippet_id=payload["snippet_id"],
                label=RatingLabel(Rating(payload["value"]), payload.get("reason")),
                timestamp=payload["timestamp"],
                seq=event["seq"],
            )
            session.labels[record.snippet_id] = record
            session.cursor += 1
            total = self.studies[session.study_id].total_items
            session.completed = session.cursor >= total
        else:
            raise JournalCorrupt(f"unknown event type {etype!r}")
        self._seq = event["seq"]

    # --- operations --------------------------------------------------------

    def create_study(self, plan: StudyPlan) -> StudyPlan:
        with self._lock:
            if plan.study_id in self.studies:
                raise ValueError(f"study {plan.study_id!r} already exists")
            self._append("study", plan.to_payload())
            self.studies[plan.study_id] = plan
            return plan

    def plan_and_create(self, pool, **kwargs) -> StudyPlan:
        return self.create_study(plan_subsets(pool, **kwargs))

    def get_study(self, study_id: str) -> StudyPlan:
        try:
            return self.studies[study_id]
        except KeyError:
            raise UnknownStudy(study_id) from None

    def create_session(self, study_id: str, assessor: str) -> Session:
        """Create a session, or resume the existing one for this assessor."""
        with self._lock:
            self.get_study(study_id)
            existing = self._session_keys.get((study_id, assessor))
            if existing is not None:
                return self.sessions[existing]
            session = Session(
                session_id=_session_id(study_id, assessor),
                study_id=study_id,
                assessor=assessor,
            )
            self._append(
                "session",
                {
                    "session_id": session.session_id,
                    "study_id": study_id,
                    "assessor": assessor,
                },
            )
            self.sessions[session.session_id] = session
            self._session_keys[(study_id, assessor)] = session.session_id
            return session

    def get_session(self, session_id: str) -> Session:
        try:
            return self.sessions[session_id]
        except KeyError:
            raise UnknownSession(session_id) from None

    def next_item(self, session_id: str) -> ItemView | None:
        """The cursor item, or None when the session is complete.

        Repeated calls without a submission return the same item. The view
        carries no label data whatsoever.
        """
        with self._lock:
            session = self.get_session(session_id)
            plan = self.studies[session.study_id]
            if session.completed:
                return None
            snippet_id, subset = plan.item_at(session.cursor)
            return ItemView(
                snippet_id=snippet_id,
                media=plan.media.get(snippet_id, ""),
                position=session.cursor + 1,
                total=plan.total_items,
                subset=subset,
            )

    def submit_label(
        self, session_id: str, snippet_id: str, value: str, reason: str | None = None
    ) -> LabelRecord:
        """Accept a label for the cursor item; journaled before acknowledging."""
        try:
            label = RatingLabel(Rating(value), reason)
        except ValueError as exc:
            raise InvalidLabel(str(exc)) from None
        with self._lock:
            session = self.get_session(session_id)
            plan = self.studies[session.study_id]
            if snippet_id in session.labels:
                raise AlreadyLabelled(snippet_id)
            if session.completed:
                raise OutOfOrder("session is already complete")
            expected, _ = plan.item_at(session.cursor)
            if snippet_id != expected:
                raise OutOfOrder(f"expected {expected!r}, got {snippet_id!r}")
            payload = {
                "session_id": session_id,
                "snippet_id": snippet_id,
                "value": label.value.value,
                "reason": label.reason,
                "timestamp": self.clock(),
            }
            seq = self._append("label", payload)
            record = LabelRecord(
                session_id=session_id,
                snippet_id=snippet_id,
                label=label,
                timestamp=payload["timestamp"],
                seq=seq,
            )
            session.labels[snippet_id] = record
            session.cursor += 1
            session.completed = session.cursor >= plan.total_items
            return record

    def export_labels(self, study_id: str) -> tuple[str, bool]:
        """All label rows for a study as CSV, plus a completeness flag.

        Row order is (assessor, submission sequence), so repeated exports
        are byte-stable.
        """
        with self._lock:
            plan = self.get_study(study_id)
            sessions = [s for s in self.sessions.values() if s.study_id == study_id]
            buf = io.StringIO()
            writer = csv.writer(buf, lineterminator="\n")
            writer.writerow(LABEL_CSV_HEADER)
            complete = bool(sessions)
            for session in sorted(sessions, key=lambda s: s.assessor):
                if not session.completed:
                    complete = False
                for record in sorted(session.labels.values(), key=lambda r: r.seq):
                    writer.writerow(
                        [
                            record.snippet_id,
                            session.assessor,
                            plan.condition,
                            plan.subset_of(record.snippet_id),
                            record.label.value.value,
                            record.label.reason or "",
                            record.timestamp,
                        ]
                    )
            return buf.getvalue(), complete
