"""Append-only per-session event log and its prompt-facing transcript.

Everything the robot hears, says, does or learns lands here as one immutable
event. Ordering authority is the per-session sequence number, never the wall
clock, so runs replay deterministically.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

from .errors import CorruptLog, UnknownSession

DEFAULT_TRANSCRIPT_CAP = 40


class Actor(str, Enum):
    SENIOR = "senior"
    KEEPER = "keeper"
    ROBOT = "robot"
    SYSTEM = "system"


class EventKind(str, Enum):
    HEARD = "Heard"
    SAID = "Said"
    TASK_STARTED = "TaskStarted"
    TASK_STATE_CHANGED = "TaskStateChanged"
    TASK_COMPLETED = "TaskCompleted"
    INTENT_LEARNED = "IntentLearned"
    SLOT_LEARNED = "SlotLearned"
    OPTIONS_LEARNED = "OptionsLearned"
    ACTION_PERFORMED = "ActionPerformed"


@dataclass(frozen=True)
class ContextEvent:
    """One record of something heard, said, done, or learned."""

    seq: int
    wall_time: float
    actor: Actor
    kind: EventKind
    payload: dict[str, str] = field(default_factory=dict)

    def to_json_obj(self) -> dict:
        return {
            "seq": self.seq,
            "wall_time": self.wall_time,
            "actor": self.actor.value,
            "kind": self.kind.value,
            "payload": dict(self.payload),
        }

    @classmethod
    def from_json_obj(cls, obj: object) -> "ContextEvent":
        if not isinstance(obj, dict):
            raise ValueError("event is not an object")
        try:
            return cls(
                seq=int(obj["seq"]),
                wall_time=float(obj["wall_time"]),
                actor=Actor(obj["actor"]),
                kind=EventKind(obj["kind"]),
                payload={str(k): str(v) for k, v in dict(obj.get("payload", {})).items()},
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"bad event object: {exc}") from exc


def render_event_line(event: ContextEvent) -> str:
    """Canonical one-line rendering: ``[<actor>] <kind>: <primary text>``."""
    text = event.payload.get("text")
    if text is None:
        text = ", ".join(f"{k}={v}" for k, v in sorted(event.payload.items()))
    return f"[{event.actor.value}] {event.kind.value}: {text}"


def render_transcript(events: Iterable[ContextEvent], max_events: int = DEFAULT_TRANSCRIPT_CAP) -> str:
    """Deterministic transcript, newest events last, truncated to the most
    recent ``max_events`` lines."""
    if max_events < 0:
        raise ValueError("max_events must be >= 0")
    lines = [render_event_line(e) for e in events]
    if max_events == 0:
        return ""
    return "\n".join(lines[-max_events:])


def parse_event_log(text: str) -> list[ContextEvent]:
    """Parse a newline-delimited JSON export. Raises CorruptLog naming the line."""
    events: list[ContextEvent] = []
    for number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            events.append(ContextEvent.from_json_obj(json.loads(line)))
        except (json.JSONDecodeError, ValueError) as exc:
            raise CorruptLog(f"line {number}: {exc}") from exc
    return events


def dump_event_log(events: Iterable[ContextEvent]) -> str:
    return "".join(json.dumps(e.to_json_obj(), ensure_ascii=False, sort_keys=True) + "\n" for e in events)


class ContextStore:
    """Thread-safe owner of all session logs.

    Appends are serialized per store; reads hand out copies of immutable
    prefixes, so snapshots are safe to share across threads.
    """

    def __init__(self) -> None:
        self._sessions: dict[str, list[ContextEvent]] = {}
        self._lock = threading.RLock()

    def create_session(self, session_id: str) -> None:
        with self._lock:
            if session_id in self._sessions:
                raise ValueError(f"session {session_id!r} already exists")
            self._sessions[session_id] = []

    def has_session(self, session_id: str) -> bool:
        with self._lock:
            return session_id in self._sessions

    def _require(self, session_id: str) -> list[ContextEvent]:
        log = self._sessions.get(session_id)
        if log is None:
            raise UnknownSession(f"unknown session {session_id!r}")
        return log

    def append(
        self,
        session_id: str,
        actor: Actor,
        kind: EventKind,
        payload: Mapping[str, object] | None = None,
        wall_time: float | None = None,
    ) -> ContextEvent:
        clean = {str(k): str(v) for k, v in (payload or {}).items()}
        if kind in (EventKind.HEARD, EventKind.SAID) and not clean.get("text", "").strip():
            raise ValueError(f"{kind.value} events need non-empty payload text")
        with self._lock:
            log = self._require(session_id)
            event = ContextEvent(
                seq=len(log) + 1,
                wall_time=time.time() if wall_time is None else wall_time,
                actor=Actor(actor),
                kind=EventKind(kind),
                payload=clean,
            )
            log.append(event)
            return event

    def events(self, session_id: str, from_seq: int = 1) -> list[ContextEvent]:
        """All events with seq >= from_seq, ascending."""
        with self._lock:
            log = self._require(session_id)
            if from_seq <= 1:
                return list(log)
            return [e for e in log if e.seq >= from_seq]

    def last_seq(self, session_id: str) -> int:
        with self._lock:
            return len(self._require(session_id))

    def transcript(self, session_id: str, max_events: int = DEFAULT_TRANSCRIPT_CAP) -> str:
        with self._lock:
            return render_transcript(self._require(session_id), max_events)
