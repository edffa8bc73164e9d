"""Minimal in-process topic bus.

Keeps module boundaries honest: the session layer publishes utterances,
actions and raw events onto named topics, and anything (UI feeds, debug
taps, tests) can subscribe without touching the engine. Delivery is
synchronous and FIFO per (session, topic).
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable

TOPIC_UTTERANCES_IN = "utterances.in"
TOPIC_UTTERANCES_OUT = "utterances.out"
TOPIC_ACTIONS = "actions"
TOPIC_EVENTS = "events"


@dataclass(frozen=True)
class BusMessage:
    topic: str
    session: str
    payload: dict


class TopicBus:
    def __init__(self) -> None:
        self._subscribers: dict[str, list[Callable[[BusMessage], None]]] = {}
        self._lock = threading.RLock()

    def subscribe(self, topic: str, handler: Callable[[BusMessage], None]) -> Callable[[], None]:
        """Register a handler; returns an unsubscribe callable."""
        with self._lock:
            self._subscribers.setdefault(topic, []).append(handler)

        def unsubscribe() -> None:
            with self._lock:
                handlers = self._subscribers.get(topic, [])
                if handler in handlers:
                    handlers.remove(handler)

        return unsubscribe

    def publish(self, topic: str, session: str, payload: dict) -> None:
        with self._lock:
            handlers = list(self._subscribers.get(topic, []))
        message = BusMessage(topic=topic, session=session, payload=payload)
        for handler in handlers:
            handler(message)
