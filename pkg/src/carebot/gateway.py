"""Session layer: utterance ingress/egress and run-to-quiescence stepping.

One GatewayService wires the catalog store, context store, world simulator,
completion backend and task runtime together behind the small API the HTTP
server and CLI consume. Each posted utterance is processed synchronously
until no component has pending work for the session; at quiescence the
session is waiting on exactly one of senior input, keeper input (human
mode), or nothing.

Sessions are isolated: separate logs, separate world state, separate task
instances. Within a session all processing is serialized by a lock; across
sessions the service is concurrent.
"""

from __future__ import annotations

import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Iterator

from . import bus as topics
from .backends import CompletionBackend, RemoteBackend, ScriptedBackend
from .bus import TopicBus
from .catalog import CatalogStore
from .context import Actor, ContextEvent, ContextStore, EventKind
from .errors import (
    ActorNotAllowed,
    BackendUnavailable,
    NoBinding,
    UnknownItem,
    UnknownSession,
    UnknownTask,
)
from .language import IntentDetected, Unknown, detect_intent
from .tasks import (
    ActionFinished,
    Ignored,
    PerformAction,
    RobotSay,
    TaskRegistry,
    TaskRuntime,
    UtteranceArrived,
)
from .world import (
    PickUp,
    WorldConfig,
    WorldState,
    action_name,
    apply_action,
    default_world_config,
    keeper_reply,
)

MODE_SCRIPTED_KEEPER = "scripted_keeper"
MODE_HUMAN_KEEPER = "human_keeper"
MODES = (MODE_SCRIPTED_KEEPER, MODE_HUMAN_KEEPER)

FALLBACK_TEXT = "Sorry, I did not understand. What should I bring you?"
CANNOT_HELP_TEXT = "I am sorry, I cannot help with that yet."

_render_fill_pairs = lambda fills: "; ".join(f"{k}={v}" for k, v in sorted(fills.items()))


@dataclass
class Session:
    id: str
    mode: str
    backend: CompletionBackend
    world: WorldState
    world_config: WorldConfig
    runtime: TaskRuntime
    status: str = "active"          # active <-> quiescent -> closed
    awaiting: str = "senior"        # senior | keeper | none
    instance: object = None
    keeper_asked: set[str] = field(default_factory=set)
    lock: threading.RLock = field(default_factory=threading.RLock)
    changed: threading.Condition = field(default_factory=threading.Condition)


class GatewayService:
    def __init__(
        self,
        catalog_store: CatalogStore,
        world_config: WorldConfig | None = None,
        backends: dict[str, CompletionBackend] | None = None,
        context_store: ContextStore | None = None,
        registry: TaskRegistry | None = None,
        transcript_cap: int = 40,
    ) -> None:
        self.catalog_store = catalog_store
        self.world_config = world_config or default_world_config()
        self.context_store = context_store or ContextStore()
        self.registry = registry or TaskRegistry.with_builtin_tasks()
        self.bus = TopicBus()
        self.transcript_cap = transcript_cap
        self._backends = backends if backends is not None else {}
        self._sessions: dict[str, Session] = {}
        self._lock = threading.RLock()
        self._session_counter = 0

    # -- backend resolution ----------------------------------------------

    def _resolve_backend(self, backend) -> CompletionBackend:
        if backend is None:
            backend = "scripted"
        if isinstance(backend, str):
            if backend in self._backends:
                return self._backends[backend]
            if backend == "scripted":
                resolved = ScriptedBackend.default()
            elif backend == "remote":
                resolved = RemoteBackend.from_env()
            else:
                raise BackendUnavailable(f"unknown backend {backend!r}")
            self._backends[backend] = resolved
            return resolved
        if hasattr(backend, "complete"):
            return backend
        raise BackendUnavailable(f"not a completion backend: {backend!r}")

    # -- session lifecycle --------------------------------------------------

    def create_session(
        self,
        mode: str = MODE_SCRIPTED_KEEPER,
        backend: CompletionBackend | str | None = None,
        world_config: WorldConfig | None = None,
    ) -> Session:
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        resolved = self._resolve_backend(backend)
        config = world_config or self.world_config
        with self._lock:
            self._session_counter += 1
            session_id = f"s{self._session_counter:04d}"
        self.context_store.create_session(session_id)
        runtime = TaskRuntime(
            registry=self.registry,
            catalog_store=self.catalog_store,
            context_store=self.context_store,
            backend=resolved,
            transcript_cap=self.transcript_cap,
        )
        session = Session(
            id=session_id,
            mode=mode,
            backend=resolved,
            world=WorldState(),
            world_config=config,
            runtime=runtime,
        )
        with self._lock:
            self._sessions[session_id] = session
        return session

    def _get(self, session_id: str) -> Session:
        with self._lock:
            session = self._sessions.get(session_id)
        if session is None:
            raise UnknownSession(f"unknown session {session_id!r}")
        return session

    def close_session(self, session_id: str) -> None:
        session = self._get(session_id)
        with session.lock:
            session.status = "closed"
            session.awaiting = "none"
        with session.changed:
            session.changed.notify_all()

    # -- core stepping ----------------------------------------------------------

    def post_utterance(self, session_id: str, actor: Actor | str, text: str) -> list[ContextEvent]:
        """Ingest one human utterance, run the engine to quiescence, and return
        every context event appended during the step, in order."""
        session = self._get(session_id)
        actor = Actor(actor)
        if session.status == "closed":
            raise ActorNotAllowed(f"session {session_id} is closed")
        if actor not in (Actor.SENIOR, Actor.KEEPER):
            raise ActorNotAllowed(f"only senior and keeper may speak, not {actor.value}")
        if actor == Actor.KEEPER and session.mode == MODE_SCRIPTED_KEEPER:
            raise ActorNotAllowed("the simulated keeper speaks for itself in scripted mode")
        if not text or not text.strip():
            raise ValueError("utterance text must be non-empty")

        with session.lock:
            session.status = "active"
            first_seq = self.context_store.last_seq(session_id) + 1
            try:
                self._append(session, actor, EventKind.HEARD, {"text": text})
                self.bus.publish(
                    topics.TOPIC_UTTERANCES_IN, session.id,
                    {"actor": actor.value, "text": text},
                )
                if actor == Actor.SENIOR:
                    self._handle_senior(session, text)
                else:
                    self._handle_keeper(session, text)
            finally:
                if session.status != "closed":
                    session.status = "quiescent"
                with session.changed:
                    session.changed.notify_all()
            return self.context_store.events(session_id, first_seq)

    def _handle_senior(self, session: Session, text: str) -> None:
        instance = session.instance
        if instance is not None and not instance.finished:
            if instance.state == "AskSeniorClarification":
                self._pump(session, UtteranceArrived(Actor.SENIOR, text))
            # Out-of-turn senior talk while the robot is away is heard but
            # does not drive the machine.
            return
        self._dispatch_from(session, text)

    def _dispatch_from(self, session: Session, text: str) -> None:
        catalog = self.catalog_store.snapshot()
        transcript = self.context_store.transcript(session.id, self.transcript_cap)
        interpretation = detect_intent(text, catalog, transcript, session.backend)
        if isinstance(interpretation, Unknown):
            self._say(session, Actor.SENIOR, FALLBACK_TEXT)
            session.awaiting = "senior"
            return
        assert isinstance(interpretation, IntentDetected)
        session.keeper_asked = set()
        try:
            instance, effects = session.runtime.dispatch(
                interpretation.intent_name, interpretation.slot_fills, session.id
            )
        except (NoBinding, UnknownTask):
            self._say(session, Actor.SENIOR, CANNOT_HELP_TEXT)
            session.awaiting = "senior"
            return
        if interpretation.dropped_fills:
            self._append(
                session,
                Actor.SYSTEM,
                EventKind.TASK_STATE_CHANGED,
                {
                    "instance": instance.id,
                    "intent": instance.intent_name,
                    "state": instance.state,
                    "note": "dropped ungrounded fills",
                    "dropped": _render_fill_pairs(interpretation.dropped_fills),
                },
            )
        session.instance = instance
        self._process_effects(session, effects)

    def _handle_keeper(self, session: Session, text: str) -> None:
        instance = session.instance
        if instance is None or instance.finished or instance.state != "AwaitKeeperReply":
            return  # heard, logged, but nobody asked the keeper anything
        self._pump(session, UtteranceArrived(Actor.KEEPER, text))

    def _pump(self, session: Session, event) -> None:
        queue = deque([event])
        while queue:
            current = queue.popleft()
            effects = session.runtime.advance(session.instance, current)
            queue.extend(self._run_effects(session, effects))
        self._settle(session)

    def _process_effects(self, session: Session, effects) -> None:
        queue = deque(self._run_effects(session, effects))
        while queue:
            event = queue.popleft()
            more = session.runtime.advance(session.instance, event)
            queue.extend(self._run_effects(session, more))
        self._settle(session)

    def _run_effects(self, session: Session, effects) -> list:
        """Execute effects; returns follow-up engine events."""
        follow_ups: list = []
        for effect in effects:
            if isinstance(effect, RobotSay):
                self._say(session, effect.target, effect.text)
                if effect.target == Actor.KEEPER:
                    session.awaiting = "keeper"
                    if session.mode == MODE_SCRIPTED_KEEPER:
                        reply = self._scripted_keeper_reply(session)
                        self._append(session, Actor.KEEPER, EventKind.HEARD, {"text": reply})
                        follow_ups.append(UtteranceArrived(Actor.KEEPER, reply))
                else:
                    session.awaiting = "senior"
            elif isinstance(effect, PerformAction):
                follow_ups.append(self._execute_action(session, effect.action))
            elif isinstance(effect, Ignored):
                pass
        return follow_ups

    def _execute_action(self, session: Session, action) -> ActionFinished:
        if isinstance(action, PickUp):
            # The world only validates attributes it knows about; intent slots
            # beyond the configured dimensions stay on the instance.
            dims = {
                d.normalized_name() for d in session.world_config.dimensions(action.item)
            }
            action = PickUp(
                action.item,
                {k: v for k, v in action.attributes.items() if k in dims},
            )
        new_state, ticks = apply_action(session.world, action, session.world_config)
        session.world = new_state
        payload = {"action": action_name(action), "ticks": str(ticks)}
        if hasattr(action, "location"):
            payload["location"] = action.location
        if hasattr(action, "item"):
            payload["item"] = action.item
            if action.attributes:
                payload["attributes"] = _render_fill_pairs(action.attributes)
        self._append(session, Actor.ROBOT, EventKind.ACTION_PERFORMED, payload)
        self.bus.publish(topics.TOPIC_ACTIONS, session.id, payload)
        return ActionFinished(action)

    def _scripted_keeper_reply(self, session: Session) -> str:
        instance = session.instance
        try:
            reply = keeper_reply(
                instance.item,
                instance.slot_fills,
                session.world_config,
                session.keeper_asked,
            )
        except UnknownItem:
            return f"Sorry, we do not have {instance.item} here."
        if reply.kind == "ask" and reply.dimension:
            session.keeper_asked.add(reply.dimension)
        session.awaiting = "none"
        return reply.text

    def _settle(self, session: Session) -> None:
        instance = session.instance
        if instance is None or instance.finished:
            session.awaiting = "senior"
            return
        if instance.state == "AwaitKeeperReply":
            if session.mode == MODE_SCRIPTED_KEEPER:
                # The scripted keeper already had its say; a machine still
                # waiting here would hang the session, so fail the errand.
                session.runtime.fail(instance, "keeper reply did not progress the task")
                session.awaiting = "senior"
            else:
                session.awaiting = "keeper"
            return
        session.awaiting = "senior"

    # -- appenders -----------------------------------------------------------------

    def _append(self, session: Session, actor: Actor, kind: EventKind, payload: dict) -> ContextEvent:
        event = self.context_store.append(session.id, actor, kind, payload)
        self.bus.publish(topics.TOPIC_EVENTS, session.id, event.to_json_obj())
        with session.changed:
            session.changed.notify_all()
        return event

    def _say(self, session: Session, target: Actor, text: str) -> None:
        self._append(session, Actor.ROBOT, EventKind.SAID, {"text": text, "to": target.value})
        self.bus.publish(
            topics.TOPIC_UTTERANCES_OUT, session.id, {"to": target.value, "text": text}
        )

    # -- reads ------------------------------------------------------------------------

    def events(self, session_id: str, from_seq: int = 1) -> list[ContextEvent]:
        return self.context_store.events(session_id, from_seq)

    def stream_events(
        self, session_id: str, from_seq: int = 1, poll_interval: float = 0.1
    ) -> Iterator[ContextEvent]:
        """History from ``from_seq``, then live events in order, until the
        session closes. Resuming with the last seen seq loses nothing."""
        session = self._get(session_id)
        cursor = max(1, from_seq)
        while True:
            batch = self.context_store.events(session_id, cursor)
            for event in batch:
                cursor = event.seq + 1
                yield event
            if session.status == "closed":
                if not self.context_store.events(session_id, cursor):
                    return
                continue
            with session.changed:
                session.changed.wait(timeout=poll_interval)

    def get_catalog_snapshot(self) -> dict:
        """Read-only catalog rendering, same shape as the persistence file."""
        return self.catalog_store.snapshot().to_document()

    def get_session_view(self, session_id: str) -> dict:
        session = self._get(session_id)
        instance = session.instance
        carried = session.world.carried_item
        return {
            "session_id": session.id,
            "mode": session.mode,
            "status": session.status,
            "awaiting": session.awaiting,
            "backend": getattr(session.backend, "identity", "?"),
            "robot_location": session.world.robot_location,
            "carried_item": carried[0] if carried else None,
            "tick": session.world.tick,
            "task_state": instance.state if instance else None,
            "intent": instance.intent_name if instance else None,
            "last_seq": self.context_store.last_seq(session_id),
        }

    def sessions(self) -> list[str]:
        with self._lock:
            return sorted(self._sessions)
