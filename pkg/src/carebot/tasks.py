"""Task runtime: dispatch, the errand state machine, and mid-task learning.

A dispatched intent becomes a TaskInstance running the bring-goods machine:

    CheckSlots -> AskSeniorClarification -> CheckSlots          (fill details)
    CheckSlots -> NavigateToKitchen -> RequestItem -> AwaitKeeperReply
    AwaitKeeperReply -> ReceiveItem -> NavigateToSenior -> Deliver -> Done
    AwaitKeeperReply -> LearnAddition/LearnOptions -> NavigateToSenior -> ...

An unexpected keeper question triggers LearnAddition: a new item-specific
intent (or a new slot on an existing one) is written to the catalog, the
running instance retargets onto it, and the robot returns to the senior to
ask the matching clarification. Availability statements instead constrain a
slot's options. Every state change is appended to the context store; every
transition taken is checked against the task definition's transition table.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Union

from .catalog import Catalog, CatalogStore, IntentSpec, SlotSpec, normalize_name
from .context import Actor, ContextStore, EventKind
from .errors import (
    CatalogMutationFailed,
    DuplicateIntent,
    DuplicateTask,
    IllegalTransition,
    InvalidDef,
    UnknownIntent,
    UnknownTask,
)
from .language import (
    AdditionProposed,
    IntentDetected,
    Interpretation,
    ReplyClassified,
    ReplyKind,
    Unknown,
    classify_keeper_reply,
    derive_addition,
    detect_intent,
    errand_item,
    generate_clarifying_question,
    generate_keeper_request,
    render_fills,
)
from .world import Action, Deliver, NavigateTo, PickUp, KITCHEN, SENIOR_ROOM

logger = logging.getLogger(__name__)

DONE = "Done"
FAILED = "Failed"

DEFAULT_CLARIFY_CAP = 8

BRING_GOODS_TASK = "bring_goods_task"


# --- task definitions -------------------------------------------------------


@dataclass(frozen=True)
class Transition:
    state: str
    trigger: str
    guard: str
    next_state: str


@dataclass(frozen=True)
class TaskDef:
    name: str
    initial_state: str
    states: frozenset[str]
    transitions: tuple[Transition, ...]

    def validate(self) -> None:
        if not self.name:
            raise InvalidDef("task name must be non-empty")
        if self.initial_state not in self.states:
            raise InvalidDef(f"initial state {self.initial_state!r} not in states")
        if DONE not in self.states or FAILED not in self.states:
            raise InvalidDef(f"states must include the terminals {DONE!r} and {FAILED!r}")
        for t in self.transitions:
            if t.state not in self.states or t.next_state not in self.states:
                raise InvalidDef(f"transition endpoints must be known states: {t}")

    def allows(self, state: str, trigger: str, next_state: str) -> bool:
        return any(
            t.state == state and t.trigger == trigger and t.next_state == next_state
            for t in self.transitions
        )


def bring_goods_task_def() -> TaskDef:
    rows = [
        ("CheckSlots", "slots_checked", "a required slot is missing", "AskSeniorClarification"),
        ("CheckSlots", "slots_checked", "every required slot is filled", "NavigateToKitchen"),
        ("CheckSlots", "slots_checked", "clarification cap exceeded", FAILED),
        ("AskSeniorClarification", "senior_utterance", "clarification interpreted", "CheckSlots"),
        ("AskSeniorClarification", "slots_checked", "nothing left to clarify", "CheckSlots"),
        ("NavigateToKitchen", "action_finished", "arrived at the kitchen", "RequestItem"),
        ("RequestItem", "request_spoken", "waiting for the keeper", "AwaitKeeperReply"),
        ("AwaitKeeperReply", "keeper_utterance", "reply confirms the request", "ReceiveItem"),
        ("AwaitKeeperReply", "keeper_utterance", "reply asks an unexpected question", "LearnAddition"),
        ("AwaitKeeperReply", "keeper_utterance", "reply states what is available", "LearnOptions"),
        ("AwaitKeeperReply", "keeper_utterance", "plain answer, keep waiting", "AwaitKeeperReply"),
        ("LearnAddition", "addition_applied", "senior must choose", "NavigateToSenior"),
        ("LearnOptions", "options_applied", "senior must choose", "NavigateToSenior"),
        ("LearnOptions", "options_applied", "constraint already satisfied", "RequestItem"),
        ("ReceiveItem", "action_finished", "item picked up", "NavigateToSenior"),
        ("NavigateToSenior", "action_finished", "carrying the item", "Deliver"),
        ("NavigateToSenior", "action_finished", "returning empty-handed", "AskSeniorClarification"),
        ("Deliver", "action_finished", "item handed over", DONE),
    ]
    transitions = tuple(Transition(*row) for row in rows)
    states = frozenset(
        {t.state for t in transitions}
        | {t.next_state for t in transitions}
        | {DONE, FAILED}
    )
    return TaskDef(
        name=BRING_GOODS_TASK,
        initial_state="CheckSlots",
        states=states,
        transitions=transitions,
    )


def task_def_from_obj(obj: object) -> TaskDef:
    if not isinstance(obj, dict):
        raise InvalidDef("task definition must be an object")
    try:
        transitions = tuple(
            Transition(
                state=str(t["state"]),
                trigger=str(t["trigger"]),
                guard=str(t.get("guard", "")),
                next_state=str(t["next_state"]),
            )
            for t in obj.get("transitions", [])
        )
        definition = TaskDef(
            name=str(obj["name"]),
            initial_state=str(obj["initial_state"]),
            states=frozenset(str(s) for s in obj["states"]),
            transitions=transitions,
        )
    except (KeyError, TypeError) as exc:
        raise InvalidDef(f"bad task definition: {exc}") from exc
    definition.validate()
    return definition


def load_task_defs(path: str) -> list[TaskDef]:
    import json

    with open(path, "r", encoding="utf-8") as handle:
        data = json.load(handle)
    if not isinstance(data, list):
        raise InvalidDef("task definition file must hold a JSON array")
    return [task_def_from_obj(entry) for entry in data]


class TaskRegistry:
    """The repository of dispatchable task definitions."""

    def __init__(self) -> None:
        self._defs: dict[str, TaskDef] = {}

    def register(self, definition: TaskDef) -> None:
        definition.validate()
        if definition.name in self._defs:
            raise DuplicateTask(f"task {definition.name!r} already registered")
        self._defs[definition.name] = definition

    def get(self, name: str) -> TaskDef:
        definition = self._defs.get(name)
        if definition is None:
            raise UnknownTask(f"task {name!r} is not registered")
        return definition

    def names(self) -> set[str]:
        return set(self._defs)

    @classmethod
    def with_builtin_tasks(cls) -> "TaskRegistry":
        registry = cls()
        registry.register(bring_goods_task_def())
        return registry


# --- engine events and effects ------------------------------------------------


@dataclass(frozen=True)
class UtteranceArrived:
    actor: Actor
    text: str


@dataclass(frozen=True)
class ActionFinished:
    action: Action


@dataclass(frozen=True)
class InterpretationReady:
    interpretation: Interpretation


EngineEvent = Union[UtteranceArrived, ActionFinished, InterpretationReady]


@dataclass(frozen=True)
class RobotSay:
    target: Actor
    text: str


@dataclass(frozen=True)
class PerformAction:
    action: Action


@dataclass(frozen=True)
class Ignored:
    reason: str


Effect = Union[RobotSay, PerformAction, Ignored]


@dataclass
class TaskInstance:
    """A live errand: one dispatched intent walking the state machine."""

    id: str
    task: str
    session: str
    intent_name: str
    slot_fills: dict[str, str] = field(default_factory=dict)
    state: str = "CheckSlots"
    focus_slot: str | None = None
    pending_keeper_request: str | None = None
    clarify_rounds: int = 0
    carrying: bool = False

    @property
    def item(self) -> str:
        return errand_item(self.intent_name, self.slot_fills)

    @property
    def finished(self) -> bool:
        return self.state in (DONE, FAILED)


class TaskRuntime:
    """Drives task instances: interprets events, applies learning, emits effects.

    Side effects on the catalog go through the single-writer store; context
    events (state changes, learned knowledge, completion) are appended here,
    while utterances and world actions are returned as effects for the session
    layer to execute.
    """

    def __init__(
        self,
        registry: TaskRegistry,
        catalog_store: CatalogStore,
        context_store: ContextStore,
        backend,
        clarify_cap: int = DEFAULT_CLARIFY_CAP,
        transcript_cap: int = 40,
    ) -> None:
        self.registry = registry
        self.catalog_store = catalog_store
        self.context_store = context_store
        self.backend = backend
        self.clarify_cap = clarify_cap
        self.transcript_cap = transcript_cap
        self._instance_counter = 0

    # -- public operations -----------------------------------------------

    def dispatch(
        self, intent_name: str, slot_fills: dict[str, str], session: str
    ) -> tuple[TaskInstance, list[Effect]]:
        """Create an instance for the intent's bound task and start advancing."""
        catalog = self.catalog_store.snapshot()
        name = normalize_name(intent_name)
        task_name = catalog.resolve_task(name)
        definition = self.registry.get(task_name)
        spec = catalog.require(name)
        fills = {
            normalize_name(k): str(v)
            for k, v in slot_fills.items()
            if spec.slot(normalize_name(k)) is not None
        }
        self._instance_counter += 1
        instance = TaskInstance(
            id=f"t{self._instance_counter}",
            task=definition.name,
            session=session,
            intent_name=name,
            slot_fills=fills,
            state=definition.initial_state,
        )
        self.context_store.append(
            session,
            Actor.SYSTEM,
            EventKind.TASK_STARTED,
            {
                "instance": instance.id,
                "task": definition.name,
                "intent": name,
                "fills": _render_fill_pairs(fills),
            },
        )
        return instance, self._run_state(instance)

    def advance(self, instance: TaskInstance, event: EngineEvent) -> list[Effect]:
        """Feed one event to an instance; returns the effects to execute."""
        if instance.finished:
            return [Ignored(f"instance {instance.id} already {instance.state}")]
        try:
            return self._advance(instance, event)
        except IllegalTransition as exc:
            # Fatal for the instance, never for the process.
            instance.state = FAILED
            self._state_event(instance, note=f"illegal transition: {exc}")
            raise

    def missing_slots(self, instance: TaskInstance, catalog: Catalog) -> list[str]:
        """Required slots of the (possibly retargeted) intent with no fill, in
        catalog order."""
        spec = catalog.require(instance.intent_name)
        return [
            s.name
            for s in spec.slots
            if s.required and not instance.slot_fills.get(s.name, "").strip()
        ]

    def fail(self, instance: TaskInstance, reason: str) -> None:
        if not instance.finished:
            instance.state = FAILED
            self._state_event(instance, note=reason)

    # -- event handling ----------------------------------------------------

    def _advance(self, instance: TaskInstance, event: EngineEvent) -> list[Effect]:
        state = instance.state
        if state == "AskSeniorClarification":
            if isinstance(event, UtteranceArrived) and event.actor == Actor.SENIOR:
                interpretation = self._interpret_clarification(instance, event.text)
                return self._apply_clarification(instance, interpretation)
            if isinstance(event, InterpretationReady):
                return self._apply_clarification(instance, event.interpretation)
        elif state == "AwaitKeeperReply":
            if isinstance(event, UtteranceArrived) and event.actor == Actor.KEEPER:
                classified = classify_keeper_reply(
                    event.text,
                    expected=instance.pending_keeper_request or instance.intent_name,
                    transcript=self._transcript(instance),
                    backend=self.backend,
                )
                return self._apply_keeper_reply(instance, classified, event.text)
            if isinstance(event, InterpretationReady) and isinstance(
                event.interpretation, ReplyClassified
            ):
                reply = event.interpretation
                return self._apply_keeper_reply(instance, reply, reply.question_text or "")
        elif state == "NavigateToKitchen":
            if isinstance(event, ActionFinished) and isinstance(event.action, NavigateTo):
                self._move(instance, "action_finished", "RequestItem")
                return self._enter_request_item(instance)
        elif state == "ReceiveItem":
            if isinstance(event, ActionFinished) and isinstance(event.action, PickUp):
                instance.carrying = True
                self._move(instance, "action_finished", "NavigateToSenior")
                return [PerformAction(NavigateTo(SENIOR_ROOM))]
        elif state == "NavigateToSenior":
            if isinstance(event, ActionFinished) and isinstance(event.action, NavigateTo):
                if instance.carrying:
                    self._move(instance, "action_finished", "Deliver")
                    return [PerformAction(Deliver())]
                self._move(instance, "action_finished", "AskSeniorClarification")
                return self._enter_ask_senior(instance)
        elif state == "Deliver":
            if isinstance(event, ActionFinished) and isinstance(event.action, Deliver):
                instance.carrying = False
                self._move(instance, "action_finished", DONE)
                self.context_store.append(
                    instance.session,
                    Actor.SYSTEM,
                    EventKind.TASK_COMPLETED,
                    {
                        "instance": instance.id,
                        "intent": instance.intent_name,
                        "item": instance.item,
                        "fills": _render_fill_pairs(instance.slot_fills),
                    },
                )
                return []
        return [Ignored(f"event {type(event).__name__} not expected in state {state}")]

    # -- state entries -------------------------------------------------------

    def _run_state(self, instance: TaskInstance) -> list[Effect]:
        """Run the current state's entry logic (CheckSlots chains internally)."""
        if instance.state == "CheckSlots":
            return self._enter_check_slots(instance)
        raise IllegalTransition(f"no entry behaviour for initial state {instance.state!r}")

    def _enter_check_slots(self, instance: TaskInstance) -> list[Effect]:
        catalog = self.catalog_store.snapshot()
        missing = self.missing_slots(instance, catalog)
        if not missing:
            instance.focus_slot = None
            self._move(instance, "slots_checked", "NavigateToKitchen")
            return [PerformAction(NavigateTo(KITCHEN))]
        if instance.clarify_rounds >= self.clarify_cap:
            self._move(instance, "slots_checked", FAILED)
            self._state_event(
                instance,
                note=f"gave up after {instance.clarify_rounds} clarification rounds",
            )
            return []
        self._move(instance, "slots_checked", "AskSeniorClarification")
        return self._enter_ask_senior(instance)

    def _enter_ask_senior(self, instance: TaskInstance) -> list[Effect]:
        catalog = self.catalog_store.snapshot()
        spec = catalog.require(instance.intent_name)
        missing = self.missing_slots(instance, catalog)
        if not missing:
            # A learned slot can already be satisfied (e.g. merged duplicate);
            # nothing to ask, loop back through CheckSlots.
            self._move(instance, "slots_checked", "CheckSlots")
            return self._enter_check_slots(instance)
        instance.focus_slot = missing[0]
        instance.clarify_rounds += 1
        question = generate_clarifying_question(
            spec, instance.focus_slot, self._transcript(instance), self.backend
        )
        return [RobotSay(Actor.SENIOR, question.text)]

    def _enter_request_item(self, instance: TaskInstance) -> list[Effect]:
        catalog = self.catalog_store.snapshot()
        spec = catalog.require(instance.intent_name)
        request = generate_keeper_request(
            spec, instance.slot_fills, self._transcript(instance), self.backend
        )
        instance.pending_keeper_request = request.text
        self._move(instance, "request_spoken", "AwaitKeeperReply")
        return [RobotSay(Actor.KEEPER, request.text)]

    # -- clarification handling ------------------------------------------------

    def _interpret_clarification(self, instance: TaskInstance, text: str) -> Interpretation:
        catalog = self.catalog_store.snapshot()
        spec = catalog.require(instance.intent_name)
        missing = [spec.require_slot(n) for n in self.missing_slots(instance, catalog)]
        return detect_intent(
            text,
            catalog,
            self._transcript(instance),
            self.backend,
            focus_intent=instance.intent_name,
            missing_slots=missing,
        )

    def _apply_clarification(
        self, instance: TaskInstance, interpretation: Interpretation
    ) -> list[Effect]:
        if isinstance(interpretation, IntentDetected):
            if interpretation.intent_name == instance.intent_name:
                instance.slot_fills.update(interpretation.slot_fills)
            if interpretation.dropped_fills:
                self._state_event(
                    instance,
                    note="dropped ungrounded fills",
                    dropped=_render_fill_pairs(interpretation.dropped_fills),
                )
        instance.focus_slot = None
        self._move(instance, "senior_utterance", "CheckSlots")
        return self._enter_check_slots(instance)

    # -- keeper reply handling ---------------------------------------------------

    def _apply_keeper_reply(
        self, instance: TaskInstance, reply: ReplyClassified, reply_text: str
    ) -> list[Effect]:
        if reply.kind == ReplyKind.CONFIRMATION:
            instance.pending_keeper_request = None
            self._move(instance, "keeper_utterance", "ReceiveItem")
            return [PerformAction(PickUp(instance.item, dict(instance.slot_fills)))]
        if reply.kind == ReplyKind.UNEXPECTED_QUESTION:
            self._move(instance, "keeper_utterance", "LearnAddition")
            return self._enter_learn_addition(instance, reply.question_text or reply_text)
        if reply.kind == ReplyKind.AVAILABILITY_CONSTRAINT:
            self._move(instance, "keeper_utterance", "LearnOptions")
            return self._enter_learn_options(instance, reply.question_text or reply_text)
        self._move(instance, "keeper_utterance", "AwaitKeeperReply")
        return [Ignored("keeper gave a plain answer; still waiting")]

    def _enter_learn_addition(self, instance: TaskInstance, question: str) -> list[Effect]:
        proposal = self._derive(instance, question)
        self._apply_addition(instance, proposal)
        self._retarget(instance, proposal.intent_name)
        self._move(instance, "addition_applied", "NavigateToSenior")
        return [PerformAction(NavigateTo(SENIOR_ROOM))]

    def _enter_learn_options(self, instance: TaskInstance, statement: str) -> list[Effect]:
        proposal = self._derive(instance, statement)
        self._apply_addition(instance, proposal)
        options = proposal.options or list(proposal.slot.options)
        slot_name = proposal.slot.name
        if options:
            try:
                self.catalog_store.set_slot_options(proposal.intent_name, slot_name, options)
            except Exception as exc:
                raise CatalogMutationFailed(f"setting options failed: {exc}") from exc
            self.context_store.append(
                instance.session,
                Actor.SYSTEM,
                EventKind.OPTIONS_LEARNED,
                {
                    "intent": proposal.intent_name,
                    "slot": slot_name,
                    "options": "|".join(options),
                },
            )
        self._retarget(instance, proposal.intent_name)

        # A fill that contradicts the learned constraint is discarded; the
        # senior gets to choose again.
        catalog = self.catalog_store.snapshot()
        spec = catalog.require(instance.intent_name)
        slot = spec.slot(slot_name)
        current = instance.slot_fills.get(slot_name)
        if slot is not None and current is not None:
            if slot.allows(current):
                instance.slot_fills[slot_name] = slot.canonical_value(current)
            else:
                del instance.slot_fills[slot_name]
                self._state_event(
                    instance,
                    note="fill invalid after availability constraint",
                    dropped=f"{slot_name}={current}",
                )
        if self.missing_slots(instance, catalog):
            self._move(instance, "options_applied", "NavigateToSenior")
            return [PerformAction(NavigateTo(SENIOR_ROOM))]
        self._move(instance, "options_applied", "RequestItem")
        return self._enter_request_item(instance)

    def _derive(self, instance: TaskInstance, question: str) -> AdditionProposed:
        catalog = self.catalog_store.snapshot()
        return derive_addition(
            question, instance.intent_name, instance.item, catalog, self.backend
        )

    def _apply_addition(self, instance: TaskInstance, proposal: AdditionProposed) -> None:
        catalog = self.catalog_store.snapshot()
        try:
            if catalog.get(proposal.intent_name) is None:
                binding_task = catalog.resolve_task(instance.intent_name)
                spec = IntentSpec(
                    name=proposal.intent_name,
                    description=f"bring {errand_item(proposal.intent_name, {})} to the senior",
                    slots=[proposal.slot],
                    origin="learned",
                )
                self.catalog_store.register_intent(
                    spec, binding_task, known_tasks=self.registry.names()
                )
                self.context_store.append(
                    instance.session,
                    Actor.SYSTEM,
                    EventKind.INTENT_LEARNED,
                    {"intent": proposal.intent_name, "task": binding_task},
                )
            else:
                self.catalog_store.add_slot(proposal.intent_name, proposal.slot)
        except (DuplicateIntent, UnknownIntent, UnknownTask) as exc:
            raise CatalogMutationFailed(f"applying addition failed: {exc}") from exc
        self.context_store.append(
            instance.session,
            Actor.SYSTEM,
            EventKind.SLOT_LEARNED,
            {
                "intent": proposal.intent_name,
                "slot": proposal.slot.name,
                "options": "|".join(proposal.slot.options),
            },
        )

    def _retarget(self, instance: TaskInstance, intent_name: str) -> None:
        """Switch the running instance onto a learned intent, keeping only the
        fills its slots can hold (the item lives on in the intent name)."""
        if intent_name == instance.intent_name:
            return
        catalog = self.catalog_store.snapshot()
        spec = catalog.require(intent_name)
        allowed = set(spec.slot_names())
        instance.intent_name = spec.name
        instance.slot_fills = {
            k: v for k, v in instance.slot_fills.items() if k in allowed
        }

    # -- bookkeeping ---------------------------------------------------------------

    def _transcript(self, instance: TaskInstance) -> str:
        return self.context_store.transcript(instance.session, self.transcript_cap)

    def _move(self, instance: TaskInstance, trigger: str, next_state: str) -> None:
        definition = self.registry.get(instance.task)
        if not definition.allows(instance.state, trigger, next_state):
            raise IllegalTransition(
                f"{instance.task}: {instance.state} --{trigger}--> {next_state}"
            )
        instance.state = next_state
        self._state_event(instance, trigger=trigger)

    def _state_event(self, instance: TaskInstance, trigger: str | None = None, **extra) -> None:
        payload = {
            "instance": instance.id,
            "intent": instance.intent_name,
            "state": instance.state,
        }
        if trigger:
            payload["trigger"] = trigger
        payload.update({k: v for k, v in extra.items() if v})
        self.context_store.append(
            instance.session, Actor.SYSTEM, EventKind.TASK_STATE_CHANGED, payload
        )


def _render_fill_pairs(fills: dict[str, str]) -> str:
    return "; ".join(f"{k}={v}" for k, v in sorted(fills.items()))
