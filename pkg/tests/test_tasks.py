import pytest

from carebot.catalog import CatalogStore, IntentSpec, SlotSpec
from carebot.context import Actor, ContextStore, EventKind
from carebot.errors import DuplicateTask, InvalidDef, NoBinding, UnknownIntent, UnknownTask
from carebot.language import IntentDetected, ReplyClassified, ReplyKind
from carebot.tasks import (
    ActionFinished,
    InterpretationReady,
    PerformAction,
    RobotSay,
    TaskRegistry,
    TaskRuntime,
    UtteranceArrived,
    bring_goods_task_def,
    task_def_from_obj,
)
from carebot.world import Deliver, NavigateTo, PickUp


@pytest.fixture
def runtime(seed_store, scripted):
    context = ContextStore()
    context.create_session("s1")
    return TaskRuntime(
        registry=TaskRegistry.with_builtin_tasks(),
        catalog_store=seed_store,
        context_store=context,
        backend=scripted,
    )


def kinds(runtime, session="s1"):
    return [e.kind for e in runtime.context_store.events(session)]


# --- definitions and registry ------------------------------------------------


def test_bring_goods_def_is_valid():
    definition = bring_goods_task_def()
    definition.validate()
    assert definition.initial_state == "CheckSlots"
    assert {"Done", "Failed"} <= set(definition.states)


def test_registry_register_and_duplicate():
    registry = TaskRegistry()
    registry.register(bring_goods_task_def())
    assert registry.names() == {"bring_goods_task"}
    with pytest.raises(DuplicateTask):
        registry.register(bring_goods_task_def())


def test_registry_unknown_task():
    with pytest.raises(UnknownTask):
        TaskRegistry().get("nope")


def test_task_def_unknown_state_rejected():
    with pytest.raises(InvalidDef):
        task_def_from_obj(
            {
                "name": "bad",
                "initial_state": "A",
                "states": ["A", "Done", "Failed"],
                "transitions": [
                    {"state": "A", "trigger": "go", "next_state": "Mystery"}
                ],
            }
        )


def test_task_def_requires_terminals():
    with pytest.raises(InvalidDef):
        task_def_from_obj(
            {"name": "bad", "initial_state": "A", "states": ["A"], "transitions": []}
        )


# --- dispatch -------------------------------------------------------------------


def test_dispatch_filled_goes_to_kitchen(runtime):
    instance, effects = runtime.dispatch("bring_goods", {"item": "juice"}, "s1")
    assert instance.state == "NavigateToKitchen"
    assert effects == [PerformAction(NavigateTo("kitchen"))]
    assert kinds(runtime)[0] is EventKind.TASK_STARTED


def test_dispatch_missing_slot_asks_first(runtime, seed_store):
    seed_store.register_intent(
        IntentSpec(
            name="bring_juice",
            slots=[SlotSpec(name="which", clarifying_question="What kind of juice would you like?")],
        ),
        "bring_goods_task",
        known_tasks={"bring_goods_task"},
    )
    instance, effects = runtime.dispatch("bring_juice", {}, "s1")
    assert instance.state == "AskSeniorClarification"
    assert effects == [RobotSay(Actor.SENIOR, "What kind of juice would you like?")]


def test_dispatch_unbound_intent(runtime, seed_store):
    snapshot = seed_store.snapshot()
    snapshot.intents["orphan"] = IntentSpec(name="orphan", created_at=5)
    snapshot.next_seq = 6
    seed_store._catalog = snapshot  # simulate a catalog with a binding gap
    with pytest.raises(NoBinding):
        runtime.dispatch("orphan", {}, "s1")


def test_dispatch_unknown_intent_has_no_binding(runtime):
    with pytest.raises(NoBinding):
        runtime.dispatch("bring_unicorns", {}, "s1")


# --- missing_slots -----------------------------------------------------------------


def test_missing_slots_ordered_by_catalog(runtime, seed_store):
    seed_store.register_intent(
        IntentSpec(
            name="bring_tea",
            slots=[SlotSpec(name="blackOrGreen"), SlotSpec(name="sugar"), SlotSpec(name="lemon")],
        ),
        "bring_goods_task",
        known_tasks={"bring_goods_task"},
    )
    instance, _ = runtime.dispatch("bring_tea", {"sugar": "yes"}, "s1")
    missing = runtime.missing_slots(instance, seed_store.snapshot())
    assert missing == ["blackorgreen", "lemon"]  # set difference, catalog order


def test_missing_slots_all_filled(runtime):
    instance, _ = runtime.dispatch("bring_goods", {"item": "tea"}, "s1")
    assert runtime.missing_slots(instance, runtime.catalog_store.snapshot()) == []


def test_missing_slots_ignores_optional(runtime, seed_store):
    seed_store.register_intent(
        IntentSpec(name="bring_cake", slots=[SlotSpec(name="note", required=False)]),
        "bring_goods_task",
        known_tasks={"bring_goods_task"},
    )
    instance, _ = runtime.dispatch("bring_cake", {}, "s1")
    assert instance.state == "NavigateToKitchen"


# --- the full machine, driven by injected events ---------------------------------------


def walk_to_waiting(runtime, instance, effects):
    """Execute world-action effects by echoing ActionFinished back."""
    queue = list(effects)
    spoken = []
    while queue:
        effect = queue.pop(0)
        if isinstance(effect, PerformAction):
            queue.extend(runtime.advance(instance, ActionFinished(effect.action)))
        elif isinstance(effect, RobotSay):
            spoken.append(effect)
    return spoken


def test_happy_path_to_done(runtime):
    instance, effects = runtime.dispatch("bring_goods", {"item": "water"}, "s1")
    spoken = walk_to_waiting(runtime, instance, effects)
    assert instance.state == "AwaitKeeperReply"
    assert spoken[-1].target is Actor.KEEPER
    assert instance.pending_keeper_request
    reply = InterpretationReady(ReplyClassified(ReplyKind.CONFIRMATION))
    effects = runtime.advance(instance, reply)
    assert instance.state == "ReceiveItem"
    assert isinstance(effects[0].action, PickUp)
    walk_to_waiting(runtime, instance, effects)
    assert instance.state == "Done"
    assert kinds(runtime)[-1] is EventKind.TASK_COMPLETED


def test_unexpected_question_learns_and_returns(runtime):
    instance, effects = runtime.dispatch("bring_goods", {"item": "juice"}, "s1")
    walk_to_waiting(runtime, instance, effects)
    runtime.context_store.append("s1", Actor.KEEPER, EventKind.HEARD, {"text": "Which juice?"})
    effects = runtime.advance(instance, UtteranceArrived(Actor.KEEPER, "Which juice?"))
    # catalog now has the learned intent and the instance retargeted onto it
    catalog = runtime.catalog_store.snapshot()
    assert catalog.get("bring_juice") is not None
    assert catalog.resolve_task("bring_juice") == "bring_goods_task"
    assert instance.intent_name == "bring_juice"
    assert instance.slot_fills == {}  # item fill does not fit the learned slots
    assert instance.item == "juice"
    assert effects == [PerformAction(NavigateTo("senior_room"))]
    sequence = kinds(runtime)
    assert EventKind.INTENT_LEARNED in sequence and EventKind.SLOT_LEARNED in sequence


def test_learned_slot_default_required(runtime):
    instance, effects = runtime.dispatch("bring_goods", {"item": "juice"}, "s1")
    walk_to_waiting(runtime, instance, effects)
    runtime.advance(instance, UtteranceArrived(Actor.KEEPER, "Which juice?"))
    slot = runtime.catalog_store.snapshot().require("bring_juice").slot("which")
    assert slot.required


def test_availability_constraint_drops_bad_fill(runtime):
    instance, effects = runtime.dispatch("bring_goods", {"item": "coffee"}, "s1")
    walk_to_waiting(runtime, instance, effects)
    effects = runtime.advance(
        instance, UtteranceArrived(Actor.KEEPER, "We only have black coffee.")
    )
    catalog = runtime.catalog_store.snapshot()
    assert catalog.require("bring_coffee").slot("type").options == ["black"]
    assert instance.intent_name == "bring_coffee"
    assert effects == [PerformAction(NavigateTo("senior_room"))]
    sequence = kinds(runtime)
    assert EventKind.OPTIONS_LEARNED in sequence


def test_clarification_answer_fills_and_proceeds(runtime, seed_store):
    seed_store.register_intent(
        IntentSpec(name="bring_juice", slots=[SlotSpec(name="which")]),
        "bring_goods_task",
        known_tasks={"bring_goods_task"},
    )
    instance, _ = runtime.dispatch("bring_juice", {}, "s1")
    assert instance.state == "AskSeniorClarification"
    runtime.context_store.append("s1", Actor.SENIOR, EventKind.HEARD, {"text": "Apple juice"})
    effects = runtime.advance(instance, UtteranceArrived(Actor.SENIOR, "Apple juice"))
    assert instance.slot_fills == {"which": "apple"}
    assert instance.state == "NavigateToKitchen"
    assert effects == [PerformAction(NavigateTo("kitchen"))]


def test_injected_interpretation_is_accepted(runtime, seed_store):
    seed_store.register_intent(
        IntentSpec(name="bring_juice", slots=[SlotSpec(name="which")]),
        "bring_goods_task",
        known_tasks={"bring_goods_task"},
    )
    instance, _ = runtime.dispatch("bring_juice", {}, "s1")
    effects = runtime.advance(
        instance,
        InterpretationReady(IntentDetected("bring_juice", {"which": "orange"}, {})),
    )
    assert instance.slot_fills == {"which": "orange"}
    assert instance.state == "NavigateToKitchen"


def test_dropped_fills_are_logged(runtime, seed_store):
    seed_store.register_intent(
        IntentSpec(name="bring_juice", slots=[SlotSpec(name="which")]),
        "bring_goods_task",
        known_tasks={"bring_goods_task"},
    )
    instance, _ = runtime.dispatch("bring_juice", {}, "s1")
    runtime.advance(
        instance,
        InterpretationReady(IntentDetected("bring_juice", {}, {"which": "Black"})),
    )
    notes = [
        e for e in runtime.context_store.events("s1")
        if e.payload.get("note") == "dropped ungrounded fills"
    ]
    assert notes and notes[0].payload["dropped"] == "which=Black"


def test_clarification_cap_fails_instance(runtime, seed_store):
    seed_store.register_intent(
        IntentSpec(name="bring_juice", slots=[SlotSpec(name="which")]),
        "bring_goods_task",
        known_tasks={"bring_goods_task"},
    )
    instance, _ = runtime.dispatch("bring_juice", {}, "s1")
    for _ in range(9):
        if instance.finished:
            break
        runtime.advance(
            instance, InterpretationReady(IntentDetected("bring_juice", {}, {}))
        )
    assert instance.state == "Failed"
    assert instance.clarify_rounds == runtime.clarify_cap


def test_keeper_plain_answer_keeps_waiting(runtime):
    instance, effects = runtime.dispatch("bring_goods", {"item": "water"}, "s1")
    walk_to_waiting(runtime, instance, effects)
    effects = runtime.advance(instance, InterpretationReady(ReplyClassified(ReplyKind.ANSWER)))
    assert instance.state == "AwaitKeeperReply"


def test_irrelevant_event_is_ignored(runtime):
    instance, effects = runtime.dispatch("bring_goods", {"item": "water"}, "s1")
    out = runtime.advance(instance, ActionFinished(Deliver()))
    assert any(type(e).__name__ == "Ignored" for e in out)
    assert instance.state == "NavigateToKitchen"


def test_every_transition_is_in_the_definition(runtime, seed_store):
    """Instrumented run: every TaskStateChanged trigger pair must be allowed."""
    definition = bring_goods_task_def()
    instance, effects = runtime.dispatch("bring_goods", {"item": "juice"}, "s1")
    walk_to_waiting(runtime, instance, effects)
    effects = runtime.advance(instance, UtteranceArrived(Actor.KEEPER, "Which juice?"))
    walk_to_waiting(runtime, instance, effects)
    runtime.context_store.append("s1", Actor.SENIOR, EventKind.HEARD, {"text": "Apple juice"})
    effects = runtime.advance(instance, UtteranceArrived(Actor.SENIOR, "Apple juice"))
    walk_to_waiting(runtime, instance, effects)
    effects = runtime.advance(instance, InterpretationReady(ReplyClassified(ReplyKind.CONFIRMATION)))
    walk_to_waiting(runtime, instance, effects)
    assert instance.state == "Done"

    previous = definition.initial_state
    for event in runtime.context_store.events("s1"):
        if event.kind is not EventKind.TASK_STATE_CHANGED:
            continue
        trigger = event.payload.get("trigger")
        if not trigger:
            continue  # informational notes do not move the machine
        state = event.payload["state"]
        assert definition.allows(previous, trigger, state), (previous, trigger, state)
        previous = state


def test_done_instance_ignores_everything(runtime):
    instance, effects = runtime.dispatch("bring_goods", {"item": "water"}, "s1")
    walk_to_waiting(runtime, instance, effects)
    effects = runtime.advance(instance, InterpretationReady(ReplyClassified(ReplyKind.CONFIRMATION)))
    walk_to_waiting(runtime, instance, effects)
    assert instance.state == "Done"
    out = runtime.advance(instance, UtteranceArrived(Actor.SENIOR, "thanks"))
    assert any(type(e).__name__ == "Ignored" for e in out)
