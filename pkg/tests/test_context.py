import pytest

from carebot.context import (
    Actor,
    ContextEvent,
    ContextStore,
    EventKind,
    dump_event_log,
    parse_event_log,
    render_event_line,
    render_transcript,
)
from carebot.errors import CorruptLog, UnknownSession


@pytest.fixture
def store():
    s = ContextStore()
    s.create_session("s1")
    return s


def test_first_append_gets_seq_one(store):
    event = store.append("s1", Actor.SENIOR, EventKind.HEARD, {"text": "bring me juice"})
    assert event.seq == 1


def test_appends_are_ordered(store):
    store.append("s1", Actor.SENIOR, EventKind.HEARD, {"text": "bring me juice"})
    store.append("s1", Actor.ROBOT, EventKind.SAID, {"text": "Which juice?"})
    seqs = [e.seq for e in store.events("s1")]
    assert seqs == [1, 2]


def test_append_unknown_session(store):
    with pytest.raises(UnknownSession):
        store.append("ghost", Actor.SENIOR, EventKind.HEARD, {"text": "hi"})


def test_heard_said_require_text(store):
    with pytest.raises(ValueError):
        store.append("s1", Actor.SENIOR, EventKind.HEARD, {"text": "  "})
    with pytest.raises(ValueError):
        store.append("s1", Actor.ROBOT, EventKind.SAID, {})


def test_payload_values_coerced_to_strings(store):
    event = store.append("s1", Actor.ROBOT, EventKind.ACTION_PERFORMED, {"ticks": 3})
    assert event.payload["ticks"] == "3"


def test_events_from_seq_matches_naive_filter(store):
    for i in range(5):
        store.append("s1", Actor.SYSTEM, EventKind.TASK_STATE_CHANGED, {"state": f"S{i}"})
    everything = store.events("s1")
    for from_seq in range(0, 8):
        expected = [e for e in everything if e.seq >= from_seq]  # independent oracle
        assert store.events("s1", from_seq) == expected


def test_events_empty_session(store):
    assert store.events("s1", 1) == []


def test_transcript_line_format():
    event = ContextEvent(1, 0.0, Actor.SENIOR, EventKind.HEARD, {"text": "bring me juice"})
    assert render_event_line(event) == "[senior] Heard: bring me juice"


def test_transcript_without_text_uses_sorted_pairs():
    event = ContextEvent(1, 0.0, Actor.ROBOT, EventKind.ACTION_PERFORMED,
                         {"location": "kitchen", "action": "navigate_to"})
    assert render_event_line(event) == "[robot] ActionPerformed: action=navigate_to, location=kitchen"


def test_transcript_truncates_to_newest(store):
    for i in range(5):
        store.append("s1", Actor.SENIOR, EventKind.HEARD, {"text": f"line {i}"})
    assert store.transcript("s1", max_events=1) == "[senior] Heard: line 4"
    assert store.transcript("s1", max_events=0) == ""
    full = store.transcript("s1", max_events=99)
    assert full.splitlines()[0] == "[senior] Heard: line 0"


def test_transcript_empty(store):
    assert store.transcript("s1") == ""


def test_transcript_deterministic(store):
    store.append("s1", Actor.SENIOR, EventKind.HEARD, {"text": "a"}, wall_time=1.0)
    store.append("s1", Actor.ROBOT, EventKind.SAID, {"text": "b"}, wall_time=2.0)
    events = store.events("s1")
    assert render_transcript(events) == render_transcript(list(events))


def test_duplicate_session_rejected(store):
    with pytest.raises(ValueError):
        store.create_session("s1")


def test_event_log_round_trip(store):
    store.append("s1", Actor.SENIOR, EventKind.HEARD, {"text": "bring tea"}, wall_time=5.0)
    store.append("s1", Actor.SYSTEM, EventKind.INTENT_LEARNED, {"intent": "bring_tea"}, wall_time=6.0)
    text = dump_event_log(store.events("s1"))
    assert parse_event_log(text) == store.events("s1")


def test_event_log_corrupt_line_numbered():
    good = dump_event_log(
        [ContextEvent(1, 0.0, Actor.SENIOR, EventKind.HEARD, {"text": "x"})]
    )
    with pytest.raises(CorruptLog, match="line 2"):
        parse_event_log(good + "{mangled\n")


def test_sessions_are_isolated(store):
    store.create_session("s2")
    store.append("s1", Actor.SENIOR, EventKind.HEARD, {"text": "one"})
    assert store.events("s2") == []
    assert store.last_seq("s2") == 0
