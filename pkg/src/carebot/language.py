"""Prompt rendering, completion parsing, and the typed interpretation layer.

Six prompt roles cover everything the dialogue engine asks of a backend:
detect an intent, fill slots, classify a keeper reply, derive a knowledge
addition, and generate the two kinds of robot utterances. Completions must
carry one JSON object (the "envelope"); surrounding prose is tolerated and
discarded. A substring-based grounding filter drops slot values that were
never actually said, erring toward asking again rather than acting on an
invented value.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence, Union

from .catalog import Catalog, IntentSpec, SlotSpec, normalize_name, normalize_options
from .errors import BackendFailure, MalformedCompletion, MissingPlaceholder


class TemplateId(str, Enum):
    DETECT_INTENT = "DetectIntent"
    FILL_SLOTS = "FillSlots"
    CLASSIFY_REPLY = "ClassifyReply"
    DERIVE_ADDITION = "DeriveAddition"
    GEN_CLARIFY_QUESTION = "GenClarifyQuestion"
    GEN_KEEPER_REQUEST = "GenKeeperRequest"


# The uppercase section markers double as anchors for scripted-backend rules,
# so they must stay stable.
TEMPLATES: dict[TemplateId, str] = {
    TemplateId.DETECT_INTENT: (
        "TASK: DetectIntent\n"
        "You decide what a care-home resident wants from the delivery robot.\n"
        "KNOWN_INTENTS:\n{known_intents}\n"
        "INTERLOCUTOR: {interlocutor}\n"
        "FOCUS_INTENT: {focus_intent}\n"
        "MISSING_SLOTS: {missing_slots}\n"
        "TRANSCRIPT:\n{transcript}\n"
        "UTTERANCE: {utterance}\n"
        "Reply with one JSON object with keys \"intent\" (a known intent name, or\n"
        "\"unknown\") and \"slots\" (an object mapping slot names to values that were\n"
        "actually said)."
    ),
    TemplateId.FILL_SLOTS: (
        "TASK: FillSlots\n"
        "Extract slot values for the current errand from the conversation.\n"
        "FOCUS_INTENT: {focus_intent}\n"
        "MISSING_SLOTS: {missing_slots}\n"
        "FILLED_SLOTS: {filled_slots}\n"
        "TRANSCRIPT:\n{transcript}\n"
        "UTTERANCE: {utterance}\n"
        "Reply with one JSON object with key \"slots\" mapping slot names to values."
    ),
    TemplateId.CLASSIFY_REPLY: (
        "TASK: ClassifyReply\n"
        "The robot asked the keeper for something and got an answer back.\n"
        "PENDING_REQUEST: {focus_intent}\n"
        "TRANSCRIPT:\n{transcript}\n"
        "UTTERANCE: {utterance}\n"
        "Reply with one JSON object with key \"kind\" being one of answer,\n"
        "unexpected_question, availability_constraint, confirmation; for the two\n"
        "question-like kinds also include \"question_text\" with the keeper's words."
    ),
    TemplateId.DERIVE_ADDITION: (
        "TASK: DeriveAddition\n"
        "A keeper reply exposed a gap in the robot's knowledge; propose what to learn.\n"
        "KNOWN_INTENTS:\n{known_intents}\n"
        "FOCUS_INTENT: {focus_intent}\n"
        "FILLED_SLOTS: {filled_slots}\n"
        "UTTERANCE: {utterance}\n"
        "Reply with one JSON object with keys \"intent\" (the intent to create or\n"
        "extend, usually bring_<item>), \"slot\" (an object with \"name\",\n"
        "\"description\", \"required\" and optionally \"options\" and\n"
        "\"clarifying_question\"), and an optional top-level \"options\" array when\n"
        "the reply stated which values are available."
    ),
    TemplateId.GEN_CLARIFY_QUESTION: (
        "TASK: GenClarifyQuestion\n"
        "Ask the senior one short question that fills the first missing detail.\n"
        "FOCUS_INTENT: {focus_intent}\n"
        "MISSING_SLOTS: {missing_slots}\n"
        "TRANSCRIPT:\n{transcript}\n"
        "Reply with one JSON object with key \"text\"."
    ),
    TemplateId.GEN_KEEPER_REQUEST: (
        "TASK: GenKeeperRequest\n"
        "Compose the robot's polite request to the keeper for the current errand.\n"
        "INTERLOCUTOR: {interlocutor}\n"
        "FOCUS_INTENT: {focus_intent}\n"
        "FILLED_SLOTS: {filled_slots}\n"
        "TRANSCRIPT:\n{transcript}\n"
        "Reply with one JSON object with key \"text\" naming the item and every\n"
        "chosen detail."
    ),
}

_PLACEHOLDER_RE = re.compile(r"\{([a-z_]+)\}")


def placeholders(template_id: TemplateId) -> set[str]:
    return set(_PLACEHOLDER_RE.findall(TEMPLATES[TemplateId(template_id)]))


def render(template_id: TemplateId, bindings: Mapping[str, str]) -> str:
    """Substitute placeholders; extra bindings are ignored, missing ones raise."""
    body = TEMPLATES[TemplateId(template_id)]
    needed = placeholders(template_id)
    missing = sorted(needed - set(bindings))
    if missing:
        raise MissingPlaceholder(
            f"template {TemplateId(template_id).value} is missing bindings: {missing}"
        )

    def substitute(match: re.Match) -> str:
        return str(bindings[match.group(1)])

    return _PLACEHOLDER_RE.sub(substitute, body)


def render_slot_brief(slot: SlotSpec) -> str:
    """Canonical one-token slot rendering: ``name`` or ``name[opt1|opt2]``."""
    if slot.options:
        return f"{slot.name}[{'|'.join(slot.options)}]"
    return slot.name


def render_known_intents(catalog: Catalog) -> str:
    """Canonical listing, one intent per line, used for the {known_intents} binding."""
    lines = []
    for intent in catalog.list_intents():
        if intent.slots:
            slots = ", ".join(render_slot_brief(s) for s in intent.slots)
        else:
            slots = "(no slots)"
        lines.append(f"- {intent.name}: {slots}")
    return "\n".join(lines) if lines else "(none)"


def render_fills(item: str, slot_fills: Mapping[str, str]) -> str:
    """Human-ish rendering of an errand: ``tea (blackorgreen: black, sugar: yes)``."""
    details = ", ".join(f"{k}: {v}" for k, v in slot_fills.items() if k != "item")
    if details:
        return f"{item} ({details})"
    return item


def errand_item(intent_name: str, slot_fills: Mapping[str, str]) -> str:
    """The physical item of an errand: the ``item`` fill if present, otherwise
    derived from an item-specific intent name like ``bring_juice``."""
    item = slot_fills.get("item")
    if item:
        return str(item)
    name = normalize_name(intent_name)
    if name.startswith("bring_") and name != "bring_goods":
        return name[len("bring_"):].replace("_", " ")
    return name


# --- completion envelope -----------------------------------------------------


def _balanced_object_spans(text: str):
    """Yield substrings of balanced ``{...}`` regions, string-aware, in order."""
    start = text.find("{")
    while start != -1:
        depth = 0
        in_string = False
        escaped = False
        end = None
        for i in range(start, len(text)):
            ch = text[i]
            if in_string:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == '"':
                    in_string = False
            else:
                if ch == '"':
                    in_string = True
                elif ch == "{":
                    depth += 1
                elif ch == "}":
                    depth -= 1
                    if depth == 0:
                        end = i
                        break
        if end is not None:
            yield text[start : end + 1]
        start = text.find("{", start + 1)


def parse_envelope(completion: str | bytes, required_fields: Sequence[str] = ()) -> dict:
    """Extract the first balanced JSON object from a completion.

    Surrounding prose is tolerated and discarded. Raises MalformedCompletion
    when no balanced object parses, or a required field is absent. Never
    raises anything else, whatever bytes come in.
    """
    import json

    if isinstance(completion, bytes):
        completion = completion.decode("utf-8", errors="replace")
    if not isinstance(completion, str):
        raise MalformedCompletion(f"completion is not text: {type(completion).__name__}")
    obj = None
    for candidate in _balanced_object_spans(completion):
        try:
            parsed = json.loads(candidate)
        except (json.JSONDecodeError, RecursionError, ValueError):
            continue
        if isinstance(parsed, dict):
            obj = parsed
            break
    if obj is None:
        raise MalformedCompletion("no JSON object found in completion")
    missing = [f for f in required_fields if f not in obj]
    if missing:
        raise MalformedCompletion(f"completion object is missing fields: {missing}")
    return obj


# --- interpretations ----------------------------------------------------------


class ReplyKind(str, Enum):
    ANSWER = "answer"
    UNEXPECTED_QUESTION = "unexpected_question"
    AVAILABILITY_CONSTRAINT = "availability_constraint"
    CONFIRMATION = "confirmation"


@dataclass(frozen=True)
class IntentDetected:
    intent_name: str
    slot_fills: dict[str, str] = field(default_factory=dict)
    dropped_fills: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class Unknown:
    """The backend could not map the utterance onto a known intent."""


@dataclass(frozen=True)
class ReplyClassified:
    kind: ReplyKind
    question_text: str | None = None


@dataclass(frozen=True)
class AdditionProposed:
    """A proposed catalog addition; applying it is the task runtime's job."""

    intent_name: str
    slot: SlotSpec
    options: list[str] | None = None


@dataclass(frozen=True)
class UtteranceGenerated:
    text: str


Interpretation = Union[IntentDetected, Unknown, ReplyClassified, AdditionProposed, UtteranceGenerated]


# --- grounding ----------------------------------------------------------------


def grounding_filter(
    slot_fills: Mapping[str, str],
    intent: IntentSpec,
    transcript: str,
) -> tuple[dict[str, str], dict[str, str]]:
    """Split fills into (kept, dropped).

    A fill survives only when its case-folded value occurs somewhere in the
    case-folded transcript; fills for slots with an options set must also match
    one option (case-insensitively) and are canonicalized to the stored
    spelling. The check is substring-based on purpose: cheap, predictable, and
    it errs toward asking the senior again. Idempotent, never fails.
    """
    haystack = transcript.casefold()
    kept: dict[str, str] = {}
    dropped: dict[str, str] = {}
    for name, raw in slot_fills.items():
        key = normalize_name(name)
        value = str(raw)
        slot = intent.slot(key)
        if slot is None or not value.strip():
            dropped[key or str(name)] = value
            continue
        if value.strip().casefold() not in haystack:
            dropped[key] = value
            continue
        if slot.options and not slot.allows(value):
            dropped[key] = value
            continue
        kept[key] = slot.canonical_value(value)
    return kept, dropped


# --- backend calls with one retry ----------------------------------------------

RETRY_SUFFIX = "\nAnswer with only the JSON object."


def _complete_envelope(backend, prompt: str, required_fields: Sequence[str],
                       validate=None) -> dict:
    """Call the backend and parse; on a malformed completion, retry once with an
    explicit JSON-only instruction, then surface the error."""

    def attempt(text: str) -> dict:
        obj = parse_envelope(text, required_fields)
        if validate is not None:
            problem = validate(obj)
            if problem:
                raise MalformedCompletion(problem)
        return obj

    try:
        first = backend.complete(prompt)
    except BackendFailure:
        raise
    except Exception as exc:  # a backend must not take the engine down
        raise BackendFailure(f"backend {getattr(backend, 'identity', '?')} failed: {exc}") from exc
    try:
        return attempt(first)
    except MalformedCompletion:
        try:
            second = backend.complete(prompt + RETRY_SUFFIX)
        except BackendFailure:
            raise
        except Exception as exc:
            raise BackendFailure(
                f"backend {getattr(backend, 'identity', '?')} failed: {exc}"
            ) from exc
        return attempt(second)


# --- operations -----------------------------------------------------------------


def detect_intent(
    utterance: str,
    catalog: Catalog,
    transcript: str,
    backend,
    *,
    interlocutor: str = "senior",
    focus_intent: str | None = None,
    missing_slots: Sequence[SlotSpec] | None = None,
) -> Interpretation:
    """Map an utterance to a known intent plus grounded slot fills.

    Unknown or non-catalog intent names yield Unknown. Returned fills have
    passed the grounding filter and option validation; everything discarded is
    reported in ``dropped_fills``.
    """
    if not utterance.strip():
        raise ValueError("utterance must be non-empty")
    missing = ", ".join(render_slot_brief(s) for s in missing_slots or []) or "none"
    prompt = render(
        TemplateId.DETECT_INTENT,
        {
            "known_intents": render_known_intents(catalog),
            "interlocutor": interlocutor,
            "focus_intent": focus_intent or "none",
            "missing_slots": missing,
            "transcript": transcript,
            "utterance": utterance,
        },
    )

    def check(obj: dict) -> str | None:
        if not isinstance(obj.get("intent"), str):
            return "field 'intent' must be a string"
        if "slots" in obj and not isinstance(obj["slots"], dict):
            return "field 'slots' must be an object"
        return None

    envelope = _complete_envelope(backend, prompt, ("intent",), check)
    name = normalize_name(envelope["intent"])
    spec = catalog.get(name)
    if name in ("", "unknown", "none") or spec is None:
        return Unknown()
    raw_fills = {str(k): str(v) for k, v in (envelope.get("slots") or {}).items()}
    kept, dropped = grounding_filter(raw_fills, spec, transcript)
    return IntentDetected(intent_name=spec.name, slot_fills=kept, dropped_fills=dropped)


def classify_keeper_reply(
    reply: str,
    expected: str,
    transcript: str,
    backend,
) -> ReplyClassified:
    """Classify a keeper reply against the pending request."""
    prompt = render(
        TemplateId.CLASSIFY_REPLY,
        {"focus_intent": expected, "transcript": transcript, "utterance": reply},
    )

    def check(obj: dict) -> str | None:
        kind = obj.get("kind")
        if kind not in [k.value for k in ReplyKind]:
            return f"field 'kind' must be a reply kind, got {kind!r}"
        return None

    envelope = _complete_envelope(backend, prompt, ("kind",), check)
    question = envelope.get("question_text")
    return ReplyClassified(
        kind=ReplyKind(envelope["kind"]),
        question_text=str(question) if question is not None else None,
    )


def derive_addition(
    question: str,
    current_intent: str | None,
    item: str,
    catalog: Catalog,
    backend,
) -> AdditionProposed:
    """Turn an unexpected question or availability statement into a proposed
    catalog addition. Nothing is applied here."""
    prompt = render(
        TemplateId.DERIVE_ADDITION,
        {
            "known_intents": render_known_intents(catalog),
            "focus_intent": current_intent or "none",
            "filled_slots": render_fills(item, {}),
            "utterance": question,
        },
    )

    def check(obj: dict) -> str | None:
        if not isinstance(obj.get("intent"), str) or not obj["intent"].strip():
            return "field 'intent' must be a non-empty string"
        slot = obj.get("slot")
        if not isinstance(slot, dict) or not str(slot.get("name", "")).strip():
            return "field 'slot' must be an object with a 'name'"
        return None

    envelope = _complete_envelope(backend, prompt, ("intent", "slot"), check)
    raw_slot = envelope["slot"]
    slot = SlotSpec(
        name=raw_slot["name"],
        description=str(raw_slot.get("description", "")),
        options=[str(o) for o in raw_slot.get("options", []) or []],
        required=bool(raw_slot.get("required", True)),
        clarifying_question=(
            str(raw_slot["clarifying_question"])
            if raw_slot.get("clarifying_question")
            else None
        ),
    )
    raw_options = envelope.get("options")
    options = normalize_options(str(o) for o in raw_options) if raw_options else None
    return AdditionProposed(
        intent_name=normalize_name(envelope["intent"]), slot=slot, options=options
    )


def generate_clarifying_question(
    intent: IntentSpec,
    missing_slot: SlotSpec | str,
    transcript: str,
    backend,
) -> UtteranceGenerated:
    """One short question to the senior filling ``missing_slot``.

    A canned question on the slot is used verbatim under a deterministic
    backend (no call made).
    """
    slot = intent.require_slot(missing_slot if isinstance(missing_slot, str) else missing_slot.name)
    if slot.clarifying_question and getattr(backend, "deterministic", False):
        return UtteranceGenerated(slot.clarifying_question)
    prompt = render(
        TemplateId.GEN_CLARIFY_QUESTION,
        {
            "focus_intent": intent.name,
            "missing_slots": render_slot_brief(slot),
            "transcript": transcript,
        },
    )
    envelope = _complete_envelope(
        backend, prompt, ("text",),
        lambda obj: None if str(obj.get("text", "")).strip() else "field 'text' must be non-empty",
    )
    return UtteranceGenerated(str(envelope["text"]))


def generate_keeper_request(
    intent: IntentSpec,
    slot_fills: Mapping[str, str],
    transcript: str,
    backend,
) -> UtteranceGenerated:
    """The robot's opening request to the keeper, naming the item and every fill."""
    item = errand_item(intent.name, slot_fills)
    prompt = render(
        TemplateId.GEN_KEEPER_REQUEST,
        {
            "interlocutor": "keeper",
            "focus_intent": intent.name,
            "filled_slots": render_fills(item, slot_fills),
            "transcript": transcript,
        },
    )
    envelope = _complete_envelope(
        backend, prompt, ("text",),
        lambda obj: None if str(obj.get("text", "")).strip() else "field 'text' must be non-empty",
    )
    return UtteranceGenerated(str(envelope["text"]))
