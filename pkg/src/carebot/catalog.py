"""Growing knowledge base of user intents, their slots, and task bindings.

This is the part of the system that learns: unexpected mid-task questions add
new intents, new slots on existing intents, and option sets for slots. The
whole catalog persists as a single versioned JSON document (sorted keys,
trailing newline) so a restarted robot keeps everything it was taught.

Learning is monotone: no public operation removes an intent or a slot.
"""

from __future__ import annotations

import json
import os
import tempfile
import threading
from copy import deepcopy
from dataclasses import dataclass, field
from typing import Collection, Iterable

from .errors import (
    CorruptCatalog,
    DuplicateIntent,
    IoFailure,
    NoBinding,
    UnknownIntent,
    UnknownSlot,
    UnknownTask,
)

SCHEMA_VERSION = 1

ORIGINS = ("seeded", "learned")


def normalize_name(name: str) -> str:
    """Normalize an identifier: lowercase, trimmed, inner whitespace to underscores.

    Backend output casing is unstable ("Black" vs "black", "Bring Juice" vs
    "bring_juice"), so every identifier entering the catalog goes through here.
    """
    return "_".join(str(name).strip().lower().split())


def normalize_options(options: Iterable[str]) -> list[str]:
    """Case-fold, trim and deduplicate option values, keeping first-seen order."""
    seen: set[str] = set()
    out: list[str] = []
    for raw in options:
        value = str(raw).strip().casefold()
        if value and value not in seen:
            seen.add(value)
            out.append(value)
    return out


@dataclass
class SlotSpec:
    """One parameter of an intent, e.g. ``which`` on an item request.

    An empty ``options`` list means the slot is unconstrained.
    """

    name: str
    description: str = ""
    options: list[str] = field(default_factory=list)
    required: bool = True
    clarifying_question: str | None = None

    def __post_init__(self) -> None:
        self.name = normalize_name(self.name)
        if not self.name:
            raise ValueError("slot name must be non-empty")
        self.options = normalize_options(self.options)

    def allows(self, value: str) -> bool:
        """True when the slot is unconstrained or the value matches an option."""
        return not self.options or str(value).strip().casefold() in self.options

    def canonical_value(self, value: str) -> str:
        """Map a value onto the stored option spelling; pass through otherwise."""
        folded = str(value).strip().casefold()
        if folded in self.options:
            return folded
        return value


@dataclass
class IntentSpec:
    """A user intent: what may be asked, and with which parameters."""

    name: str
    description: str = ""
    slots: list[SlotSpec] = field(default_factory=list)
    origin: str = "learned"
    created_at: int = 0

    def __post_init__(self) -> None:
        self.name = normalize_name(self.name)
        if not self.name:
            raise ValueError("intent name must be non-empty")
        if self.origin not in ORIGINS:
            raise ValueError(f"origin must be one of {ORIGINS}, got {self.origin!r}")
        names = [s.name for s in self.slots]
        if len(names) != len(set(names)):
            raise ValueError(f"duplicate slot names in intent {self.name!r}")

    def slot(self, slot_name: str) -> SlotSpec | None:
        wanted = normalize_name(slot_name)
        for s in self.slots:
            if s.name == wanted:
                return s
        return None

    def require_slot(self, slot_name: str) -> SlotSpec:
        found = self.slot(slot_name)
        if found is None:
            raise UnknownSlot(f"intent {self.name!r} has no slot {slot_name!r}")
        return found

    def slot_names(self) -> list[str]:
        return [s.name for s in self.slots]


@dataclass
class Catalog:
    """In-memory catalog state. Not thread-safe; see CatalogStore."""

    schema_version: int = SCHEMA_VERSION
    intents: dict[str, IntentSpec] = field(default_factory=dict)
    bindings: dict[str, str] = field(default_factory=dict)
    next_seq: int = 1

    # -- queries --------------------------------------------------------

    def list_intents(self) -> list[IntentSpec]:
        """All intents ordered by creation sequence, then name."""
        return sorted(self.intents.values(), key=lambda i: (i.created_at, i.name))

    def get(self, intent_name: str) -> IntentSpec | None:
        return self.intents.get(normalize_name(intent_name))

    def require(self, intent_name: str) -> IntentSpec:
        spec = self.get(intent_name)
        if spec is None:
            raise UnknownIntent(f"unknown intent {intent_name!r}")
        return spec

    def resolve_task(self, intent_name: str) -> str:
        """Name of the task bound to the intent."""
        task = self.bindings.get(normalize_name(intent_name))
        if task is None:
            raise NoBinding(f"no task bound to intent {intent_name!r}")
        return task

    # -- mutations (all additive) ----------------------------------------

    def register_intent(
        self,
        spec: IntentSpec,
        binding_task: str,
        known_tasks: Collection[str] | None = None,
    ) -> int:
        """Store a new intent and bind it to a task. Returns the creation seq.

        When ``known_tasks`` is given, the binding target must be in it.
        """
        if spec.name in self.intents:
            raise DuplicateIntent(f"intent {spec.name!r} already registered")
        if known_tasks is not None and binding_task not in known_tasks:
            raise UnknownTask(f"cannot bind {spec.name!r} to unknown task {binding_task!r}")
        stored = deepcopy(spec)
        if stored.origin != "seeded":
            stored.origin = "learned"
        stored.created_at = self.next_seq
        self.next_seq += 1
        self.intents[stored.name] = stored
        self.bindings[stored.name] = binding_task
        return stored.created_at

    def add_slot(self, intent_name: str, slot: SlotSpec) -> IntentSpec:
        """Append a slot; merging with an existing slot of the same name is a no-op
        apart from a union of options (repeated keeper questions must be idempotent).
        """
        spec = self.require(intent_name)
        incoming = deepcopy(slot)
        existing = spec.slot(incoming.name)
        if existing is None:
            spec.slots.append(incoming)
            return spec
        existing.options = normalize_options(existing.options + incoming.options)
        if existing.clarifying_question is None and incoming.clarifying_question:
            existing.clarifying_question = incoming.clarifying_question
        return spec

    def set_slot_options(
        self, intent_name: str, slot_name: str, options: Iterable[str]
    ) -> SlotSpec:
        """Replace a slot's option set. An empty set means unconstrained."""
        spec = self.require(intent_name)
        slot = spec.require_slot(slot_name)
        slot.options = normalize_options(options)
        return slot

    # -- serialization ----------------------------------------------------

    def to_document(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "next_seq": self.next_seq,
            "intents": [
                {
                    "name": i.name,
                    "description": i.description,
                    "origin": i.origin,
                    "created_at": i.created_at,
                    "slots": [
                        {
                            "name": s.name,
                            "description": s.description,
                            "options": list(s.options),
                            "required": s.required,
                            "clarifying_question": s.clarifying_question,
                        }
                        for s in i.slots
                    ],
                }
                for i in self.list_intents()
            ],
            "bindings": [
                {"intent_name": name, "task_name": task}
                for name, task in sorted(self.bindings.items())
            ],
        }

    @classmethod
    def from_document(cls, doc: object) -> "Catalog":
        """Build and validate a catalog from a parsed document.

        Raises CorruptCatalog on any structural or invariant violation; never
        returns a half-valid catalog.
        """

        def bad(msg: str) -> CorruptCatalog:
            return CorruptCatalog(f"invalid catalog document: {msg}")

        if not isinstance(doc, dict):
            raise bad("top level is not an object")
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise bad(f"unsupported schema_version {doc.get('schema_version')!r}")
        next_seq = doc.get("next_seq")
        if not isinstance(next_seq, int) or next_seq < 1:
            raise bad("next_seq must be a positive integer")
        raw_intents = doc.get("intents")
        raw_bindings = doc.get("bindings")
        if not isinstance(raw_intents, list) or not isinstance(raw_bindings, list):
            raise bad("intents and bindings must be arrays")

        catalog = cls(next_seq=next_seq)
        max_seq = 0
        for entry in raw_intents:
            if not isinstance(entry, dict):
                raise bad("intent entry is not an object")
            try:
                slots = [
                    SlotSpec(
                        name=s["name"],
                        description=s.get("description", ""),
                        options=s.get("options", []),
                        required=bool(s.get("required", True)),
                        clarifying_question=s.get("clarifying_question"),
                    )
                    for s in entry.get("slots", [])
                ]
                spec = IntentSpec(
                    name=entry["name"],
                    description=entry.get("description", ""),
                    slots=slots,
                    origin=entry.get("origin", "seeded"),
                    created_at=entry.get("created_at", 0),
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise bad(f"bad intent entry: {exc}") from exc
            if spec.name != entry["name"]:
                raise bad(f"intent name {entry['name']!r} is not normalized")
            if not isinstance(spec.created_at, int) or spec.created_at < 1:
                raise bad(f"intent {spec.name!r} has invalid created_at")
            if spec.name in catalog.intents:
                raise bad(f"duplicate intent {spec.name!r}")
            catalog.intents[spec.name] = spec
            max_seq = max(max_seq, spec.created_at)

        for entry in raw_bindings:
            if not isinstance(entry, dict):
                raise bad("binding entry is not an object")
            intent_name = entry.get("intent_name")
            task_name = entry.get("task_name")
            if not isinstance(intent_name, str) or not isinstance(task_name, str):
                raise bad("binding fields must be strings")
            if intent_name not in catalog.intents:
                raise bad(f"binding refers to unknown intent {intent_name!r}")
            if intent_name in catalog.bindings:
                raise bad(f"duplicate binding for intent {intent_name!r}")
            catalog.bindings[intent_name] = task_name

        if next_seq <= max_seq:
            raise bad("next_seq must be greater than every created_at")
        return catalog

    def dumps(self) -> str:
        """Canonical document text: sorted keys, two-space indent, trailing newline."""
        return json.dumps(self.to_document(), ensure_ascii=False, indent=2, sort_keys=True) + "\n"

    @classmethod
    def loads(cls, text: str) -> "Catalog":
        if not text.endswith("\n"):
            raise CorruptCatalog("invalid catalog document: missing trailing newline")
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise CorruptCatalog(f"invalid catalog document: {exc}") from exc
        return cls.from_document(doc)

    def save(self, path: str | os.PathLike) -> None:
        """Atomic write: temp file in the same directory, then rename."""
        path = os.fspath(path)
        directory = os.path.dirname(path) or "."
        try:
            fd, tmp = tempfile.mkstemp(prefix=".catalog-", suffix=".tmp", dir=directory)
            try:
                with os.fdopen(fd, "w", encoding="utf-8") as handle:
                    handle.write(self.dumps())
                os.replace(tmp, path)
            except BaseException:
                if os.path.exists(tmp):
                    os.unlink(tmp)
                raise
        except OSError as exc:
            raise IoFailure(f"cannot write catalog to {path}: {exc}") from exc

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Catalog":
        try:
            with open(path, "r", encoding="utf-8") as handle:
                text = handle.read()
        except OSError as exc:
            raise IoFailure(f"cannot read catalog from {path}: {exc}") from exc
        return cls.loads(text)

    def snapshot(self) -> "Catalog":
        return deepcopy(self)


class CatalogStore:
    """Single-writer owner of a catalog.

    All mutations are serialized through this object; readers take immutable
    deep-copy snapshots that are safe to hand across threads. When a path is
    configured, every mutation is persisted (atomically) right away.
    """

    def __init__(self, catalog: Catalog | None = None, path: str | None = None,
                 autosave: bool = True) -> None:
        self._catalog = catalog if catalog is not None else Catalog()
        self._path = os.fspath(path) if path is not None else None
        self._autosave = autosave
        self._lock = threading.RLock()

    @classmethod
    def open(cls, path: str | os.PathLike, autosave: bool = True) -> "CatalogStore":
        return cls(Catalog.load(path), path=os.fspath(path), autosave=autosave)

    @property
    def path(self) -> str | None:
        return self._path

    def snapshot(self) -> Catalog:
        with self._lock:
            return self._catalog.snapshot()

    def list_intents(self) -> list[IntentSpec]:
        with self._lock:
            return deepcopy(self._catalog.list_intents())

    def resolve_task(self, intent_name: str) -> str:
        with self._lock:
            return self._catalog.resolve_task(intent_name)

    def register_intent(
        self, spec: IntentSpec, binding_task: str,
        known_tasks: Collection[str] | None = None,
    ) -> int:
        with self._lock:
            seq = self._catalog.register_intent(spec, binding_task, known_tasks)
            self._persist()
            return seq

    def add_slot(self, intent_name: str, slot: SlotSpec) -> IntentSpec:
        with self._lock:
            spec = self._catalog.add_slot(intent_name, slot)
            self._persist()
            return deepcopy(spec)

    def set_slot_options(self, intent_name: str, slot_name: str,
                         options: Iterable[str]) -> SlotSpec:
        with self._lock:
            slot = self._catalog.set_slot_options(intent_name, slot_name, options)
            self._persist()
            return deepcopy(slot)

    def save(self, path: str | os.PathLike | None = None) -> None:
        with self._lock:
            target = os.fspath(path) if path is not None else self._path
            if target is None:
                raise IoFailure("no catalog path configured")
            self._catalog.save(target)

    def reload(self) -> None:
        """Replace the in-memory catalog with the persisted one.

        Loads fully before swapping, so a corrupt file leaves state intact.
        """
        with self._lock:
            if self._path is None:
                raise IoFailure("no catalog path configured")
            self._catalog = Catalog.load(self._path)

    def _persist(self) -> None:
        if self._autosave and self._path is not None:
            self._catalog.save(self._path)
