"""Simulated care home: locations, attribute-rich inventory, robot actions,
and the scripted keeper whose questions drive learning.

Time is a logical tick counter so every run is deterministic. The scripted
keeper is a pure function of (request, config, asked-history); a human can
play the keeper instead through the gateway's human_keeper mode.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from typing import Mapping, Union

from .catalog import normalize_name
from .errors import IllegalAction, InvalidConfig, IoFailure, UnknownItem

SENIOR_ROOM = "senior_room"
KITCHEN = "kitchen"

CONFIRM_TEXT = "Here you are."


@dataclass(frozen=True)
class Dimension:
    """One attribute of an item, e.g. which juice, or whether tea takes sugar."""

    name: str
    values: tuple[str, ...]
    question: str | None = None

    def normalized_name(self) -> str:
        return normalize_name(self.name)

    def matches(self, value: str) -> str | None:
        """Canonical configured spelling for a value, or None if not allowed."""
        folded = str(value).strip().casefold()
        for v in self.values:
            if v.casefold() == folded:
                return v
        return None


@dataclass(frozen=True)
class WorldConfig:
    locations: tuple[str, ...]
    items: dict[str, tuple[Dimension, ...]]
    travel_ticks: dict[tuple[str, str], int]

    def dimensions(self, item: str) -> tuple[Dimension, ...]:
        dims = self.items.get(str(item).strip().casefold())
        if dims is None:
            raise UnknownItem(f"item {item!r} is not stocked here")
        return dims

    def has_item(self, item: str) -> bool:
        return str(item).strip().casefold() in self.items

    def ticks(self, origin: str, target: str) -> int:
        if origin == target:
            return 0
        return self.travel_ticks.get((origin, target), 1)


@dataclass
class WorldState:
    robot_location: str = SENIOR_ROOM
    carried_item: tuple[str, dict[str, str]] | None = None
    tick: int = 0


# --- actions -------------------------------------------------------------------


@dataclass(frozen=True)
class NavigateTo:
    location: str


@dataclass(frozen=True)
class PickUp:
    item: str
    attributes: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class Deliver:
    pass


Action = Union[NavigateTo, PickUp, Deliver]


def action_name(action: Action) -> str:
    return {NavigateTo: "navigate_to", PickUp: "pick_up", Deliver: "deliver"}[type(action)]


def apply_action(state: WorldState, action: Action, config: WorldConfig) -> tuple[WorldState, int]:
    """Execute one robot action. Returns (new state, ticks consumed).

    Raises IllegalAction when the action's preconditions do not hold.
    """
    if isinstance(action, NavigateTo):
        if action.location not in config.locations:
            raise IllegalAction(f"unknown location {action.location!r}")
        ticks = config.ticks(state.robot_location, action.location)
        return replace(state, robot_location=action.location, tick=state.tick + ticks), ticks

    if isinstance(action, PickUp):
        if state.robot_location != KITCHEN:
            raise IllegalAction("items can only be picked up in the kitchen")
        if state.carried_item is not None:
            raise IllegalAction("already carrying an item")
        item = str(action.item).strip().casefold()
        dims = config.dimensions(item)
        by_name = {d.normalized_name(): d for d in dims}
        attrs: dict[str, str] = {}
        for raw_name, raw_value in action.attributes.items():
            key = normalize_name(raw_name)
            dim = by_name.get(key)
            if dim is None:
                raise IllegalAction(f"item {item!r} has no attribute {raw_name!r}")
            canonical = dim.matches(raw_value)
            if canonical is None:
                raise IllegalAction(
                    f"value {raw_value!r} is not available for {item}.{dim.name}"
                )
            attrs[key] = canonical
        return replace(state, carried_item=(item, attrs), tick=state.tick + 1), 1

    if isinstance(action, Deliver):
        if state.robot_location != SENIOR_ROOM:
            raise IllegalAction("delivery happens in the senior's room")
        if state.carried_item is None:
            raise IllegalAction("nothing to deliver")
        return replace(state, carried_item=None, tick=state.tick + 1), 1

    raise IllegalAction(f"unsupported action {action!r}")


# --- the scripted keeper ---------------------------------------------------------


@dataclass(frozen=True)
class KeeperReply:
    text: str
    kind: str  # "ask" | "constraint" | "confirm"
    dimension: str | None = None


def keeper_reply(
    item: str,
    request_fills: Mapping[str, str],
    config: WorldConfig,
    asked_history: frozenset[str] | set[str] = frozenset(),
) -> KeeperReply:
    """Deterministic keeper policy, scanning the item's dimensions in config order:

    - a dimension with several available values that the request leaves
      unspecified (and that was not asked before this errand) gets a question;
    - a single-valued dimension the request omits or contradicts gets the
      constraint stated;
    - a fully specified, consistent request gets a confirmation.

    Pure function of its inputs; the caller owns the asked-history.
    """
    item_key = str(item).strip().casefold()
    dims = config.dimensions(item_key)
    fills = {normalize_name(k): str(v) for k, v in request_fills.items()}
    for dim in dims:
        provided = fills.get(dim.normalized_name())
        specified = provided is not None and dim.matches(provided) is not None
        if len(dim.values) == 1:
            if not specified:
                only = dim.values[0]
                return KeeperReply(
                    text=f"We only have {only} {item_key}.",
                    kind="constraint",
                    dimension=dim.normalized_name(),
                )
        elif not specified and dim.normalized_name() not in asked_history:
            question = dim.question or f"Which {dim.name} for the {item_key}?"
            return KeeperReply(text=question, kind="ask", dimension=dim.normalized_name())
    return KeeperReply(text=CONFIRM_TEXT, kind="confirm", dimension=None)


# --- configuration loading --------------------------------------------------------


def config_from_obj(obj: object) -> WorldConfig:
    def bad(msg: str) -> InvalidConfig:
        return InvalidConfig(f"invalid world config: {msg}")

    if not isinstance(obj, dict):
        raise bad("top level is not an object")
    locations = obj.get("locations")
    if not isinstance(locations, list) or not all(isinstance(l, str) for l in locations):
        raise bad("locations must be an array of strings")
    if SENIOR_ROOM not in locations or KITCHEN not in locations:
        raise bad(f"locations must include {SENIOR_ROOM!r} and {KITCHEN!r}")

    travel: dict[tuple[str, str], int] = {}
    for entry in obj.get("travel_ticks", []):
        if not (isinstance(entry, list) and len(entry) == 3):
            raise bad("travel_ticks entries must be [from, to, ticks]")
        origin, target, ticks = entry
        if origin not in locations or target not in locations:
            raise bad(f"travel entry references unknown location: {entry}")
        if not isinstance(ticks, int) or ticks < 1:
            raise bad(f"travel ticks must be positive integers: {entry}")
        key, mirror = (origin, target), (target, origin)
        for k in (key, mirror):
            if k in travel and travel[k] != ticks:
                raise bad(f"asymmetric travel ticks for {origin}<->{target}")
        travel[key] = ticks
        travel[mirror] = ticks

    raw_items = obj.get("items", {})
    if not isinstance(raw_items, dict):
        raise bad("items must be an object")
    items: dict[str, tuple[Dimension, ...]] = {}
    for raw_name, raw_dims in raw_items.items():
        if not isinstance(raw_dims, list):
            raise bad(f"item {raw_name!r} must map to a list of dimensions")
        dims = []
        seen = set()
        for raw in raw_dims:
            if not isinstance(raw, dict) or "name" not in raw or "values" not in raw:
                raise bad(f"dimension of {raw_name!r} needs 'name' and 'values'")
            values = raw["values"]
            if not isinstance(values, list) or not values or not all(
                isinstance(v, str) and v.strip() for v in values
            ):
                raise bad(f"dimension {raw['name']!r} of {raw_name!r} has an empty value set")
            dim = Dimension(
                name=str(raw["name"]),
                values=tuple(values),
                question=str(raw["question"]) if raw.get("question") else None,
            )
            if dim.normalized_name() in seen:
                raise bad(f"duplicate dimension {dim.name!r} on item {raw_name!r}")
            seen.add(dim.normalized_name())
            dims.append(dim)
        items[str(raw_name).strip().casefold()] = tuple(dims)

    return WorldConfig(locations=tuple(locations), items=items, travel_ticks=travel)


def load_world_config(path: str | os.PathLike) -> WorldConfig:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            obj = json.load(handle)
    except OSError as exc:
        raise IoFailure(f"cannot read world config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"world config {path} is not valid JSON: {exc}") from exc
    return config_from_obj(obj)


def default_world_config() -> WorldConfig:
    from .resources import default_world_text

    return config_from_obj(json.loads(default_world_text()))
