"""Access to the packaged default data files (seed catalog, world, rules)."""

from __future__ import annotations

from importlib import resources


def _read(name: str) -> str:
    return resources.files("carebot").joinpath("data").joinpath(name).read_text("utf-8")


def seed_catalog_text() -> str:
    return _read("seed_catalog.json")


def default_world_text() -> str:
    return _read("carehome.json")


def default_rules_text() -> str:
    return _read("scripted_rules.json")
