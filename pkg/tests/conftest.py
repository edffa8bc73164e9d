import os

import pytest

from carebot.backends import ScriptedBackend
from carebot.catalog import Catalog, CatalogStore, IntentSpec, SlotSpec
from carebot.gateway import GatewayService
from carebot.resources import seed_catalog_text

SCENARIO_DIR = os.path.join(os.path.dirname(__file__), "..", "scenarios")


def scenario_path(name: str) -> str:
    return os.path.abspath(os.path.join(SCENARIO_DIR, name))


def write_seed(path) -> str:
    path = os.fspath(path)
    with open(path, "w", encoding="utf-8") as out:
        out.write(seed_catalog_text())
    return path


@pytest.fixture
def seed_catalog_path(tmp_path) -> str:
    return write_seed(tmp_path / "catalog.json")


@pytest.fixture
def seed_store(seed_catalog_path) -> CatalogStore:
    return CatalogStore.open(seed_catalog_path)


@pytest.fixture(scope="session")
def scripted() -> ScriptedBackend:
    return ScriptedBackend.default()


@pytest.fixture
def service(seed_store) -> GatewayService:
    return GatewayService(catalog_store=seed_store)


def sample_catalog() -> Catalog:
    """A small mixed catalog used by serialization tests."""
    catalog = Catalog()
    catalog.register_intent(
        IntentSpec(
            name="bring_goods",
            description="fetch an item",
            slots=[SlotSpec(name="item", clarifying_question="What should I bring you?")],
            origin="seeded",
        ),
        "bring_goods_task",
    )
    catalog.register_intent(
        IntentSpec(
            name="bring_tea",
            slots=[
                SlotSpec(name="blackOrGreen", options=["black", "green"]),
                SlotSpec(name="sugar", options=["yes", "no"]),
                SlotSpec(name="lemon", options=["yes", "no"]),
            ],
        ),
        "bring_goods_task",
    )
    return catalog
