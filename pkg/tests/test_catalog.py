import json

import pytest

from carebot.catalog import Catalog, CatalogStore, IntentSpec, SlotSpec, normalize_name, normalize_options
from carebot.errors import (
    CorruptCatalog,
    DuplicateIntent,
    NoBinding,
    UnknownIntent,
    UnknownSlot,
    UnknownTask,
)

from conftest import sample_catalog


def test_normalize_name():
    assert normalize_name("  Bring Juice ") == "bring_juice"
    assert normalize_name("blackOrGreen") == "blackorgreen"
    assert normalize_name("a   b\tc") == "a_b_c"


def test_normalize_options_dedupes_case_folded():
    assert normalize_options(["Black", "black", " BLACK "]) == ["black"]
    assert normalize_options(["b", "a", "b"]) == ["b", "a"]  # first-seen order
    assert normalize_options(["", "  "]) == []


def test_slotspec_normalizes_and_validates():
    slot = SlotSpec(name=" Which ", options=["Apple", "apple", "Orange"])
    assert slot.name == "which"
    assert slot.options == ["apple", "orange"]
    with pytest.raises(ValueError):
        SlotSpec(name="   ")


def test_intent_rejects_duplicate_slots():
    with pytest.raises(ValueError):
        IntentSpec(name="x", slots=[SlotSpec(name="a"), SlotSpec(name="A ")])


def test_list_intents_empty():
    assert Catalog().list_intents() == []


def test_list_intents_seed_file(seed_store):
    intents = seed_store.snapshot().list_intents()
    assert [i.name for i in intents] == ["bring_goods"]
    assert intents[0].slot_names() == ["item"]
    assert intents[0].origin == "seeded"


def test_list_intents_orders_by_creation():
    catalog = Catalog()
    catalog.register_intent(IntentSpec(name="bring_goods"), "t")
    catalog.register_intent(IntentSpec(name="bring_juice", slots=[SlotSpec(name="which")]), "t")
    assert [i.name for i in catalog.list_intents()] == ["bring_goods", "bring_juice"]


def test_register_intent_binds_and_resolves():
    catalog = Catalog()
    seq = catalog.register_intent(
        IntentSpec(name="bring_juice", slots=[SlotSpec(name="which")]),
        "bring_goods_task",
        known_tasks={"bring_goods_task"},
    )
    assert seq == 1
    assert catalog.resolve_task("bring_juice") == "bring_goods_task"
    assert catalog.intents["bring_juice"].origin == "learned"


def test_register_duplicate_intent():
    catalog = Catalog()
    catalog.register_intent(IntentSpec(name="Bring Juice"), "t")
    with pytest.raises(DuplicateIntent):
        catalog.register_intent(IntentSpec(name="bring_juice"), "t")


def test_register_unknown_task_rejected():
    catalog = Catalog()
    with pytest.raises(UnknownTask):
        catalog.register_intent(IntentSpec(name="x"), "nope", known_tasks={"bring_goods_task"})


def test_register_with_no_slots_is_legal():
    catalog = Catalog()
    catalog.register_intent(IntentSpec(name="sing_song"), "t")
    assert catalog.intents["sing_song"].slots == []


def test_add_slot_appends_in_order():
    catalog = Catalog()
    catalog.register_intent(IntentSpec(name="bring_tea"), "t")
    catalog.add_slot("bring_tea", SlotSpec(name="sugar"))
    catalog.add_slot("bring_tea", SlotSpec(name="lemon"))
    assert catalog.intents["bring_tea"].slot_names() == ["sugar", "lemon"]


def test_add_slot_merge_is_idempotent():
    catalog = Catalog()
    catalog.register_intent(IntentSpec(name="bring_juice"), "t")
    catalog.add_slot("bring_juice", SlotSpec(name="which", description="kind"))
    before = catalog.snapshot()
    catalog.add_slot("bring_juice", SlotSpec(name="which", description="other words"))
    assert catalog == before  # merge keeps the existing description


def test_add_slot_merge_unions_options():
    catalog = Catalog()
    catalog.register_intent(
        IntentSpec(name="bring_tea", slots=[SlotSpec(name="kind", options=["black"])]), "t"
    )
    catalog.add_slot("bring_tea", SlotSpec(name="kind", options=["Green", "black"]))
    assert catalog.intents["bring_tea"].slot("kind").options == ["black", "green"]


def test_add_slot_unknown_intent():
    with pytest.raises(UnknownIntent):
        Catalog().add_slot("missing", SlotSpec(name="x"))


def test_set_slot_options_replaces_and_validates():
    catalog = Catalog()
    catalog.register_intent(
        IntentSpec(name="bring_coffee", slots=[SlotSpec(name="type")]), "t"
    )
    slot = catalog.set_slot_options("bring_coffee", "type", ["Black", "black"])
    assert slot.options == ["black"]
    assert catalog.intents["bring_coffee"].slot("type").allows("BLACK")
    assert not catalog.intents["bring_coffee"].slot("type").allows("green")
    # empty set means unconstrained again
    catalog.set_slot_options("bring_coffee", "type", [])
    assert catalog.intents["bring_coffee"].slot("type").allows("green")


def test_set_slot_options_errors():
    catalog = Catalog()
    with pytest.raises(UnknownIntent):
        catalog.set_slot_options("x", "y", [])
    catalog.register_intent(IntentSpec(name="x"), "t")
    with pytest.raises(UnknownSlot):
        catalog.set_slot_options("x", "y", [])


def test_resolve_task_no_binding():
    with pytest.raises(NoBinding):
        Catalog().resolve_task("bring_juice")


def test_round_trip_identity(tmp_path):
    catalog = sample_catalog()
    path = tmp_path / "cat.json"
    catalog.save(path)
    loaded = Catalog.load(path)
    assert loaded == catalog
    # and byte-for-byte stable across a second save
    loaded.save(tmp_path / "cat2.json")
    assert (tmp_path / "cat.json").read_bytes() == (tmp_path / "cat2.json").read_bytes()


def test_round_trip_preserves_learned_slots(tmp_path):
    catalog = sample_catalog()
    catalog.set_slot_options("bring_tea", "blackorgreen", ["black"])
    path = tmp_path / "cat.json"
    catalog.save(path)
    loaded = Catalog.load(path)
    tea = loaded.require("bring_tea")
    assert tea.slot_names() == ["blackorgreen", "sugar", "lemon"]
    assert tea.slot("blackorgreen").options == ["black"]
    assert loaded.next_seq == catalog.next_seq


def test_load_truncated_file_every_offset(tmp_path):
    catalog = sample_catalog()
    path = tmp_path / "cat.json"
    catalog.save(path)
    blob = path.read_bytes()
    victim = tmp_path / "trunc.json"
    for cut in range(len(blob)):
        victim.write_bytes(blob[:cut])
        with pytest.raises(CorruptCatalog):
            Catalog.load(victim)


def test_load_rejects_invariant_violations(tmp_path):
    doc = json.loads(sample_catalog().dumps())
    bad_seq = dict(doc, next_seq=1)  # not greater than created_at
    bad_binding = dict(doc, bindings=[{"intent_name": "ghost", "task_name": "t"}])
    bad_name = json.loads(json.dumps(doc))
    bad_name["intents"][0]["name"] = "Bring Goods"
    for broken in (bad_seq, bad_binding, bad_name, [], "nope", {"schema_version": 99}):
        with pytest.raises(CorruptCatalog):
            Catalog.from_document(broken)


def test_store_load_failure_keeps_prior_state(tmp_path):
    path = tmp_path / "cat.json"
    sample_catalog().save(path)
    store = CatalogStore.open(path)
    before = store.snapshot()
    path.write_text("{broken", encoding="utf-8")
    with pytest.raises(CorruptCatalog):
        store.reload()
    assert store.snapshot() == before


def test_store_autosaves_on_mutation(tmp_path):
    path = tmp_path / "cat.json"
    sample_catalog().save(path)
    store = CatalogStore.open(path)
    store.add_slot("bring_goods", SlotSpec(name="urgency"))
    assert Catalog.load(path).require("bring_goods").slot("urgency") is not None


def test_snapshot_is_isolated(seed_store):
    snap = seed_store.snapshot()
    snap.register_intent(IntentSpec(name="bring_juice"), "t")
    assert seed_store.snapshot().get("bring_juice") is None
