import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from actdst.ontology import (
    MULTIWOZ_ACTS,
    OntologyError,
    Policy,
    SlotKind,
    load_ontology,
    ontology_from_dict,
    option_set,
    partition_slots,
)
from actdst.text import canonical_value, match_key, tokenize

# Frozen by hand from the shipped slot list and the number/time name list.
HYBRID_SPAN_SLOTS = {
    ("hotel", "book people"),
    ("hotel", "book stay"),
    ("hotel", "stars"),
    ("restaurant", "book people"),
    ("restaurant", "book time"),
    ("taxi", "arriveby"),
    ("taxi", "leaveat"),
    ("train", "arriveby"),
    ("train", "book people"),
    ("train", "leaveat"),
}


def test_shipped_ontology_shape(multiwoz_ontology):
    onto = multiwoz_ontology
    assert onto.num_slots == 30
    assert onto.domains == ("attraction", "hotel", "restaurant", "taxi", "train")
    assert onto.acts == MULTIWOZ_ACTS and len(onto.acts) == 13
    assert set(onto.non_categorical_slots) == HYBRID_SPAN_SLOTS


def test_option_order_appends_reserved(multiwoz_ontology):
    opts = option_set(multiwoz_ontology, "hotel", "parking")
    assert opts.options == ("yes", "no", "free", "none", "dont_care")
    assert opts.kind is SlotKind.CATEGORICAL
    assert option_set(multiwoz_ontology, "train", "leaveat").options == ("span", "none", "dont_care")


def test_single_value_slot_has_three_options():
    onto = ontology_from_dict({"slots": {"hotel-internet": ["yes"]}})
    assert option_set(onto, "hotel", "internet").options == ("yes", "none", "dont_care")


@pytest.mark.parametrize(
    "doc, fragment",
    [
        ({"slots": {"hotel-area": ["north", "none"]}}, "reserved"),
        ({"slots": {"hotel-area": ["north", "dontcare"]}}, "reserved"),
        ({"slots": {"hotel-area": ["north", "North"]}}, "duplicate value"),
        ({"slots": {"hotel-area": ["x"], "Hotel-Area": ["y"]}}, "duplicate slot"),
        ({"slots": {"hotelarea": ["x"]}}, "malformed slot key"),
        ({"slots": {}}, "non-empty"),
        ({"slots": {"hotel-area": "north"}}, "list of strings"),
        ({"slots": {"hotel-area": ["n"]}, "schema_version": 9}, "schema_version"),
        ({"slots": {"hotel-area": ["n"]}, "acts": ["Inform", "Inform"]}, "distinct"),
        ({"slots": {"hotel-area": []}}, "empty value list"),
    ],
)
def test_invalid_documents(doc, fragment):
    with pytest.raises(OntologyError, match=fragment):
        ontology_from_dict(doc)


def test_load_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_ontology(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(OntologyError):
        load_ontology(bad)


def test_empty_value_list_ok_for_span_slot():
    onto = ontology_from_dict({"slots": {"train-leaveat": [], "hotel-area": ["north"]}})
    assert onto.kind("train", "leaveat") is SlotKind.NON_CATEGORICAL


def test_policies(multiwoz_ontology):
    all_cat = partition_slots(multiwoz_ontology, Policy.ALL_CATEGORICAL)
    assert all_cat.non_categorical_slots == []
    all_span = partition_slots(multiwoz_ontology, Policy.ALL_NON_CATEGORICAL)
    assert all_span.categorical_slots == []


def test_partition_idempotent(multiwoz_ontology):
    again = partition_slots(multiwoz_ontology, Policy.HYBRID)
    assert again.partition == multiwoz_ontology.partition
    assert again.fingerprint() == multiwoz_ontology.fingerprint()


def test_numeric_fallback_threshold():
    onto = ontology_from_dict({"slots": {"hotel-rooms": ["1", "2"], "hotel-area": ["north"]}})
    nine = {("hotel", "rooms"): ["1"] * 9 + ["several"]}
    eight = {("hotel", "rooms"): ["1"] * 8 + ["several", "many"]}
    assert partition_slots(onto, "hybrid", nine).kind("hotel", "rooms") is SlotKind.NON_CATEGORICAL
    assert partition_slots(onto, "hybrid", eight).kind("hotel", "rooms") is SlotKind.CATEGORICAL


def test_sidecar_override():
    doc = {"slots": {"hotel-area": ["north"], "hotel-stars": ["1"]}, "non_categorical": ["hotel-area"]}
    onto = ontology_from_dict(doc)
    assert onto.non_categorical_slots == [("hotel", "area")]


def test_round_trip_and_explicit_partition(multiwoz_ontology, tmp_path):
    path = tmp_path / "o.json"
    path.write_text(json.dumps(multiwoz_ontology.to_dict()))
    assert load_ontology(path).fingerprint() == multiwoz_ontology.fingerprint()
    stored = ontology_from_dict(multiwoz_ontology.to_dict(include_partition=True), Policy.ALL_CATEGORICAL)
    assert stored.partition == multiwoz_ontology.partition


def test_fingerprint_tracks_partition(multiwoz_ontology):
    assert partition_slots(multiwoz_ontology, "all_cat").fingerprint() != multiwoz_ontology.fingerprint()


def test_tokenize_keeps_times():
    assert tokenize("Leave after 20:45, please!") == ["leave", "after", "20:45", ",", "please", "!"]


@pytest.mark.parametrize("raw", ["dontcare", "don't care", "DONT CARE", "do not care", "dont_care"])
def test_dont_care_variants(raw):
    assert canonical_value(raw) == "dont_care"


@pytest.mark.parametrize("raw", ["", "none", "not mentioned", None, "  None "])
def test_none_variants(raw):
    assert canonical_value(raw) == "none"


def test_match_key_normalizes():
    assert match_key("The Gonville Hotel") == match_key("gonville hotel")
    assert match_key("20:45") == "20:45"
    assert match_key("centre", {"center": "centre"}) == match_key("center", {"center": "centre"})


words = st.text(alphabet="abcdefgh :'-.", min_size=0, max_size=20)


@given(words)
def test_canonical_idempotent(value):
    once = canonical_value(value)
    assert canonical_value(once) == once
    assert match_key(once) == match_key(value)


@given(st.lists(st.text(alphabet="abcxyz", min_size=1, max_size=5), min_size=1, max_size=6, unique=True))
def test_option_count(values):
    onto = ontology_from_dict({"slots": {"hotel-area": values}})
    assert len(option_set(onto, "hotel", "area")) == len(values) + 2
