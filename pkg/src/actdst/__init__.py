"""Act-aware dialogue state tracking."""

from .ontology import Ontology, OptionSet, Policy, SlotKind, load_ontology, option_set, partition_slots

__version__ = "0.1.0"

__all__ = [
    "Ontology",
    "OptionSet",
    "Policy",
    "SlotKind",
    "load_ontology",
    "option_set",
    "partition_slots",
]
