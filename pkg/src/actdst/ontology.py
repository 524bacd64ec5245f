"""Domain ontology: slots, value sets and the categorical / span partition."""

import enum
import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .text import DONT_CARE, NONE, RESERVED, canonical_value, is_number_or_time

SCHEMA_VERSION = 1

# The 13 system act types of MultiWOZ 2.1.
MULTIWOZ_ACTS = (
    "Inform",
    "Request",
    "Recommend",
    "Select",
    "NoOffer",
    "NoBook",
    "OfferBook",
    "OfferBooked",
    "Book",
    "Welcome",
    "Greet",
    "Bye",
    "Reqmore",
)

# Slot names treated as number/time valued under the hybrid policy.
NUMBER_TIME_SLOTS = frozenset(
    {"leaveat", "arriveby", "book time", "book people", "book stay", "stars"}
)
NUMERIC_FRACTION = 0.9

SPAN_OPTIONS = ("span", NONE, DONT_CARE)


class OntologyError(ValueError):
    pass


class SlotKind(str, enum.Enum):
    CATEGORICAL = "categorical"
    NON_CATEGORICAL = "non_categorical"


class Policy(str, enum.Enum):
    ALL_CATEGORICAL = "all_cat"
    ALL_NON_CATEGORICAL = "all_noncat"
    HYBRID = "hybrid"


def slot_key(domain, slot):
    return f"{domain}-{slot}"


def split_key(key):
    domain, sep, slot = key.partition("-")
    if not sep or not domain or not slot:
        raise OntologyError(f"malformed slot key {key!r}; expected 'domain-slot'")
    return domain.strip().lower(), " ".join(slot.lower().split())


@dataclass(frozen=True)
class OptionSet:
    slot: tuple
    kind: SlotKind
    options: tuple

    def index(self, value):
        return self.options.index(value)

    def __len__(self):
        return len(self.options)


@dataclass(frozen=True)
class Ontology:
    domains: tuple
    slots: tuple
    values: dict
    partition: dict
    acts: tuple = MULTIWOZ_ACTS
    non_categorical_override: tuple = field(default=None)

    @property
    def num_slots(self):
        return len(self.slots)

    def kind(self, domain, slot):
        try:
            return self.partition[(domain, slot)]
        except KeyError:
            raise OntologyError(f"unknown slot {slot_key(domain, slot)!r}") from None

    @property
    def categorical_slots(self):
        return [s for s in self.slots if self.partition[s] is SlotKind.CATEGORICAL]

    @property
    def non_categorical_slots(self):
        return [s for s in self.slots if self.partition[s] is SlotKind.NON_CATEGORICAL]

    def to_dict(self, include_partition=False):
        out = {
            "schema_version": SCHEMA_VERSION,
            "acts": list(self.acts),
            "slots": {slot_key(d, s): list(self.values[(d, s)]) for d, s in self.slots},
        }
        if self.non_categorical_override is not None:
            out["non_categorical"] = list(self.non_categorical_override)
        if include_partition:
            out["partition"] = {slot_key(d, s): self.partition[(d, s)].value for d, s in self.slots}
        return out

    def fingerprint(self):
        """Hash of slot order, values and partition; guards checkpoint loads."""
        payload = self.to_dict(include_partition=True)
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _validate_values(key, raw_values):
    if not isinstance(raw_values, list) or not all(isinstance(v, str) for v in raw_values):
        raise OntologyError(f"values for {key!r} must be a list of strings")
    values = []
    for raw in raw_values:
        value = canonical_value(raw)
        if value in RESERVED:
            raise OntologyError(f"reserved value {raw!r} declared for {key!r}")
        if value in values:
            raise OntologyError(f"duplicate value {raw!r} for {key!r}")
        values.append(value)
    return tuple(values)


def ontology_from_dict(data, policy=Policy.HYBRID):
    if not isinstance(data, dict):
        raise OntologyError("ontology document must be a mapping")
    version = data.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise OntologyError(f"unsupported ontology schema_version {version!r}")
    raw_slots = data.get("slots")
    if not isinstance(raw_slots, dict) or not raw_slots:
        raise OntologyError("ontology needs a non-empty 'slots' mapping")

    domains, slots, values = [], [], {}
    for key, raw_values in raw_slots.items():
        pair = split_key(key)
        if pair in values:
            raise OntologyError(f"duplicate slot {key!r}")
        values[pair] = _validate_values(key, raw_values)
        slots.append(pair)
        if pair[0] not in domains:
            domains.append(pair[0])

    acts = data.get("acts", list(MULTIWOZ_ACTS))
    if not isinstance(acts, list) or not acts or len(set(acts)) != len(acts):
        raise OntologyError("'acts' must be a non-empty list of distinct act names")

    override = data.get("non_categorical")
    if override is not None:
        if not isinstance(override, list) or not all(isinstance(n, str) for n in override):
            raise OntologyError("'non_categorical' must be a list of slot names")
        override = tuple(override)

    onto = Ontology(
        domains=tuple(domains),
        slots=tuple(slots),
        values=values,
        partition={},
        acts=tuple(acts),
        non_categorical_override=override,
    )
    explicit = data.get("partition")
    if explicit is None:
        return partition_slots(onto, policy)
    # an explicit partition (as stored in checkpoints) is taken verbatim
    try:
        partition = {split_key(k): SlotKind(v) for k, v in explicit.items()}
    except (AttributeError, ValueError) as exc:
        raise OntologyError(f"malformed partition: {exc}") from exc
    if set(partition) != set(values):
        raise OntologyError("partition must list every slot exactly once")
    for pair, kind in partition.items():
        if kind is SlotKind.CATEGORICAL and not values[pair]:
            raise OntologyError(f"categorical slot {slot_key(*pair)!r} has an empty value list")
    return replace(onto, partition=partition)


def load_ontology(path, policy=Policy.HYBRID):
    """Read and validate an ontology file; slots are partitioned with ``policy``."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"ontology file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise OntologyError(f"malformed ontology file {path}: {exc}") from exc
    return ontology_from_dict(data, policy)


def save_ontology(ontology, path):
    Path(path).write_text(json.dumps(ontology.to_dict(), indent=2) + "\n", encoding="utf-8")


def _hybrid_non_categorical(ontology, pair, gold_values):
    domain, slot = pair
    if ontology.non_categorical_override is not None:
        names = ontology.non_categorical_override
        return slot in names or slot_key(domain, slot) in names
    if slot in NUMBER_TIME_SLOTS:
        return True
    observed = [v for v in (gold_values or {}).get(pair, ()) if v not in RESERVED]
    if observed:
        hits = sum(is_number_or_time(v) for v in observed)
        return hits / len(observed) >= NUMERIC_FRACTION
    return False


def partition_slots(ontology, policy, gold_values=None):
    """Return a copy of ``ontology`` with every slot assigned a kind.

    ``gold_values`` optionally maps (domain, slot) to the gold values seen in
    a training corpus; under the hybrid policy a slot outside the shipped
    name list becomes non-categorical when at least 90% of those values are
    numbers or HH:MM times.
    """
    policy = Policy(policy)
    partition = {}
    for pair in ontology.slots:
        if policy is Policy.ALL_CATEGORICAL:
            kind = SlotKind.CATEGORICAL
        elif policy is Policy.ALL_NON_CATEGORICAL:
            kind = SlotKind.NON_CATEGORICAL
        elif _hybrid_non_categorical(ontology, pair, gold_values):
            kind = SlotKind.NON_CATEGORICAL
        else:
            kind = SlotKind.CATEGORICAL
        if kind is SlotKind.CATEGORICAL and not ontology.values[pair]:
            raise OntologyError(
                f"categorical slot {slot_key(*pair)!r} has an empty value list"
            )
        partition[pair] = kind
    return replace(ontology, partition=partition)


def option_set(ontology, domain, slot):
    kind = ontology.kind(domain, slot)
    if kind is SlotKind.CATEGORICAL:
        options = ontology.values[(domain, slot)] + (NONE, DONT_CARE)
    else:
        options = SPAN_OPTIONS
    return OptionSet(slot=(domain, slot), kind=kind, options=options)
