"""Convert the raw MultiWOZ 2.1 distribution into the dialogue-file schema."""

import json
import logging
from pathlib import Path

from .ontology import MULTIWOZ_ACTS
from .text import NONE, canonical_value

logger = logging.getLogger(__name__)

FIVE_DOMAINS = ("attraction", "hotel", "restaurant", "taxi", "train")

_SEMI_NAMES = {"leaveAt": "leaveat", "arriveBy": "arriveby"}
_BOOK_NAMES = {"people": "book people", "day": "book day", "stay": "book stay", "time": "book time"}
_ACT_LOOKUP = {a.lower(): a for a in MULTIWOZ_ACTS}


def _acts_of(entry, fallback):
    raw = entry.get("dialog_act")
    if not isinstance(raw, dict):
        raw = fallback if isinstance(fallback, dict) else {}
    names = []
    for key in raw:
        name = key.split("-", 1)[-1].lower()
        if name not in _ACT_LOOKUP:
            logger.warning("skipping act %r outside the inventory", key)
            continue
        if _ACT_LOOKUP[name] not in names:
            names.append(_ACT_LOOKUP[name])
    return names


def _state_of(metadata, domains):
    state = {}
    for domain in domains:
        section = metadata.get(domain) or {}
        for raw, value in (section.get("semi") or {}).items():
            _put(state, domain, _SEMI_NAMES.get(raw, raw.lower()), value)
        for raw, value in (section.get("book") or {}).items():
            if raw in _BOOK_NAMES:
                _put(state, domain, _BOOK_NAMES[raw], value)
    return state


def _put(state, domain, slot, value):
    if not isinstance(value, str):
        return
    value = canonical_value(value)
    if value != NONE:
        state[f"{domain}-{slot}"] = value


def convert_dialogue(dial_id, raw, acts_by_turn=None, domains=FIVE_DOMAINS):
    """One raw dialogue -> a dialogue record, or None when it leaves ``domains``."""
    goal = raw.get("goal") or {}
    foreign = [d for d, g in goal.items() if d not in domains and isinstance(g, dict) and g]
    if foreign:
        logger.warning("dropping %s: goal mentions %s", dial_id, foreign)
        return None
    log = raw.get("log") or []
    acts_by_turn = acts_by_turn if isinstance(acts_by_turn, dict) else {}
    turns, state = [], {}
    for t in range(1, (len(log) + 1) // 2 + 1):
        user = log[2 * t - 2]
        if t > 1:
            sys_entry = log[2 * t - 3]
            system = sys_entry.get("text", "")
            acts = _acts_of(sys_entry, acts_by_turn.get(str(t - 1)))
        else:
            system, acts = "", []
        if 2 * t - 1 < len(log):
            state = _state_of(log[2 * t - 1].get("metadata") or {}, domains)
        turns.append({"system": system, "user": user.get("text", ""), "system_acts": acts, "state": dict(state)})
    return {"id": dial_id, "turns": turns}


def _read_list(path):
    if path is None or not Path(path).is_file():
        return set()
    return {line.strip() for line in Path(path).read_text().splitlines() if line.strip()}


def convert_multiwoz(raw_dir, domains=FIVE_DOMAINS):
    """Read data.json (+ dialogue_acts.json, valListFile.txt, testListFile.txt) from ``raw_dir``.

    Returns {"train": [...], "dev": [...], "test": [...]} of dialogue records.
    """
    raw_dir = Path(raw_dir)
    data_path = raw_dir / "data.json"
    if not data_path.is_file():
        raise FileNotFoundError(f"{data_path} not found")
    data = json.loads(data_path.read_text(encoding="utf-8"))
    acts_path = raw_dir / "dialogue_acts.json"
    all_acts = json.loads(acts_path.read_text(encoding="utf-8")) if acts_path.is_file() else {}
    dev_ids = _read_list(raw_dir / "valListFile.txt")
    test_ids = _read_list(raw_dir / "testListFile.txt")

    splits = {"train": [], "dev": [], "test": []}
    for dial_id, raw in data.items():
        record = convert_dialogue(dial_id, raw, all_acts.get(dial_id.replace(".json", "")), domains)
        if record is None:
            continue
        split = "dev" if dial_id in dev_ids else "test" if dial_id in test_ids else "train"
        splits[split].append(record)
    return splits
