"""Dialogue ingestion, per-turn feature extraction and supervision labels."""

import enum
import json
import logging
import random
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .ontology import SlotKind, option_set, slot_key, split_key
from .text import DONT_CARE, NONE, canonical_value, detokenize, tokenize

logger = logging.getLogger(__name__)

SYS, USER = "SYS", "USER"
ROLE_IDS = {SYS: 1, USER: 2}
DEFAULT_CONTEXT_CAP = 512
MIN_CHAR_LEN = 4  # widest char-CNN kernel
MAX_CHAR_LEN = 20
PAD, UNK = "<pad>", "<unk>"


class CorpusError(ValueError):
    pass


class SpanType(enum.IntEnum):
    SPAN = 0
    NONE = 1
    DONT_CARE = 2


@dataclass
class Turn:
    system_utterance: list
    user_utterance: list
    system_acts: list
    gold_state: dict


@dataclass
class Dialogue:
    id: str
    turns: list

    def __len__(self):
        return len(self.turns)


@dataclass(frozen=True)
class ActSequence:
    names: tuple
    turn_indices: tuple

    def __len__(self):
        return len(self.names)


@dataclass
class Label:
    value_index: Optional[int] = None
    span_type: Optional[SpanType] = None
    start: Optional[int] = None
    end: Optional[int] = None


@dataclass
class TurnExample:
    dialogue_id: str
    turn: int
    context_tokens: list
    roles: list
    act_sequence: ActSequence
    labels: dict
    gold_state: dict
    exact: np.ndarray = field(repr=False, default=None)


def act_token(name):
    return name.lower()


def _normalize_act(name, inventory, strip_domain):
    if strip_domain and "-" in name:
        name = name.split("-", 1)[1]
    lookup = {a.lower(): a for a in inventory}
    if name.lower() not in lookup:
        raise CorpusError(f"act {name!r} is not in the act inventory")
    return lookup[name.lower()]


def _warn(kind, **fields):
    logger.warning("%s %s", kind, json.dumps(fields, sort_keys=True), extra={"record": {"kind": kind, **fields}})


def dialogues_from_records(records, ontology, strip_act_domain=True):
    """Build Dialogue objects from decoded dialogue-file records.

    Dialogues whose gold state touches a domain outside the ontology are
    dropped with a warning. Unknown acts are a hard error.
    """
    if not isinstance(records, list):
        raise CorpusError("dialogue file must hold a list of dialogues")
    known = set(ontology.slots)
    dialogues = []
    for rec in records:
        try:
            dial_id = str(rec["id"])
            raw_turns = rec["turns"]
        except (KeyError, TypeError) as exc:
            raise CorpusError(f"malformed dialogue record: {exc}") from exc
        turns, foreign = [], set()
        prev_state = {}
        for t, raw in enumerate(raw_turns, start=1):
            if not isinstance(raw, dict) or "user" not in raw:
                raise CorpusError(f"malformed turn {t} in dialogue {dial_id}")
            acts = [
                _normalize_act(a, ontology.acts, strip_act_domain)
                for a in raw.get("system_acts", [])
            ]
            state = {}
            for key, value in (raw.get("state") or {}).items():
                pair = split_key(key)
                if pair[0] not in ontology.domains:
                    foreign.add(pair[0])
                    continue
                if pair not in known:
                    _warn("unknown_slot", dialogue=dial_id, turn=t, slot=key)
                    continue
                value = canonical_value(value)
                if value != NONE:
                    state[pair] = value
            for pair, value in prev_state.items():
                if pair not in state:
                    _warn("state_dropped", dialogue=dial_id, turn=t, slot=slot_key(*pair), previous=value)
            prev_state = state
            turns.append(
                Turn(
                    system_utterance=tokenize(raw.get("system") or ""),
                    user_utterance=tokenize(raw["user"]),
                    system_acts=acts,
                    gold_state=state,
                )
            )
        if foreign:
            _warn("foreign_domain", dialogue=dial_id, domains=sorted(foreign))
            continue
        dialogues.append(Dialogue(id=dial_id, turns=turns))
    return dialogues


def load_dialogues(path, ontology, strip_act_domain=True):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"dialogue file not found: {path}")
    text = path.read_text(encoding="utf-8")
    if not text.strip():
        return []
    try:
        records = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorpusError(f"malformed dialogue file {path}: {exc}") from exc
    return dialogues_from_records(records, ontology, strip_act_domain)


def dialogue_to_record(dialogue):
    return {
        "id": dialogue.id,
        "turns": [
            {
                "system": detokenize(turn.system_utterance),
                "user": detokenize(turn.user_utterance),
                "system_acts": list(turn.system_acts),
                "state": {slot_key(*k): v for k, v in turn.gold_state.items()},
            }
            for turn in dialogue.turns
        ],
    }


def _check_turn(dialogue, t):
    if not 1 <= t <= len(dialogue.turns):
        raise IndexError(f"turn {t} out of range for dialogue {dialogue.id} with {len(dialogue)} turns")


def build_context(dialogue, t):
    """Tokens u_1^sys, u_1^usr, ..., u_t^sys, u_t^usr and their role tags."""
    _check_turn(dialogue, t)
    tokens, roles = [], []
    for turn in dialogue.turns[:t]:
        tokens.extend(turn.system_utterance)
        roles.extend([SYS] * len(turn.system_utterance))
        tokens.extend(turn.user_utterance)
        roles.extend([USER] * len(turn.user_utterance))
    return tokens, roles


def build_act_sequence(dialogue, t):
    _check_turn(dialogue, t)
    names, turn_indices = [], []
    for i, turn in enumerate(dialogue.turns[:t], start=1):
        names.extend(turn.system_acts)
        turn_indices.extend([i] * len(turn.system_acts))
    return ActSequence(tuple(names), tuple(turn_indices))


def _value_index(ontology):
    """first token -> [(value tokens, slot column)]"""
    index = {}
    for m, pair in enumerate(ontology.slots):
        for value in ontology.values[pair]:
            toks = tokenize(value)
            if toks:
                index.setdefault(toks[0], []).append((toks, m))
    return index


def exact_match_features(context, ontology, _index=None):
    """|C_t| x M binary matrix marking tokens inside a mention of a slot value."""
    context = [tok.lower() for tok in context]
    feats = np.zeros((len(context), ontology.num_slots), dtype=np.float32)
    index = _index if _index is not None else _value_index(ontology)
    for i, tok in enumerate(context):
        for toks, m in index.get(tok, ()):
            if context[i : i + len(toks)] == toks:
                feats[i : i + len(toks), m] = 1.0
    return feats


def find_value_span(context, value, choice="last"):
    """Token span of ``value`` in ``context``; last occurrence by default."""
    target = tokenize(value)
    n = len(target)
    if n == 0 or n > len(context):
        return None
    starts = range(len(context) - n, -1, -1) if choice == "last" else range(len(context) - n + 1)
    for s in starts:
        if context[s : s + n] == target:
            return s, s + n - 1
    return None


def derive_labels(dialogue, t, ontology, context=None, span_choice="last"):
    if context is None:
        context, _ = build_context(dialogue, t)
    gold = dialogue.turns[t - 1].gold_state
    labels = {}
    for pair in ontology.slots:
        value = gold.get(pair, NONE)
        opts = option_set(ontology, *pair)
        if opts.kind is SlotKind.CATEGORICAL:
            if value not in opts.options:
                _warn("ontology_mismatch", dialogue=dialogue.id, turn=t, slot=slot_key(*pair), value=value)
                value = NONE
            labels[pair] = Label(value_index=opts.index(value))
        elif value == NONE:
            labels[pair] = Label(span_type=SpanType.NONE)
        elif value == DONT_CARE:
            labels[pair] = Label(span_type=SpanType.DONT_CARE)
        else:
            span = find_value_span(context, value, span_choice)
            if span is None:
                _warn("span_not_found", dialogue=dialogue.id, turn=t, slot=slot_key(*pair), value=value)
                labels[pair] = Label(span_type=SpanType.NONE)
            else:
                labels[pair] = Label(span_type=SpanType.SPAN, start=span[0], end=span[1])
    return labels


def make_turn_example(dialogue, t, ontology, context_cap=DEFAULT_CONTEXT_CAP, span_choice="last", _index=None):
    tokens, roles = build_context(dialogue, t)
    labels = derive_labels(dialogue, t, ontology, tokens, span_choice)
    offset = max(0, len(tokens) - context_cap) if context_cap else 0
    if offset:
        tokens, roles = tokens[offset:], roles[offset:]
        for pair, label in labels.items():
            if label.span_type is SpanType.SPAN:
                if label.start < offset:
                    _warn("span_truncated", dialogue=dialogue.id, turn=t, slot=slot_key(*pair))
                    labels[pair] = Label(span_type=SpanType.NONE)
                else:
                    label.start -= offset
                    label.end -= offset
    gold = {pair: dialogue.turns[t - 1].gold_state.get(pair, NONE) for pair in ontology.slots}
    return TurnExample(
        dialogue_id=dialogue.id,
        turn=t,
        context_tokens=tokens,
        roles=roles,
        act_sequence=build_act_sequence(dialogue, t),
        labels=labels,
        gold_state=gold,
        exact=exact_match_features(tokens, ontology, _index),
    )


def make_examples(dialogues, ontology, context_cap=DEFAULT_CONTEXT_CAP, span_choice="last"):
    index = _value_index(ontology)
    return [
        make_turn_example(d, t, ontology, context_cap, span_choice, index)
        for d in dialogues
        for t in range(1, len(d.turns) + 1)
    ]


def gold_values(dialogues):
    """(domain, slot) -> list of gold values seen, for the hybrid partition fallback."""
    seen = {}
    for d in dialogues:
        for turn in d.turns:
            for pair, value in turn.gold_state.items():
                seen.setdefault(pair, []).append(value)
    return seen


def example_to_record(ex):
    return {
        "dialogue_id": ex.dialogue_id,
        "turn": ex.turn,
        "context": ex.context_tokens,
        "roles": ex.roles,
        "acts": list(ex.act_sequence.names),
        "act_turns": list(ex.act_sequence.turn_indices),
        "labels": {
            slot_key(*pair): {
                k: (int(v) if v is not None else None)
                for k, v in vars(label).items()
            }
            for pair, label in ex.labels.items()
        },
        "gold": {slot_key(*pair): v for pair, v in ex.gold_state.items()},
    }


class Vocab:
    """Word and character index tables."""

    def __init__(self, words=(), chars=()):
        self.words = [PAD, UNK]
        self.chars = [PAD, UNK]
        self._word_ids = {w: i for i, w in enumerate(self.words)}
        self._char_ids = {c: i for i, c in enumerate(self.chars)}
        for w in words:
            self.add_word(w)
        for c in chars:
            if c not in self._char_ids:
                self._char_ids[c] = len(self.chars)
                self.chars.append(c)

    def add_word(self, word):
        if word not in self._word_ids:
            self._word_ids[word] = len(self.words)
            self.words.append(word)
        for c in word[:MAX_CHAR_LEN]:
            if c not in self._char_ids:
                self._char_ids[c] = len(self.chars)
                self.chars.append(c)

    @classmethod
    def build(cls, ontology, dialogues=(), min_count=1):
        vocab = cls()
        for domain in ontology.domains:
            for tok in tokenize(domain):
                vocab.add_word(tok)
        for pair in ontology.slots:
            for tok in tokenize(pair[1]):
                vocab.add_word(tok)
            for value in ontology.values[pair]:
                for tok in tokenize(value):
                    vocab.add_word(tok)
        for tok in (NONE, DONT_CARE, "span"):
            vocab.add_word(tok)
        for act in ontology.acts:
            vocab.add_word(act_token(act))
        counts = Counter()
        for d in dialogues:
            for turn in d.turns:
                counts.update(turn.system_utterance)
                counts.update(turn.user_utterance)
        for word, n in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])):
            if n >= min_count:
                vocab.add_word(word)
        return vocab

    def word_id(self, word):
        return self._word_ids.get(word, 1)

    def char_ids(self, word):
        return [self._char_ids.get(c, 1) for c in word[:MAX_CHAR_LEN]]

    def to_dict(self):
        return {"words": self.words[2:], "chars": self.chars[2:]}

    @classmethod
    def from_dict(cls, data):
        vocab = cls()
        for w in data["words"]:
            if w not in vocab._word_ids:
                vocab._word_ids[w] = len(vocab.words)
                vocab.words.append(w)
        for c in data["chars"]:
            if c not in vocab._char_ids:
                vocab._char_ids[c] = len(vocab.chars)
                vocab.chars.append(c)
        return vocab

    def __len__(self):
        return len(self.words)


def encode_tokens(vocab, sequences):
    """Pad token lists into word ids [B, T], char ids [B, T, L] and a mask [B, T]."""
    batch = len(sequences)
    width = max((len(s) for s in sequences), default=0)
    char_len = max([MIN_CHAR_LEN] + [min(len(t), MAX_CHAR_LEN) for s in sequences for t in s])
    word_ids = torch.zeros(batch, width, dtype=torch.long)
    char_ids = torch.zeros(batch, width, char_len, dtype=torch.long)
    mask = torch.zeros(batch, width, dtype=torch.bool)
    for b, seq in enumerate(sequences):
        for i, tok in enumerate(seq):
            word_ids[b, i] = vocab.word_id(tok)
            chars = vocab.char_ids(tok)
            char_ids[b, i, : len(chars)] = torch.tensor(chars, dtype=torch.long)
            mask[b, i] = True
    return word_ids, char_ids, mask


@dataclass
class Batch:
    examples: list
    word_ids: torch.Tensor
    char_ids: torch.Tensor
    roles: torch.Tensor
    exact: torch.Tensor
    context_mask: torch.Tensor
    act_word_ids: torch.Tensor
    act_char_ids: torch.Tensor
    act_mask: torch.Tensor
    value_labels: torch.Tensor
    type_labels: torch.Tensor
    span_start: torch.Tensor
    span_end: torch.Tensor

    def __len__(self):
        return len(self.examples)


def collate(examples, vocab, ontology):
    word_ids, char_ids, ctx_mask = encode_tokens(vocab, [ex.context_tokens for ex in examples])
    act_tokens = [[act_token(a) for a in ex.act_sequence.names] for ex in examples]
    act_word_ids, act_char_ids, act_mask = encode_tokens(vocab, act_tokens)
    batch, width = word_ids.shape
    roles = torch.zeros(batch, width, dtype=torch.long)
    exact = torch.zeros(batch, width, ontology.num_slots)
    cat_slots = ontology.categorical_slots
    span_slots = ontology.non_categorical_slots
    value_labels = torch.zeros(batch, len(cat_slots), dtype=torch.long)
    type_labels = torch.zeros(batch, len(span_slots), dtype=torch.long)
    span_start = torch.zeros(batch, len(span_slots), dtype=torch.long)
    span_end = torch.zeros(batch, len(span_slots), dtype=torch.long)
    for b, ex in enumerate(examples):
        n = len(ex.context_tokens)
        roles[b, :n] = torch.tensor([ROLE_IDS[r] for r in ex.roles], dtype=torch.long)
        if n:
            exact[b, :n] = torch.from_numpy(ex.exact)
        for j, pair in enumerate(cat_slots):
            value_labels[b, j] = ex.labels[pair].value_index
        for j, pair in enumerate(span_slots):
            label = ex.labels[pair]
            type_labels[b, j] = int(label.span_type)
            if label.span_type is SpanType.SPAN:
                span_start[b, j] = label.start
                span_end[b, j] = label.end
    return Batch(
        examples=list(examples),
        word_ids=word_ids,
        char_ids=char_ids,
        roles=roles,
        exact=exact,
        context_mask=ctx_mask,
        act_word_ids=act_word_ids,
        act_char_ids=act_char_ids,
        act_mask=act_mask,
        value_labels=value_labels,
        type_labels=type_labels,
        span_start=span_start,
        span_end=span_end,
    )


def make_batches(examples, batch_size, seed, vocab, ontology, shuffle=True):
    """Seeded shuffle, then padded batches; the last batch holds the remainder."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = list(range(len(examples)))
    if shuffle:
        random.Random(seed).shuffle(order)
    return [
        collate([examples[i] for i in order[start : start + batch_size]], vocab, ontology)
        for start in range(0, len(order), batch_size)
    ]
