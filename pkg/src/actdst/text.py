"""Tokenization and value canonicalization shared by every module."""

import re
import string

NONE = "none"
DONT_CARE = "dont_care"
RESERVED = (NONE, DONT_CARE)

# times first so "20:45" stays one token
_TOKEN_RE = re.compile(r"\d{1,2}:\d{2}|\w+(?:'\w+)*|[^\w\s]")

_NONE_VARIANTS = {"", "none", "not mentioned", "not given", "null"}
_DONT_CARE_VARIANTS = {
    "dont_care",
    "dontcare",
    "dont care",
    "don't care",
    "do n't care",
    "do not care",
    "doesn't care",
    "does not care",
}


def tokenize(text):
    """Lowercase and split into word, time and punctuation tokens."""
    return _TOKEN_RE.findall(text.lower())


def detokenize(tokens):
    return " ".join(tokens)


def canonical_value(value):
    """Map a raw gold/ontology value onto its canonical spelling.

    Reserved variants collapse to ``none`` / ``dont_care``; everything else is
    re-joined from its tokens so that a value and a span of context tokens
    compare equal.
    """
    if value is None:
        return NONE
    lowered = " ".join(str(value).lower().split())
    if lowered in _NONE_VARIANTS:
        return NONE
    if lowered in _DONT_CARE_VARIANTS:
        return DONT_CARE
    return detokenize(tokenize(lowered))


_ARTICLES = {"a", "an", "the"}
_PUNCT = set(string.punctuation) - {":", "_"}


def match_key(value, aliases=None):
    """Normalization used only when scoring predictions against gold.

    Lowercase, drop punctuation tokens and articles, collapse whitespace and
    apply the alias map. Colons and underscores survive so times and
    ``dont_care`` keep their shape.
    """
    value = canonical_value(value)
    if aliases and value in aliases:
        value = canonical_value(aliases[value])
    cleaned = "".join(ch for ch in value if ch not in _PUNCT)
    words = [w for w in cleaned.split() if w not in _ARTICLES]
    return " ".join(words)


_NUMBER_RE = re.compile(r"^\d+(\.\d+)?$")
_TIME_RE = re.compile(r"^\d{1,2}:\d{2}$")


def is_number_or_time(value):
    value = value.strip()
    return bool(_NUMBER_RE.match(value) or _TIME_RE.match(value))
