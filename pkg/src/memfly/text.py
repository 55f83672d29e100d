"""Tokenization, canonicalization and stop-list rules shared by the
deterministic policy and the feature-hashing embedder.

Everything here is intentionally model-free: split on non-alphanumerics,
lowercase, a fixed stop list, and a light singularization heuristic.
"""

from __future__ import annotations

import re

_TOKEN_RE = re.compile(r"[a-z0-9]+")

# Function words, auxiliaries, question words, high-frequency verbs and
# phatic interjections. Tokens on this list never become keywords.
STOPWORDS = frozenset("""
a an the and or but if then else than as of at by for with about against
into onto to from in on off over under again further once here there
when where why how which who whom whose what that this these those
i you he she it we they me him her us them my your his its our their
mine yours hers ours theirs myself yourself himself herself itself
ourselves themselves
am is are was were be been being do does did doing will would shall
should can could may might must have has had having
not no nor yes ok okay
get got gets getting go goes went going gone come came comes coming
make makes made making take takes took taken taking see sees saw seen
seeing say says said saying tell tells told telling think thinks thought
thinking know knows knew known knowing want wants wanted wanting
give gives gave given giving put puts putting call calls called calling
buy buys bought buying sell sells sold selling let lets use used using
also just really very so too quite such own same other another more
most some any each few both all now ever never always often sometimes
up down out only even still yet already
wow cool nice great awesome amazing yeah yep nope hmm huh oh hey hi
hello thanks thank bye goodbye please sorry sure
""".split())

# Singularization guards: words ending in these stay untouched.
_KEEP_SUFFIXES = ("ss", "us", "is")


def tokenize(text: str) -> list[str]:
    """Lowercased alphanumeric tokens in order of appearance."""
    return _TOKEN_RE.findall(text.lower())


def singularize(word: str) -> str:
    """Heuristic canonical singular form ("transformers" -> "transformer").

    Deliberately conservative: leaves short words and -ss/-us/-is endings
    alone so "paris", "glass", "bus" survive.
    """
    if len(word) >= 4 and word.endswith("ies"):
        return word[:-3] + "y"
    if len(word) >= 5 and word.endswith(("ches", "shes", "sses", "xes", "zes")):
        return word[:-2]
    if len(word) >= 4 and word.endswith("s") and not word.endswith(_KEEP_SUFFIXES):
        return word[:-1]
    return word


def canonical_surface(surface: str) -> str:
    """Canonical keyword surface: lowercase, collapsed spaces, final word
    singularized."""
    words = tokenize(surface)
    if not words:
        return ""
    words[-1] = singularize(words[-1])
    return " ".join(words)


def content_tokens(text: str) -> list[str]:
    """Canonicalized non-stopword tokens, duplicates removed, order kept."""
    seen: set[str] = set()
    out: list[str] = []
    for tok in tokenize(text):
        if len(tok) < 2 or tok in STOPWORDS:
            continue
        canon = singularize(tok)
        if canon in STOPWORDS or canon in seen:
            continue
        seen.add(canon)
        out.append(canon)
    return out


def is_phatic(text: str) -> bool:
    """True when the text has no content tokens (pure acknowledgement)."""
    return not content_tokens(text)
