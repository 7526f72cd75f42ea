"""Word tokenisation shared by the classifier, the vectorizer and decontamination."""

import re

# runs of Unicode letters/digits; underscore counts as punctuation
WORD_RE = re.compile(r"[^\W_]+")


def words(text: str) -> list:
    return [m.group().lower() for m in WORD_RE.finditer(text)]


def word_spans(text: str) -> list:
    """(lowercased token, start, end) triples with offsets into ``text``."""
    return [(m.group().lower(), m.start(), m.end()) for m in WORD_RE.finditer(text)]
